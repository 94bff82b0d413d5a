"""Sequence-adaptive B1+/B0 field estimation and correction for MR fingerprinting.

Synthetic, 2D single-coil pipeline: EPG dictionaries, subspace coefficient
maps, spiral off-resonance corruption, a convolutional field estimator, and
MFI / B1-corrected matching.
"""

__version__ = "0.1.0"
