"""Clean and B0-corrupted subspace coefficient maps from ground-truth maps.

Coefficient images are built per voxel from the nearest dictionary atom
(so B1 acts through atom selection), then pushed through a spiral readout
with off-resonance phase, either time-segmented (fast) or exact (oracle).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary import CompressedDictionary, SubspaceBasis
from .phantom import FieldMaps, ParameterMaps
from .spiral import SpiralTrajectory, exact_forward, grid_adjoint, grid_forward


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoefficientMaps:
    channels: np.ndarray    # (K, H, W) complex
    basis_id: str
    grid_n: int
    voxel_mm: float

    @property
    def K(self) -> int:
        return self.channels.shape[0]


@dataclass(frozen=True, eq=False)
class TimeSegmentation:
    """L equal readout bins with centres ``centers_ms``.

    ``kind="ls"`` (default) interpolates the per-sample phase from the L
    centre phases with least-squares weights fitted over the B0 range of the
    map being simulated; ``kind="rect"`` assigns each sample the phase of its
    own bin.
    """
    n_segments: int
    centers_ms: np.ndarray
    labels: np.ndarray      # bin index per sample
    kind: str = "ls"

    def window(self, l: int) -> np.ndarray:
        return (self.labels == l).astype(np.float64)

    def weights(self, t_ms: np.ndarray, f_lo: float, f_hi: float) -> np.ndarray:
        """Per-segment sample weights, shape ``(L, n_samples)``."""
        if self.kind == "rect":
            return np.stack([self.window(l) for l in range(self.n_segments)]).astype(np.complex128)
        return ls_interpolator(t_ms, self.centers_ms, f_lo, f_hi)


def ls_interpolator(t_ms: np.ndarray, nodes_ms: np.ndarray, f_lo: float, f_hi: float,
                    lam: float = 1e-8) -> np.ndarray:
    """Weights b[l, i] minimizing sum_f |exp(i2pi f t_i) - sum_l b[l, i] exp(i2pi f t_l)|^2.

    The fit runs over a 1 Hz grid spanning ``[f_lo, f_hi]``.
    """
    f = np.arange(np.floor(f_lo), np.ceil(f_hi) + 1.0)
    a = np.exp(2j * np.pi * np.outer(f, nodes_ms) / 1000.0)
    y = np.exp(2j * np.pi * np.outer(f, t_ms) / 1000.0)
    gram = a.conj().T @ a + lam * f.size * np.eye(len(nodes_ms))
    return np.linalg.solve(gram, a.conj().T @ y)


def time_segmentation(traj: SpiralTrajectory, n_segments: int, kind: str = "ls") -> TimeSegmentation:
    """L equal-duration bins over the readout, centred at the bin midpoints."""
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if kind not in ("ls", "rect"):
        raise ValueError(f"unknown segmentation kind {kind!r}")
    t_read = traj.readout_ms
    edges = np.linspace(0.0, t_read, n_segments + 1)
    labels = np.clip(np.searchsorted(edges, traj.t_ms, side="right") - 1, 0, n_segments - 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return TimeSegmentation(n_segments, centers, labels, kind)


def nearest_atoms(pm: ParameterMaps, fm: FieldMaps, cd: CompressedDictionary) -> np.ndarray:
    """Atom index per masked voxel (nearest in log T1, log T2, linear B1); -1 outside."""
    g = cd.grid
    mask = pm.mask
    lt1, lt2 = np.log(g.t1_ms), np.log(g.t2_ms)
    i = np.argmin(np.abs(np.log(pm.t1_ms[mask])[:, None] - lt1), axis=1)
    j = np.argmin(np.abs(np.log(pm.t2_ms[mask])[:, None] - lt2), axis=1)
    k = np.argmin(np.abs(fm.b1_rel[mask][:, None] - np.asarray(g.b1_rel)), axis=1)
    atom = cd.index[i, j, k]
    bad = atom < 0
    if bad.any():
        # (t1, t2) snapped across the t2 <= t1 diagonal: take the largest valid t2
        t2_axis = np.asarray(g.t2_ms)
        for v in np.flatnonzero(bad):
            jj = np.searchsorted(t2_axis, g.t1_ms[i[v]], side="right") - 1
            atom[v] = cd.index[i[v], max(jj, 0), k[v]]
    out = np.full(mask.shape, -1, dtype=np.int64)
    out[mask] = atom
    return out


def clean_coeffs(pm: ParameterMaps, fm: FieldMaps, basis: SubspaceBasis,
                 cd: CompressedDictionary) -> CoefficientMaps:
    if basis.basis_id != cd.basis_id:
        raise GeometryError("compressed dictionary was built with a different basis")
    if pm.mask.shape != fm.b1_rel.shape:
        raise GeometryError("parameter and field maps differ in shape")
    atom = nearest_atoms(pm, fm, cd)
    out = np.zeros((cd.K,) + pm.mask.shape, dtype=np.complex128)
    m = pm.mask
    out[:, m] = (pm.pd[m][:, None] * cd.coeffs[atom[m]]).T
    return CoefficientMaps(out, cd.basis_id, pm.grid_n, pm.voxel_mm)


def _check(c: CoefficientMaps, b0_hz: np.ndarray, traj: SpiralTrajectory) -> None:
    shape = c.channels.shape[1:]
    if shape != (traj.matrix_n, traj.matrix_n) or np.shape(b0_hz) != shape:
        raise GeometryError(f"coefficient maps {shape}, b0 {np.shape(b0_hz)} and trajectory "
                            f"matrix {traj.matrix_n} disagree")


def corrupt(c: CoefficientMaps, b0_hz: np.ndarray, traj: SpiralTrajectory,
            seg: TimeSegmentation, noise_std: float = 0.0, rng=None):
    """Time-segmented off-resonance corruption, channel by channel.

    Returns ``(corrupted CoefficientMaps, samples (K, n_samples))``. A map
    that is identically zero has unit phase everywhere and reduces to a
    single transform per channel. ``noise_std > 0`` adds complex Gaussian
    noise of that per-component standard deviation to the samples.
    """
    _check(c, b0_hz, traj)
    b0 = np.asarray(b0_hz, dtype=np.float64)
    samples = np.zeros((c.K, traj.n_samples), dtype=np.complex128)
    if not np.any(b0):
        for ch in range(c.K):
            samples[ch] = grid_forward(c.channels[ch], traj)
    else:
        weights = seg.weights(traj.t_ms, float(b0.min()), float(b0.max()))
        phases = [np.exp(2j * np.pi * b0 * tl / 1000.0) for tl in seg.centers_ms]
        for ch in range(c.K):
            for w, ph in zip(weights, phases):
                samples[ch] += w * grid_forward(c.channels[ch] * ph, traj)
    if noise_std > 0:
        rng = np.random.default_rng(rng)
        samples += noise_std * (rng.standard_normal(samples.shape)
                                + 1j * rng.standard_normal(samples.shape))
    images = recon(samples, traj)
    return CoefficientMaps(images, c.basis_id, c.grid_n, c.voxel_mm), samples


def corrupt_oracle(c: CoefficientMaps, b0_hz: np.ndarray, traj: SpiralTrajectory):
    """Exact-DFT version of :func:`corrupt`. Slow; for verification."""
    _check(c, b0_hz, traj)
    samples = np.stack([exact_forward(c.channels[ch], traj, b0_hz) for ch in range(c.K)])
    images = recon(samples, traj)
    return CoefficientMaps(images, c.basis_id, c.grid_n, c.voxel_mm), samples


def recon(samples: np.ndarray, traj: SpiralTrajectory, demod_hz: float = 0.0) -> np.ndarray:
    """DCF-weighted gridding reconstruction of a ``(K, n_samples)`` stack."""
    return np.stack([grid_adjoint(s, traj, demod_hz, use_dcf=True) for s in samples])
