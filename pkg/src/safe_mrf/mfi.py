"""Multi-frequency interpolation (MFI) off-resonance deblurring.

Data are reconstructed at J evenly spaced demodulation frequencies and the
base images are combined per voxel with least-squares weights that make the
combined demodulation match the voxel's own off-resonance over the readout.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .spiral import SpiralTrajectory, grid_adjoint

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MfiPlan:
    freqs_hz: np.ndarray
    times_ms: np.ndarray
    lam: float
    _basis: np.ndarray = field(repr=False)   # (n_samples, J): exp(-i 2pi f_j t)
    _chol: tuple = field(repr=False)

    @property
    def n_freqs(self) -> int:
        return self.freqs_hz.size

    @property
    def b0_min(self) -> float:
        return float(self.freqs_hz[0])

    @property
    def b0_max(self) -> float:
        return float(self.freqs_hz[-1])


def _demod(freqs_hz, t_ms):
    return np.exp(-2j * np.pi * np.outer(t_ms / 1000.0, freqs_hz))


def plan_mfi(b0_min_hz: float, b0_max_hz: float, traj: SpiralTrajectory,
             lam: float = 1e-6) -> MfiPlan:
    """Frequency nodes spaced at most 1/(2*T_read) apart, both ends included."""
    if b0_min_hz > b0_max_hz:
        raise ValueError("b0_min_hz must not exceed b0_max_hz")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    t_read_s = traj.readout_ms / 1000.0
    n = max(1, math.ceil(round((b0_max_hz - b0_min_hz) * 2.0 * t_read_s, 9)) + 1)
    freqs = np.linspace(b0_min_hz, b0_max_hz, n) if n > 1 else np.array([float(b0_min_hz)])
    basis = _demod(freqs, traj.t_ms)
    gram = basis.conj().T @ basis + lam * np.eye(n)
    return MfiPlan(freqs, traj.t_ms.copy(), lam, basis, cho_factor(gram))


def mfi_weights(plan: MfiPlan, delta_f_hz: float):
    """Interpolation weights for one off-resonance value.

    Returns ``(alpha, rel_residual)`` where the residual is the squared fit
    error divided by the number of samples.
    """
    df = float(delta_f_hz)
    if not plan.b0_min <= df <= plan.b0_max:
        log.info("clamping %.1f Hz into plan range [%.1f, %.1f]", df, plan.b0_min, plan.b0_max)
        df = min(max(df, plan.b0_min), plan.b0_max)
    target = np.exp(-2j * np.pi * plan.times_ms / 1000.0 * df)
    alpha = cho_solve(plan._chol, plan._basis.conj().T @ target)
    resid = np.sum(np.abs(target - plan._basis @ alpha) ** 2) / target.size
    return alpha, float(resid)


def weight_table(plan: MfiPlan):
    """Weights on a 1 Hz grid covering the plan range: ``(offset_hz, table (n, J))``."""
    lo = math.floor(plan.b0_min)
    hi = math.ceil(plan.b0_max)
    freqs = np.arange(lo, hi + 1, dtype=np.float64)
    freqs = np.clip(freqs, plan.b0_min, plan.b0_max)
    targets = np.exp(-2j * np.pi * np.outer(plan.times_ms / 1000.0, freqs))
    table = cho_solve(plan._chol, plan._basis.conj().T @ targets).T
    return lo, table


def mfi_deblur(samples: np.ndarray, traj: SpiralTrajectory, b0_hz: np.ndarray,
               plan: MfiPlan) -> np.ndarray:
    """Deblur a ``(K, n_samples)`` sample stack given a B0 map; returns ``(K, H, W)``."""
    samples = np.atleast_2d(samples)
    if samples.shape[-1] != plan.times_ms.size or samples.shape[-1] != traj.n_samples:
        raise ValueError("samples, trajectory and plan disagree on the sample count")
    if np.shape(b0_hz) != (traj.matrix_n, traj.matrix_n):
        raise ValueError(f"b0 map shape {np.shape(b0_hz)} does not match matrix {traj.matrix_n}")
    lo, table = weight_table(plan)
    idx = np.clip(np.rint(np.asarray(b0_hz)).astype(np.int64) - lo, 0, table.shape[0] - 1)
    alpha = table[idx]                               # (H, W, J)
    out = np.zeros((samples.shape[0], traj.matrix_n, traj.matrix_n), dtype=np.complex128)
    for ch, d in enumerate(samples):
        for j, f in enumerate(plan.freqs_hz):
            out[ch] += alpha[..., j] * grid_adjoint(d, traj, float(f), use_dcf=True)
    return out
