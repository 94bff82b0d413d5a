"""Spiral trajectories and non-Cartesian Fourier operators.

Exact DFT forward model (optionally with per-voxel off-resonance) serves as
the oracle for a Kaiser-Bessel gridding NUFFT (2x oversampling, width 4).
Image coordinates are in mm relative to the image centre: pixel ``j`` sits at
``(j - n/2) * voxel_mm``. Sample times are in ms, frequencies in Hz.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import i0

OVERSAMP = 2.0
KB_WIDTH = 4
KB_BETA = np.pi * np.sqrt(KB_WIDTH ** 2 / OVERSAMP ** 2 * (OVERSAMP - 0.5) ** 2 - 0.8)


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpiralTrajectory:
    kx: np.ndarray       # cycles/mm
    ky: np.ndarray
    t_ms: np.ndarray
    dwell_us: float
    kmax: float
    fov_mm: float
    matrix_n: int
    readout_ms: float    # design duration; t_ms spans [0, readout_ms)

    @property
    def n_samples(self) -> int:
        return self.kx.size

    @property
    def voxel_mm(self) -> float:
        return self.fov_mm / self.matrix_n

    @cached_property
    def gridder(self) -> "Gridder":
        return Gridder(self)

    @cached_property
    def dcf(self) -> np.ndarray:
        return density_weights(self)


def design_spiral(readout_ms: float, fov_mm: float, matrix_n: int,
                  dwell_us: float = 4.0) -> SpiralTrajectory:
    """Uniform-in-time Archimedean spiral with matrix_n/2 turns out to kmax."""
    if min(readout_ms, fov_mm, matrix_n, dwell_us) <= 0:
        raise DomainError("readout_ms, fov_mm, matrix_n and dwell_us must be positive")
    ns = int(np.floor(round(readout_ms * 1000.0 / dwell_us, 9)))
    if ns < 64:
        raise DomainError(f"only {ns} samples; need readout_ms/dwell_us >= 64")
    kmax = matrix_n / (2.0 * fov_mm)
    t_ms = np.arange(ns) * dwell_us / 1000.0
    tau = t_ms / readout_ms
    k = kmax * tau * np.exp(2j * np.pi * (matrix_n / 2) * tau)
    return SpiralTrajectory(kx=k.real.copy(), ky=k.imag.copy(), t_ms=t_ms, dwell_us=dwell_us,
                            kmax=kmax, fov_mm=fov_mm, matrix_n=matrix_n,
                           readout_ms=float(readout_ms))


def image_coords(n: int, voxel_mm: float) -> np.ndarray:
    return (np.arange(n) - n // 2) * voxel_mm


def _check_image(image: np.ndarray, traj: SpiralTrajectory) -> None:
    if image.shape[-2:] != (traj.matrix_n, traj.matrix_n):
        raise DomainError(f"image shape {image.shape[-2:]} does not match trajectory matrix "
                          f"{traj.matrix_n}")


def _check_samples(samples: np.ndarray, traj: SpiralTrajectory) -> None:
    if samples.shape[-1] != traj.n_samples:
        raise DomainError(f"{samples.shape[-1]} samples for a {traj.n_samples}-sample trajectory")


def exact_forward(image: np.ndarray, traj: SpiralTrajectory,
                  b0_hz: np.ndarray | float | None = None) -> np.ndarray:
    """Direct sum d_i = sum_x m(x) exp(i 2pi df(x) t_i) exp(-i 2pi k_i.x).  Slow."""
    _check_image(image, traj)
    n = traj.matrix_n
    r = image_coords(n, traj.voxel_mm)
    ey = np.exp(-2j * np.pi * np.outer(traj.ky, r))   # (ns, n) rows
    ex = np.exp(-2j * np.pi * np.outer(traj.kx, r))   # (ns, n) columns
    m = np.asarray(image, dtype=np.complex128)
    if b0_hz is None or not np.any(b0_hz):
        return np.einsum("iy,yx,ix->i", ey, m, ex, optimize=True)
    b0 = np.broadcast_to(np.asarray(b0_hz, dtype=np.float64), m.shape)
    out = np.empty(traj.n_samples, dtype=np.complex128)
    step = 256
    for s in range(0, traj.n_samples, step):
        t = traj.t_ms[s:s + step] / 1000.0
        ph = np.exp(2j * np.pi * t[:, None, None] * b0[None])
        out[s:s + step] = np.einsum("iy,iyx,ix->i", ey[s:s + step], ph * m[None],
                                    ex[s:s + step], optimize=True)
    return out


def _kb(u: np.ndarray) -> np.ndarray:
    arg = 1.0 - (2.0 * u / KB_WIDTH) ** 2
    return np.where(arg >= 0, i0(KB_BETA * np.sqrt(np.clip(arg, 0, None))), 0.0)


def _kb_ft(y: np.ndarray) -> np.ndarray:
    # continuous Fourier transform of the kernel, y in cycles per grid cell
    z = KB_BETA ** 2 - (np.pi * KB_WIDTH * y) ** 2
    rz = np.sqrt(z.astype(np.complex128))
    return (KB_WIDTH * np.sinh(rz) / rz).real


class Gridder:
    """Sparse interpolation matrix plus deapodization for one trajectory."""

    def __init__(self, traj: SpiralTrajectory):
        n = traj.matrix_n
        g = int(round(OVERSAMP * n))
        self.n, self.g = n, g
        # trajectory in oversampled grid units
        vx = traj.kx * traj.fov_mm * OVERSAMP
        vy = traj.ky * traj.fov_mm * OVERSAMP
        offs = np.arange(-(KB_WIDTH // 2) + 1, KB_WIDTH // 2 + 1)
        bx = np.floor(vx).astype(np.int64)[:, None] + offs[None, :]
        by = np.floor(vy).astype(np.int64)[:, None] + offs[None, :]
        wx = _kb(vx[:, None] - bx)
        wy = _kb(vy[:, None] - by)
        rows = np.repeat(np.arange(traj.n_samples), KB_WIDTH * KB_WIDTH)
        cols = ((by[:, :, None] % g) * g + (bx[:, None, :] % g)).ravel()
        vals = (wy[:, :, None] * wx[:, None, :]).ravel()
        a = sp.csr_matrix((vals, (rows, cols)), shape=(traj.n_samples, g * g))
        a.sum_duplicates()
        self.interp = a
        self.interp_h = a.T.tocsr()
        y = (np.arange(n) - n // 2) / g
        apod = _kb_ft(y)
        self.deapod = 1.0 / np.outer(apod, apod)
        self.pos = (np.arange(n) - n // 2) % g

    def forward(self, image: np.ndarray) -> np.ndarray:
        pad = np.zeros((self.g, self.g), dtype=np.complex128)
        pad[np.ix_(self.pos, self.pos)] = image * self.deapod
        return self.interp @ np.fft.fft2(pad).ravel()

    def adjoint(self, samples: np.ndarray) -> np.ndarray:
        grid = (self.interp_h @ samples).reshape(self.g, self.g)
        img = np.fft.ifft2(grid) * (self.g * self.g)
        return img[np.ix_(self.pos, self.pos)] * self.deapod


def grid_forward(image: np.ndarray, traj: SpiralTrajectory) -> np.ndarray:
    """Gridding NUFFT approximation of ``exact_forward(image, traj)``."""
    _check_image(image, traj)
    return traj.gridder.forward(np.asarray(image, dtype=np.complex128))


def grid_adjoint(samples: np.ndarray, traj: SpiralTrajectory, demod_hz: float = 0.0,
                 use_dcf: bool = False) -> np.ndarray:
    """Adjoint gridding after demodulating by ``demod_hz``.

    Samples are multiplied by exp(-i 2pi demod_hz t) (the conjugate of the
    forward off-resonance phase) so data acquired at a uniform offset ``f0``
    is restored exactly by ``demod_hz = f0``. With ``use_dcf=False`` and
    ``demod_hz=0`` this is the exact adjoint of :func:`grid_forward`.
    """
    samples = np.asarray(samples, dtype=np.complex128)
    _check_samples(samples, traj)
    if demod_hz != 0.0:
        samples = samples * np.exp(-2j * np.pi * demod_hz * traj.t_ms / 1000.0)
    if use_dcf:
        samples = samples * traj.dcf
    return traj.gridder.adjoint(samples)


def density_weights(traj: SpiralTrajectory) -> np.ndarray:
    """Radius times radial increment, scaled to unit DC gain.

    The scale is calibrated on a centred delta: the reconstructed point-spread
    function must sum to one over the image, so flat regions keep their value.
    """
    r = np.hypot(traj.kx, traj.ky)
    dr = np.diff(r, prepend=r[0])
    dr[0] = dr[1] if r.size > 1 else 1.0
    w = r * np.abs(dr)
    n = traj.matrix_n
    delta = np.zeros((n, n))
    delta[n // 2, n // 2] = 1.0
    d = exact_forward(delta, traj)
    recon = traj.gridder.adjoint(d * w)
    return w / recon.sum().real
