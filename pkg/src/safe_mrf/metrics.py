"""Masked SSIM (with an exact gradient for training) and NRMSE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import binary_erosion


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SsimConfig:
    window: int = 7
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    kind: str = "uniform"        # or "gaussian"
    sigma: float = 1.5           # gaussian window only

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise MetricError(f"unknown SSIM window kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise MetricError("gaussian SSIM window needs sigma > 0")
        if self.window < 3 or self.window % 2 == 0:
            raise MetricError("SSIM window must be odd and >= 3")
        if self.dynamic_range <= 0:
            raise MetricError("dynamic range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def box_valid(x: np.ndarray, w: int) -> np.ndarray:
    """Mean over every fully contained w x w window (last two axes)."""
    c = np.cumsum(np.cumsum(x, axis=-2), axis=-1)
    c = np.pad(c, [(0, 0)] * (x.ndim - 2) + [(1, 0), (1, 0)])
    s = c[..., w:, w:] - c[..., :-w, w:] - c[..., w:, :-w] + c[..., :-w, :-w]
    return s / (w * w)


def box_valid_adjoint(g: np.ndarray, w: int) -> np.ndarray:
    """Adjoint of :func:`box_valid`: spreads each window mean back to its pixels."""
    pad = [(0, 0)] * (g.ndim - 2) + [(w - 1, w - 1), (w - 1, w - 1)]
    return box_valid(np.pad(g, pad), w)


def _taps(cfg: SsimConfig) -> np.ndarray | None:
    if cfg.kind == "uniform":
        return None
    u = np.arange(cfg.window) - cfg.window // 2
    g = np.exp(-0.5 * (u / cfg.sigma) ** 2)
    return g / g.sum()


def window_valid(x: np.ndarray, cfg: SsimConfig) -> np.ndarray:
    """Window-weighted mean over every fully contained window (last two axes)."""
    taps = _taps(cfg)
    if taps is None:
        return box_valid(x, cfg.window)
    w = cfg.window
    y = sliding_window_view(x, w, axis=-1) @ taps
    return sliding_window_view(y, w, axis=-2) @ taps


def window_valid_adjoint(g: np.ndarray, cfg: SsimConfig) -> np.ndarray:
    """Adjoint of :func:`window_valid` (the windows are symmetric)."""
    w = cfg.window
    pad = [(0, 0)] * (g.ndim - 2) + [(w - 1, w - 1), (w - 1, w - 1)]
    return window_valid(np.pad(g, pad), cfg)


def valid_windows(mask: np.ndarray, w: int) -> np.ndarray:
    """Boolean map (H-w+1, W-w+1) of windows lying entirely inside ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] < w or mask.shape[1] < w:
        return np.zeros((0, 0), dtype=bool)
    r = w // 2
    inside = binary_erosion(mask, structure=np.ones((w, w), dtype=bool), border_value=0)
    return inside[r:mask.shape[0] - r, r:mask.shape[1] - r]


def _stats(a, b, cfg):
    f = lambda x: window_valid(x, cfg)  # noqa: E731
    mu_a, mu_b = f(a), f(b)
    e_aa, e_bb, e_ab = f(a * a), f(b * b), f(a * b)
    return mu_a, mu_b, e_aa - mu_a ** 2, e_bb - mu_b ** 2, e_ab - mu_a * mu_b


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean SSIM over windows that lie fully inside ``mask``."""
    return ssim_and_grad(a, b, mask, cfg, need_grad=False)[0]


def ssim_and_grad(a, b, mask, cfg: SsimConfig = SsimConfig(), need_grad: bool = True):
    """Masked SSIM and its gradient with respect to ``a``."""
    a = np.asarray(a)
    b = np.asarray(b)
    w = cfg.window
    valid = valid_windows(mask, w)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise MetricError(f"mask contains no fully-masked {w}x{w} window")
    c1, c2 = cfg.c1, cfg.c2
    mu_a, mu_b, var_a, var_b, cov = _stats(a, b, cfg)
    num1 = 2 * mu_a * mu_b + c1
    num2 = 2 * cov + c2
    den1 = mu_a ** 2 + mu_b ** 2 + c1
    den2 = var_a + var_b + c2
    smap = (num1 * num2) / (den1 * den2)
    value = float(np.sum(smap[valid]) / n_valid)
    if not need_grad:
        return value, None
    g = valid / n_valid
    # partials of the SSIM map w.r.t. mu_a, var_a, cov
    d_mu = g * (2 * mu_b * num2 / (den1 * den2) - 2 * mu_a * smap / den1)
    d_var = g * (-smap / den2)
    d_cov = g * (2 * num1 / (den1 * den2))
    # var_a = E[a^2] - mu_a^2, cov = E[ab] - mu_a mu_b
    d_mu_total = d_mu - 2 * mu_a * d_var - mu_b * d_cov
    adj = lambda g: window_valid_adjoint(g, cfg)  # noqa: E731
    grad = adj(d_mu_total) + 2 * a * adj(d_var) + b * adj(d_cov)
    return value, grad


def nrmse(a, b, mask=None) -> float:
    """||a - b|| / ||b|| over masked pixels (complex-aware)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        a = a[..., m]
        b = b[..., m]
    ref = np.linalg.norm(b)
    if ref == 0:
        raise MetricError("reference has zero norm inside the mask")
    return float(np.linalg.norm(a - b) / ref)


def masked_rmse(a, b, mask) -> float:
    m = np.asarray(mask, dtype=bool)
    return float(np.sqrt(np.mean(np.abs(np.asarray(a)[m] - np.asarray(b)[m]) ** 2)))
