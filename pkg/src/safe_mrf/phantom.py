"""Randomized synthetic head phantoms with smooth B1+/B0 fields."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import ConfigError, format_kv, parse_kv

# (t1_ms, t2_ms, pd) class centres
TISSUES = {
    "wm": (800.0, 60.0, 0.75),
    "gm": (1300.0, 90.0, 0.85),
    "csf": (2800.0, 300.0, 1.0),
}


@dataclass(frozen=True)
class PhantomSpec:
    grid_n: int = 128
    voxel_mm: float = 2.0
    n_inclusions_min: int = 5
    n_inclusions_max: int = 15
    jitter: float = 0.10
    b1_order: int = 2
    b1_amp_min: float = 0.10
    b1_amp_max: float = 0.30
    b0_smooth_mm: float = 24.0
    b0_amp_min: float = 100.0
    b0_amp_max: float = 150.0
    seed: int = 0

    def __post_init__(self):
        if self.grid_n < 8:
            raise ConfigError("grid_n: must be >= 8")
        if not self.voxel_mm > 0:
            raise ConfigError("voxel_mm: must be > 0")
        if not 1 <= self.n_inclusions_min <= self.n_inclusions_max:
            raise ConfigError("n_inclusions_min/max: need 1 <= min <= max")
        if not 0 <= self.jitter < 0.5:
            raise ConfigError("jitter: must be in [0, 0.5)")
        if self.b1_order not in (0, 1, 2):
            raise ConfigError("b1_order: must be 0, 1 or 2")
        if not 0 <= self.b1_amp_min <= self.b1_amp_max <= 0.5:
            raise ConfigError("b1_amp_min/max: need 0 <= min <= max <= 0.5")
        if not self.b0_smooth_mm > 0:
            raise ConfigError("b0_smooth_mm: must be > 0")
        if not 0 <= self.b0_amp_min <= self.b0_amp_max <= 300:
            raise ConfigError("b0_amp_min/max: need 0 <= min <= max <= 300")

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "PhantomSpec":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in d.items():
            if k not in types:
                raise ConfigError(f"unknown phantom key '{k}'")
            try:
                kw[k] = int(v) if types[k] in ("int", int) else float(v)
            except ValueError:
                raise ConfigError(f"phantom key '{k}': bad value {v!r}") from None
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str) -> "PhantomSpec":
        return cls.from_dict(parse_kv(text))

    def to_text(self) -> str:
        return format_kv(asdict(self), header="phantom spec")


@dataclass(frozen=True, eq=False)
class ParameterMaps:
    t1_ms: np.ndarray
    t2_ms: np.ndarray
    pd: np.ndarray
    mask: np.ndarray
    grid_n: int
    voxel_mm: float


@dataclass(frozen=True, eq=False)
class FieldMaps:
    b1_rel: np.ndarray
    b0_hz: np.ndarray
    grid_n: int
    voxel_mm: float


def _coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    # normalized [-1, 1) coordinates, y down rows, x across columns
    u = (np.arange(n) - n / 2) / (n / 2)
    return np.meshgrid(u, u, indexing="ij")


def _ellipse(y, x, cy, cx, ry, rx, angle):
    c, s = np.cos(angle), np.sin(angle)
    yy, xx = y - cy, x - cx
    a = (c * xx + s * yy) / rx
    b = (-s * xx + c * yy) / ry
    return a * a + b * b <= 1.0


def generate_phantom(spec: PhantomSpec, seed: int | None = None):
    """Random head phantom: tissue maps plus smooth B1 and B0 fields.

    Returns ``(ParameterMaps, FieldMaps)``; the output is a pure function of
    ``(spec, seed)`` (``seed`` defaults to ``spec.seed``).
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    n = spec.grid_n
    y, x = _coords(n)

    ry, rx = rng.uniform(0.78, 0.88), rng.uniform(0.62, 0.74)
    mask = _ellipse(y, x, 0.0, 0.0, ry, rx, rng.uniform(-0.15, 0.15))

    t1 = np.zeros((n, n))
    t2 = np.zeros((n, n))
    pd = np.zeros((n, n))

    def paint(region, cls):
        c1, c2, cp = TISSUES[cls]
        j = rng.uniform(1 - spec.jitter, 1 + spec.jitter, size=3)
        t1[region], t2[region], pd[region] = c1 * j[0], c2 * j[1], cp * j[2]

    paint(mask, "wm")
    n_inc = int(rng.integers(spec.n_inclusions_min, spec.n_inclusions_max + 1))
    classes = ("gm", "csf", "wm")
    for _ in range(n_inc):
        cy, cx = rng.uniform(-0.6, 0.6) * ry, rng.uniform(-0.6, 0.6) * rx
        r_a, r_b = rng.uniform(0.08, 0.3), rng.uniform(0.08, 0.3)
        region = _ellipse(y, x, cy, cx, r_a, r_b, rng.uniform(0, np.pi)) & mask
        paint(region, classes[int(rng.integers(0, 3))])

    # B1: second-order polynomial shading around 1
    terms = [np.ones_like(x)]
    if spec.b1_order >= 1:
        terms += [x, y]
    if spec.b1_order >= 2:
        terms += [x * x, y * y, x * y]
    coef = rng.normal(size=len(terms))
    coef[0] = 0.0
    shade = sum(c * t for c, t in zip(coef, terms))
    if spec.b1_order == 0 or np.ptp(shade[mask]) == 0:
        shade = np.zeros_like(x)
    else:
        shade = shade - shade[mask].mean()
        shade = shade / np.abs(shade[mask]).max()
    b1 = 1.0 + rng.uniform(spec.b1_amp_min, spec.b1_amp_max) * shade
    b1 = np.clip(b1, 0.5, 1.5)

    # B0: smoothed white noise plus a linear ramp, scaled then clipped
    noise = gaussian_filter(rng.normal(size=(n, n)), spec.b0_smooth_mm / spec.voxel_mm,
                            mode="reflect")
    noise = noise / max(np.abs(noise).max(), 1e-12)
    ramp = rng.uniform(-0.5, 0.5) * x + rng.uniform(-0.5, 0.5) * y
    field = noise + ramp
    field = field - field[mask].mean()
    amp = rng.uniform(spec.b0_amp_min, spec.b0_amp_max)
    peak = np.abs(field[mask]).max()
    b0 = field * (amp / peak if peak > 0 else 0.0)
    b0 = np.clip(b0, -spec.b0_amp_max, spec.b0_amp_max)

    pm = ParameterMaps(t1_ms=t1, t2_ms=t2, pd=pd, mask=mask, grid_n=n, voxel_mm=spec.voxel_mm)
    fm = FieldMaps(b1_rel=b1, b0_hz=b0, grid_n=n, voxel_mm=spec.voxel_mm)
    return pm, fm


def check_invariants(pm: ParameterMaps, fm: FieldMaps) -> None:
    """Raise ``AssertionError`` if any map invariant is violated."""
    shape = pm.mask.shape
    for img in (pm.t1_ms, pm.t2_ms, pm.pd, fm.b1_rel, fm.b0_hz):
        assert img.shape == shape
    m = pm.mask
    assert np.all(pm.t2_ms[m] <= pm.t1_ms[m])
    assert np.all(pm.pd[m] > 0)
    assert np.all(pm.pd[~m] == 0)
    assert np.all((fm.b1_rel[m] >= 0.5) & (fm.b1_rel[m] <= 1.5))
    assert np.all(np.abs(fm.b0_hz[m]) <= 300)
