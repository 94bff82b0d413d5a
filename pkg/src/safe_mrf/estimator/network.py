"""U-Net style encoder-decoder: conv / instance norm / leaky ReLU blocks with skips."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 10
    out_channels: int = 5
    levels: int = 3
    base_filters: int = 16
    kernel_size: int = 3
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.in_channels < 1 or self.out_channels < 1 or self.base_filters < 1:
            raise ConfigError("channel counts must be >= 1")

    def filters(self, level: int) -> int:
        return self.base_filters * 2 ** level


@dataclass(eq=False)
class Network:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    seed: int

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()}, self.seed)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "Network":
        return Network(self.config, {k: v.astype(dtype) for k, v in self.params.items()}, self.seed)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _layout(cfg: NetworkConfig):
    """(name, kind, shape) for every tensor, in a fixed order."""
    k = cfg.kernel_size
    out = []

    def conv(name, cin, cout, bias):
        out.append((name + ".w", "conv", (cin, k, k, cout)))
        if bias:
            out.append((name + ".b", "bias", (cout,)))

    def norm(name, c):
        out.append((name + ".g", "gamma", (c,)))
        out.append((name + ".b", "beta", (c,)))

    cin = cfg.in_channels
    for lv in range(cfg.levels):
        f = cfg.filters(lv)
        conv(f"enc{lv}.conv1", cin, f, False)
        norm(f"enc{lv}.norm1", f)
        conv(f"enc{lv}.conv2", f, f, False)
        norm(f"enc{lv}.norm2", f)
        conv(f"enc{lv}.down", f, f, True)
        cin = f
    fb = cfg.filters(cfg.levels)
    conv("bott.conv1", cin, fb, False)
    norm("bott.norm1", fb)
    conv("bott.conv2", fb, fb, False)
    norm("bott.norm2", fb)
    for lv in reversed(range(cfg.levels)):
        f = cfg.filters(lv)
        conv(f"dec{lv}.up", cfg.filters(lv + 1), f, True)
        conv(f"dec{lv}.conv1", 2 * f, f, False)
        norm(f"dec{lv}.norm1", f)
        conv(f"dec{lv}.conv2", f, f, False)
        norm(f"dec{lv}.norm2", f)
    out.append(("head.w", "conv", (cfg.filters(0), 1, 1, cfg.out_channels)))
    out.append(("head.b", "bias", (cfg.out_channels,)))
    return out


def init_network(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> Network:
    """Fan-in scaled (He) normal weights, unit norm gains, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, kind, shape in _layout(cfg):
        if kind == "conv":
            fan_in = shape[0] * shape[1] * shape[2]
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return Network(cfg, params, seed)


def count_params(cfg: NetworkConfig) -> int:
    """Closed-form parameter count of the architecture."""
    k2 = cfg.kernel_size ** 2
    f = cfg.filters
    total = 0
    cin = cfg.in_channels
    for lv in range(cfg.levels):
        total += k2 * cin * f(lv) + 2 * f(lv) + k2 * f(lv) ** 2 + 2 * f(lv)
        total += k2 * f(lv) ** 2 + f(lv)
        cin = f(lv)
    fb = f(cfg.levels)
    total += k2 * cin * fb + 2 * fb + k2 * fb * fb + 2 * fb
    for lv in range(cfg.levels):
        total += k2 * f(lv + 1) * f(lv) + f(lv)
        total += k2 * 2 * f(lv) * f(lv) + 2 * f(lv) + k2 * f(lv) ** 2 + 2 * f(lv)
    total += f(0) * cfg.out_channels + cfg.out_channels
    return total


def receptive_field(cfg: NetworkConfig) -> int:
    """Receptive field (pixels) of one output pixel along the deepest path."""
    k = cfg.kernel_size
    r, jump = 1, 1.0
    for _ in range(cfg.levels):
        r += 2 * (k - 1) * jump       # two convs
        r += (k - 1) * jump           # stride-2 conv
        jump *= 2
    r += 2 * (k - 1) * jump           # bottleneck
    for _ in range(cfg.levels):
        jump /= 2
        r += 3 * (k - 1) * jump       # up conv + two convs
    return int(r)


def _block(x, p, prefix, slope, caches):
    for i in (1, 2):
        x, c_conv = L.conv2d_forward(x, p[f"{prefix}.conv{i}.w"])
        x, c_norm = L.instance_norm_forward(x, p[f"{prefix}.norm{i}.g"], p[f"{prefix}.norm{i}.b"])
        x, c_act = L.leaky_forward(x, slope)
        caches.append((f"{prefix}.{i}", c_conv, c_norm, c_act))
    return x


def _block_backward(dx, prefix, caches, grads):
    for i in (2, 1):
        name, c_conv, c_norm, c_act = caches.pop()
        assert name == f"{prefix}.{i}"
        dx = L.leaky_backward(dx, c_act)
        dx, grads[f"{prefix}.norm{i}.g"], grads[f"{prefix}.norm{i}.b"] = \
            L.instance_norm_backward(dx, c_norm)
        dx, grads[f"{prefix}.conv{i}.w"], _ = L.conv2d_backward(dx, c_conv)
    return dx


def forward(net: Network, x: np.ndarray, keep_cache: bool = False):
    """Run the network on an NHWC batch. Returns ``(out, cache or None)``."""
    cfg, p = net.config, net.params
    if x.ndim != 4 or x.shape[-1] != cfg.in_channels:
        raise ValueError(f"expected (N, H, W, {cfg.in_channels}) input, got {x.shape}")
    div = 2 ** cfg.levels
    if x.shape[1] % div or x.shape[2] % div:
        raise ValueError(f"spatial dims {x.shape[1:3]} not divisible by 2**levels={div}")
    x = x.astype(net.dtype, copy=False)
    slope = cfg.leaky_slope
    caches: list = []
    skips = []
    for lv in range(cfg.levels):
        x = _block(x, p, f"enc{lv}", slope, caches)
        skips.append(x)
        x, c = L.conv2d_forward(x, p[f"enc{lv}.down.w"], p[f"enc{lv}.down.b"], stride=2)
        caches.append((f"enc{lv}.down", c))
    x = _block(x, p, "bott", slope, caches)
    for lv in reversed(range(cfg.levels)):
        x, c_up = L.upsample_forward(x)
        x, c_conv = L.conv2d_forward(x, p[f"dec{lv}.up.w"], p[f"dec{lv}.up.b"])
        x, c_cat = L.concat_forward(x, skips[lv])
        caches.append((f"dec{lv}.up", c_up, c_conv, c_cat))
        x = _block(x, p, f"dec{lv}", slope, caches)
    out, c_head = L.conv2d_forward(x, p["head.w"], p["head.b"])
    caches.append(("head", c_head))
    return out, (caches if keep_cache else None)


def backward(net: Network, dout: np.ndarray, caches: list) -> dict[str, np.ndarray]:
    """Gradients of all parameters given dLoss/dOutput."""
    cfg = net.config
    caches = list(caches)
    grads: dict[str, np.ndarray] = {}
    name, c_head = caches.pop()
    dx, grads["head.w"], grads["head.b"] = L.conv2d_backward(dout, c_head)
    dskips = {}
    for lv in range(cfg.levels):
        dx = _block_backward(dx, f"dec{lv}", caches, grads)
        name, c_up, c_conv, c_cat = caches.pop()
        dx, dskips[lv] = L.concat_backward(dx, c_cat)
        dx, grads[f"dec{lv}.up.w"], grads[f"dec{lv}.up.b"] = L.conv2d_backward(dx, c_conv)
        dx = L.upsample_backward(dx, c_up)
    dx = _block_backward(dx, "bott", caches, grads)
    for lv in reversed(range(cfg.levels)):
        name, c = caches.pop()
        dx, grads[f"enc{lv}.down.w"], grads[f"enc{lv}.down.b"] = L.conv2d_backward(dx, c)
        dx = dx + dskips[lv]
        dx = _block_backward(dx, f"enc{lv}", caches, grads)
    assert not caches
    return grads


def forward_pass(net: Network, x: np.ndarray) -> np.ndarray:
    """Network output for an (N, H, W, C) or (H, W, C) input."""
    single = x.ndim == 3
    out, _ = forward(net, x[None] if single else x)
    return out[0] if single else out
