"""Masked-SSIM training loop (Adam) and field prediction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..metrics import MetricError, SsimConfig, ssim_and_grad
from ..phantom import FieldMaps, ParameterMaps
from .network import Network, backward, forward

log = logging.getLogger(__name__)

OUTPUTS = ("b1", "b0", "t1", "t2", "pd")


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine maps of each output channel onto [0, 1] and the input scale rule."""
    b1: tuple[float, float] = (0.5, 1.5)
    b0: tuple[float, float] = (-200.0, 200.0)
    t1: tuple[float, float] = (0.0, 3000.0)
    t2: tuple[float, float] = (0.0, 500.0)
    pd: tuple[float, float] = (0.0, 1.5)
    input_percentile: float = 99.0

    def __post_init__(self):
        for name in OUTPUTS:
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ValueError(f"normalization range for {name} is empty")

    def ranges(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in OUTPUTS], dtype=np.float64)

    def to_unit(self, maps: np.ndarray) -> np.ndarray:
        """(..., 5) physical -> normalized."""
        r = self.ranges()
        return (maps - r[:, 0]) / (r[:, 1] - r[:, 0])

    def from_unit(self, y: np.ndarray) -> np.ndarray:
        r = self.ranges()
        return y * (r[:, 1] - r[:, 0]) + r[:, 0]

    def input_scale(self, channels: np.ndarray, mask: np.ndarray) -> float:
        mag = np.abs(channels[0][mask])
        s = float(np.percentile(mag, self.input_percentile)) if mag.size else 0.0
        return s if s > 0 else 1.0

    def encode_input(self, channels: np.ndarray, mask: np.ndarray,
                     magnitude_only: bool = False) -> np.ndarray:
        """(K, H, W) complex -> (H, W, 2K) real (or (H, W, K) magnitudes)."""
        c = channels / self.input_scale(channels, mask)
        parts = [np.abs(c)] if magnitude_only else [c.real, c.imag]
        return np.concatenate(parts, axis=0).transpose(1, 2, 0)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 30
    seed: int = 0
    loss_weights: tuple[float, ...] = (1.0, 1.0, 0.5, 0.5, 0.5)
    ssim: SsimConfig = field(default_factory=SsimConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if len(self.loss_weights) != 5 or min(self.loss_weights) < 0:
            raise ValueError("loss_weights: five nonnegative values expected")
        if max(self.loss_weights[:2]) <= 0:
            raise ValueError("loss_weights: b1 or b0 weight must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")


def masked_ssim_loss(pred, target, mask, weights, ssim_cfg=SsimConfig()):
    """Sum over channels of w_ch * (1 - SSIM); batch mean. Returns (loss, dloss/dpred)."""
    n = pred.shape[0]
    loss = 0.0
    dpred = np.zeros(pred.shape, dtype=np.float64)
    for i in range(n):
        if int(mask[i].sum()) < ssim_cfg.window ** 2:
            raise MetricError(f"mask of image {i} has fewer than {ssim_cfg.window ** 2} pixels")
        for ch, w in enumerate(weights):
            if w == 0:
                continue
            s, g = ssim_and_grad(pred[i, ..., ch].astype(np.float64),
                                 target[i, ..., ch].astype(np.float64), mask[i], ssim_cfg)
            loss += w * (1.0 - s)
            dpred[i, ..., ch] = -w * g
    return loss / n, dpred / n


def loss_and_grad(net: Network, inputs, targets, masks, weights=(1.0, 1.0, 0.5, 0.5, 0.5),
                  ssim_cfg: SsimConfig = SsimConfig()):
    """Masked SSIM loss and exact parameter gradients for a batch (or one image)."""
    if inputs.ndim == 3:
        inputs, targets, masks = inputs[None], targets[None], masks[None]
    pred, caches = forward(net, inputs, keep_cache=True)
    loss, dpred = masked_ssim_loss(pred, targets, masks, weights, ssim_cfg)
    grads = backward(net, dpred.astype(net.dtype), caches)
    return loss, grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1 - c.beta1 ** self.t
        bc2 = 1 - c.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            update = c.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)
            params[k] -= update.astype(params[k].dtype)


def train(net: Network, dataset, cfg: TrainConfig, callback=None):
    """Adam over seed-shuffled mini-batches.

    ``dataset`` is a sequence of ``(input (H,W,C), target (H,W,5), mask (H,W))``.
    Returns a trained copy of ``net`` and the per-epoch mean loss.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    shape = dataset[0][0].shape[:2]
    for i, (x, y, m) in enumerate(dataset):
        if x.shape[:2] != shape or y.shape[:2] != shape or m.shape != shape:
            raise ValueError(f"dataset item {i} has geometry {x.shape[:2]}, expected {shape}")
    net = net.copy()
    xs = np.stack([d[0] for d in dataset]).astype(net.dtype)
    ys = np.stack([d[1] for d in dataset]).astype(np.float64)
    ms = np.stack([np.asarray(d[2], dtype=bool) for d in dataset])
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.params, cfg)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = loss_and_grad(net, xs[idx], ys[idx], ms[idx], cfg.loss_weights, cfg.ssim)
            opt.step(net.params, grads)
            total += loss * idx.size
        history.append(total / len(order))
        log.info("epoch %d loss %.5f", epoch, history[-1])
        if callback is not None:
            callback(epoch, history[-1], net)
    return net, history


def _pad_to(x: np.ndarray, div: int):
    h, w = x.shape[:2]
    ph, pw = (-h) % div, (-w) % div
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return x, h, w


def predict_fields(net: Network, channels: np.ndarray, norm: NormalizationSpec, mask: np.ndarray,
                   voxel_mm: float = 2.0, magnitude_only: bool = False):
    """Field maps and auxiliary parameter maps from (K, H, W) coefficient images.

    Outputs are clamped to the normalization ranges and zeroed outside ``mask``.
    """
    mask = np.asarray(mask, dtype=bool)
    if channels.shape[1:] != mask.shape:
        raise ValueError(f"coefficient maps {channels.shape[1:]} and mask {mask.shape} differ")
    x = norm.encode_input(channels, mask, magnitude_only)
    x, h, w = _pad_to(x, 2 ** net.config.levels)
    y = forward(net, x[None])[0][0, :h, :w].astype(np.float64)
    maps = norm.from_unit(np.clip(y, 0.0, 1.0))
    maps[~mask] = 0.0
    n = mask.shape[0]
    fm = FieldMaps(b1_rel=maps[..., 0], b0_hz=maps[..., 1], grid_n=n, voxel_mm=voxel_mm)
    pm = ParameterMaps(t1_ms=maps[..., 2], t2_ms=maps[..., 3], pd=maps[..., 4], mask=mask,
                       grid_n=n, voxel_mm=voxel_mm)
    return fm, pm
