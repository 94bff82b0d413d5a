"""Central finite-difference checks of the analytic network gradients."""
from __future__ import annotations

import numpy as np

from ..metrics import SsimConfig
from .network import Network, forward
from .training import loss_and_grad, masked_ssim_loss


def _loss(net, x, y, m, weights, ssim_cfg):
    pred, _ = forward(net, x)
    return masked_ssim_loss(pred, y, m, weights, ssim_cfg)[0]


def fd_errors(net: Network, x, y, m, weights=(1.0, 1.0, 0.5, 0.5, 0.5), ssim_cfg: SsimConfig | None = None,
              h: float = 1e-6, max_entries: int | None = None, seed: int = 0) -> dict[str, float]:
    """Per-tensor relative error ``max|g - fd| / max|fd|`` for every parameter.

    Run in float64. ``max_entries`` probes a random subset of each tensor. A small
    step keeps the stencil from straddling leaky-ReLU kinks.
    """
    ssim_cfg = ssim_cfg or SsimConfig()
    _, grads = loss_and_grad(net, x, y, m, weights, ssim_cfg)
    rng = np.random.default_rng(seed)
    errs = {}
    for name, p in net.params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        fd = np.empty(idx.size)
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            lp = _loss(net, x, y, m, weights, ssim_cfg)
            flat[i] = old - h
            lm = _loss(net, x, y, m, weights, ssim_cfg)
            flat[i] = old
            fd[n] = (lp - lm) / (2 * h)
        g = grads[name].reshape(-1)[idx]
        scale = max(np.abs(fd).max(), np.abs(g).max(), 1e-12)
        errs[name] = float(np.abs(g - fd).max() / scale)
    return errs
