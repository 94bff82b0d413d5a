"""Train the field estimator on synthetic phantoms and report held-out accuracy.

Usage: python3 scripts/train_estimator.py [config] [--out DIR]

Prints per-epoch loss, held-out masked RMSE for B1/B0 against the
constant-mean baseline, and uncorrected vs field-corrected T2 NRMSE.
"""
import argparse
import logging
import time
from pathlib import Path

import numpy as np

from safe_mrf.experiment import (ExperimentConfig, build_physics, constant_baseline, evaluate,
                                 fit, make_dataset, split_seeds)
from safe_mrf.metrics import nrmse
from safe_mrf.store import save_net

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=str(ROOT / "configs" / "acceptance.cfg"))
    ap.add_argument("--out", help="write net.qmap here")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = ExperimentConfig.from_text(Path(a.config).read_text())

    t0 = time.perf_counter()
    phys = build_physics(cfg)
    tr, te = split_seeds(cfg)
    data, train_recs = make_dataset(cfg, phys, tr)
    _, test_recs = make_dataset(cfg, phys, te)
    print(f"data ready in {time.perf_counter() - t0:.0f}s")
    net, hist = fit(cfg, data)
    print(f"trained in {time.perf_counter() - t0:.0f}s; loss {hist[0]:.4f} -> {hist[-1]:.4f}")
    if a.out:
        save_net(Path(a.out) / "net.qmap", net)

    base = constant_baseline(train_recs, test_recs)
    b1, b0, t2u, t2s = [], [], [], []
    for rec in test_recs:
        res = evaluate(rec, phys, net, cfg)
        m = rec.pm.mask
        b1.append(res["fm_hat"].b1_rel[m] - rec.fm.b1_rel[m])
        b0.append(res["fm_hat"].b0_hz[m] - rec.fm.b0_hz[m])
        t2u.append(nrmse(res["uncorrected"].t2_ms, rec.pm.t2_ms, m))
        t2s.append(nrmse(res["corrected"].t2_ms, rec.pm.t2_ms, m))
    rmse = lambda e: float(np.sqrt(np.mean(np.concatenate(e) ** 2)))  # noqa: E731
    print(f"b1 rmse {rmse(b1):.5f} (baseline {base['b1']:.5f})")
    print(f"b0 rmse {rmse(b0):.3f} Hz (baseline {base['b0']:.3f} Hz)")
    for i, (u, s) in enumerate(zip(t2u, t2s)):
        print(f"test {i:2d}  t2 nrmse uncorrected {u:.4f}  corrected {s:.4f}")
    print(f"improved on {sum(s < u for u, s in zip(t2u, t2s))}/{len(t2u)}; "
          f"total {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
