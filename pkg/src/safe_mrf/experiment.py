"""End-to-end synthetic experiment: data synthesis, training, and field-corrected matching."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import dictionary as dct
from .config import ConfigError, parse_kv, subsection
from .estimator import (Network, NetworkConfig, NormalizationSpec, TrainConfig, init_network,
                        predict_fields, train)
from .forward import CoefficientMaps, clean_coeffs, corrupt, recon, time_segmentation
from .metrics import masked_rmse, nrmse
from .mfi import mfi_deblur, plan_mfi
from .phantom import FieldMaps, ParameterMaps, PhantomSpec, generate_phantom
from .qmap import write_qmap
from .seqmodel import SequenceParams, resolve_sequence
from .spiral import SpiralTrajectory, design_spiral, grid_forward
from .store import save_basis, save_maps, save_net, save_trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    sequence: str = "seq2"
    grid: str = "standard"          # "standard" or "coarse"
    rank: int = 5
    dwell_us: float = 4.0
    n_segments: int = 8
    segmentation: str = "ls"
    n_train: int = 200
    n_test: int = 20
    seed: int = 0
    phantom: PhantomSpec = field(default_factory=lambda: PhantomSpec(grid_n=64))
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    norm: NormalizationSpec = field(default_factory=NormalizationSpec)
    mfi_lambda: float = 1e-6

    def __post_init__(self):
        if self.grid not in GRIDS:
            raise ConfigError(f"grid: unknown grid {self.grid!r}; choose from {sorted(GRIDS)}")
        if self.segmentation not in ("ls", "rect"):
            raise ConfigError("segmentation: must be 'ls' or 'rect'")
        if self.rank < 1 or self.n_segments < 1 or self.n_train < 1 or self.n_test < 0:
            raise ConfigError("rank, n_segments and n_train must be >= 1, n_test >= 0")
        if not self.dwell_us > 0 or not self.mfi_lambda > 0:
            raise ConfigError("dwell_us and mfi_lambda must be > 0")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        d = parse_kv(text)
        top = {f.name: f for f in fields(cls)}
        kw = {}
        for key, val in d.items():
            if "." in key:
                continue
            if key not in top or key in ("phantom", "network", "training", "norm"):
                raise ConfigError(f"unknown pipeline key '{key}'")
            cur = getattr(cls(), key)
            try:
                kw[key] = type(cur)(val.strip())
            except ValueError:
                raise ConfigError(f"key '{key}': bad value {val!r}") from None
        for prefix in ("phantom", "network", "training"):
            sub = subsection(d, prefix)
            if sub:
                kw[prefix] = _sub_dataclass(getattr(cls(), prefix), sub, prefix)
        unknown = [k for k in d if "." in k and k.split(".")[0] not in ("phantom", "network",
                                                                        "training")]
        if unknown:
            raise ConfigError(f"unknown pipeline key '{unknown[0]}'")
        return cls(**kw)


def _sub_dataclass(obj, sub: dict[str, str], prefix: str):
    kw = {}
    names = {f.name for f in fields(obj)}
    for k, v in sub.items():
        if k not in names:
            raise ConfigError(f"unknown key '{prefix}.{k}'")
        cur = getattr(obj, k)
        try:
            if isinstance(cur, tuple):
                kw[k] = tuple(float(t) for t in v.split())
            else:
                kw[k] = type(cur)(v.strip())
        except (ValueError, TypeError):
            raise ConfigError(f"key '{prefix}.{k}': bad value {v!r}") from None
    return replace(obj, **kw)


def coarse_grid() -> dct.ParamGrid:
    """16 log T1, 14 log T2 and 7 B1 values over the standard ranges."""
    return dct.ParamGrid(
        t1_ms=np.geomspace(100.0, 3000.0, 16),
        t2_ms=np.geomspace(10.0, 500.0, 14),
        b1_rel=np.round(np.linspace(0.7, 1.3, 7), 10),
    )


GRIDS = {"standard": dct.standard_grid, "coarse": coarse_grid}


@dataclass(eq=False)
class Physics:
    seq: SequenceParams
    dictionary: dct.Dictionary
    basis: dct.SubspaceBasis
    cd: dct.CompressedDictionary
    traj: SpiralTrajectory
    n_segments: int
    segmentation: str

    @property
    def seg(self):
        return time_segmentation(self.traj, self.n_segments, self.segmentation)


def build_physics(cfg: ExperimentConfig) -> Physics:
    seq = resolve_sequence(cfg.sequence)
    grid = GRIDS[cfg.grid]()
    t0 = time.perf_counter()
    d = dct.build_dictionary(seq, grid)
    basis, cd = dct.compress(d, cfg.rank)
    log.info("dictionary %d atoms, K=%d, %.1fs", d.n_atoms, cfg.rank, time.perf_counter() - t0)
    ps = cfg.phantom
    traj = design_spiral(seq.readout_ms, ps.grid_n * ps.voxel_mm, ps.grid_n, cfg.dwell_us)
    return Physics(seq, d, basis, cd, traj, cfg.n_segments, cfg.segmentation)


@dataclass(eq=False)
class Sample:
    pm: ParameterMaps
    fm: FieldMaps
    clean: CoefficientMaps
    corrupted: CoefficientMaps
    samples: np.ndarray

    def clean_recon(self, traj: SpiralTrajectory) -> np.ndarray:
        """B0-free gridding reconstruction of the clean coefficient maps."""
        return recon(np.stack([grid_forward(c, traj) for c in self.clean.channels]), traj)


def synthesize(pm: ParameterMaps, fm: FieldMaps, phys: Physics) -> Sample:
    clean = clean_coeffs(pm, fm, phys.basis, phys.cd)
    corrupted, samples = corrupt(clean, fm.b0_hz, phys.traj, phys.seg)
    return Sample(pm, fm, clean, corrupted, samples)


def target_maps(pm: ParameterMaps, fm: FieldMaps, norm: NormalizationSpec) -> np.ndarray:
    phys = np.stack([fm.b1_rel, fm.b0_hz, pm.t1_ms, pm.t2_ms, pm.pd], axis=-1)
    return norm.to_unit(phys)


def make_dataset(cfg: ExperimentConfig, phys: Physics, seeds) -> tuple[list, list]:
    """Phantoms for ``seeds``; returns ``(training tuples, Sample records)``."""
    data, recs = [], []
    for s in seeds:
        pm, fm = generate_phantom(cfg.phantom, int(s))
        rec = synthesize(pm, fm, phys)
        x = cfg.norm.encode_input(rec.corrupted.channels, pm.mask)
        data.append((x.astype(np.float32), target_maps(pm, fm, cfg.norm), pm.mask))
        recs.append(rec)
    return data, recs


def split_seeds(cfg: ExperimentConfig):
    base = cfg.seed * 100_003
    train_seeds = [base + i for i in range(cfg.n_train)]
    test_seeds = [base + 50_000 + i for i in range(cfg.n_test)]
    return train_seeds, test_seeds


def constant_baseline(train_recs, test_recs) -> dict[str, float]:
    """Masked RMSE of predicting the training-set mean B1 and B0 everywhere."""
    out = {}
    for key, attr in (("b1", "b1_rel"), ("b0", "b0_hz")):
        mean = np.concatenate([getattr(r.fm, attr)[r.pm.mask] for r in train_recs]).mean()
        err = np.concatenate([getattr(r.fm, attr)[r.pm.mask] - mean for r in test_recs])
        out[key] = float(np.sqrt(np.mean(err ** 2)))
    return out


def fit(cfg: ExperimentConfig, data, callback=None) -> tuple[Network, list[float]]:
    net = init_network(cfg.network, cfg.seed)
    tc = replace(cfg.training, seed=cfg.seed)
    return train(net, data, tc, callback=callback)


@dataclass(eq=False)
class CorrectedMaps:
    t1_ms: np.ndarray
    t2_ms: np.ndarray
    pd: np.ndarray
    coeffs: np.ndarray


def corrected_match(samples: np.ndarray, b0_hz: np.ndarray, b1_rel: np.ndarray,
                    mask: np.ndarray, phys: Physics, mfi_lambda: float = 1e-6) -> CorrectedMaps:
    """MFI deblurring with ``b0_hz`` followed by B1-corrected matching with ``b1_rel``."""
    b0 = np.where(mask, b0_hz, 0.0)
    lo, hi = float(b0[mask].min()), float(b0[mask].max())
    plan = plan_mfi(lo, hi, phys.traj, mfi_lambda)
    deblurred = mfi_deblur(samples, phys.traj, b0, plan)
    t1, t2, pd, _ = dct.match_maps(deblurred, mask, phys.cd, "b1_corrected", b1_rel)
    return CorrectedMaps(t1, t2, pd, deblurred)


def uncorrected_match(corrupted: np.ndarray, mask: np.ndarray, phys: Physics) -> CorrectedMaps:
    t1, t2, pd, _ = dct.match_maps(corrupted, mask, phys.cd, "uncorrected")
    return CorrectedMaps(t1, t2, pd, corrupted)


def predict(net: Network, rec: Sample, cfg: ExperimentConfig):
    return predict_fields(net, rec.corrupted.channels, cfg.norm, rec.pm.mask, rec.pm.voxel_mm)


def evaluate(rec: Sample, phys: Physics, net: Network, cfg: ExperimentConfig) -> dict:
    """Predicted fields plus uncorrected and field-corrected maps for one held-out phantom."""
    fm_hat, pm_hat = predict(net, rec, cfg)
    mask = rec.pm.mask
    unc = uncorrected_match(rec.corrupted.channels, mask, phys)
    safe = corrected_match(rec.samples, fm_hat.b0_hz, fm_hat.b1_rel, mask, phys, cfg.mfi_lambda)
    return {"fm_hat": fm_hat, "pm_hat": pm_hat, "uncorrected": unc, "corrected": safe}


def run_pipeline(cfg: ExperimentConfig, out_dir, on_file=None) -> list[dict]:
    """Config-driven end-to-end run; writes every artifact below ``out_dir``.

    Returns one metrics row per held-out phantom.
    """
    out = Path(out_dir)
    phys = build_physics(cfg)
    save_basis(out / "basis.qmap", phys.basis, phys.cd, phys.seq.name)
    save_trajectory(out / "traj.qmap", phys.traj)
    train_seeds, test_seeds = split_seeds(cfg)
    data, _ = make_dataset(cfg, phys, train_seeds)
    net, history = fit(cfg, data)
    save_net(out / "net.qmap", net)
    (out / "history.tsv").write_text(
        "epoch\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(history)))
    _, recs = make_dataset(cfg, phys, test_seeds)
    rows = []
    for i, rec in enumerate(recs):
        d = out / f"test{i:03d}"
        mask = rec.pm.mask
        save_maps(d, rec.pm, rec.fm)
        write_qmap(d / "corrupted.qmap", rec.corrupted.channels,
                   {"kind": "coefficients", "basis_id": rec.corrupted.basis_id})
        res = evaluate(rec, phys, net, cfg)
        save_maps(d, res["pm_hat"], res["fm_hat"], suffix="_pred")
        for tag in ("uncorrected", "corrected"):
            m = res[tag]
            short = "unc" if tag == "uncorrected" else "safe"
            pm = ParameterMaps(m.t1_ms, m.t2_ms, m.pd, mask, rec.pm.grid_n, rec.pm.voxel_mm)
            save_maps(d, pm, suffix="_" + short)
        rows.append({
            "phantom": i,
            "seed": test_seeds[i],
            "b1_rmse": masked_rmse(res["fm_hat"].b1_rel, rec.fm.b1_rel, mask),
            "b0_rmse_hz": masked_rmse(res["fm_hat"].b0_hz, rec.fm.b0_hz, mask),
            "t1_nrmse_unc": nrmse(res["uncorrected"].t1_ms, rec.pm.t1_ms, mask),
            "t1_nrmse_safe": nrmse(res["corrected"].t1_ms, rec.pm.t1_ms, mask),
            "t2_nrmse_unc": nrmse(res["uncorrected"].t2_ms, rec.pm.t2_ms, mask),
            "t2_nrmse_safe": nrmse(res["corrected"].t2_ms, rec.pm.t2_ms, mask),
        })
    cols = list(rows[0]) if rows else ["phantom"]
    lines = ["\t".join(cols)] + ["\t".join(_cell(r[c]) for c in cols) for r in rows]
    (out / "metrics.tsv").write_text("\n".join(lines) + "\n")
    return rows


def _cell(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)
