"""Command-line entry point: ``safe-mrf <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.

Tables written by ``eval`` are tab-separated with the columns
``map  nrmse  rmse  ssim``; ``ssim`` uses the reference map's masked
maximum as dynamic range.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numba
import numpy as np
from threadpoolctl import threadpool_limits

from . import dictionary as dct
from .config import get_floats, parse_kv
from .estimator import init_network, predict_fields, train
from .experiment import GRIDS, ExperimentConfig, run_pipeline, target_maps
from .forward import clean_coeffs, corrupt, time_segmentation
from .metrics import MetricError, SsimConfig, masked_rmse, nrmse, ssim
from .mfi import mfi_deblur, plan_mfi
from .phantom import ParameterMaps, PhantomSpec, generate_phantom
from .qmap import QmapError, read_meta, read_qmap, write_qmap
from .seqmodel import resolve_sequence
from .spiral import design_spiral
from .store import (load_basis, load_dictionary, load_map, load_maps, load_mask, load_net,
                    save_basis, save_dictionary, save_maps, save_net, save_trajectory,
                    traj_from_meta, traj_meta)

log = logging.getLogger("safe_mrf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _read_text(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{p}: no such file")
    return p.read_text()


def _grid(arg: str) -> dct.ParamGrid:
    if arg in GRIDS:
        return GRIDS[arg]()
    d = parse_kv(_read_text(arg))
    return dct.ParamGrid(tuple(get_floats(d, "t1_ms")), tuple(get_floats(d, "t2_ms")),
                         tuple(get_floats(d, "b1_rel")))


@contextlib.contextmanager
def _threads(n: int | None):
    """Numba workers = ``n``; BLAS is always single-threaded.

    Multithreaded BLAS splits long reductions (e.g. the dictionary Gram
    matrix) across threads, which changes rounding with the thread count.
    """
    old = numba.get_num_threads()
    if n is not None:
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    try:
        with threadpool_limits(limits=1, user_api="blas"):
            yield
    finally:
        numba.set_num_threads(old)


def _coeff_meta(path) -> dict:
    meta = read_meta(path)
    if "trajectory" not in meta:
        raise QmapError(f"{path}: sidecar has no trajectory")
    return meta


# -- subcommands -------------------------------------------------------------

def cmd_phantom(a) -> None:
    spec = PhantomSpec.from_text(_read_text(a.config)) if a.config else PhantomSpec()
    if a.grid_n is not None:
        spec = replace(spec, grid_n=a.grid_n)
    seed = spec.seed if a.seed is None else a.seed
    pm, fm = generate_phantom(spec, seed)
    save_maps(a.out, pm, fm, seed=seed)


def cmd_dict(a) -> None:
    d = dct.build_dictionary(resolve_sequence(a.seq), _grid(a.grid))
    save_dictionary(a.out, d)
    print(f"{d.n_atoms} atoms x {d.atoms.shape[1]} TRs -> {a.out}")


def cmd_compress(a) -> None:
    d = load_dictionary(a.dict)
    basis, cd = dct.compress(d, a.K)
    save_basis(a.out, basis, cd, d.seq_name)
    print(f"K={a.K} tail energy {basis.tail_energy():.6g} basis {basis.basis_id[:12]}")


def cmd_synth(a) -> None:
    pm, fm = load_maps(a.maps)
    basis, cd, bmeta = load_basis(a.basis)
    seq = resolve_sequence(a.seq or bmeta["seq_name"])
    traj = design_spiral(seq.readout_ms, pm.grid_n * pm.voxel_mm, pm.grid_n, a.dwell_us)
    seg = time_segmentation(traj, a.segments, a.segmentation)
    clean = clean_coeffs(pm, fm, basis, cd)
    corrupted, samples = corrupt(clean, fm.b0_hz, traj, seg)
    out = Path(a.out or a.maps)
    meta = {"basis_id": basis.basis_id, "trajectory": traj_meta(traj),
            "n_segments": a.segments, "segmentation": a.segmentation,
            "b0_source": str(Path(a.maps) / "b0.qmap"), "grid_n": pm.grid_n,
            "voxel_mm": pm.voxel_mm}
    write_qmap(out / "clean.qmap", clean.channels, {"kind": "coefficients", **meta,
                                                    "b0_source": "none"})
    write_qmap(out / "corrupted.qmap", corrupted.channels, {"kind": "coefficients", **meta})
    write_qmap(out / "samples.qmap", samples, {"kind": "samples", **meta})
    save_trajectory(out / "traj.qmap", traj)


def _exp_config(a) -> ExperimentConfig:
    cfg = ExperimentConfig.from_text(_read_text(a.config)) if a.config else ExperimentConfig()
    if a.seed is not None:
        cfg = replace(cfg, seed=a.seed)
    return cfg


def cmd_train(a) -> None:
    cfg = _exp_config(a)
    if a.epochs is not None:
        cfg = replace(cfg, training=replace(cfg.training, epochs=a.epochs))
    data = []
    for d in a.data:
        pm, fm = load_maps(d)
        x = read_qmap(Path(d) / "corrupted.qmap", expect="c64").astype(np.complex128)
        if x.shape[1:] != pm.mask.shape:
            raise QmapError(f"{d}/corrupted.qmap: shape {x.shape} does not match the maps")
        data.append((cfg.norm.encode_input(x, pm.mask).astype(np.float32),
                     target_maps(pm, fm, cfg.norm), pm.mask))
    ncfg = replace(cfg.network, in_channels=data[0][0].shape[-1])
    net = init_network(ncfg, cfg.seed)
    net, history = train(net, data, replace(cfg.training, seed=cfg.seed))
    save_net(a.out, net)
    table = "epoch\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(history))
    if a.history:
        Path(a.history).write_text(table)
    else:
        sys.stdout.write(table)


def cmd_predict(a) -> None:
    net = load_net(a.net)
    x = read_qmap(a.coeffs, expect="c64").astype(np.complex128)
    mask = load_mask(a.mask)
    vox = float(read_meta(a.mask).get("voxel_mm", 2.0))
    fm, pm = predict_fields(net, x, _exp_config(a).norm, mask, vox)
    save_maps(a.out, pm, fm, suffix="_pred")


def cmd_mfi(a) -> None:
    meta = _coeff_meta(a.samples)
    traj = traj_from_meta(meta["trajectory"])
    samples = read_qmap(a.samples, expect="c64").astype(np.complex128)
    b0, _ = load_map(a.b0)
    mask = load_mask(a.mask)
    b0 = np.where(mask, b0.astype(np.float64), 0.0)
    plan = plan_mfi(float(b0[mask].min()), float(b0[mask].max()), traj, a.lam)
    out = mfi_deblur(samples, traj, b0, plan)
    write_qmap(a.out, out, {"kind": "coefficients", **{k: meta[k] for k in meta if k != "kind"},
                            "b0_source": str(a.b0), "mfi_freqs_hz": plan.freqs_hz.tolist(),
                            "mfi_lambda": plan.lam})


def cmd_match(a) -> None:
    _, cd, _ = load_basis(a.basis)
    x = read_qmap(a.coeffs, expect="c64").astype(np.complex128)
    mask = load_mask(a.mask)
    if x.shape[1:] != mask.shape:
        raise QmapError(f"{a.coeffs}: shape {x.shape} does not match mask {mask.shape}")
    b1 = None
    if a.mode == "b1_corrected":
        if not a.b1:
            raise UsageError("match: --mode b1_corrected needs --b1")
        b1, _ = load_map(a.b1)
    t1, t2, pd, corr = dct.match_maps(x, mask, cd, a.mode, b1)
    n = mask.shape[0]
    vox = float(read_meta(a.mask).get("voxel_mm", 2.0))
    save_maps(a.out, ParameterMaps(t1, t2, pd, mask, n, vox), suffix=a.suffix, mode=a.mode)
    write_qmap(Path(a.out) / f"corr{a.suffix}.qmap", corr,
               {"kind": "map", "name": "corr", "units": "1", "grid_n": n, "voxel_mm": vox})


def cmd_eval(a) -> None:
    ref_dir, test_dir = Path(a.ref), Path(a.test)
    mask = load_mask(a.mask or ref_dir / "mask.qmap")
    rows = ["map\tnrmse\trmse\tssim"]
    for name in a.maps:
        ref, _ = load_map(ref_dir / f"{name}.qmap")
        test, _ = load_map(test_dir / f"{name}{a.suffix}.qmap")
        if ref.shape != mask.shape or test.shape != mask.shape:
            raise QmapError(f"{name}: map shapes {ref.shape}, {test.shape} differ from mask")
        ref, test = ref.astype(np.float64), test.astype(np.float64)
        peak = float(np.abs(ref[mask]).max())
        try:
            s = ssim(test, ref, mask, SsimConfig(dynamic_range=peak if peak > 0 else 1.0))
        except MetricError:
            s = float("nan")
        rows.append(f"{name}\t{nrmse(test, ref, mask):.6g}\t{masked_rmse(test, ref, mask):.6g}"
                    f"\t{s:.6g}")
    text = "\n".join(rows) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)


def to_gray(img: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Linear window [vmin, vmax] -> uint8 (rounded, clipped)."""
    if not vmax > vmin:
        raise ValueError(f"render window needs vmax > vmin, got [{vmin}, {vmax}]")
    u = np.clip((np.asarray(img, dtype=np.float64) - vmin) / (vmax - vmin), 0.0, 1.0)
    return np.rint(u * 255.0).astype(np.uint8)


def cmd_render(a) -> None:
    arr = read_qmap(a.input)
    if arr.ndim == 3:
        if not 0 <= a.index < arr.shape[0]:
            raise QmapError(f"{a.input}: index {a.index} outside [0, {arr.shape[0]})")
        arr = arr[a.index]
    if arr.ndim != 2:
        raise QmapError(f"{a.input}: cannot render shape {arr.shape}")
    part = a.part or ("abs" if np.iscomplexobj(arr) else "real")
    img = {"abs": np.abs, "real": np.real, "imag": np.imag, "phase": np.angle}[part](arr)
    g = to_gray(img, a.vmin, a.vmax)
    out = Path(a.output)
    if out.suffix.lower() == ".png":
        from PIL import Image
        out.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(g, mode="L").save(out)
    elif out.suffix.lower() == ".pgm":
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode() + g.tobytes())
    else:
        raise UsageError(f"render: output {out} must end in .pgm or .png")


def hash_outputs(out_dir) -> list[tuple[str, str]]:
    root = Path(out_dir)
    return [(p.relative_to(root).as_posix(), hashlib.sha256(p.read_bytes()).hexdigest())
            for p in sorted(root.rglob("*.qmap"))]


def cmd_pipeline(a) -> None:
    cfg = _exp_config(a)
    t0 = time.perf_counter()
    rows = run_pipeline(cfg, a.out)
    hashes = hash_outputs(a.out)
    Path(a.out, "hashes.tsv").write_text(
        "file\tsha256\n" + "".join(f"{f}\t{h}\n" for f, h in hashes))
    digest = hashlib.sha256("".join(h for _, h in hashes).encode()).hexdigest()
    print(f"pipeline: {len(rows)} test phantoms, {len(hashes)} files, "
          f"{time.perf_counter() - t0:.1f}s, digest {digest}")


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="safe-mrf", description="Synthetic SAFE-MRF pipeline.")
    p.add_argument("--threads", type=int, default=None, help="numba worker threads (BLAS stays single-threaded)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="random phantom -> maps")
    s.add_argument("--config", help="phantom spec file")
    s.add_argument("--grid-n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("dict", help="sequence + grid -> dictionary")
    s.add_argument("--seq", required=True, help="builtin name or sequence file")
    s.add_argument("--grid", default="standard", help="standard, coarse or a grid file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dict)

    s = sub.add_parser("compress", help="dictionary -> rank-K basis")
    s.add_argument("--dict", required=True)
    s.add_argument("-K", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("synth", help="maps + basis -> clean/corrupted coefficients, samples")
    s.add_argument("--maps", required=True)
    s.add_argument("--basis", required=True)
    s.add_argument("--seq", help="defaults to the basis sequence")
    s.add_argument("--dwell-us", type=float, default=4.0)
    s.add_argument("--segments", type=int, default=8)
    s.add_argument("--segmentation", choices=("ls", "rect"), default="ls")
    s.add_argument("--out", help="defaults to the maps directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the field estimator")
    s.add_argument("--data", nargs="+", required=True, help="synth output directories")
    s.add_argument("--config", help="experiment config (network/training keys)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--history", help="write the loss table here instead of stdout")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="coefficients -> field and parameter maps")
    s.add_argument("--net", required=True)
    s.add_argument("--coeffs", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("mfi-correct", help="samples + b0 -> deblurred coefficients")
    s.add_argument("--samples", required=True)
    s.add_argument("--b0", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=1e-6)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mfi)

    s = sub.add_parser("match", help="coefficients -> T1/T2/PD")
    s.add_argument("--coeffs", required=True)
    s.add_argument("--basis", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--mode", choices=dct.MODES, default="uncorrected")
    s.add_argument("--b1")
    s.add_argument("--suffix", default="_match")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("eval", help="reference vs test maps -> TSV table")
    s.add_argument("ref", help="directory with reference maps and mask")
    s.add_argument("test", help="directory with test maps")
    s.add_argument("--suffix", default="", help="suffix of the test map files")
    s.add_argument("--maps", nargs="+", default=["t1", "t2", "pd"])
    s.add_argument("--mask")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("render", help="QMAP -> 8-bit PGM/PNG")
    s.add_argument("input")
    s.add_argument("output", nargs="?", default="out.pgm")
    s.add_argument("--vmin", type=float, default=0.0)
    s.add_argument("--vmax", type=float, default=1.0)
    s.add_argument("--index", type=int, default=0, help="channel of a 3-D array")
    s.add_argument("--part", choices=("abs", "real", "imag", "phase"),
                   help="default: abs for complex input, the values themselves otherwise")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("pipeline", help="config-driven end-to-end run")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="pipeline_out")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:        # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(a.threads):
            a.func(a)
    except UsageError as exc:
        print(f"safe-mrf: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"safe-mrf {a.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
