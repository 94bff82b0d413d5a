"""QMAP persistence for maps, dictionaries, bases, trajectories and networks.

Sidecar keys (all files): ``kind`` plus the kind-specific keys below.

- ``map``: ``name``, ``units``, ``grid_n``, ``voxel_mm``
- ``dictionary``: ``seq_name``, ``grid`` (axes), ``n_atoms``, ``n_tr``
- ``basis``: ``seq_name``, ``grid``, ``K``, ``singular_values``, ``basis_id``, ``tail_energy``
- ``coefficients``/``samples``: ``basis_id``, ``trajectory``, ``n_segments``,
  ``segmentation``, ``b0_source``, ``grid_n``, ``voxel_mm``
- ``network``: ``config``, ``names``, ``seed``
"""
from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dictionary import CompressedDictionary, Dictionary, ParamGrid, SubspaceBasis
from .estimator import Network, NetworkConfig
from .estimator.network import _layout
from .phantom import FieldMaps, ParameterMaps
from .qmap import QmapError, read_meta, read_qmap, read_qmap_records, write_qmap
from .spiral import SpiralTrajectory, design_spiral

MAP_UNITS = {"t1": "ms", "t2": "ms", "pd": "a.u.", "mask": "bool", "b1": "rel", "b0": "Hz",
             "corr": "1"}


def _expect_kind(path, meta: dict, kind: str) -> None:
    if meta.get("kind") != kind:
        raise QmapError(f"{path}: sidecar kind {meta.get('kind')!r}, expected {kind!r}")


def save_map(path, img, name: str, grid_n: int, voxel_mm: float, **extra) -> None:
    meta = {"kind": "map", "name": name, "units": MAP_UNITS.get(name, ""), "grid_n": int(grid_n),
            "voxel_mm": float(voxel_mm), **extra}
    write_qmap(path, img, meta)


def save_maps(out_dir, pm: ParameterMaps | None = None, fm: FieldMaps | None = None,
              suffix: str = "", **extra) -> list[Path]:
    """Write the available maps as ``<name><suffix>.qmap`` inside ``out_dir``."""
    out = Path(out_dir)
    items = {}
    if pm is not None:
        items.update(t1=pm.t1_ms, t2=pm.t2_ms, pd=pm.pd)
        if not suffix:
            items["mask"] = pm.mask
        n, vox = pm.grid_n, pm.voxel_mm
    if fm is not None:
        items.update(b1=fm.b1_rel, b0=fm.b0_hz)
        n, vox = fm.grid_n, fm.voxel_mm
    paths = []
    for name, img in items.items():
        p = out / f"{name}{suffix}.qmap"
        save_map(p, img, name, n, vox, **extra)
        paths.append(p)
    return paths


def load_map(path, expect: str | None = "f32") -> tuple[np.ndarray, dict]:
    arr = read_qmap(path, expect=expect)
    if arr.ndim != 2:
        raise QmapError(f"{path}: expected a 2-D map, got shape {arr.shape}")
    return arr, read_meta(path)


def load_mask(path) -> np.ndarray:
    arr, _ = load_map(path, expect="u8")
    return arr.astype(bool)


def load_maps(in_dir, suffix: str = "") -> tuple[ParameterMaps, FieldMaps]:
    d = Path(in_dir)
    mask = load_mask(d / "mask.qmap")
    imgs = {}
    for name in ("t1", "t2", "pd", "b1", "b0"):
        img, meta = load_map(d / f"{name}{suffix}.qmap")
        if img.shape != mask.shape:
            raise QmapError(f"{d / (name + suffix)}.qmap: shape {img.shape} differs from mask "
                            f"{mask.shape}")
        imgs[name] = img.astype(np.float64)
    n, vox = int(meta["grid_n"]), float(meta["voxel_mm"])
    pm = ParameterMaps(imgs["t1"], imgs["t2"], imgs["pd"], mask, n, vox)
    fm = FieldMaps(imgs["b1"], imgs["b0"], n, vox)
    return pm, fm


def grid_to_meta(grid: ParamGrid) -> dict:
    return {"t1_ms": list(grid.t1_ms), "t2_ms": list(grid.t2_ms), "b1_rel": list(grid.b1_rel)}


def grid_from_meta(meta: dict) -> ParamGrid:
    return ParamGrid(tuple(meta["t1_ms"]), tuple(meta["t2_ms"]), tuple(meta["b1_rel"]))


def save_dictionary(path, d: Dictionary) -> None:
    meta = {"kind": "dictionary", "seq_name": d.seq_name, "grid": grid_to_meta(d.grid),
            "n_atoms": int(d.n_atoms), "n_tr": int(d.atoms.shape[1])}
    write_qmap(path, d.atoms, meta)


def load_dictionary(path) -> Dictionary:
    meta = read_meta(path)
    _expect_kind(path, meta, "dictionary")
    atoms = read_qmap(path, expect="c64").astype(np.complex128)
    grid = grid_from_meta(meta["grid"])
    params, index = grid.combinations()
    if atoms.shape != (params.shape[0], meta["n_tr"]):
        raise QmapError(f"{path}: atom matrix {atoms.shape} inconsistent with its grid")
    return Dictionary(atoms=atoms, params=params, seq_name=meta["seq_name"],
                      atom_norms=np.linalg.norm(atoms, axis=1), grid=grid, index=index)


def save_basis(path, basis: SubspaceBasis, cd: CompressedDictionary, seq_name: str) -> None:
    meta = {"kind": "basis", "seq_name": seq_name, "grid": grid_to_meta(cd.grid), "K": basis.K,
            "singular_values": [float(s) for s in basis.singular_values],
            "basis_id": basis.basis_id, "tail_energy": basis.tail_energy()}
    write_qmap(path, [basis.phi, cd.coeffs], meta)


def load_basis(path) -> tuple[SubspaceBasis, CompressedDictionary, dict]:
    meta = read_meta(path)
    _expect_kind(path, meta, "basis")
    recs = read_qmap_records(path)
    if len(recs) != 2:
        raise QmapError(f"{path}: expected 2 records (phi, coeffs), found {len(recs)}")
    phi, coeffs = (r.astype(np.complex128) for r in recs)
    basis = SubspaceBasis(phi=phi, singular_values=np.asarray(meta["singular_values"]),
                          K=int(meta["K"]))
    grid = grid_from_meta(meta["grid"])
    params, index = grid.combinations()
    if coeffs.shape != (params.shape[0], basis.K):
        raise QmapError(f"{path}: coefficient table {coeffs.shape} inconsistent with its grid")
    cd = CompressedDictionary(coeffs=coeffs, params=params,
                              coeff_norms=np.linalg.norm(coeffs, axis=1),
                              basis_id=basis.basis_id, grid=grid, index=index)
    return basis, cd, meta


def traj_meta(traj: SpiralTrajectory) -> dict:
    return {"readout_ms": float(traj.readout_ms), "fov_mm": float(traj.fov_mm),
            "matrix_n": int(traj.matrix_n), "dwell_us": float(traj.dwell_us)}


def traj_from_meta(meta: dict) -> SpiralTrajectory:
    try:
        return design_spiral(meta["readout_ms"], meta["fov_mm"], meta["matrix_n"],
                             meta["dwell_us"])
    except KeyError as exc:
        raise QmapError(f"trajectory metadata lacks key {exc}") from None


def save_trajectory(path, traj: SpiralTrajectory) -> None:
    write_qmap(path, np.stack([traj.kx, traj.ky, traj.t_ms]),
               {"kind": "trajectory", **traj_meta(traj)})


def save_net(path, net: Network) -> None:
    names = [name for name, _, _ in _layout(net.config)]
    meta = {"kind": "network", "config": asdict(net.config), "names": names, "seed": net.seed}
    write_qmap(path, [net.params[n] for n in names], meta)


def load_net(path) -> Network:
    meta = read_meta(path)
    _expect_kind(path, meta, "network")
    cfg = NetworkConfig(**meta["config"])
    recs = read_qmap_records(path)
    layout = _layout(cfg)
    if len(recs) != len(layout):
        raise QmapError(f"{path}: {len(recs)} tensors, architecture needs {len(layout)}")
    params = {}
    for (name, _, shape), arr in zip(layout, recs):
        if arr.shape != shape or arr.dtype != np.float32:
            raise QmapError(f"{path}: tensor {name} has shape {arr.shape}, expected {shape}")
        params[name] = arr
    return Network(cfg, params, int(meta["seed"]))
