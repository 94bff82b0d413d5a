"""Fingerprint dictionaries over (T1, T2, B1), their SVD subspace, and matching."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numba
import numpy as np

from .epg import DomainError, simulate_batch
from .seqmodel import SequenceParams

MODES = ("uncorrected", "b1_corrected", "joint")


@dataclass(frozen=True)
class ParamGrid:
    t1_ms: tuple[float, ...]
    t2_ms: tuple[float, ...]
    b1_rel: tuple[float, ...]

    def __post_init__(self):
        for name in ("t1_ms", "t2_ms", "b1_rel"):
            ax = np.asarray(getattr(self, name), dtype=np.float64)
            if ax.ndim != 1 or ax.size == 0:
                raise DomainError(f"{name}: axis must be a nonempty list")
            if np.any(ax <= 0):
                raise DomainError(f"{name}: values must be positive")
            if np.any(np.diff(ax) <= 0):
                raise DomainError(f"{name}: values must be strictly ascending")
            object.__setattr__(self, name, tuple(float(v) for v in ax))

    def combinations(self) -> tuple[np.ndarray, np.ndarray]:
        """Surviving (t1, t2, b1) rows in lexicographic order, plus the index cube."""
        n1, n2, nb = len(self.t1_ms), len(self.t2_ms), len(self.b1_rel)
        index = np.full((n1, n2, nb), -1, dtype=np.int64)
        rows = []
        for i, t1 in enumerate(self.t1_ms):
            for j, t2 in enumerate(self.t2_ms):
                if t2 > t1:
                    continue
                for k, b1 in enumerate(self.b1_rel):
                    index[i, j, k] = len(rows)
                    rows.append((t1, t2, b1))
        return np.array(rows, dtype=np.float64).reshape(-1, 3), index


def standard_grid() -> ParamGrid:
    """60 log T1 in [100, 3000] ms, 50 log T2 in [10, 500] ms, 13 B1 in [0.7, 1.3]."""
    return ParamGrid(
        t1_ms=np.geomspace(100.0, 3000.0, 60),
        t2_ms=np.geomspace(10.0, 500.0, 50),
        b1_rel=np.round(np.linspace(0.7, 1.3, 13), 10),
    )


@dataclass(frozen=True, eq=False)
class Dictionary:
    atoms: np.ndarray      # (n_atoms, n_tr) complex
    params: np.ndarray     # (n_atoms, 3): t1_ms, t2_ms, b1_rel
    seq_name: str
    atom_norms: np.ndarray
    grid: ParamGrid
    index: np.ndarray      # (n_t1, n_t2, n_b1) -> atom row or -1

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    phi: np.ndarray               # (n_tr, K), orthonormal columns
    singular_values: np.ndarray   # all of them, descending
    K: int

    @property
    def basis_id(self) -> str:
        # hashed at storage precision so a saved and reloaded basis keeps its id
        phi32 = np.ascontiguousarray(self.phi, dtype=np.complex64)
        return hashlib.sha1(phi32.tobytes()).hexdigest()[:12]

    def tail_energy(self) -> float:
        s2 = self.singular_values.astype(np.float64) ** 2
        total = s2.sum()
        if total == 0:
            return 0.0
        return float(np.sqrt(s2[self.K:].sum() / total))


@dataclass(frozen=True, eq=False)
class CompressedDictionary:
    coeffs: np.ndarray     # (n_atoms, K)
    params: np.ndarray
    coeff_norms: np.ndarray
    basis_id: str
    grid: ParamGrid
    index: np.ndarray
    _by_b1: dict = field(default_factory=dict, repr=False)

    @property
    def K(self) -> int:
        return self.coeffs.shape[1]

    def atoms_with_b1(self, k: int) -> np.ndarray:
        if k not in self._by_b1:
            self._by_b1[k] = np.flatnonzero(self.params[:, 2] == self.grid.b1_rel[k])
        return self._by_b1[k]


def build_dictionary(seq: SequenceParams, grid: ParamGrid) -> Dictionary:
    params, index = grid.combinations()
    if params.shape[0] == 0:
        raise DomainError("parameter grid is empty after t2 <= t1 filtering")
    atoms = simulate_batch(seq, params[:, 0], params[:, 1], params[:, 2], 1.0)
    norms = np.linalg.norm(atoms, axis=1)
    if np.any(norms <= 0):
        bad = params[np.argmin(norms)]
        raise DomainError(f"zero-norm atom at (t1, t2, b1) = {tuple(bad)}")
    return Dictionary(atoms=atoms, params=params, seq_name=seq.name, atom_norms=norms,
                      grid=grid, index=index)


@numba.njit(cache=True)
def _jacobi_hermitian(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n, dtype=np.complex128)
    total = np.sqrt(np.sum(np.abs(a) ** 2))
    sweeps = 0
    if total == 0.0:
        return np.zeros(n), v, 0
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * abs(a[p, q]) ** 2
        if np.sqrt(off) < tol * total:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = abs(apq)
                if r < 1e-300:
                    continue
                ph = apq / r   # e^{i phi}
                app = a[p, p].real
                aqq = a[q, q].real
                theta = (aqq - app) / (2.0 * r)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # W = [[c, s], [-s e^{-i phi}, c e^{-i phi}]] acting on columns p, q
                wpp = c
                wpq = s
                wqp = -s * np.conj(ph)
                wqq = c * np.conj(ph)
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp * wpp + akq * wqp
                    a[k, q] = akp * wpq + akq * wqq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = np.conj(wpp) * apk + np.conj(wqp) * aqk
                    a[q, k] = np.conj(wpq) * apk + np.conj(wqq) * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = vkp * wpp + vkq * wqp
                    v[k, q] = vkp * wpq + vkq * wqq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i].real
    return w, v, sweeps


def hermitian_eig(gram: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60):
    """Cyclic Jacobi eigendecomposition, eigenvalues descending.

    Stops once the off-diagonal Frobenius norm drops below ``tol`` times the
    Frobenius norm of the input.
    """
    a = np.array(gram, dtype=np.complex128, copy=True)
    a = 0.5 * (a + a.conj().T)
    w, v, sweeps = _jacobi_hermitian(a, tol, max_sweeps)
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order], sweeps


def compress(d: Dictionary, K: int = 5) -> tuple[SubspaceBasis, CompressedDictionary]:
    """Rank-K right singular subspace of the atom matrix and compressed atoms."""
    n_tr = d.atoms.shape[1]
    if not 1 <= K <= n_tr:
        raise DomainError(f"K={K} outside [1, {n_tr}]")
    gram = d.atoms.conj().T @ d.atoms
    w, v, _ = hermitian_eig(gram)
    # eigenvalues within rounding of zero are zero: their square roots would
    # otherwise put sqrt(eps)-sized noise into the tail energy
    floor = n_tr * np.finfo(np.float64).eps * max(w[0], 0.0)
    sv = np.sqrt(np.where(w > floor, w, 0.0))
    phi = np.ascontiguousarray(v[:, :K])
    basis = SubspaceBasis(phi=phi, singular_values=sv, K=K)
    return basis, compress_with(d, basis)


def compress_with(d: Dictionary, basis: SubspaceBasis) -> CompressedDictionary:
    coeffs = d.atoms @ basis.phi
    return CompressedDictionary(
        coeffs=coeffs, params=d.params, coeff_norms=np.linalg.norm(coeffs, axis=1),
        basis_id=basis.basis_id, grid=d.grid, index=d.index,
    )


def compression_residual(d: Dictionary, basis: SubspaceBasis) -> float:
    """||D - D phi phi^H||_F / ||D||_F."""
    proj = (d.atoms @ basis.phi) @ basis.phi.conj().T
    return float(np.linalg.norm(d.atoms - proj) / np.linalg.norm(d.atoms))


@dataclass(frozen=True)
class MatchResult:
    t1_ms: float
    t2_ms: float
    b1_used: float
    pd: complex
    corr: float
    index: int


def nearest_b1_index(grid: ParamGrid, b1) -> np.ndarray:
    axis = np.asarray(grid.b1_rel)
    b1 = np.asarray(b1, dtype=np.float64)
    return np.argmin(np.abs(b1[..., None] - axis), axis=-1)


def _best(vox: np.ndarray, cd: CompressedDictionary, cand: np.ndarray | None):
    coeffs = cd.coeffs if cand is None else cd.coeffs[cand]
    norms = cd.coeff_norms if cand is None else cd.coeff_norms[cand]
    vnorm = np.linalg.norm(vox, axis=1)
    n_idx = np.empty(vox.shape[0], dtype=np.int64)
    inner = np.empty(vox.shape[0], dtype=np.complex128)
    chunk = max(1, int(4e6 // max(1, coeffs.shape[0])))
    for s in range(0, vox.shape[0], chunk):
        ip = vox[s:s + chunk] @ coeffs.conj().T         # <v, c_i>
        score = np.abs(ip) / norms
        best = np.argmax(score, axis=1)
        n_idx[s:s + chunk] = best
        inner[s:s + chunk] = ip[np.arange(best.size), best]
    atom = n_idx if cand is None else cand[n_idx]
    corr = np.abs(inner) / (vnorm * cd.coeff_norms[atom])
    pd = inner / cd.coeff_norms[atom] ** 2
    return atom, pd, corr


def match_many(vox: np.ndarray, cd: CompressedDictionary, mode: str = "joint",
               b1=None):
    """Vectorized matching of ``(n, K)`` voxels.

    Returns ``(atom_index, pd, corr)`` arrays. ``b1`` (scalar or per voxel) is
    required for ``b1_corrected`` mode.
    """
    vox = np.atleast_2d(np.asarray(vox, dtype=np.complex128))
    if vox.shape[1] != cd.K:
        raise DomainError(f"voxel length {vox.shape[1]} does not match K={cd.K}")
    if np.any(np.linalg.norm(vox, axis=1) == 0):
        raise DomainError("zero voxel cannot be matched")
    if mode == "joint":
        return _best(vox, cd, None)
    if mode == "uncorrected":
        b1_idx = np.broadcast_to(nearest_b1_index(cd.grid, 1.0), vox.shape[:1])
    elif mode == "b1_corrected":
        if b1 is None:
            raise DomainError("b1_corrected mode needs a b1 value")
        b1 = np.broadcast_to(np.asarray(b1, dtype=np.float64), vox.shape[:1])
        lo, hi = cd.grid.b1_rel[0], cd.grid.b1_rel[-1]
        if np.any((b1 < lo - 1e-12) | (b1 > hi + 1e-12)):
            raise DomainError(f"b1 value outside dictionary range [{lo}, {hi}]")
        b1_idx = nearest_b1_index(cd.grid, b1)
    else:
        raise DomainError(f"unknown mode {mode!r}; choose from {MODES}")
    atom = np.empty(vox.shape[0], dtype=np.int64)
    pd = np.empty(vox.shape[0], dtype=np.complex128)
    corr = np.empty(vox.shape[0])
    for k in np.unique(b1_idx):
        sel = np.flatnonzero(b1_idx == k)
        a, p, c = _best(vox[sel], cd, cd.atoms_with_b1(int(k)))
        atom[sel], pd[sel], corr[sel] = a, p, c
    return atom, pd, corr


def match(voxel, cd: CompressedDictionary, mode: str = "joint",
          b1: float | None = None) -> MatchResult:
    atom, pd, corr = match_many(np.asarray(voxel)[None, :], cd, mode, b1)
    i = int(atom[0])
    t1, t2, b1u = cd.params[i]
    return MatchResult(float(t1), float(t2), float(b1u), complex(pd[0]), float(corr[0]), i)


def match_maps(coeffs: np.ndarray, mask: np.ndarray, cd: CompressedDictionary,
               mode: str = "uncorrected", b1_map: np.ndarray | None = None):
    """Match a ``(K, H, W)`` coefficient stack inside ``mask``.

    Returns T1, T2, |PD| images and the correlation image; masked-out voxels
    (and zero voxels) get zeros.
    """
    mask = np.asarray(mask, dtype=bool)
    vox = coeffs[:, mask].T
    ok = np.linalg.norm(vox, axis=1) > 0
    t1 = np.zeros(mask.shape)
    t2 = np.zeros(mask.shape)
    pd = np.zeros(mask.shape)
    corr = np.zeros(mask.shape)
    if ok.any():
        b1 = None
        if mode == "b1_corrected":
            lo, hi = cd.grid.b1_rel[0], cd.grid.b1_rel[-1]
            b1 = np.clip(np.asarray(b1_map)[mask][ok], lo, hi)
        atom, p, c = match_many(vox[ok], cd, mode, b1)
        where = tuple(ix[ok] for ix in np.nonzero(mask))
        t1[where] = cd.params[atom, 0]
        t2[where] = cd.params[atom, 1]
        pd[where] = np.abs(p)
        corr[where] = c
    return t1, t2, pd, corr
