"""MRF sequence parameterizations (flip/TR/TE trains plus spiral readout length)."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .config import ConfigError, format_kv, get_float, get_floats, get_int, get_str, parse_kv


class SequenceError(ConfigError):
    pass


@dataclass(frozen=True)
class SequenceParams:
    name: str
    n_tr: int
    flip_deg: tuple[float, ...]
    tr_ms: tuple[float, ...]
    te_ms: tuple[float, ...]
    readout_ms: float
    inversion_delay_ms: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "flip_deg", tuple(float(v) for v in self.flip_deg))
        object.__setattr__(self, "tr_ms", tuple(float(v) for v in self.tr_ms))
        object.__setattr__(self, "te_ms", tuple(float(v) for v in self.te_ms))
        validate(self)

    @property
    def has_inversion(self) -> bool:
        return self.inversion_delay_ms is not None


def validate(seq: SequenceParams) -> None:
    if not seq.name or any(c.isspace() for c in seq.name):
        raise SequenceError("name: must be a non-empty identifier")
    if seq.n_tr < 1:
        raise SequenceError(f"n_tr: must be >= 1, got {seq.n_tr}")
    for key in ("flip_deg", "tr_ms", "te_ms"):
        n = len(getattr(seq, key))
        if n != seq.n_tr:
            raise SequenceError(f"{key} length {n} does not match n_tr={seq.n_tr}")
    for n, a in enumerate(seq.flip_deg):
        if not 0.0 <= a <= 90.0:
            raise SequenceError(f"flip_deg[{n}]={a} outside [0, 90]")
    for n, (tr, te) in enumerate(zip(seq.tr_ms, seq.te_ms)):
        if not 0.0 < te < tr:
            raise SequenceError(f"te_ms[{n}]={te} must satisfy 0 < te < tr_ms[{n}]={tr}")
    if not seq.readout_ms > 0.0:
        raise SequenceError(f"readout_ms: must be > 0, got {seq.readout_ms}")
    if seq.inversion_delay_ms is not None and not seq.inversion_delay_ms >= 0.0:
        raise SequenceError(f"inversion_delay_ms: must be >= 0, got {seq.inversion_delay_ms}")


def _two_lobe_train(n_tr: int, peak1: float = 75.0, peak2: float = 50.0, floor: float = 5.0):
    # Two half-sine lobes over the TR axis; rounded so the text form is stable.
    half = n_tr // 2
    out = []
    for n in range(n_tr):
        if n < half:
            u, peak = (n + 0.5) / half, peak1
        else:
            u, peak = (n - half + 0.5) / (n_tr - half), peak2
        out.append(round(floor + (peak - floor) * math.sin(math.pi * u), 4))
    return out


_BUILTINS = {
    "seq1": dict(n_tr=500, readout_ms=5.38, inversion_delay_ms=20.0),
    "seq2": dict(n_tr=400, readout_ms=9.0, inversion_delay_ms=None),
    "seq3": dict(n_tr=400, readout_ms=9.0, inversion_delay_ms=None),
}


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


def builtin_sequence(name: str) -> SequenceParams:
    """One of the three desk-scale stand-ins ``seq1``, ``seq2``, ``seq3``.

    Flip trains are two half-sine lobes (peaks 75 and 50 degrees, floor 5);
    TR = 12 ms and TE = 2 ms throughout. Only ``seq1`` starts with an inversion.
    """
    try:
        p = _BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown sequence {name!r}; choose from {builtin_names()}") from None
    n = p["n_tr"]
    return SequenceParams(
        name=name, n_tr=n, flip_deg=_two_lobe_train(n),
        tr_ms=[12.0] * n, te_ms=[2.0] * n,
        readout_ms=p["readout_ms"], inversion_delay_ms=p["inversion_delay_ms"],
    )


def serialize(seq: SequenceParams) -> str:
    items: dict[str, object] = {"name": seq.name, "n_tr": seq.n_tr, "readout_ms": seq.readout_ms}
    if seq.inversion_delay_ms is not None:
        items["inversion_delay_ms"] = seq.inversion_delay_ms
    items["flip_deg"] = seq.flip_deg
    items["tr_ms"] = seq.tr_ms
    items["te_ms"] = seq.te_ms
    return format_kv(items, header="MRF sequence")


def load_sequence(text: str) -> SequenceParams:
    """Parse a sequence document; raises :class:`SequenceError` naming the bad key."""
    d = parse_kv(text)
    known = {"name", "n_tr", "readout_ms", "inversion_delay_ms", "flip_deg", "tr_ms", "te_ms"}
    extra = sorted(set(d) - known)
    if extra:
        raise SequenceError(f"unknown key '{extra[0]}'")
    try:
        inv = get_float(d, "inversion_delay_ms") if "inversion_delay_ms" in d else None
        return SequenceParams(
            name=get_str(d, "name"),
            n_tr=get_int(d, "n_tr"),
            flip_deg=get_floats(d, "flip_deg"),
            tr_ms=get_floats(d, "tr_ms"),
            te_ms=get_floats(d, "te_ms"),
            readout_ms=get_float(d, "readout_ms"),
            inversion_delay_ms=inv,
        )
    except SequenceError:
        raise
    except ConfigError as exc:
        raise SequenceError(str(exc)) from None


def resolve_sequence(name_or_path: str) -> SequenceParams:
    """Builtin name, or a path to a sequence document."""
    if name_or_path in _BUILTINS:
        return builtin_sequence(name_or_path)
    with open(name_or_path, encoding="utf-8") as fh:
        return load_sequence(fh.read())
