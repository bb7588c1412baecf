"""Fault specifications over the six neuron injection points, and fault sessions.

Targets address the last dense layer by zero-based logical coordinates:
``i`` indexes the feature vector (0..n-1) and ``j`` the output classes
(0..m-1). Dataflow positions, in order:

    Input(i)       shared feature I_i, before fan-out to every neuron
    Weight(i, j)   w_ij before the multiplication
    Product(i, j)  I_i * w_ij before accumulation
    Bias(j)        b_j before it is added
    Sum(j)         y_j after the bias is added
    Activation(j)  z_j after softmax (not renormalized)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import FaultParseError, SessionDisciplineError, UsageError
from .numeric import FloatWord, flip_bit, from_hex, sign_flip, to_hex, width_of, xor_byte


# -- targets -----------------------------------------------------------------

@dataclass(frozen=True)
class Input:
    i: int


@dataclass(frozen=True)
class Weight:
    i: int
    j: int


@dataclass(frozen=True)
class Product:
    i: int
    j: int


@dataclass(frozen=True)
class Bias:
    j: int


@dataclass(frozen=True)
class Sum:
    j: int


@dataclass(frozen=True)
class Activation:
    j: int


FaultTarget = Union[Input, Weight, Product, Bias, Sum, Activation]


# -- kinds -------------------------------------------------------------------

@dataclass(frozen=True)
class SignFlip:
    pass


@dataclass(frozen=True)
class BitFlip:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < 64:
            raise UsageError(f"bit index {self.index} out of range 0..63")


@dataclass(frozen=True)
class SetValue:
    value: float


@dataclass(frozen=True)
class ByteXor:
    byte_index: int
    mask: int

    def __post_init__(self):
        if not 0 <= self.byte_index < 8:
            raise UsageError(f"byte index {self.byte_index} out of range 0..7")
        if not 0 <= self.mask <= 0xFF:
            raise UsageError(f"byte mask {self.mask:#x} is not an 8-bit value")


FaultKind = Union[SignFlip, BitFlip, SetValue, ByteXor]


@dataclass(frozen=True)
class FaultSpec:
    target: FaultTarget
    kind: FaultKind

    def __str__(self):
        return format_fault(self)


def product_sign(i: int, j: int) -> FaultSpec:
    return FaultSpec(Product(i, j), SignFlip())


def bias_sign(j: int) -> FaultSpec:
    return FaultSpec(Bias(j), SignFlip())


def apply_fault(clean_value: FloatWord, kind: FaultKind) -> FloatWord:
    if isinstance(kind, SignFlip):
        return sign_flip(clean_value)
    if isinstance(kind, BitFlip):
        return flip_bit(clean_value, kind.index)
    if isinstance(kind, SetValue):
        return FloatWord.from_float(kind.value, clean_value.width)
    if isinstance(kind, ByteXor):
        return xor_byte(clean_value, kind.byte_index, kind.mask)
    raise UsageError(f"unknown fault kind {kind!r}")


def mutate(value, kind: FaultKind, dtype=np.float64):
    """Apply ``kind`` to a scalar stored as ``dtype`` and return it as that dtype."""
    width = width_of(dtype)
    faulted = apply_fault(FloatWord.from_float(value, width), kind)
    return np.dtype(dtype).type(faulted.value)


def check_bounds(target: FaultTarget, n: int, m: int) -> None:
    i = getattr(target, "i", None)
    j = getattr(target, "j", None)
    if i is not None and not 0 <= i < n:
        raise UsageError(f"{target!r}: feature index {i} out of range 0..{n - 1}")
    if j is not None and not 0 <= j < m:
        raise UsageError(f"{target!r}: output index {j} out of range 0..{m - 1}")


# -- text syntax -------------------------------------------------------------
#
#   product:i=2,j=1:signflip     bias:j=0:bitflip:63
#   sum:j=3:set:0x0000000000000000     weight:i=0,j=1:bytexor:7,0x80

_TARGETS = {
    "input": (Input, ("i",)),
    "weight": (Weight, ("i", "j")),
    "product": (Product, ("i", "j")),
    "bias": (Bias, ("j",)),
    "sum": (Sum, ("j",)),
    "activation": (Activation, ("j",)),
}
_TARGET_NAMES = {cls: name for name, (cls, _) in _TARGETS.items()}
_INT = re.compile(r"(0x[0-9a-fA-F]+|\d+)\Z")


def _parse_int(text: str, token: str, pos: int, what: str) -> int:
    if not _INT.match(token):
        raise FaultParseError(text, pos, f"expected integer {what}, got {token!r}")
    return int(token, 0)


def _parse_set_value(text: str, token: str, pos: int) -> float:
    body = token[2:] if token.lower().startswith("0x") else None
    try:
        if body is not None and len(body) == 16:
            return from_hex(body.lower(), 64)
        if body is not None and len(body) == 8:
            return float(from_hex(body.lower(), 32))
        if body is None:
            return float(token)
    except ValueError:
        pass
    raise FaultParseError(
        text, pos, f"expected 0x + 16 (or 8) hex digits or a decimal value, got {token!r}")


def parse_fault(text: str) -> FaultSpec:
    """Parse ``<target>:<coords>:<kind>[:<arg>]`` into a FaultSpec."""
    parts = text.split(":")
    offsets = []
    pos = 0
    for part in parts:
        offsets.append(pos)
        pos += len(part) + 1

    name = parts[0].strip().lower()
    if name not in _TARGETS:
        raise FaultParseError(text, 0, f"unknown target {parts[0]!r} (expected one of {', '.join(_TARGETS)})")
    cls, wanted = _TARGETS[name]
    if len(parts) < 2:
        raise FaultParseError(text, len(text), "expected '<target>:<coords>:<kind>'")

    coords = {}
    cpos = offsets[1]
    for item in parts[1].split(","):
        key, eq, val = item.partition("=")
        key = key.strip()
        if not eq or key not in wanted:
            raise FaultParseError(text, cpos, f"expected one of {'/'.join(k + '=' for k in wanted)}, got {item!r}")
        if key in coords:
            raise FaultParseError(text, cpos, f"duplicate coordinate {key!r}")
        coords[key] = _parse_int(text, val.strip(), cpos + len(key) + 1, f"after '{key}='")
        cpos += len(item) + 1
    missing = [k for k in wanted if k not in coords]
    if missing:
        raise FaultParseError(text, offsets[1], f"missing coordinate {missing[0]}=")
    target = cls(**coords)
    if len(parts) < 3:
        raise FaultParseError(text, len(text), "missing fault kind after coordinates")

    kind_name = parts[2].strip().lower()
    args = parts[3:]
    apos = offsets[3] if len(parts) > 3 else len(text)
    if kind_name == "signflip" and not args:
        kind = SignFlip()
    elif kind_name == "bitflip" and len(args) == 1:
        idx = _parse_int(text, args[0].strip(), apos, "bit index")
        if not 0 <= idx < 64:
            raise FaultParseError(text, apos, f"bit index {idx} out of range 0..63")
        kind = BitFlip(idx)
    elif kind_name == "set" and len(args) == 1:
        kind = SetValue(_parse_set_value(text, args[0].strip(), apos))
    elif kind_name == "bytexor" and len(args) == 1:
        byte_tok, comma, mask_tok = args[0].partition(",")
        if not comma:
            raise FaultParseError(text, apos, "expected '<byte>,<mask>' after bytexor")
        b = _parse_int(text, byte_tok.strip(), apos, "byte index")
        mk = _parse_int(text, mask_tok.strip(), apos + len(byte_tok) + 1, "mask")
        if not (0 <= b < 8 and 0 <= mk <= 0xFF):
            raise FaultParseError(text, apos, "byte index must be 0..7 and mask 0..0xff")
        kind = ByteXor(b, mk)
    elif kind_name in ("signflip", "bitflip", "set", "bytexor"):
        raise FaultParseError(text, offsets[2], f"wrong number of arguments for {kind_name!r}")
    else:
        raise FaultParseError(text, offsets[2], f"unknown fault kind {parts[2]!r}")
    return FaultSpec(target, kind)


def format_fault(spec: FaultSpec) -> str:
    t = spec.target
    coords = ",".join(f"{k}={getattr(t, k)}" for k in ("i", "j") if hasattr(t, k))
    k = spec.kind
    if isinstance(k, SignFlip):
        kind = "signflip"
    elif isinstance(k, BitFlip):
        kind = f"bitflip:{k.index}"
    elif isinstance(k, SetValue):
        kind = f"set:0x{to_hex(k.value)}"
    else:
        kind = f"bytexor:{k.byte_index},{k.mask:#04x}"
    return f"{_TARGET_NAMES[type(t)]}:{coords}:{kind}"


# -- sessions ----------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    input_id: object
    fault: FaultSpec | None
    output: np.ndarray


@dataclass
class FaultSession:
    """Single-fault-adversary access to a victim model.

    Every run goes through :meth:`run`, which allows at most one fault per
    forward pass and logs what was executed.
    """

    model: object
    log: list = field(default_factory=list)
    keep_outputs: bool = True

    @property
    def run_count(self) -> int:
        return len(self.log)

    @property
    def fault_count(self) -> int:
        return sum(1 for r in self.log if r.fault is not None)

    @property
    def clean_run_count(self) -> int:
        return self.run_count - self.fault_count

    def run(self, x=None, *, features=None, fault=None, input_id=None) -> np.ndarray:
        if isinstance(fault, (list, tuple)):
            if len(fault) > 1:
                raise SessionDisciplineError(
                    f"{len(fault)} faults requested in one run; the adversary gets exactly one")
            fault = fault[0] if fault else None
        if (x is None) == (features is None):
            raise UsageError("pass exactly one of x or features")
        if features is not None:
            out = self.model.forward_features(features, fault)
        else:
            out = self.model.forward(x, fault)
        self.log.append(RunRecord(input_id, fault, out if self.keep_outputs else None))
        return out
