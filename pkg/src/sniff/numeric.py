"""Bit-level views of IEEE-754 floats and a stabilized softmax."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericDomainError, UsageError

_FLOAT_DTYPES = {64: np.float64, 32: np.float32}
_UINT_DTYPES = {64: np.uint64, 32: np.uint32}

SIGN_BIT = 63


def width_of(dtype) -> int:
    dtype = np.dtype(dtype)
    if dtype == np.float64:
        return 64
    if dtype == np.float32:
        return 32
    raise UsageError(f"unsupported float dtype {dtype}")


def float_to_bits(value, width: int = 64) -> int:
    """Return the raw bit pattern of ``value`` stored at the given width."""
    arr = np.asarray(value, dtype=_FLOAT_DTYPES[width]).reshape(())
    return int(arr.view(_UINT_DTYPES[width]))


def bits_to_float(bits: int, width: int = 64):
    if not 0 <= bits < (1 << width):
        raise UsageError(f"bit pattern {bits:#x} does not fit in {width} bits")
    arr = np.asarray(bits, dtype=_UINT_DTYPES[width]).reshape(())
    value = arr.view(_FLOAT_DTYPES[width])[()]
    return float(value) if width == 64 else value


def to_hex(value, width: int = 64) -> str:
    return format(float_to_bits(value, width), f"0{width // 4}x")


def from_hex(text: str, width: int = 64):
    digits = width // 4
    if len(text) != digits:
        raise ValueError(f"expected {digits} hex digits, got {len(text)}")
    try:
        bits = int(text, 16)
    except ValueError:
        raise ValueError(f"not a hex pattern: {text!r}") from None
    return bits_to_float(bits, width)


@dataclass(frozen=True)
class FloatWord:
    """One float storage location viewed as both a number and a bit pattern.

    Bit ``width - 1`` is the sign bit; for binary64 the exponent occupies
    bits 62..52 and the mantissa bits 51..0.
    """

    bits: int
    width: int = 64

    def __post_init__(self):
        if self.width not in _FLOAT_DTYPES:
            raise UsageError(f"width must be 32 or 64, got {self.width}")
        if not 0 <= self.bits < (1 << self.width):
            raise UsageError(f"bit pattern {self.bits:#x} does not fit in {self.width} bits")

    @classmethod
    def from_float(cls, value, width: int = 64) -> FloatWord:
        return cls(float_to_bits(value, width), width)

    @property
    def value(self):
        return bits_to_float(self.bits, self.width)

    @property
    def sign_index(self) -> int:
        return self.width - 1

    def hex(self) -> str:
        return format(self.bits, f"0{self.width // 4}x")

    def __repr__(self):
        return f"FloatWord(0x{self.hex()} = {self.value!r})"


def flip_bit(w: FloatWord, index: int) -> FloatWord:
    if not isinstance(index, (int, np.integer)) or not 0 <= index < w.width:
        raise UsageError(f"bit index {index} out of range 0..{w.width - 1}")
    return FloatWord(w.bits ^ (1 << int(index)), w.width)


def sign_flip(w: FloatWord) -> FloatWord:
    return flip_bit(w, w.sign_index)


def xor_byte(w: FloatWord, byte_index: int, mask: int) -> FloatWord:
    """XOR byte ``byte_index`` (0 = least significant) of the pattern with ``mask``."""
    if not 0 <= byte_index < w.width // 8:
        raise UsageError(f"byte index {byte_index} out of range 0..{w.width // 8 - 1}")
    if not 0 <= mask <= 0xFF:
        raise UsageError(f"byte mask {mask:#x} is not an 8-bit value")
    return FloatWord(w.bits ^ (mask << (8 * byte_index)), w.width)


def require_finite(values, what: str = "value") -> None:
    if not np.all(np.isfinite(values)):
        raise NumericDomainError(f"non-finite {what}: {np.asarray(values)!r}")


def softmax(y) -> np.ndarray:
    """Max-shifted softmax of a 1-D logit vector, keeping the input dtype.

    The denominator is a correctly rounded sum (``math.fsum``) so the result
    does not depend on SIMD summation order.
    """
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise UsageError(f"softmax expects a non-empty 1-D vector, got shape {y.shape}")
    if y.dtype not in (np.float64, np.float32):
        y = y.astype(np.float64)
    require_finite(y, "logit")
    e = np.exp(y - y.max())
    denom = y.dtype.type(math.fsum(e.tolist()))
    z = e / denom
    require_finite(z, "softmax output")
    return z
