"""Precision statistics, rounding/accuracy sweeps and temporal redundancy."""

from __future__ import annotations

import csv
import decimal
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UsageError
from .faults import FaultSpec
from .model import StudentLayer, StudentModel
from .numeric import to_hex
from .seeding import stream

DIGITS_GRID = (0, 1, 2, 3, 4, 6, 8, None)  # None: no rounding


# -- precision ---------------------------------------------------------------

def _decade(err: float) -> int:
    k = math.floor(math.log10(err))
    if 10.0 ** k > err:
        k -= 1
    elif 10.0 ** (k + 1) <= err:
        k += 1
    return k


@dataclass(frozen=True)
class PrecisionSummary:
    """Max errors plus a histogram keyed by decade ``k`` (errors in [10^k, 10^(k+1)))."""

    max_weight_abs_error: float
    max_bias_abs_error: float
    histogram: dict
    exact: int
    precision: str = "binary64"

    @property
    def max_abs_error(self) -> float:
        return max(self.max_weight_abs_error, self.max_bias_abs_error)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "decade", "count", "value_hex"])
        w.writerow(["precision", "", "", self.precision])
        w.writerow(["max_weight_abs_error", "", "", to_hex(self.max_weight_abs_error)])
        w.writerow(["max_bias_abs_error", "", "", to_hex(self.max_bias_abs_error)])
        w.writerow(["exact", "", self.exact, ""])
        for k in sorted(self.histogram):
            w.writerow(["decade", k, self.histogram[k], ""])
        return buf.getvalue()


def summarize_precision(true_layer: StudentLayer, recovered: StudentLayer, precision: str = "binary64") -> PrecisionSummary:
    if (true_layer.weights.shape != recovered.weights.shape
            or true_layer.biases.shape != recovered.biases.shape):
        raise UsageError(
            f"layer shapes differ: {true_layer.weights.shape} vs {recovered.weights.shape}")
    we = np.abs(true_layer.weights.astype(np.float64) - recovered.weights.astype(np.float64))
    be = np.abs(true_layer.biases.astype(np.float64) - recovered.biases.astype(np.float64))
    hist: dict = {}
    exact = 0
    for e in np.concatenate([we.ravel(), be.ravel()]).tolist():
        if e == 0.0:
            exact += 1
        else:
            k = _decade(e)
            hist[k] = hist.get(k, 0) + 1
    return PrecisionSummary(float(we.max()), float(be.max()), hist, exact, precision)


# -- rounding ----------------------------------------------------------------

def round_value(x: float, digits: int | None) -> float:
    """Nearest multiple of ``10**-digits`` to ``x``, ties to even."""
    if digits is None:
        return x
    if digits < 0:
        raise UsageError(f"digits must be >= 0, got {digits}")
    ctx = decimal.Context(prec=digits + 400, rounding=decimal.ROUND_HALF_EVEN)
    q = decimal.Decimal(float(x)).quantize(decimal.Decimal(1).scaleb(-digits), context=ctx)
    return float(q)


def round_parameters(layer: StudentLayer, digits: int | None) -> StudentLayer:
    dtype = layer.weights.dtype
    rnd = np.vectorize(lambda v: round_value(v, digits), otypes=[np.float64])
    return StudentLayer(rnd(layer.weights).astype(dtype), rnd(layer.biases).astype(dtype))


# -- accuracy ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


def make_blob_dataset(seed: int, input_dim: int, m: int, n_train: int = 2000, n_test: int = 500,
                      center_scale: float = 2.0) -> Dataset:
    """``m`` isotropic Gaussian blobs in input space; the last ``n_test`` points are held out."""
    if n_train <= 0 or n_test <= 0:
        raise UsageError(f"need positive split sizes, got n_train={n_train}, n_test={n_test}")
    n_points = n_train + n_test
    rng = stream(seed, "dataset")
    centers = center_scale * rng.standard_normal((m, input_dim))
    labels = rng.integers(0, m, n_points)
    X = centers[labels] + rng.standard_normal((n_points, input_dim))
    return Dataset(X[:n_train], labels[:n_train], X[n_train:], labels[n_train:])


@dataclass(frozen=True)
class AccuracyPoint:
    digits: int | None
    accuracy_original: float
    accuracy_rounded_recovered: float
    diff: float
    correct_original: int
    correct_recovered: int
    total: int
    agreement: int  # points where both models predict the same class


def accuracy_diff(model_a: StudentModel, model_b: StudentModel, X, y, digits: int | None = None) -> AccuracyPoint:
    X = np.asarray(X)
    y = np.asarray(y)
    if len(X) == 0:
        raise UsageError("empty dataset")
    if (model_a.n, model_a.m) != (model_b.n, model_b.m):
        raise UsageError(f"model shapes differ: {(model_a.n, model_a.m)} vs {(model_b.n, model_b.m)}")
    pa, pb = model_a.predict(X), model_b.predict(X)
    ca, cb = int(np.sum(pa == y)), int(np.sum(pb == y))
    total = len(y)
    return AccuracyPoint(digits, ca / total, cb / total, ca / total - cb / total,
                         ca, cb, total, int(np.sum(pa == pb)))


def accuracy_curve(original: StudentModel, recovered: StudentModel, X, y,
                   digits_grid: Sequence[int | None] = DIGITS_GRID) -> list:
    points = []
    for d in digits_grid:
        rounded = recovered.with_student(round_parameters(recovered.student, d))
        points.append(accuracy_diff(original, rounded, X, y, d))
    return points


def curve_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["digits", "correct_original", "correct_recovered", "total", "agreement",
                "accuracy_original_hex", "accuracy_recovered_hex", "diff_hex"])
    for p in points:
        w.writerow(["inf" if p.digits is None else p.digits, p.correct_original, p.correct_recovered,
                    p.total, p.agreement, to_hex(p.accuracy_original),
                    to_hex(p.accuracy_rounded_recovered), to_hex(p.diff)])
    return buf.getvalue()


# -- temporal redundancy -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class RedundancyOutcome:
    N: int
    detected: bool
    outputs: list = field(repr=False)
    faulted_run_index: int | None = None


def redundancy_detect(model: StudentModel, x, fault: FaultSpec | None, N: int = 2,
                      faulted_run_index: int = 0) -> RedundancyOutcome:
    """Run the forward pass ``N`` times, faulting one run, and compare outputs by value.

    Comparison is numeric, so ``-0.0 == +0.0``: a sign flip of an exact zero
    is invisible.
    """
    if N < 2:
        raise UsageError(f"redundancy needs N >= 2, got {N}")
    if not 0 <= faulted_run_index < N:
        raise UsageError(f"faulted run index {faulted_run_index} out of range 0..{N - 1}")
    outputs = [model.forward(x, fault if k == faulted_run_index else None) for k in range(N)]
    ref = outputs[0]
    detected = any(np.any(out != ref) for out in outputs[1:])
    return RedundancyOutcome(N, bool(detected), outputs, None if fault is None else faulted_run_index)
