"""Frozen feature extractor + secret dense/softmax student layer.

Dense layers store weights as ``(inputs, outputs)`` so a layer computes
``h @ W + b``. Every dot product is accumulated in ascending input order with
the bias added last; :func:`dense_sequential` is the single place that fixes
that order, which keeps runs reproducible across BLAS builds and lets a fault
land on one well-defined partial value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FormatError, NumericDomainError, UsageError
from .faults import Activation, Bias, FaultSpec, Input, Product, Sum, Weight, check_bounds, mutate
from .numeric import from_hex, require_finite, softmax, to_hex
from .seeding import stream

PRECISIONS = {"binary64": np.float64, "binary32": np.float32}


def _relu(h):
    return np.where(h > 0, h, h.dtype.type(0))


ACTIVATIONS = {
    "relu": _relu,
    "identity": lambda h: h,
    "tanh": np.tanh,
}


def dense_sequential(h, weights, biases):
    """``h @ weights + biases`` summed left to right over the input axis.

    ``h`` may carry leading batch axes; each row is computed exactly as the
    single-vector case.
    """
    acc = h[..., 0, None] * weights[0]
    for i in range(1, weights.shape[0]):
        acc = acc + h[..., i, None] * weights[i]
    return acc + biases


def _frozen(a, dtype, ndim, what):
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.ndim != ndim:
        raise UsageError(f"{what} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")
        dtype = np.asarray(self.weights).dtype
        dtype = dtype if dtype in (np.float64, np.float32) else np.float64
        object.__setattr__(self, "weights", _frozen(self.weights, dtype, 2, "layer weights"))
        object.__setattr__(self, "biases", _frozen(self.biases, dtype, 1, "layer biases"))
        if self.weights.shape[1] != self.biases.shape[0] or self.weights.shape[0] == 0:
            raise UsageError(f"layer weights {self.weights.shape} do not match biases {self.biases.shape}")

    def __call__(self, h):
        return ACTIVATIONS[self.activation](dense_sequential(h, self.weights, self.biases))

    def astype(self, dtype) -> DenseLayer:
        return DenseLayer(self.weights.astype(dtype), self.biases.astype(dtype), self.activation)


@dataclass(frozen=True, eq=False)
class FeatureExtractor:
    """The public, frozen part of the network: ``x -> I(x)``."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise UsageError("extractor needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].weights.shape[0] != layers[k - 1].weights.shape[1]:
                raise UsageError(
                    f"layer {k} expects {layers[k].weights.shape[0]} inputs, "
                    f"previous layer emits {layers[k - 1].weights.shape[1]}")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1:] != (self.input_dim,):
            raise UsageError(f"input has shape {x.shape}, extractor expects last axis {self.input_dim}")
        require_finite(x, "input")
        h = x
        for layer in self.layers:
            h = layer(h)
        require_finite(h, "feature")
        return h

    def astype(self, dtype) -> FeatureExtractor:
        return FeatureExtractor(tuple(layer.astype(dtype) for layer in self.layers))

    @classmethod
    def identity(cls, n: int, dtype=np.float64) -> FeatureExtractor:
        return cls((DenseLayer(np.eye(n, dtype=dtype), np.zeros(n, dtype=dtype), "identity"),))


@dataclass(frozen=True, eq=False)
class StudentLayer:
    """The secret last layer: weights ``(n, m)`` and biases ``(m,)``."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        dtype = np.asarray(self.weights).dtype
        dtype = dtype if dtype in (np.float64, np.float32) else np.float64
        object.__setattr__(self, "weights", _frozen(self.weights, dtype, 2, "student weights"))
        object.__setattr__(self, "biases", _frozen(self.biases, dtype, 1, "student biases"))
        if self.weights.shape[1] != self.biases.shape[0]:
            raise UsageError(
                f"student weights {self.weights.shape} do not match biases {self.biases.shape}")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    def astype(self, dtype) -> StudentLayer:
        return StudentLayer(self.weights.astype(dtype), self.biases.astype(dtype))


@dataclass(frozen=True, eq=False)
class StudentModel:
    extractor: FeatureExtractor
    student: StudentLayer
    precision: str = "binary64"

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise UsageError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        dtype = PRECISIONS[self.precision]
        if self.extractor.dtype != dtype:
            object.__setattr__(self, "extractor", self.extractor.astype(dtype))
        if self.student.weights.dtype != dtype:
            object.__setattr__(self, "student", self.student.astype(dtype))
        if self.extractor.output_dim != self.student.n:
            raise UsageError(
                f"extractor emits {self.extractor.output_dim} features, student expects {self.student.n}")

    @property
    def dtype(self):
        return np.dtype(PRECISIONS[self.precision])

    @property
    def n(self) -> int:
        return self.student.n

    @property
    def m(self) -> int:
        return self.student.m

    def with_student(self, student: StudentLayer) -> StudentModel:
        return StudentModel(self.extractor, student, self.precision)

    def astype(self, precision: str) -> StudentModel:
        return StudentModel(self.extractor, self.student, precision)

    def extract_features(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 1:
            raise UsageError(f"expected a single input vector, got shape {x.shape}")
        return self.extractor(x)

    def logits(self, features, fault: FaultSpec | None = None) -> np.ndarray:
        """Pre-softmax outputs with ``fault`` spliced in (Activation faults excluded)."""
        dt = self.dtype.type
        I = np.array(features, dtype=self.dtype)
        if I.shape != (self.n,):
            raise UsageError(f"feature vector has shape {I.shape}, expected ({self.n},)")
        require_finite(I, "feature")
        W, b = self.student.weights, self.student.biases
        t = None
        if fault is not None:
            t = fault.target
            check_bounds(t, self.n, self.m)
            kind = fault.kind
        if isinstance(t, Input):
            I[t.i] = mutate(I[t.i], kind, dt)
        if isinstance(t, Weight):
            W = W.copy()
            W[t.i, t.j] = mutate(W[t.i, t.j], kind, dt)
        products = I[:, None] * W
        if isinstance(t, Product):
            products[t.i, t.j] = mutate(products[t.i, t.j], kind, dt)
        acc = products[0].copy()
        for row in products[1:]:
            acc = acc + row
        if isinstance(t, Bias):
            b = b.copy()
            b[t.j] = mutate(b[t.j], kind, dt)
        y = acc + b
        if isinstance(t, Sum):
            y[t.j] = mutate(y[t.j], kind, dt)
        require_finite(y, "logit")
        return y

    def forward_features(self, features, fault: FaultSpec | None = None) -> np.ndarray:
        z = softmax(self.logits(features, fault))
        if fault is not None and isinstance(fault.target, Activation):
            z = z.copy()
            z[fault.target.j] = mutate(z[fault.target.j], fault.kind, self.dtype.type)
            if not np.all(np.isfinite(z)):
                raise NumericDomainError(f"faulted softmax output is non-finite: {z!r}")
        return z

    def forward(self, x, fault: FaultSpec | None = None) -> np.ndarray:
        return self.forward_features(self.extract_features(x), fault)

    def predict(self, X) -> np.ndarray:
        """Argmax class per row of ``X`` (ties go to the lowest index)."""
        feats = self.extractor(np.atleast_2d(X))
        y = dense_sequential(feats, self.student.weights, self.student.biases)
        require_finite(y, "logit")
        return np.argmax(y, axis=-1)


def generate_synthetic(
    seed: int,
    extractor_dims: Sequence[int],
    n: int,
    m: int,
    weight_range: tuple[float, float] = (-1.0, 1.0),
    precision: str = "binary64",
    final_activation: str = "identity",
) -> StudentModel:
    """Random model with a frozen extractor ``extractor_dims[0] -> ... -> n``.

    Hidden extractor layers use relu; the last extractor layer uses
    ``final_activation``. All parameters are uniform on ``weight_range``.
    """
    dims = [int(d) for d in extractor_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise UsageError(f"extractor dims must list at least two positive sizes, got {list(extractor_dims)}")
    if n <= 0 or m <= 0:
        raise UsageError(f"n and m must be positive, got n={n}, m={m}")
    if dims[-1] != n:
        raise UsageError(f"last extractor dim {dims[-1]} must equal n={n}")
    lo, hi = (float(v) for v in weight_range)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise UsageError(f"weight range must be finite with low < high, got {weight_range}")
    if final_activation not in ACTIVATIONS:
        raise UsageError(f"unknown activation {final_activation!r}")

    rng = stream(seed, "model")
    layers = []
    for k, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        act = final_activation if k == len(dims) - 2 else "relu"
        layers.append(DenseLayer(rng.uniform(lo, hi, (din, dout)), rng.uniform(lo, hi, dout), act))
    student = StudentLayer(rng.uniform(lo, hi, (n, m)), rng.uniform(lo, hi, m))
    return StudentModel(FeatureExtractor(tuple(layers)), student, precision)


# -- serialization -----------------------------------------------------------

def _hex_vec(a, width):
    return [to_hex(v, width) for v in a]


def save_model(model: StudentModel) -> bytes:
    width = 64 if model.precision == "binary64" else 32
    doc = {
        "precision": model.precision,
        "extractor": [
            {
                "activation": layer.activation,
                "weights": [_hex_vec(row, width) for row in layer.weights],
                "biases": _hex_vec(layer.biases, width),
            }
            for layer in model.extractor.layers
        ],
        "student": {
            "weights": [_hex_vec(row, width) for row in model.student.weights],
            "biases": _hex_vec(model.student.biases, width),
        },
    }
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def _expect(node, typ, path):
    if not isinstance(node, typ):
        raise FormatError(path, f"expected {typ.__name__}, got {type(node).__name__}")
    return node


def _read_scalar(node, path, width, dtype):
    if not isinstance(node, str):
        raise FormatError(path, f"expected a {width // 4}-digit hex string, got {type(node).__name__} "
                                "(decimal float literals are not accepted)")
    try:
        value = from_hex(node, width)
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None
    if not np.isfinite(value):
        raise FormatError(path, f"non-finite parameter {node}")
    return value


def _read_vector(node, path, width, dtype):
    _expect(node, list, path)
    return np.array([_read_scalar(v, f"{path}[{k}]", width, dtype) for k, v in enumerate(node)], dtype=dtype)


def _read_matrix(node, path, width, dtype, shape=None):
    _expect(node, list, path)
    rows = [_read_vector(r, f"{path}[{k}]", width, dtype) for k, r in enumerate(node)]
    if not rows:
        raise FormatError(path, "empty weight matrix")
    cols = len(rows[0])
    for k, r in enumerate(rows):
        if len(r) != cols:
            raise FormatError(f"{path}[{k}]", f"ragged row: {len(r)} entries, expected {cols}")
    if shape is not None and (len(rows), cols) != shape:
        raise FormatError(path, f"expected {shape[0]}x{shape[1]} = {shape[0] * shape[1]} entries, "
                                f"got {len(rows)}x{cols} = {len(rows) * cols}")
    return np.array(rows, dtype=dtype).reshape(len(rows), cols)


def load_model(data: bytes | str) -> StudentModel:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError("$", f"invalid JSON: {exc}") from None
    _expect(doc, dict, "$")
    for key in ("precision", "extractor", "student"):
        if key not in doc:
            raise FormatError("$", f"missing key {key!r}")
    precision = doc["precision"]
    if precision not in PRECISIONS:
        raise FormatError("$.precision", f"expected 'binary64' or 'binary32', got {precision!r}")
    width = 64 if precision == "binary64" else 32
    dtype = PRECISIONS[precision]

    layers = []
    prev = None
    for k, node in enumerate(_expect(doc["extractor"], list, "$.extractor")):
        path = f"$.extractor[{k}]"
        _expect(node, dict, path)
        act = node.get("activation")
        if act not in ACTIVATIONS:
            raise FormatError(f"{path}.activation", f"unknown activation {act!r}")
        W = _read_matrix(node.get("weights"), f"{path}.weights", width, dtype)
        b = _read_vector(node.get("biases"), f"{path}.biases", width, dtype)
        if prev is not None and W.shape[0] != prev:
            raise FormatError(f"{path}.weights", f"expects {W.shape[0]} inputs, previous layer emits {prev}")
        if b.shape[0] != W.shape[1]:
            raise FormatError(f"{path}.biases", f"expected {W.shape[1]} entries, got {b.shape[0]}")
        layers.append(DenseLayer(W, b, act))
        prev = W.shape[1]
    if not layers:
        raise FormatError("$.extractor", "extractor needs at least one layer")

    st = _expect(doc["student"], dict, "$.student")
    b = _read_vector(st.get("biases"), "$.student.biases", width, dtype)
    if b.size == 0:
        raise FormatError("$.student.biases", "need at least one output class")
    W = _read_matrix(st.get("weights"), "$.student.weights", width, dtype, shape=(prev, b.shape[0]))
    return StudentModel(FeatureExtractor(tuple(layers)), StudentLayer(W, b), precision)
