"""Closed-form recovery of the last dense layer from sign-flip fault pairs.

Flipping the sign of one term of logit ``y_j`` (the bias ``b_j`` or a
product ``I_i * w_ij``) turns ``y_j = t + rest`` into ``-t + rest``. Since
``1/z_j - 1 = exp(-y_j) * (sum of the other exp(y_k))``, the other classes
cancel between the clean and faulted runs and

    t = 1/2 * ln((1/z~ - 1) / (1/z - 1)),

giving ``b_j = t`` and ``w_ij = t / I_i``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DegenerateObservationError,
    NumericDomainError,
    SearchFailureError,
    UsageError,
    VanishingInputError,
)
from .faults import FaultSession, bias_sign, product_sign
from .model import FeatureExtractor, StudentLayer
from .numeric import to_hex
from .seeding import stream


@dataclass(frozen=True)
class ObservationPair:
    """Clean and faulted softmax output at class ``j0``.

    ``z_rest``/``z_tilde_rest`` optionally carry the summed outputs of every
    other class from the same vectors. They equal ``1 - z`` mathematically but
    keep full relative precision when ``z`` is close to 1.
    """

    z: float
    z_tilde: float
    j0: int
    i0: int | None = None
    I_i0: float | None = None
    z_rest: float | None = None
    z_tilde_rest: float | None = None

    @classmethod
    def from_outputs(cls, clean, faulted, j0, i0=None, I_i0=None) -> ObservationPair:
        clean = [float(v) for v in clean]
        faulted = [float(v) for v in faulted]
        return cls(
            z=clean[j0],
            z_tilde=faulted[j0],
            j0=j0,
            i0=i0,
            I_i0=None if I_i0 is None else float(I_i0),
            z_rest=math.fsum(clean[:j0] + clean[j0 + 1:]),
            z_tilde_rest=math.fsum(faulted[:j0] + faulted[j0 + 1:]),
        )

    def swapped(self) -> ObservationPair:
        return ObservationPair(self.z_tilde, self.z, self.j0, self.i0, self.I_i0,
                               self.z_tilde_rest, self.z_rest)


def log_ratio(obs: ObservationPair) -> float:
    """``ln((1/z~ - 1) / (1/z - 1))`` for one observation pair.

    Without complement sums, an output that rounded to exactly 0 or 1 is
    degenerate. With them, ``1/z - 1`` is evaluated as ``rest / z``, so only a
    zero ``z`` or a zero ``rest`` is degenerate.
    """
    z, zt = float(obs.z), float(obs.z_tilde)
    has_rest = obs.z_rest is not None and obs.z_tilde_rest is not None
    upper_ok = (lambda v: v <= 1.0) if has_rest else (lambda v: v < 1.0)
    for name, v in (("z", z), ("z_tilde", zt)):
        if not math.isfinite(v):
            raise NumericDomainError(f"{name} = {v!r} is not finite")
        if not (v > 0.0 and upper_ok(v)):
            raise DegenerateObservationError(f"{name} = {v!r} saturated outside (0, 1)")
    if has_rest:
        rest, rest_t = float(obs.z_rest), float(obs.z_tilde_rest)
        if not (math.isfinite(rest) and math.isfinite(rest_t)):
            raise NumericDomainError("non-finite complement sum")
        if rest <= 0.0 or rest_t <= 0.0:
            raise DegenerateObservationError("every other class underflowed to 0")
        return (math.log(rest_t) - math.log(zt)) - (math.log(rest) - math.log(z))
    a, c = 1.0 / zt - 1.0, 1.0 / z - 1.0
    if a <= 0.0 or c <= 0.0:
        raise DegenerateObservationError(f"1/z - 1 rounded to zero (z={z!r}, z_tilde={zt!r})")
    return math.log(a) - math.log(c)


def recover_bias(obs: ObservationPair) -> float:
    if obs.i0 is not None:
        raise UsageError("bias recovery takes a bias-fault observation (no i0)")
    b = 0.5 * log_ratio(obs)
    if not math.isfinite(b):
        raise NumericDomainError(f"recovered bias {b!r} is not finite")
    return b


def recover_weight(obs: ObservationPair) -> float:
    if obs.i0 is None or obs.I_i0 is None:
        raise UsageError("weight recovery needs i0 and the feature value I_i0")
    if obs.I_i0 == 0.0:
        raise VanishingInputError(f"feature {obs.i0} is zero for this input; the product carries no weight information")
    w = log_ratio(obs) / (2.0 * obs.I_i0)
    if not math.isfinite(w):
        raise NumericDomainError(f"recovered weight {w!r} is not finite")
    return w


# -- non-vanishing input search ------------------------------------------------

def gaussian_sampler(dim: int, rng: np.random.Generator, scale: float = 1.0) -> Callable[[], np.ndarray]:
    return lambda: scale * rng.standard_normal(dim)


@dataclass(frozen=True, eq=False)
class NonVanishingInput:
    x: np.ndarray
    features: np.ndarray
    tries: int


def find_nonvanishing_input(
    model,
    i0: int,
    sampler: Callable[[], np.ndarray],
    epsilon: float | None = None,
    max_tries: int = 1000,
    *,
    epsilon_rel: float = 1e-3,
    epsilon_floor: float = 1e-9,
) -> NonVanishingInput:
    """First sampled input whose feature ``i0`` has magnitude at least ``epsilon``.

    With ``epsilon=None`` the threshold adapts per input:
    ``max(epsilon_rel * max_i |I_i|, epsilon_floor)``.
    ``model`` may be a StudentModel or just its public FeatureExtractor.
    """
    extractor = getattr(model, "extractor", model)
    if not 0 <= i0 < extractor.output_dim:
        raise UsageError(f"feature index {i0} out of range 0..{extractor.output_dim - 1}")
    if epsilon is not None and not epsilon > 0:
        raise UsageError(f"epsilon must be positive, got {epsilon}")
    if max_tries < 1:
        raise UsageError(f"max_tries must be at least 1, got {max_tries}")
    for tries in range(1, max_tries + 1):
        x = np.asarray(sampler())
        feats = extractor(x)
        mag = np.abs(feats.astype(np.float64))
        threshold = epsilon if epsilon is not None else max(epsilon_rel * float(mag.max()), epsilon_floor)
        if mag[i0] >= threshold and mag[i0] > 0:
            return NonVanishingInput(x, feats, tries)
    raise SearchFailureError(
        f"no input with |I_{i0}| >= threshold after {max_tries} tries")


# -- orchestration -----------------------------------------------------------

@dataclass(frozen=True)
class AttackConfig:
    seed: int = 0
    epsilon: float | None = None
    epsilon_rel: float = 0.1
    epsilon_floor: float = 1e-9
    max_tries: int = 1000
    retry_limit: int = 10
    input_scale: float = 1.0
    # each retry scales fresh inputs by this factor to pull logits out of saturation
    retry_shrink: float = 0.5


@dataclass(frozen=True)
class ParameterFailure:
    kind: str
    i: int | None
    j: int
    reason: str


@dataclass(eq=False)
class RecoveryReport:
    recovered_weights: np.ndarray
    recovered_biases: np.ndarray
    precision: str
    fault_count: int
    faulted_runs: int
    clean_runs: int
    retries: int
    search_tries: int
    failures: list = field(default_factory=list)
    true_weights: np.ndarray | None = None
    true_biases: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.recovered_weights.shape[0]

    @property
    def m(self) -> int:
        return self.recovered_weights.shape[1]

    @property
    def run_count(self) -> int:
        return self.faulted_runs + self.clean_runs

    @property
    def expected_faults(self) -> int:
        return self.m + self.n * self.m

    @property
    def theoretical_runs(self) -> int:
        return 2 * self.m + 2 * self.n * self.m

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def weight_errors(self):
        if self.true_weights is None:
            return None
        return np.abs(self.recovered_weights - self.true_weights)

    @property
    def bias_errors(self):
        if self.true_biases is None:
            return None
        return np.abs(self.recovered_biases - self.true_biases)

    @property
    def max_weight_error(self):
        e = self.weight_errors
        return None if e is None else _nanmax(e)

    @property
    def max_bias_error(self):
        e = self.bias_errors
        return None if e is None else _nanmax(e)

    def student(self) -> StudentLayer:
        if self.failures:
            raise UsageError(f"{len(self.failures)} parameters were not recovered")
        return StudentLayer(self.recovered_weights, self.recovered_biases)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "i", "j", "recovered_hex", "true_hex", "abs_error_hex", "status"])
        failed = {(f.kind, f.i, f.j): f.reason for f in self.failures}
        has_truth = self.true_weights is not None

        def row(kind, i, j, rec, true):
            status = failed.get((kind, i, j), "ok")
            if status != "ok":
                status = "failed: " + status
            ok = status == "ok"
            w.writerow([
                kind, "" if i is None else i, j,
                to_hex(rec) if ok else "",
                to_hex(true) if has_truth else "",
                to_hex(abs(rec - true)) if has_truth and ok else "",
                status,
            ])

        for j in range(self.m):
            row("bias", None, j, self.recovered_biases[j],
                self.true_biases[j] if has_truth else None)
        for i in range(self.n):
            for j in range(self.m):
                row("weight", i, j, self.recovered_weights[i, j],
                    self.true_weights[i, j] if has_truth else None)
        summary = ";".join([
            f"precision={self.precision}",
            f"faults={self.fault_count}",
            f"expected_faults={self.expected_faults}",
            f"faulted_runs={self.faulted_runs}",
            f"clean_runs={self.clean_runs}",
            f"theoretical_runs={self.theoretical_runs}",
            f"retries={self.retries}",
            f"search_tries={self.search_tries}",
            f"failed={len(self.failures)}",
        ])
        max_err = ""
        if has_truth:
            errs = [e for e in (self.max_weight_error, self.max_bias_error) if not math.isnan(e)]
            max_err = to_hex(max(errs)) if errs else ""
        w.writerow(["summary", "", "", "", "", max_err, summary])
        return buf.getvalue()


def _nanmax(a) -> float:
    a = a[~np.isnan(a)]
    return float(a.max()) if a.size else math.nan


def _saturated(out, j) -> bool:
    z = float(out[j])
    rest = math.fsum(float(v) for k, v in enumerate(out) if k != j)
    return not z > 0.0 or rest <= 0.0


def extract_last_layer(
    session: FaultSession,
    extractor: FeatureExtractor,
    n: int,
    m: int,
    config: AttackConfig = AttackConfig(),
    *,
    sampler: Callable[[], np.ndarray] | None = None,
    truth: StudentLayer | None = None,
    precision: str = "binary64",
) -> RecoveryReport:
    """Recover every bias and weight of the victim's last layer.

    The attacker sees only ``extractor`` (public), the inputs it picks and the
    softmax vectors ``session`` returns. One input serves all biases, one
    non-vanishing input per feature serves that feature's whole weight row,
    and clean outputs are reused per input. Parameters whose observations
    saturate are retried on fresh inputs up to ``config.retry_limit`` times
    and then reported as failures. ``truth`` only feeds the error columns.
    """
    if extractor.output_dim != n:
        raise UsageError(f"extractor emits {extractor.output_dim} features, attack configured for n={n}")
    if n <= 0:
        raise UsageError(f"n must be positive, got n={n}")
    if m < 2:
        raise UsageError(f"a softmax over m={m} class is constant; recovery needs m >= 2")
    if sampler is None:
        sampler = gaussian_sampler(extractor.input_dim, stream(config.seed, "attack"), config.input_scale)

    faults0, runs0 = session.fault_count, session.run_count
    weights = np.full((n, m), np.nan)
    biases = np.full(m, np.nan)
    failures = []
    retries = 0
    search_tries = 0
    input_counter = 0

    def observe(pending, x, input_id, make_fault, recover, i=None, I_i=None):
        """Run one clean pass on ``x`` and one faulted pass per pending class."""
        clean = session.run(x, input_id=input_id)
        left = {}
        for j in pending:
            if _saturated(clean, j):
                left[j] = "clean output saturated"
                continue
            faulted = session.run(x, fault=make_fault(j), input_id=input_id)
            obs = ObservationPair.from_outputs(clean, faulted, j, i, I_i)
            try:
                recover(j, obs)
            except DegenerateObservationError as exc:
                left[j] = str(exc)
        return left

    def set_bias(j, obs):
        biases[j] = recover_bias(obs)

    pending = list(range(m))
    reasons = {}
    for attempt in range(config.retry_limit + 1):
        x = np.asarray(sampler()) * config.retry_shrink ** attempt
        extractor(x)  # validates the input before the victim sees it
        reasons = observe(pending, x, input_counter, bias_sign, set_bias)
        input_counter += 1
        pending = list(reasons)
        if not pending:
            break
        retries += len(pending) if attempt < config.retry_limit else 0
    failures += [ParameterFailure("bias", None, j, reasons[j]) for j in pending]

    for i in range(n):
        def set_weight(j, obs, i=i):
            weights[i, j] = recover_weight(obs)

        pending = list(range(m))
        reasons = {}
        for attempt in range(config.retry_limit + 1):
            factor = config.retry_shrink ** attempt
            try:
                nv = find_nonvanishing_input(
                    extractor, i, lambda: np.asarray(sampler()) * factor, config.epsilon, config.max_tries,
                    epsilon_rel=config.epsilon_rel, epsilon_floor=config.epsilon_floor)
            except SearchFailureError as exc:
                search_tries += config.max_tries
                reasons = {j: str(exc) for j in pending}
                break
            search_tries += nv.tries
            I_i = float(nv.features[i])
            reasons = observe(pending, nv.x, input_counter, lambda j, i=i: product_sign(i, j),
                              set_weight, i, I_i)
            input_counter += 1
            pending = list(reasons)
            if not pending:
                break
            retries += len(pending) if attempt < config.retry_limit else 0
        failures += [ParameterFailure("weight", i, j, reasons[j]) for j in pending]

    faults = session.fault_count - faults0
    runs = session.run_count - runs0
    return RecoveryReport(
        recovered_weights=weights,
        recovered_biases=biases,
        precision=precision,
        fault_count=faults,
        faulted_runs=faults,
        clean_runs=runs - faults,
        retries=retries,
        search_tries=search_tries,
        failures=failures,
        true_weights=None if truth is None else truth.weights.astype(np.float64),
        true_biases=None if truth is None else truth.biases.astype(np.float64),
    )
