"""``sniff`` command line: generate | attack | inject | evaluate | all."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import SniffError
from .evaluation import DIGITS_GRID, accuracy_curve, curve_to_csv, make_blob_dataset, summarize_precision
from .extraction import AttackConfig, extract_last_layer
from .faults import FaultSession, parse_fault
from .model import StudentModel, generate_synthetic, load_model, save_model
from .numeric import to_hex
from .seeding import stream

log = logging.getLogger("sniff")

THRESHOLDS = {"binary64": 1e-12, "binary32": 1e-4}
DIGITS2_TOLERANCE = 0.01

DEFAULTS = {
    "seed": "42",
    "dims": "32,16",
    "m": "10",
    "weight_range": "-1,1",
    "activation": "relu",
    "precision": "64",
    "out": "out",
    "model": None,
    "recovered": None,
    "epsilon": None,
    "max_tries": "1000",
    "retry_limit": "10",
    "fault": None,
    "input": None,
    "digits": ",".join("inf" if d is None else str(d) for d in DIGITS_GRID),
}


class ConfigError(SniffError):
    pass


def _fmt(v) -> str:
    width = 32 if np.asarray(v).dtype == np.float32 else 64
    return f"{float(v)!r} (0x{to_hex(v, width)})"


def _ints(text, key):
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None


def _floats(text, key):
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _int(text, key):
    try:
        return int(text, 0)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _precision(text) -> str:
    if str(text) in ("64", "binary64"):
        return "binary64"
    if str(text) in ("32", "binary32"):
        return "binary32"
    raise ConfigError(f"precision: expected 64 or 32, got {text!r}")


def _digits(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in ("inf", "none"):
            out.append(None)
        else:
            d = _int(tok, "digits")
            if d < 0:
                raise ConfigError(f"digits: must be >= 0, got {d}")
            out.append(d)
    return out


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; dashes and underscores are interchangeable."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not eq or key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: expected one of {', '.join(DEFAULTS)} as key=value")
        values[key] = val.strip()
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; flags override it")
    common.add_argument("--seed", help="64-bit experiment seed (default 42)")
    common.add_argument("--model", help="model file (default <out>/model.json)")
    common.add_argument("--recovered", help="recovered model file (default <out>/recovered.json)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--precision", choices=["64", "32"])
    common.add_argument("--dims", help="extractor dims, input first, last = n (default 32,16)")
    common.add_argument("--m", help="number of output classes (default 10)")
    common.add_argument("--weight-range", dest="weight_range", help="low,high (default -1,1)")
    common.add_argument("--activation", help="last extractor layer activation (default relu)")
    common.add_argument("--epsilon", help="fixed non-vanishing threshold (default: adaptive)")
    common.add_argument("--max-tries", dest="max_tries")
    common.add_argument("--retry-limit", dest="retry_limit")
    common.add_argument("--fault", help='e.g. "product:i=2,j=1:signflip"')
    common.add_argument("--input", help="comma-separated input vector for inject")
    common.add_argument("--digits", help='rounding sweep, e.g. "0,1,2,inf"')

    parser = argparse.ArgumentParser(prog="sniff", description="Sign-bit fault extraction simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("generate", "write a seeded synthetic victim model"),
        ("attack", "recover the last layer of a model with sign-bit faults"),
        ("inject", "print clean and faulted outputs for one fault"),
        ("evaluate", "compare original and recovered models"),
        ("all", "generate, attack and evaluate in one go"),
    ]:
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def resolve(args) -> dict:
    cfg = dict(DEFAULTS)
    from_file = read_config_file(args.config) if args.config else {}
    cfg.update(from_file)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    out = Path(cfg["out"])
    cfg["out"] = out
    cfg["model"] = Path(cfg["model"]) if cfg["model"] else out / "model.json"
    cfg["recovered"] = Path(cfg["recovered"]) if cfg["recovered"] else out / "recovered.json"
    cfg["seed"] = _int(cfg["seed"], "seed")
    cfg["precision"] = _precision(cfg["precision"])
    cfg["explicit_precision"] = args.precision is not None or "precision" in from_file
    return cfg


def _setup_log(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO)
    log.propagate = False


def _load(path: Path, cfg) -> StudentModel:
    model = load_model(path.read_bytes())
    if cfg["explicit_precision"] and model.precision != cfg["precision"]:
        model = model.astype(cfg["precision"])
    return model


def cmd_generate(cfg) -> int:
    dims = _ints(cfg["dims"], "dims")
    m = _int(cfg["m"], "m")
    lo_hi = _floats(cfg["weight_range"], "weight_range")
    if len(lo_hi) != 2:
        raise ConfigError(f"weight_range: expected low,high, got {cfg['weight_range']!r}")
    model = generate_synthetic(cfg["seed"], dims, dims[-1], m, tuple(lo_hi), cfg["precision"], cfg["activation"])
    path = cfg["model"]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save_model(model))
    log.info("generate seed=%d dims=%s m=%d -> %s", cfg["seed"], dims, m, path)
    print(f"model: {path}")
    print(f"  precision {model.precision}, extractor dims {dims}, n={model.n}, m={model.m}")
    return 0


def cmd_attack(cfg) -> int:
    model = _load(cfg["model"], cfg)
    config = AttackConfig(
        seed=cfg["seed"],
        epsilon=None if cfg["epsilon"] is None else float(cfg["epsilon"]),
        max_tries=_int(cfg["max_tries"], "max_tries"),
        retry_limit=_int(cfg["retry_limit"], "retry_limit"),
    )
    session = FaultSession(model, keep_outputs=False)
    report = extract_last_layer(session, model.extractor, model.n, model.m, config,
                                truth=model.student, precision=model.precision)
    out = cfg["out"]
    (out / "report.csv").write_text(report.to_csv())
    if report.ok:
        recovered = StudentModel(model.extractor, report.student(), model.precision)
        cfg["recovered"].write_bytes(save_model(recovered))
    threshold = THRESHOLDS[model.precision]
    worst = max(report.max_weight_error, report.max_bias_error)
    log.info("attack model=%s faults=%d failures=%d", cfg["model"], report.fault_count, len(report.failures))

    print(f"precision mode: {model.precision} (threshold {threshold:g})")
    print(f"n={report.n} m={report.m}")
    print(f"faults injected: {report.fault_count} (m + n*m = {report.expected_faults})")
    print(f"runs: {report.run_count} actual ({report.faulted_runs} faulted + {report.clean_runs} clean, cached); "
          f"theoretical 2m + 2mn = {report.theoretical_runs}")
    print(f"retries: {report.retries}, non-vanishing search tries: {report.search_tries}")
    print(f"max weight error: {_fmt(report.max_weight_error)}")
    print(f"max bias error:   {_fmt(report.max_bias_error)}")
    print(f"report: {out / 'report.csv'}")
    if not report.ok:
        print(f"FAILED: {len(report.failures)} parameters not recovered", file=sys.stderr)
        return 1
    print(f"recovered model: {cfg['recovered']}")
    if not worst <= threshold:
        print(f"FAILED: max error {worst:g} above {threshold:g}", file=sys.stderr)
        return 1
    return 0


def cmd_inject(cfg) -> int:
    if not cfg["fault"]:
        raise ConfigError("inject needs --fault")
    fault = parse_fault(cfg["fault"])
    model = _load(cfg["model"], cfg)
    if cfg["input"]:
        x = np.array(_floats(cfg["input"], "input"))
    else:
        x = stream(cfg["seed"], "attack").standard_normal(model.extractor.input_dim)
    clean = model.forward(x)
    faulted = model.forward(x, fault)
    print(f"fault: {fault}")
    print(f"{'j':>3}  {'clean':<45}  faulted")
    for j, (a, b) in enumerate(zip(clean, faulted)):
        mark = "" if a == b else "  *"
        print(f"{j:>3}  {_fmt(a):<45}  {_fmt(b)}{mark}")
    return 0


def cmd_evaluate(cfg) -> int:
    original = _load(cfg["model"], cfg)
    recovered = _load(cfg["recovered"], cfg)
    summary = summarize_precision(original.student, recovered.student, original.precision)
    digits = _digits(cfg["digits"])
    data = make_blob_dataset(cfg["seed"], original.extractor.input_dim, original.m)
    curve = accuracy_curve(original, recovered, data.X_test, data.y_test, digits)
    out = cfg["out"]
    (out / "precision.csv").write_text(summary.to_csv())
    (out / "accuracy.csv").write_text(curve_to_csv(curve))
    log.info("evaluate %s vs %s", cfg["model"], cfg["recovered"])

    threshold = THRESHOLDS[original.precision]
    status = 0
    print(f"max weight error: {_fmt(summary.max_weight_abs_error)}")
    print(f"max bias error:   {_fmt(summary.max_bias_abs_error)}")
    ok = summary.max_abs_error <= threshold
    print(f"[{'PASS' if ok else 'FAIL'}] max abs error <= {threshold:g}")
    status |= not ok
    print(f"{'digits':>6}  {'acc_orig':>8}  {'acc_rec':>8}  {'diff':>8}  agree")
    for p in curve:
        d = "inf" if p.digits is None else p.digits
        print(f"{d:>6}  {p.accuracy_original:8.4f}  {p.accuracy_rounded_recovered:8.4f}  "
              f"{p.diff:+8.4f}  {p.agreement}/{p.total}")
        if p.digits is None:
            ok = p.agreement == p.total and p.diff == 0.0
            print(f"[{'PASS' if ok else 'FAIL'}] full precision: identical predictions")
            status |= not ok
        elif p.digits == 2:
            ok = abs(p.diff) <= DIGITS2_TOLERANCE
            # only a hard requirement for the default desk-scale configuration
            print(f"[{'PASS' if ok else 'WARN'}] digits=2: |diff| <= {DIGITS2_TOLERANCE}")
    print(f"csv: {out / 'precision.csv'}, {out / 'accuracy.csv'}")
    return int(status)


def cmd_all(cfg) -> int:
    for step in (cmd_generate, cmd_attack, cmd_evaluate):
        status = step(cfg)
        if status:
            return status
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "attack": cmd_attack,
    "inject": cmd_inject,
    "evaluate": cmd_evaluate,
    "all": cmd_all,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        _setup_log(cfg["out"])
        return COMMANDS[args.command](cfg)
    except (SniffError, OSError) as exc:
        print(f"sniff {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
