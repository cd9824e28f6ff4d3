"""Command-line entry point: ``selcal <command> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from . import __version__, scorers
from .baseline import run_comparison
from .calibration import LARGEST, SELECTION_RULES, calibrate
from .evaluation import (
    LINEAR,
    LOGISTIC,
    STEP,
    SyntheticModel,
    gen_population,
    guarantee_check,
    guarantee_tolerance,
    run_trials_grid,
)
from .io import InputError, atomic_write, csv_text, document_text, iter_jsonl, jsonl_text, make_manifest
from .model import BoundMethod, CalibrationOutcome, EvidenceRecord, RiskConfig, ScoredRecord, validate_record

EXIT_OK = 0
EXIT_VERDICT_FAIL = 1
EXIT_NO_THRESHOLD = 2
EXIT_INPUT = 3
EXIT_CONFIG = 4

SEED_ENV = "SELCAL_SEED"
DEFAULT_ALPHAS = "0.05:0.26:0.01"

EVALUATE_COLUMNS = ("alpha", "mean_fdr", "std_fdr", "mean_power", "violation_fraction", "mean_threshold")
BASELINE_COLUMNS = ("alpha", "coin_power", "ca_power", "coin_fdr", "ca_fdr")

EPILOG = """\
exit codes:
  0  success
  1  simulate: guarantee verdict is "fail"
  2  calibrate: no valid threshold
  3  input error (unreadable file, malformed lines under --strict, empty input)
  4  config error (invalid flag values, unknown model or method)

environment:
  SELCAL_SEED  default seed when --seed is not given (otherwise 0)
"""

log = logging.getLogger("selcal")


class ConfigError(Exception):
    pass


# -- argument parsing helpers --------------------------------------------------


def parse_alphas(spec: str) -> list[float]:
    """Parse ``start:stop:step`` (start inclusive, stop exclusive) exactly in decimal."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"alpha range must look like start:stop:step, got {spec!r}")
    try:
        start, stop, step = (Decimal(p) for p in parts)
    except InvalidOperation:
        raise ConfigError(f"alpha range has a non-numeric part: {spec!r}") from None
    if step <= 0:
        raise ConfigError(f"alpha range step must be positive, got {step}")
    values = []
    a = start
    while a < stop:
        values.append(float(a))
        a += step
    if not values:
        raise ConfigError(f"alpha range {spec!r} is empty")
    if any(not 0.0 < v < 1.0 for v in values):
        raise ConfigError(f"alpha values must lie in (0, 1), got range {spec!r}")
    return values


def parse_model(spec: str) -> SyntheticModel:
    """``linear``, ``logistic:slope=10,center=0.5`` or ``step:low=0,high=1,center=0.5``."""
    name, _, params = spec.partition(":")
    name = name.strip().lower()
    kwargs: dict[str, float] = {}
    for item in filter(None, (p.strip() for p in params.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"model parameter {item!r} is not key=value")
        try:
            kwargs[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"model parameter {key!r} is not a number: {value!r}") from None
    allowed = {LINEAR: set(), LOGISTIC: {"slope", "center"}, STEP: {"low", "high", "center"}}
    if name not in allowed:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(allowed)}")
    extra = set(kwargs) - allowed[name]
    if extra:
        raise ConfigError(f"model {name!r} takes no parameter(s) {sorted(extra)}")
    if name == STEP and not {"low", "high"} <= set(kwargs):
        raise ConfigError("step model needs low= and high=")
    try:
        return SyntheticModel(name, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _risk_config(**kwargs) -> RiskConfig:
    try:
        return RiskConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- input readers -------------------------------------------------------------


def _read_records(path: str, parse: Callable[[dict], Any], strict: bool) -> tuple[list[Any], int]:
    records, skipped = [], 0
    for lineno, obj in iter_jsonl(path):
        if not isinstance(obj, Exception):
            try:
                obj = parse(obj)
            except (ValueError, TypeError) as exc:
                obj = exc
        if isinstance(obj, Exception):
            log.warning("%s:%d: %s", path, lineno, obj)
            skipped += 1
            continue
        records.append(obj)
    if strict and skipped:
        raise InputError(f"{path}: {skipped} malformed line(s) under --strict")
    return records, skipped


def read_scored(path: str, strict: bool = False) -> tuple[list[ScoredRecord], int]:
    records, skipped = _read_records(path, ScoredRecord.from_dict, strict)
    if not records:
        raise InputError(f"{path}: no usable scored records")
    return records, skipped


# -- scoring -------------------------------------------------------------------


def _score_one(rec: EvidenceRecord, method: str, n_options: Optional[int], ecc_dim: int) -> float:
    def need(*fields: str):
        missing = [f for f in fields if getattr(rec, f) is None]
        if missing:
            raise ValueError(f"method {method!r} needs {', '.join(missing)}")
        return [getattr(rec, f) for f in fields]

    if method == "passthrough":
        if rec.precomputed_uncertainty is None:
            raise ValueError("method 'passthrough' needs precomputed_uncertainty")
        return rec.precomputed_uncertainty
    if method == "pe_white":
        (probs,) = need("option_probs")
        return scorers.pe_white(probs)
    if method == "pe_black":
        (ids,) = need("sampled_option_ids")
        k = n_options if n_options is not None else max(ids) + 1
        return scorers.pe_black(ids, k)
    if method == "se_black":
        (labels,) = need("cluster_labels")
        return scorers.se_black(labels)
    if method == "se_white":
        labels, probs = need("cluster_labels", "sequence_probs")
        return scorers.se_white(labels, probs)
    (raw,) = need("similarity")
    sim = scorers.normalize(raw)
    if method == "eigv":
        return scorers.u_eigv(sim)
    if method == "deg":
        return scorers.u_deg(sim)
    return scorers.u_ecc(sim, k=min(ecc_dim, len(sim)))


SCORE_METHODS = ("pe_white", "pe_black", "se_black", "se_white", "ecc", "deg", "eigv", "passthrough")


def cmd_score(args) -> int:
    if args.n_options is not None and args.n_options < 1:
        raise ConfigError("--n-options must be positive")
    if args.ecc_dim < 1:
        raise ConfigError("--ecc-dim must be positive")
    out, skipped = [], 0
    for lineno, obj in iter_jsonl(args.input):
        try:
            if isinstance(obj, Exception):
                raise obj
            rec = EvidenceRecord.from_dict(obj)
            problems = validate_record(rec)
            if problems:
                raise ValueError("; ".join(problems))
            u = _score_one(rec, args.method, args.n_options, args.ecc_dim)
            out.append(ScoredRecord(rec.id, float(u), rec.admissible))
        except (ValueError, TypeError) as exc:
            log.warning("%s:%d: %s", args.input, lineno, exc)
            skipped += 1
    if args.strict and skipped:
        raise InputError(f"{args.input}: {skipped} record(s) skipped under --strict")
    config = {"method": args.method, "n_options": args.n_options, "ecc_dim": args.ecc_dim}
    manifest = make_manifest("score", config, [args.input], skipped=skipped)
    atomic_write(args.output, jsonl_text(manifest, (r.to_dict() for r in out)))
    log.info("scored %d record(s), skipped %d", len(out), skipped)
    return EXIT_OK


# -- calibrate / select --------------------------------------------------------


def cmd_calibrate(args) -> int:
    config = _risk_config(alpha=args.alpha, delta=args.delta, bound_method=args.bound)
    records, skipped = read_scored(args.input, args.strict)
    outcome = calibrate(records, config, rule=args.rule)
    body = outcome.to_dict()
    body["rule"] = args.rule
    manifest = make_manifest("calibrate", {**config.to_dict(), "rule": args.rule}, [args.input], skipped=skipped)
    atomic_write(args.output, document_text(manifest, body))
    if outcome.threshold is None:
        log.warning("no threshold has an upper bound at or below alpha=%g", config.alpha)
        return EXIT_NO_THRESHOLD
    log.info("threshold %.6g selects %d of %d calibration records", outcome.threshold,
             outcome.selected_count_cal, len(records))
    return EXIT_OK


def _parse_deploy(data: dict) -> dict:
    if "id" not in data or "uncertainty" not in data:
        raise ValueError("record needs 'id' and 'uncertainty'")
    u = float(data["uncertainty"])
    if not math.isfinite(u):
        raise ValueError("uncertainty must be finite")
    if "admissible" in data and data["admissible"] not in (0, 1, True, False):
        raise ValueError(f"admissible must be 0 or 1, got {data['admissible']!r}")
    return data


def cmd_select(args) -> int:
    try:
        import json
        with open(args.calibration, encoding="utf-8") as fh:
            doc = json.load(fh)
        threshold = CalibrationOutcome.from_dict(doc).threshold
    except OSError as exc:
        raise InputError(f"cannot read {args.calibration}: {exc.strerror or exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.calibration}: not a calibration document ({exc})") from None

    rows, skipped = _read_records(args.input, _parse_deploy, args.strict)
    if threshold is None:
        log.warning("calibration document has no threshold; selecting nothing")
        chosen = []
    else:
        chosen = [r for r in rows if float(r["uncertainty"]) <= threshold]

    summary: dict[str, Any] = {"threshold": threshold, "n_records": len(rows), "n_selected": len(chosen)}
    labeled = bool(rows) and all("admissible" in r for r in rows)
    if labeled:
        n_adm = sum(int(r["admissible"]) for r in rows)
        good = sum(int(r["admissible"]) for r in chosen)
        summary["test_fdr"] = (len(chosen) - good) / len(chosen) if chosen else None
        summary["power"] = good / n_adm if n_adm else None
    manifest = make_manifest("select", {"threshold": threshold}, [args.calibration, args.input], skipped=skipped)
    atomic_write(args.output, jsonl_text(manifest, chosen))
    summary_path = args.summary or f"{args.output}.summary.json"
    atomic_write(summary_path, document_text(manifest, summary))
    log.info("selected %d of %d record(s)", len(chosen), len(rows))
    return EXIT_OK


# -- evaluation commands -------------------------------------------------------


def _seed(args) -> int:
    return args.seed if args.seed is not None else default_seed()


def cmd_evaluate(args) -> int:
    alphas = parse_alphas(args.alphas)
    seed = _seed(args)
    config = _risk_config(alpha=alphas[0], delta=args.delta, bound_method=args.bound,
                          split_ratio=args.split, n_trials=args.trials, seed=seed)
    records, skipped = read_scored(args.input, args.strict)
    if len(records) < 2:
        raise InputError(f"{args.input}: need at least two records to split")
    if not any(r.admissible for r in records):
        raise InputError(f"{args.input}: power is undefined without admissible records")
    reports = run_trials_grid(records, alphas, config)
    rows = [{**r.to_dict(), "alpha": a} for r, a in zip(reports, alphas)]
    cfg = {**config.to_dict(), "alphas": args.alphas}
    del cfg["alpha"]
    manifest = make_manifest("evaluate", cfg, [args.input], seed=seed, skipped=skipped)
    atomic_write(args.output, csv_text(manifest, EVALUATE_COLUMNS, rows))
    json_path = args.json or str(Path(args.output).with_suffix(".json"))
    atomic_write(json_path, document_text(manifest, {"reports": rows}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = parse_model(args.model)
    seed = _seed(args)
    if args.cal_size < 1 or args.repeats < 1:
        raise ConfigError("--cal-size and --repeats must be positive")
    config = _risk_config(alpha=args.alpha, delta=args.delta, bound_method=args.bound, seed=seed)
    violation, mean_risk = guarantee_check(model, args.cal_size, args.repeats, config)
    tolerance = guarantee_tolerance(config.delta, args.repeats)
    verdict = "pass" if violation <= tolerance else "fail"
    body = {
        "model": model.describe(),
        "violation_fraction": violation,
        "mean_true_tcfr": mean_risk,
        "tolerance": tolerance,
        "verdict": verdict,
    }
    cfg = {"model": model.describe(), "cal_size": args.cal_size, "repeats": args.repeats,
           "alpha": config.alpha, "delta": config.delta, "bound_method": config.bound_method.value}
    manifest = make_manifest("simulate", cfg, seed=seed)
    atomic_write(args.output, document_text(manifest, body))
    log.info("violation fraction %.4g (tolerance %.4g): %s", violation, tolerance, verdict)
    return EXIT_OK if verdict == "pass" else EXIT_VERDICT_FAIL


def cmd_baseline(args) -> int:
    alphas = parse_alphas(args.alphas)
    seed = _seed(args)
    config = _risk_config(alpha=alphas[0], delta=args.delta, bound_method=args.bound,
                          split_ratio=args.split, n_trials=args.trials, seed=seed)
    records, skipped = read_scored(args.input, args.strict)
    if len(records) < 2:
        raise InputError(f"{args.input}: need at least two records to split")
    if not any(r.admissible for r in records):
        raise InputError(f"{args.input}: power is undefined without admissible records")
    rows = run_comparison(records, alphas, config)
    cfg = {**config.to_dict(), "alphas": args.alphas}
    del cfg["alpha"]
    manifest = make_manifest("baseline", cfg, [args.input], seed=seed, skipped=skipped)
    atomic_write(args.output, csv_text(manifest, BASELINE_COLUMNS, rows))
    return EXIT_OK


def cmd_generate(args) -> int:
    model = parse_model(args.model)
    seed = _seed(args)
    if args.n < 1:
        raise ConfigError("-n must be positive")
    records = gen_population(args.n, model, seed)
    manifest = make_manifest("generate", {"model": model.describe(), "n": args.n}, seed=seed)
    atomic_write(args.output, jsonl_text(manifest, (r.to_dict() for r in records)))
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _add_bound_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, default=0.05, help="confidence parameter (default 0.05)")
    p.add_argument("--bound", choices=[m.value for m in BoundMethod], default=BoundMethod.CP_EXACT.value,
                   help="upper bound: cp (exact binomial) or hfd (Hoeffding); default cp")


def _add_trial_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alphas", default=DEFAULT_ALPHAS,
                   help=f"risk levels as start:stop:step, stop exclusive (default {DEFAULT_ALPHAS})")
    p.add_argument("--trials", type=int, default=100, help="random splits (default 100)")
    p.add_argument("--split", type=float, default=0.5, help="calibration fraction (default 0.5)")
    p.add_argument("--seed", type=int, default=None, help=f"seed (default ${SEED_ENV} or 0)")
    _add_bound_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selcal",
        description="Calibrate uncertainty thresholds that bound the failure rate of selected answers.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only report warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("score", cmd_score, "turn evidence records into scored records")
    p.add_argument("input", help="evidence records, one JSON object per line")
    p.add_argument("-m", "--method", choices=SCORE_METHODS, required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--n-options", type=int, default=None,
                   help="option count for pe_black (default: largest sampled id + 1)")
    p.add_argument("--ecc-dim", type=int, default=2, help="embedding dimension for ecc (default 2)")
    p.add_argument("--strict", action="store_true", help="fail if any record is skipped")

    p = add("calibrate", cmd_calibrate, "pick the calibrated threshold from labeled scored records")
    p.add_argument("input")
    p.add_argument("--alpha", type=float, required=True, help="target failure rate among selected records")
    _add_bound_flags(p)
    p.add_argument("--rule", choices=SELECTION_RULES, default=LARGEST,
                   help="largest: largest passing threshold (default); prefix: end of the passing run from the bottom")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--strict", action="store_true")

    p = add("select", cmd_select, "keep records at or below a calibrated threshold")
    p.add_argument("calibration", help="document written by 'calibrate'")
    p.add_argument("input", help="scored records; admissible labels optional")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--summary", default=None, help="summary path (default OUTPUT.summary.json)")
    p.add_argument("--strict", action="store_true")

    p = add("evaluate", cmd_evaluate, "repeated random-split evaluation over a grid of risk levels")
    p.add_argument("input")
    _add_trial_flags(p)
    p.add_argument("-o", "--output", required=True, help="CSV table")
    p.add_argument("--json", default=None, help="full report document (default OUTPUT with .json suffix)")
    p.add_argument("--strict", action="store_true")

    p = add("simulate", cmd_simulate, "Monte Carlo check of the risk guarantee on a synthetic model")
    p.add_argument("--model", default=LINEAR,
                   help="linear | logistic:slope=S,center=C | step:low=A,high=B,center=C (default linear)")
    p.add_argument("--cal-size", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=2000)
    p.add_argument("--alpha", type=float, required=True)
    _add_bound_flags(p)
    p.add_argument("--seed", type=int, default=None, help=f"seed (default ${SEED_ENV} or 0)")
    p.add_argument("-o", "--output", required=True)

    p = add("baseline", cmd_baseline, "compare calibrated thresholds with conformal p-values plus BH")
    p.add_argument("input")
    _add_trial_flags(p)
    p.add_argument("-o", "--output", required=True, help="CSV table")
    p.add_argument("--strict", action="store_true")

    p = add("generate", cmd_generate, "write a synthetic labeled scored population")
    p.add_argument("--model", default=LINEAR)
    p.add_argument("-n", type=int, required=True, help="population size")
    p.add_argument("--seed", type=int, default=None, help=f"seed (default ${SEED_ENV} or 0)")
    p.add_argument("-o", "--output", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("selcal: %(levelname)s: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
