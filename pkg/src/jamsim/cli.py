"""Command-line front end: ``jamsim {run,sweep,verify,oracle}``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import acceptance
from .channel import resolve_slot
from .core import CONFIG_KEYS, DEFAULTS, ConfigError, config_to_mapping, load_config_file, parse_scalar, validate_config
from .engine import TRACE_COLUMNS
from .harness import default_parallelism, emit_csv, expand_grid, result_to_json, run_experiment, run_trial
from .oracle import faulty_resolve_slot, run_oracle
from .streams import trial_seed

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2
TRACE_CAP = 10**6
SEED_ENV = "JAMHARNESS_SEED"

# assertion key -> (result attribute, comparison)
ASSERTIONS = {
    "assert.informed_frac_min": ("informed_frac", "min"),
    "assert.max_node_cost_max": ("max_node_cost", "max"),
    "assert.alice_cost_max": ("alice_cost", "max"),
    "assert.termination_slot_max": ("termination_slot", "max"),
    "assert.violations_max": ("violations", "max"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (key = value lines or a JSON object)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key; repeatable, applied after --config")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--parallelism", type=int, default=None, help="worker processes (default: all cores)")
    common.add_argument("--verbosity", type=int, default=1, help="0 quiet, 1 normal, 2 adds slot_trace.csv")

    parser = argparse.ArgumentParser(prog="jamsim", description="Jamming-resistant broadcast simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one configuration (trials repetitions)")
    sub.add_parser("sweep", parents=[common], help="run a grid given by grid.<key> entries and fit exponents")
    verify = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    verify.add_argument("--criteria", default="", help="comma-separated criterion names (default: all)")
    oracle = sub.add_parser("oracle", parents=[common], help="exhaustive channel truth-table check")
    oracle.add_argument("--max-participants", type=int, default=3)
    oracle.add_argument("--inject-fault", action="store_true", help="check a deliberately broken resolver")
    return parser


def gather_raw(args: argparse.Namespace) -> dict[str, Any]:
    """File entries, then --set overrides, then the seed environment variable."""
    raw: dict[str, Any] = {}
    if args.config:
        try:
            raw.update(load_config_file(args.config))
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {args.config}: {exc.strerror}") from None
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        raw[key.strip()] = parse_scalar(value)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        raw["seed"] = parse_scalar(env_seed)
    return raw


def split_raw(raw: dict[str, Any]) -> tuple[dict[str, Any], dict[str, list], dict[str, Any], int]:
    """Separate simulator keys, grid axes, assertions and the trial count."""
    sim = dict(DEFAULTS)
    grid: dict[str, list] = {}
    asserts: dict[str, Any] = {}
    trials = 1
    for key, value in raw.items():
        if key == "trials":
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError("trials", f"must be a positive integer, got {value!r}")
            trials = value
        elif key.startswith("assert."):
            if key not in ASSERTIONS:
                raise ConfigError(key, f"unknown assertion; known: {', '.join(sorted(ASSERTIONS))}")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, f"expected a number, got {value!r}")
            asserts[key] = value
        elif key.startswith("grid."):
            axis = key[len("grid."):]
            if axis not in CONFIG_KEYS:
                raise ConfigError(key, "unknown configuration key")
            grid[axis] = parse_axis(value)
        elif key in CONFIG_KEYS:
            sim[key] = value
        else:
            raise ConfigError(key, "unknown configuration key")
    return sim, grid, asserts, trials


def parse_axis(value: Any) -> list:
    """Grid values: a list, ``a..b`` integer range, or comma-separated text."""
    if value is None:
        return []
    if isinstance(value, list):
        return value
    if not isinstance(value, str):
        return [value]
    text = value.strip()
    if not text:
        return []
    if ".." in text and "," not in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [parse_scalar(v) for v in text.split(",")]


def write_effective_config(out: Path, mapping: dict[str, Any], extra: dict[str, Any]) -> None:
    lines = [f"{k} = {_render(v)}" for k, v in sorted(mapping.items())]
    lines += [f"{k} = {_render(v)}" for k, v in sorted(extra.items())]
    (out / "effective_config").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _render(v: Any) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_render(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    return str(v)


def _parallelism(args: argparse.Namespace) -> int:
    if args.parallelism is None:
        return default_parallelism()
    if args.parallelism < 1:
        raise ConfigError("--parallelism", "must be ≥ 1")
    return args.parallelism


def _say(args: argparse.Namespace, text: str, level: int = 1) -> None:
    if args.verbosity >= level:
        print(text)


def check_assertions(results, asserts: dict[str, Any]) -> list[str]:
    failures = []
    for key, bound in sorted(asserts.items()):
        attr, kind = ASSERTIONS[key]
        for r in results:
            v = getattr(r, attr)
            if (kind == "min" and v < bound) or (kind == "max" and v > bound):
                failures.append(f"{key}={bound} failed: seed {r.seed} has {attr}={v}")
                break
    return failures


def write_trace(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(rows)


def cmd_run(args: argparse.Namespace) -> int:
    sim, grid, asserts, trials = split_raw(gather_raw(args))
    if grid:
        raise ConfigError("grid", "run takes a single cell; use sweep for grid.* keys")
    cfg = validate_config(sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(out, config_to_mapping(cfg), {"trials": trials, **asserts})
    summary = run_experiment([cfg], trials, _parallelism(args), root_seed=cfg.seed)
    results = list(summary.rows())
    emit_csv(results, out / "trials.csv")
    doc = json.loads(summary.to_json())
    doc["trials_detail"] = [_short(result_to_json(r)) for r in results]
    (out / "summary").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.verbosity >= 2:
        _, log = run_trial(cfg, seed=trial_seed(cfg.seed, 0, 0), trace_cap=TRACE_CAP)
        write_trace(out / "slot_trace.csv", log.trace or [])
    first = results[0]
    informed = min(r.informed_frac for r in results)
    _say(args, f"informed_frac={informed!r} T={first.T} max_node_cost={max(r.max_node_cost for r in results)} "
               f"trials={len(results)} out={out}", 0)
    failures = check_assertions(results, asserts)
    for line in failures:
        print(line, file=sys.stderr)
    return EXIT_FAILED if failures else EXIT_OK


def _short(doc: dict) -> dict:
    doc.pop("s_sizes", None)
    doc.pop("blocked_log", None)
    return doc


def cmd_sweep(args: argparse.Namespace) -> int:
    sim, grid, asserts, trials = split_raw(gather_raw(args))
    if not grid:
        raise ConfigError("grid", "sweep needs at least one grid.<key> entry")
    try:
        cells = expand_grid(sim, grid)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("grid", str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"trials": trials, **asserts, **{f"grid.{k}": v for k, v in grid.items()}}
    write_effective_config(out, config_to_mapping(cells[0]), extra)
    summary = run_experiment(cells, trials, _parallelism(args), root_seed=cells[0].seed, fit=True)
    results = list(summary.rows())
    emit_csv(results, out / "trials.csv")
    (out / "summary").write_text(summary.to_json(), encoding="utf-8")
    fit = summary.fit or {}
    if "error" in fit:
        _say(args, f"cells={len(cells)} trials={len(results)} fit unavailable: {fit['error']}", 0)
    else:
        _say(args, f"cells={len(cells)} trials={len(results)} slope_node={fit['slope_node']:.4f} "
                   f"(r2 {fit['r2_node']:.3f}) slope_alice={fit['slope_alice']:.4f} "
                   f"reference={fit['reference_exponent']:.4f}", 0)
    failures = check_assertions(results, asserts)
    for line in failures:
        print(line, file=sys.stderr)
    return EXIT_FAILED if failures else EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    names = [x.strip() for x in args.criteria.split(",") if x.strip()]
    unknown = [x for x in names if x not in acceptance.CRITERIA]
    if unknown:
        raise ConfigError("--criteria", f"unknown criterion {', '.join(unknown)}; known: {', '.join(acceptance.CRITERIA)}")
    raw = gather_raw(args)
    seed = raw.get("seed", acceptance.SUITE_SEED)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed", f"expected an integer, got {seed!r}")
    t0 = time.perf_counter()
    echo = print if args.verbosity >= 1 else None
    results = acceptance.run_suite(names or None, _parallelism(args), seed, echo=echo)
    wall = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "seed": seed,
        "criteria": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
    }
    (out / "summary").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed; wall time {wall:.1f}s")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    if not 1 <= args.max_participants <= 3:
        raise ConfigError("--max-participants", "must be 1, 2 or 3")
    resolver = faulty_resolve_slot if args.inject_fault else resolve_slot
    cases, bad, mismatches = run_oracle(args.max_participants, resolver)
    print(f"oracle: {cases} cases, {bad} mismatching")
    for m in mismatches[:10 if args.verbosity < 2 else None]:
        print(f"  actions={m.actions} listener={m.listener} expected={m.expected} got={m.got}")
    return EXIT_FAILED if bad else EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "oracle": cmd_oracle}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
