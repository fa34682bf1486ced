"""Trial runner, metric extraction, experiment grids and CSV/summary output."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .adversary import Strategy
from .core import SimConfig, config_to_mapping, validate_config
from .engine import Engine, TrialLog
from .streams import trial_seed

CSV_COLUMNS = (
    "seed", "n", "f", "k", "epsilon_prime", "strategy", "T", "alice_cost",
    "max_node_cost", "mean_node_cost", "informed_frac", "termination_slot",
    "termination_round", "blocked_phase_count", "violations",
)


@dataclass
class TrialResult:
    seed: int
    n: int
    f: float
    k: int
    epsilon_prime: float
    strategy: str
    T: int
    alice_cost: int
    max_node_cost: int
    mean_node_cost: float
    informed_count: int
    informed_frac: float
    uninformed_terminated_count: int
    still_active: int
    termination_slot: int
    termination_round: int
    rounds_run: int
    blocked_phase_count: int
    violations: int
    pool_capacity: int
    node_budget: int
    alice_budget: int
    first_unblockable_round: int
    max_rounds_hit: bool
    aborted: str | None
    conservation_ok: bool
    exhaustion_slot: int
    clamp_events: int
    approx_replicas: int
    # (round, h, |S_{i,h}|, uninformed correct nodes at the start of that phase)
    s_sizes: list[tuple[int, int, int, int]] = field(default_factory=list)
    propagation_steps: list[int] = field(default_factory=list)  # distinct steps seen per round
    blocked_log: list[tuple[int, str, int, int]] = field(default_factory=list)  # (round, phase, step, replica)
    content_table: tuple[int, int, int, int] = (0, 0, 0, 0)

    def csv_row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def result_from_log(log: TrialLog) -> TrialResult:
    cfg = log.cfg
    n = cfg.n
    costs = log.node_cost
    informed = int(log.node_has_m.sum())
    terminated = log.node_status == 2
    unin_term = int((terminated & ~log.node_has_m).sum())
    still = int((~terminated).sum())
    violations = int((costs > log.budgets.node_budget).sum()) + int(log.alice_cost > log.budgets.alice_budget)

    s_sizes = []
    steps_per_round: dict[int, set] = {}
    blocked = []
    known = 0
    table = np.zeros(4, dtype=np.int64)
    for r in log.phases:
        if r.phase == "inform":
            s_sizes.append((r.round_index, 1, r.newly_informed, n - known))
        elif r.phase == "propagation":
            steps_per_round.setdefault(r.round_index, set()).add(r.step)
            if r.replica <= 1:
                s_sizes.append((r.round_index, r.step + 1, r.newly_informed, n - known))
            else:
                last = s_sizes[-1]
                s_sizes[-1] = (last[0], last[1], last[2] + r.newly_informed, last[3])
        known += r.newly_informed
        if r.blocked:
            blocked.append((r.round_index, r.phase, r.step, r.replica))
        table += np.asarray(r.content_table)
    last_blocked = max((b[0] for b in blocked), default=cfg.i_start - 1)
    return TrialResult(
        seed=cfg.seed, n=n, f=float(cfg.f), k=cfg.k, epsilon_prime=cfg.epsilon_prime,
        strategy=cfg.adversary.strategy, T=log.adversary_cost, alice_cost=log.alice_cost,
        max_node_cost=int(costs.max()) if n else 0, mean_node_cost=float(costs.mean()) if n else 0.0,
        informed_count=informed, informed_frac=informed / n,
        uninformed_terminated_count=unin_term, still_active=still,
        termination_slot=log.termination_slot, termination_round=log.termination_round,
        rounds_run=log.rounds_run, blocked_phase_count=len(blocked), violations=violations,
        pool_capacity=log.pool_capacity, node_budget=log.budgets.node_budget,
        alice_budget=log.budgets.alice_budget, first_unblockable_round=last_blocked + 1,
        max_rounds_hit=log.max_rounds_hit or log.rounds_run == 0, aborted=log.aborted,
        conservation_ok=log.conservation_ok(), exhaustion_slot=log.exhaustion_slot,
        clamp_events=len(log.clamps), approx_replicas=log.approx_replicas,
        s_sizes=s_sizes, propagation_steps=[len(steps_per_round[r]) for r in sorted(steps_per_round)],
        blocked_log=blocked, content_table=tuple(int(x) for x in table),
    )


def run_trial(cfg: SimConfig, strategy: Strategy | None = None, seed: int | None = None,
              trace_cap: int = 0) -> tuple[TrialResult, TrialLog]:
    """Simulate one trial; ``seed`` (if given) replaces the config seed."""
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    log = Engine(cfg, strategy, trace_cap).run()
    return result_from_log(log), log


# --------------------------------------------------------------------------
# competitiveness fit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float


@dataclass(frozen=True)
class CompetitivenessFit:
    node: LineFit
    alice: LineFit
    points: int

    @property
    def slope_node(self) -> float:
        return self.node.slope

    @property
    def slope_alice(self) -> float:
        return self.alice.slope


def ols(x: np.ndarray, y: np.ndarray) -> LineFit:
    A = np.column_stack((x, np.ones_like(x)))
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res <= 1e-24 else 0.0)
    return LineFit(float(slope), float(intercept), r2)


def competitiveness_fit(points: Sequence[tuple[float, float, float]]) -> CompetitivenessFit:
    """OLS of ln(cost) on ln(T) for max node cost and Alice's cost."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 4 or pts.shape[1] != 3:
        raise ValueError("need at least 4 (T, max node cost, Alice cost) points")
    if (pts <= 0).any():
        raise ValueError("T and costs must be positive for a log-log fit")
    if np.unique(pts[:, 0]).size < 2:
        raise ValueError("degenerate: all T equal")
    lx = np.log(pts[:, 0])
    return CompetitivenessFit(ols(lx, np.log(pts[:, 1])), ols(lx, np.log(pts[:, 2])), len(pts))


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> LineFit:
    return ols(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)))


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def expand_grid(base: Mapping[str, Any], grid: Mapping[str, Sequence[Any]]) -> list[SimConfig]:
    """Cartesian product of grid values over a base raw mapping, in key order."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid is empty")
    keys = list(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        raw = dict(base)
        raw.update(zip(keys, combo))
        cells.append(validate_config(raw))
    return cells


@dataclass
class ExperimentSummary:
    root_seed: int
    trials: int
    cells: list[dict]
    results: list[list[TrialResult]]
    fit: dict | None = None

    def rows(self) -> Iterable[TrialResult]:
        for cell in self.results:
            yield from cell

    def to_json(self) -> str:
        doc = {"root_seed": self.root_seed, "trials": self.trials, "cells": self.cells, "fit": self.fit}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _run_one(args: tuple[SimConfig, int]) -> TrialResult:
    cfg, seed = args
    return run_trial(cfg, seed=seed)[0]


def _aggregate(results: list[TrialResult]) -> dict:
    out: dict[str, Any] = {}
    fields = ("informed_frac", "T", "alice_cost", "max_node_cost", "mean_node_cost",
              "termination_slot", "termination_round", "blocked_phase_count", "violations")
    for name in fields:
        vals = np.array([getattr(r, name) for r in results], dtype=np.float64)
        q = np.quantile(vals, [0.05, 0.5, 0.95])
        out[name] = {"mean": float(vals.mean()), "q05": float(q[0]), "median": float(q[1]), "q95": float(q[2])}
    out["conservation_ok"] = all(r.conservation_ok for r in results)
    out["max_rounds_hit"] = sum(r.max_rounds_hit for r in results)
    return out


def run_experiment(cells: Sequence[SimConfig], trials: int, parallelism: int = 1,
                   root_seed: int | None = None, fit: bool = False) -> ExperimentSummary:
    if not cells:
        raise ValueError("grid is empty")
    if trials < 1:
        raise ValueError("trials must be ≥ 1")
    root = cells[0].seed if root_seed is None else root_seed
    jobs = [(cfg, trial_seed(root, ci, ti)) for ci, cfg in enumerate(cells) for ti in range(trials)]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            flat = list(ex.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * parallelism))))
    else:
        flat = []
        for ci, job in enumerate(jobs):
            try:
                flat.append(_run_one(job))
            except Exception as exc:  # annotate with grid coordinates
                raise RuntimeError(f"cell {ci // trials}, trial {ci % trials}: {exc}") from exc
    results = [flat[c * trials:(c + 1) * trials] for c in range(len(cells))]
    cell_docs = []
    for cfg, res in zip(cells, results):
        doc = {"config": config_to_mapping(cfg), "aggregate": _aggregate(res)}
        doc["config"]["seed"] = root
        cell_docs.append(doc)
    summary = ExperimentSummary(root, trials, cell_docs, results)
    if fit:
        summary.fit = fit_summary(list(summary.rows()), cells[0].k, cells[0].n)
    return summary


def fit_summary(results: Sequence[TrialResult], k: int, n: int) -> dict:
    pts = [(r.T, r.max_node_cost, r.alice_cost) for r in results if r.T > 0]
    try:
        f = competitiveness_fit(pts)
    except ValueError as exc:
        return {"error": str(exc)}
    base = 1.0 / (k + 1)
    return {
        "points": f.points,
        "slope_node": f.node.slope, "intercept_node": f.node.intercept, "r2_node": f.node.r2,
        "slope_alice": f.alice.slope, "intercept_alice": f.alice.intercept, "r2_alice": f.alice.r2,
        "reference_exponent": base,
        "reference_exponent_polylog": base + math.log2(math.log2(n)) / math.log2(n),
    }


def default_parallelism() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def emit_csv(results: Iterable[TrialResult], destination: str | Path) -> Path:
    path = Path(destination)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in results:
            w.writerow(r.csv_row())
    return path


_INT_COLS = {"seed", "n", "k", "T", "alice_cost", "max_node_cost", "termination_slot",
             "termination_round", "blocked_phase_count", "violations"}
_FLOAT_COLS = {"f", "epsilon_prime", "mean_node_cost", "informed_frac"}


def parse_csv(source: str | Path) -> list[dict[str, Any]]:
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        rows = []
        for rec in reader:
            row: dict[str, Any] = {}
            for name, val in zip(header, rec):
                if name in _INT_COLS:
                    row[name] = int(val)
                elif name in _FLOAT_COLS:
                    row[name] = float(val)
                else:
                    row[name] = val
            rows.append(row)
    return rows


def result_to_json(r: TrialResult) -> dict:
    return asdict(r)
