from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamsim.core import DEFAULTS, make_config
from jamsim.harness import (
    CSV_COLUMNS,
    competitiveness_fit,
    emit_csv,
    expand_grid,
    loglog_slope,
    parse_csv,
    run_experiment,
    run_trial,
)


def test_exact_power_law_slope():
    T = np.geomspace(10, 1e6, 8)
    fit = competitiveness_fit([(t, t ** (1 / 3), 2 * t ** 0.25) for t in T])
    assert fit.node.slope == pytest.approx(1 / 3, abs=1e-9)
    assert fit.node.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.alice.slope == pytest.approx(0.25, abs=1e-9)
    assert fit.alice.intercept == pytest.approx(math.log(2), abs=1e-9)


def test_constant_cost_has_zero_slope():
    fit = competitiveness_fit([(t, 17, 17) for t in (10, 100, 1000, 10000)])
    assert fit.node.slope == pytest.approx(0.0, abs=1e-12)


def test_degenerate_fits_rejected():
    with pytest.raises(ValueError, match="all T equal"):
        competitiveness_fit([(50, 1, 1)] * 5)
    with pytest.raises(ValueError):
        competitiveness_fit([(1, 1, 1), (2, 2, 2), (3, 3, 3)])
    with pytest.raises(ValueError):
        competitiveness_fit([(0, 1, 1), (2, 2, 2), (3, 3, 3), (4, 4, 4)])


def test_loglog_slope():
    assert loglog_slope([256, 1024, 4096], [n**1.5 for n in (256, 1024, 4096)]).slope == pytest.approx(1.5)


def test_csv_layout(tmp_path):
    results = [run_trial(make_config(n=64, seed=s))[0] for s in (1, 2)]
    path = emit_csv(results, tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == ",".join(CSV_COLUMNS)
    row = dict(zip(CSV_COLUMNS, lines[1].split(",")))
    assert row["informed_frac"] == "1.0"
    assert row["strategy"] == "null"


def test_csv_unwritable_destination(tmp_path):
    with pytest.raises(OSError):
        emit_csv([], tmp_path / "missing" / "t.csv")


finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12)


@settings(max_examples=50, deadline=None)
@given(T=st.integers(0, 2**40), cost=st.integers(0, 2**31), mean=finite, frac=st.floats(0, 1),
       f=st.floats(0, 1), eps=st.floats(1e-9, 0.999), seed=st.integers(0, 2**63 - 1))
def test_csv_round_trip(tmp_path_factory, T, cost, mean, frac, f, eps, seed):
    base, _ = run_trial(make_config(n=16, seed=1))
    r = replace(base, T=T, max_node_cost=cost, mean_node_cost=mean, informed_frac=frac, f=f,
                epsilon_prime=eps, seed=seed)
    path = emit_csv([r], tmp_path_factory.mktemp("rt") / "x.csv")
    (row,) = parse_csv(path)
    for name in CSV_COLUMNS:
        want, got = getattr(r, name), row[name]
        if isinstance(want, float):
            assert float(f"{got:.15g}") == float(f"{want:.15g}")
        elif isinstance(want, bool):
            assert got == int(want)
        else:
            assert got == want


def test_null_experiment_all_informed():
    summary = run_experiment([make_config(n=256)], trials=3)
    rows = list(summary.rows())
    assert len(rows) == 3
    assert all(r.informed_frac == 1.0 for r in rows)
    assert len({r.seed for r in rows}) == 3


def test_parallelism_does_not_change_output(tmp_path):
    cells = expand_grid(dict(DEFAULTS, n=128), {"adversary.strategy": ["null", "phase_blocker"]})
    a = run_experiment(cells, 3, parallelism=1, root_seed=11)
    b = run_experiment(cells, 3, parallelism=2, root_seed=11)
    assert a.to_json() == b.to_json()
    assert emit_csv(a.rows(), tmp_path / "a.csv").read_bytes() == emit_csv(b.rows(), tmp_path / "b.csv").read_bytes()


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        run_experiment([], 3)
    with pytest.raises(ValueError):
        expand_grid(DEFAULTS, {})
    with pytest.raises(ValueError):
        expand_grid(DEFAULTS, {"n": []})


def test_grid_expansion_order():
    cells = expand_grid(dict(DEFAULTS), {"n": [64, 128], "k": [2, 3]})
    assert [(c.n, c.k) for c in cells] == [(64, 2), (64, 3), (128, 2), (128, 3)]


def test_fit_summary_from_sweep():
    cells = [make_config(n=256, adversary_strategy="phase_blocker", adversary_gamma=1.0, adversary_stop_round=r)
             for r in range(3, 8)]
    s = run_experiment(cells, 2, fit=True)
    assert s.fit["points"] == 10
    assert s.fit["reference_exponent"] == pytest.approx(1 / 3)
    assert 0 < s.fit["slope_node"] < 1
