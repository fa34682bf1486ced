from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamsim.adversary import (
    AdversaryObservation,
    AdversaryPool,
    NullStrategy,
    PhaseBlocker,
    PhasePlan,
    RequestSpoofer,
    blocked_threshold,
    classify_blocked,
    load_script,
    make_strategy,
    plan_slot,
)
from jamsim.core import Budgets, make_config
from jamsim.harness import run_trial
from jamsim.protocol import Phase


def obs(cfg, i, phase, length, slot=0, busy=None, step=0):
    return AdversaryObservation(cfg, i, phase, step, 0, length, slot, busy)


def pool_of(node, carol, t):
    return AdversaryPool(Budgets(node, carol, carol), t, t + 1, np.arange(1, t + 1))


def test_null_does_nothing():
    cfg = make_config(n=64)
    s = make_strategy(cfg)
    assert isinstance(s, NullStrategy)
    plan = s.plan_phase(obs(cfg, 4, Phase.INFORM, 64))
    assert plan.empty
    pool = pool_of(5, 5, 2)
    assert plan_slot(s, plan, obs(cfg, 4, Phase.INFORM, 64, 3), pool).empty
    assert pool.total == 0


def test_blocker_jams_ceil_gamma_slots_and_blocks():
    cfg = make_config(n=1024, k=2, adversary_strategy="phase_blocker", adversary_gamma=0.6,
                      adversary_targets=("inform",))
    s = make_strategy(cfg)
    assert isinstance(s, PhaseBlocker)
    plan = s.plan_phase(obs(cfg, 4, Phase.INFORM, 64))
    assert plan.jam_slots.size == 39
    assert len(set(plan.jam_slots.tolist())) == 39 and plan.jam_slots.max() < 64
    assert classify_blocked(cfg, Phase.INFORM, 64, 39)
    assert s.plan_phase(obs(cfg, 4, Phase.REQUEST, 64)).empty


def test_blocker_respects_stop_round():
    cfg = make_config(n=256, adversary_strategy="phase_blocker", adversary_stop_round=3)
    s = make_strategy(cfg)
    assert not s.plan_phase(obs(cfg, 3, Phase.INFORM, 23)).empty
    assert s.plan_phase(obs(cfg, 4, Phase.INFORM, 64)).empty


def test_spare_subset_victims():
    cfg = make_config(n=1024, epsilon_prime=1 / 4096, adversary_strategy="phase_blocker",
                      adversary_victim_rule="spare-subset")
    s = make_strategy(cfg)
    (victims,) = s.plan_phase(obs(cfg, 4, Phase.INFORM, 64)).target_sets
    assert len(victims) == 1024 - round((1 - 32 / 4096) * 1024)
    assert all(1 <= v <= 1024 for v in victims)


def test_spoofer_sends_nacks_in_request_only():
    cfg = make_config(n=256, adversary_strategy="request_spoofer", adversary_gamma=0.5)
    s = make_strategy(cfg)
    assert isinstance(s, RequestSpoofer)
    assert s.plan_phase(obs(cfg, 4, Phase.REQUEST, 64)).nack_slots.size == 32
    assert s.plan_phase(obs(cfg, 4, Phase.INFORM, 64)).empty


def test_reactive_jammer_ignores_silent_slots():
    cfg = make_config(n=256, adversary_mode="reactive", adversary_strategy="reactive_jammer")
    s = make_strategy(cfg)
    plan = s.plan_phase(obs(cfg, 4, Phase.INFORM, 64))
    pool = pool_of(5, 5, 2)
    assert plan_slot(s, plan, obs(cfg, 4, Phase.INFORM, 64, 0, busy=False), pool).empty
    assert pool.total == 0
    assert len(plan_slot(s, plan, obs(cfg, 4, Phase.INFORM, 64, 1, busy=True), pool).jams) == 1


def test_one_unit_left_then_nothing():
    cfg = make_config(n=1024, adversary_strategy="phase_blocker", adversary_gamma=0.6, adversary_targets=("inform",))
    s = make_strategy(cfg)
    plan = s.plan_phase(obs(cfg, 4, Phase.INFORM, 64))
    pool = pool_of(0, 1, 0)
    outcomes = [plan_slot(s, plan, obs(cfg, 4, Phase.INFORM, 64, int(x)), pool) for x in plan.jam_slots]
    assert sum(len(o.jams) for o in outcomes) == 1
    assert not outcomes[0].unpaid and all(o.unpaid for o in outcomes[1:])


def test_exhaustion_slot_logged_in_trial():
    cfg = make_config(n=16, f=0, C=0.1, adversary_strategy="phase_blocker", adversary_gamma=0.6,
                      adversary_targets=("inform",))
    res, log = run_trial(cfg)
    assert res.pool_capacity == 1 and res.T == 1
    assert log.exhaustion_slot >= 0


@settings(max_examples=80, deadline=None)
@given(t=st.integers(0, 6), node=st.integers(0, 7), carol=st.integers(0, 9),
       chunks=st.lists(st.integers(0, 12), max_size=10))
def test_pool_bulk_matches_unit_payments(t, node, carol, chunks):
    bulk, unit = pool_of(node, carol, t), pool_of(node, carol, t)
    for c in chunks:
        paid = bulk.pay(c)
        got = [unit.pay_one() for _ in range(c)]
        assert paid == sum(g is not None for g in got)
        assert np.array_equal(bulk.spent, unit.spent)
        assert bulk.cursor == unit.cursor
    assert (bulk.spent <= bulk.limits).all()
    assert bulk.total <= bulk.capacity


def test_pool_drains_round_robin():
    pool = pool_of(2, 2, 2)
    payers = [pool.pay_one() for _ in range(7)]
    assert payers == [3, 1, 2, 3, 1, 2, None]


def test_classification_examples():
    cfg = make_config(n=1024, k=2, epsilon_prime=0.05)
    assert classify_blocked(cfg, Phase.INFORM, 64, 33)
    assert not classify_blocked(cfg, Phase.INFORM, 64, 32)
    assert blocked_threshold(cfg, Phase.REQUEST, 64) == pytest.approx(11.60, abs=0.01)
    assert not classify_blocked(cfg, Phase.REQUEST, 64, 11)
    assert classify_blocked(cfg, Phase.REQUEST, 64, 12)
    for phase in Phase:
        assert not classify_blocked(cfg, phase, 64, 0)
    with pytest.raises(ValueError):
        classify_blocked(cfg, Phase.INFORM, 64, None)


def test_reactive_decoy_classification_counts_active_slots():
    cfg = make_config(n=1024, adversary_mode="reactive", decoys_enabled=True,
                      adversary_strategy="reactive_jammer")
    assert classify_blocked(cfg, Phase.INFORM, 64, 60, 17)
    assert not classify_blocked(cfg, Phase.INFORM, 64, 60, 16)
    with pytest.raises(ValueError):
        classify_blocked(cfg, Phase.INFORM, 64, 60)


def test_script_parsing(tmp_path):
    path = tmp_path / "jam.csv"
    path.write_text(
        "round,phase,step,slot,action,targets\n"
        "# comment\n"
        "1-3,*,*,*,jam,all\n"
        "4,request,*,0-9,nack,\n"
        "5,inform,*,2,jam,3;4\n"
    )
    rows = load_script(path)
    assert [r.rounds for r in rows] == [(1, 3), (4, 4), (5, 5)]
    assert rows[0].phase is None and rows[0].targets is None
    assert rows[1].slots == (0, 9) and rows[1].action == "nack"
    assert rows[2].targets == frozenset({3, 4})
    cfg = make_config(n=16, adversary_strategy="scripted", adversary_script=str(path))
    s = make_strategy(cfg)
    assert s.plan_phase(obs(cfg, 2, Phase.PROPAGATION, 8, step=1)).jam_slots.tolist() == list(range(8))
    assert s.plan_phase(obs(cfg, 4, Phase.REQUEST, 64)).nack_slots.tolist() == list(range(10))
    assert s.plan_phase(obs(cfg, 6, Phase.INFORM, 512)).empty


def test_script_rejects_unknown_action(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("round,phase,step,slot,action,targets\n1,*,*,*,explode,all\n")
    with pytest.raises(ValueError):
        load_script(path)


def test_empty_plan_flag():
    assert PhasePlan().empty
