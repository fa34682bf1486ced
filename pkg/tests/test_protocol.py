from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamsim.channel import NOISE, SILENCE, Payload, delivered
from jamsim.core import make_config, round_schedule
from jamsim.protocol import (
    Action,
    Draws,
    Phase,
    PhaseContext,
    Status,
    absorb_perception,
    alice_action,
    approx_n_schedule,
    end_of_phase,
    new_alice,
    new_node,
    node_action,
)

ULP_BELOW_ONE = math.nextafter(1.0, 0.0)


def ctx(cfg, i, phase, step=0, **kw):
    return PhaseContext(cfg, i, phase, round_schedule(cfg, i), step, **kw)


@pytest.fixture
def cfg():
    return make_config(n=1024, k=2, c=4)


def test_alice_sends_below_threshold(cfg):
    alice = new_alice(cfg, 1109)
    assert alice_action(alice, ctx(cfg, 10, Phase.INFORM), Draws(send=0.010)) == Action.SEND_M
    assert alice_action(alice, ctx(cfg, 10, Phase.INFORM), Draws(send=0.014)) == Action.IDLE
    assert alice.ledger.sends == 1


def test_alice_idle_in_propagation(cfg):
    alice = new_alice(cfg, 1109)
    assert alice_action(alice, ctx(cfg, 3, Phase.PROPAGATION, 1), Draws(0.0, 0.0, 0.0)) == Action.IDLE
    assert alice.ledger.total == 0


def test_request_draw_just_below_one_idles(cfg):
    alice = new_alice(cfg, 1109)
    node = new_node(1, 160)
    c10 = ctx(cfg, 10, Phase.REQUEST)
    assert alice_action(alice, c10, Draws(listen=ULP_BELOW_ONE)) == Action.IDLE
    assert node_action(node, c10, Draws(send=ULP_BELOW_ONE, listen=ULP_BELOW_ONE)) == Action.IDLE


def test_uninformed_listens_in_inform():
    cfg = make_config(n=1024, k=2, epsilon_prime=0.05)
    node = new_node(1, 160)
    assert node_action(node, ctx(cfg, 10, Phase.INFORM), Draws(listen=0.02)) == Action.LISTEN
    assert node_action(node, ctx(cfg, 10, Phase.INFORM), Draws(listen=0.04)) == Action.IDLE


def test_duty_node_relays(cfg):
    node = new_node(1, 160)
    node.status, node.has_m, node.sender_duty, node.duty_step = Status.INFORMED, True, True, 1
    assert node_action(node, ctx(cfg, 5, Phase.PROPAGATION, 1), Draws(send=0.0005)) == Action.SEND_M
    assert node_action(node, ctx(cfg, 5, Phase.PROPAGATION, 1), Draws(send=0.002)) == Action.IDLE


def test_terminated_node_is_absorbing(cfg):
    node = new_node(1, 160)
    node.status = Status.TERMINATED
    for phase, step in ((Phase.INFORM, 0), (Phase.PROPAGATION, 1), (Phase.REQUEST, 0)):
        assert node_action(node, ctx(cfg, 2, phase, step), Draws(0.0, 0.0, 0.0)) == Action.IDLE
    absorb_perception(node, ctx(cfg, 2, Phase.INFORM), delivered(Payload.MESSAGE_M, True))
    assert node.ledger.total == 0 and node.status == Status.TERMINATED


def test_nack_suppresses_listen(cfg):
    node = new_node(1, 160)
    assert node_action(node, ctx(cfg, 10, Phase.REQUEST), Draws(send=0.0, listen=0.0)) == Action.SEND_NACK
    assert node.ledger.sends == 1 and node.ledger.listens == 0


def test_decoy_overlay_only_on_idle():
    cfg = make_config(n=1024, k=2, epsilon_prime=0.5, decoys_enabled=True, adversary_mode="reactive")
    node = new_node(1, 160)
    node.status = Status.INFORMED
    assert node_action(node, ctx(cfg, 12, Phase.INFORM), Draws(decoy=0.0)) == Action.SEND_DECOY
    assert node_action(node, ctx(cfg, 12, Phase.REQUEST), Draws(decoy=0.0)) == Action.IDLE


def test_enforce_policy_stops_at_budget():
    cfg = make_config(n=1024, budget_policy_correct="enforce")
    node = new_node(1, 1)
    assert node_action(node, ctx(cfg, 1, Phase.INFORM), Draws(listen=0.0)) == Action.LISTEN
    assert node_action(node, ctx(cfg, 1, Phase.INFORM), Draws(listen=0.0)) == Action.IDLE
    assert node.exhausted and node.ledger.total == 1


def test_authentic_m_informs_but_other_payloads_do_not(cfg):
    c = ctx(cfg, 3, Phase.INFORM)
    for perc in (delivered(Payload.DECOY), delivered(Payload.GARBAGE), delivered(Payload.NACK), NOISE, SILENCE):
        node = new_node(1, 160)
        absorb_perception(node, c, perc)
        assert node.status == Status.UNINFORMED and not node.has_m
    node = new_node(1, 160)
    absorb_perception(node, c, delivered(Payload.MESSAGE_M, True))
    assert node.status == Status.INFORMED and node.informed_round == 3


def test_request_counter_counts_nacks_and_noise(cfg):
    alice = new_alice(cfg, 1109)
    c = ctx(cfg, 4, Phase.REQUEST)
    absorb_perception(alice, c, delivered(Payload.NACK))
    absorb_perception(alice, c, NOISE)
    absorb_perception(alice, c, SILENCE)
    assert alice.noisy_heard == 2


def test_inform_set_terminates_after_first_step(cfg):
    node = new_node(1, 160)
    absorb_perception(node, ctx(cfg, 5, Phase.INFORM), delivered(Payload.MESSAGE_M, True))
    end_of_phase(node, ctx(cfg, 5, Phase.INFORM))
    assert node.sender_duty and node.duty_step == 1
    end_of_phase(node, ctx(cfg, 5, Phase.PROPAGATION, 1))
    assert node.status == Status.TERMINATED and not node.sender_duty


def test_general_k_hands_duty_forward():
    cfg = make_config(n=1024, k=3)
    node = new_node(1, 160)
    absorb_perception(node, ctx(cfg, 5, Phase.PROPAGATION, 1), delivered(Payload.MESSAGE_M, True))
    end_of_phase(node, ctx(cfg, 5, Phase.PROPAGATION, 1))
    assert node.sender_duty and node.duty_step == 2
    end_of_phase(node, ctx(cfg, 5, Phase.PROPAGATION, 2))
    assert node.status == Status.TERMINATED
    late = new_node(2, 160)
    absorb_perception(late, ctx(cfg, 5, Phase.PROPAGATION, 2), delivered(Payload.MESSAGE_M, True))
    end_of_phase(late, ctx(cfg, 5, Phase.PROPAGATION, 2))
    assert late.status == Status.TERMINATED  # informed in the last step: nothing left to relay


def test_threshold_termination(cfg):
    gate = cfg.gate
    c = ctx(cfg, gate, Phase.REQUEST)
    assert c.schedule.termination_threshold == pytest.approx(138.63, abs=0.01)
    quiet = new_node(1, 160)
    quiet.noisy_heard = 100
    end_of_phase(quiet, c)
    assert quiet.status == Status.TERMINATED and not quiet.has_m

    alice = new_alice(cfg, 1109)
    alice.noisy_heard = 139
    end_of_phase(alice, c)
    assert alice.status == Status.INFORMED and alice.noisy_heard == 0


def test_gate_blocks_early_threshold_termination(cfg):
    node = new_node(1, 160)
    end_of_phase(node, ctx(cfg, cfg.gate - 1, Phase.REQUEST))
    assert node.status == Status.UNINFORMED


def test_informed_nodes_ignore_request_threshold(cfg):
    node = new_node(1, 160)
    node.status, node.has_m = Status.INFORMED, True
    end_of_phase(node, ctx(cfg, cfg.gate, Phase.REQUEST))
    assert node.status == Status.INFORMED


def test_approx_schedule():
    cfg = make_config(n=1024, c=4, approx_n_mode=1)
    a = approx_n_schedule(cfg, 6)
    assert a.replicas == 28
    assert a.send_p[9] == pytest.approx(1 / (2**6 * 1024))  # g = lg n
    with pytest.raises(ValueError):
        approx_n_schedule(make_config(n=1024), 6)


def test_propagation_step_range_checked(cfg):
    with pytest.raises(ValueError):
        ctx(cfg, 3, Phase.PROPAGATION, 2)


@settings(max_examples=150, deadline=None)
@given(
    draws=st.lists(st.tuples(st.floats(0, ULP_BELOW_ONE), st.floats(0, ULP_BELOW_ONE), st.floats(0, ULP_BELOW_ONE)),
                   min_size=1, max_size=30),
    phase=st.sampled_from([Phase.INFORM, Phase.PROPAGATION, Phase.REQUEST]),
    i=st.integers(1, 12),
    informed=st.booleans(),
)
def test_state_invariants_hold(draws, phase, i, informed):
    cfg = make_config(n=64, k=2, decoys_enabled=True, adversary_mode="reactive", epsilon_prime=0.5)
    node = new_node(1, 40)
    if informed:
        node.status, node.has_m, node.sender_duty, node.duty_step = Status.INFORMED, True, True, 1
    c = ctx(cfg, i, phase, 1 if phase == Phase.PROPAGATION else 0)
    before = node.ledger.total
    for d in draws:
        act = node_action(node, c, Draws(*d))
        assert node.ledger.total == before + (act != Action.IDLE)
        before = node.ledger.total
        if act in (Action.SEND_M,):
            assert node.has_m
    end_of_phase(node, c)
    assert not node.sender_duty or node.status == Status.INFORMED
