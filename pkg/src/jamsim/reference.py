"""Slow slot-by-slot runner built from the scalar protocol and channel code.

It consumes the same random streams as :mod:`jamsim.engine`, so for any
configuration both must produce identical logs.  Only practical for small n
and few rounds; it exists to cross-check the vectorised engine.
"""

from __future__ import annotations

import numpy as np

from . import streams
from .adversary import AdversaryObservation, AdversaryPool, classify_blocked, make_strategy, plan_slot
from .channel import Payload, Transmission, resolve_slot
from .core import ScheduleError, SimConfig, derive_budgets, round_schedule
from .engine import INFORMED, TERMINATED, UNINFORMED, PhaseRecord, TrialLog, _key
from .protocol import (
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
from .streams import Purpose

_STATUS_CODE = {Status.UNINFORMED: UNINFORMED, Status.INFORMED: INFORMED, Status.TERMINATED: TERMINATED}


class _Stream:
    """Per-slot draws for one (phase, purpose, probability)."""

    def __init__(self, key: int, ids: list[int], p: float, length: int):
        self.key, self.p = key, p
        owner, slot = streams.bernoulli_positions(key, np.array(ids, dtype=np.int64), p, length)
        self.hits: set[tuple[int, int]] = set(zip(owner.tolist(), slot.tolist()))

    def draw(self, pid: int, s: int) -> float:
        return streams.slot_draw(self.key, pid, self.p, s, (pid, s) in self.hits)


def run_reference(cfg: SimConfig) -> TrialLog:
    n, t = cfg.n, cfg.t
    budgets = derive_budgets(cfg)
    strategy = make_strategy(cfg)
    pool = AdversaryPool(budgets, t, n + t + 1, np.arange(n + 1, n + t + 1))
    alice = new_alice(cfg, budgets.alice_budget)
    nodes = [new_node(u, budgets.node_budget) for u in range(1, n + 1)]
    everyone = [alice, *nodes]
    records: list[PhaseRecord] = []
    clamps: list[tuple[int, str]] = []
    gslot = 0
    last_term = (0, 0)
    exhaustion = -1
    aborted = None
    rounds = 0
    replicas = 0

    def all_done() -> bool:
        return all(p.status == Status.TERMINATED for p in everyone)

    try:
        for i in range(cfg.i_start, cfg.i_start + cfg.max_rounds):
            sched = round_schedule(cfg, i)
            approx = approx_n_schedule(cfg, i) if cfg.approx_n_exponent is not None else None
            if approx is not None:
                replicas = approx.replicas
            clamps.extend((i, c) for c in sched.clamped)
            rounds += 1
            phases = [(Phase.INFORM, 0, 0)]
            for h in range(1, cfg.k):
                for g in (range(1, approx.replicas + 1) if approx else (0,)):
                    phases.append((Phase.PROPAGATION, h, g))
            phases.append((Phase.REQUEST, 0, 0))
            for phase, step, replica in phases:
                L = sched.inform_slots
                ctx0 = PhaseContext(cfg, i, phase, sched, step, replica, 0, approx)
                rec = PhaseRecord(i, phase.label, step, replica, L, gslot)
                obs = AdversaryObservation(cfg, i, phase, step, replica, L, history=tuple(records))
                plan = strategy.plan_phase(obs)
                key = lambda pur: _key(cfg, i, phase, step, replica, pur)  # noqa: E731
                ids = [p.id for p in nodes]
                if phase == Phase.INFORM:
                    a_send = _Stream(key(Purpose.ALICE_SEND), [0], sched.alice_send_p, L)
                    a_listen = None
                    n_send = None
                    n_listen = _Stream(key(Purpose.NODE_LISTEN), ids, sched.node_inform_listen_p, L)
                elif phase == Phase.PROPAGATION:
                    a_send = a_listen = None
                    n_send = _Stream(key(Purpose.NODE_SEND), ids, ctx0.duty_send_p(), L)
                    n_listen = _Stream(key(Purpose.NODE_LISTEN), ids, sched.node_prop_listen_p, L)
                else:
                    a_send = None
                    a_listen = _Stream(key(Purpose.ALICE_LISTEN), [0], sched.alice_request_listen_p, L)
                    n_send = _Stream(key(Purpose.NACK), ids, sched.nack_send_p, L)
                    n_listen = _Stream(key(Purpose.NODE_LISTEN), ids, sched.node_request_listen_p, L)
                n_decoy = None
                if cfg.decoys_enabled and phase != Phase.REQUEST:
                    n_decoy = _Stream(key(Purpose.DECOY), ids, sched.decoy_send_p, L)
                before = {p.id: p.status for p in nodes}

                for s in range(L):
                    ctx = PhaseContext(cfg, i, phase, sched, step, replica, s, approx)
                    tx: list[Transmission] = []
                    listeners: list[int] = []
                    acting = {}
                    if alice.active:
                        d = Draws(
                            send=a_send.draw(0, s) if a_send else 1.0,
                            listen=a_listen.draw(0, s) if a_listen else 1.0,
                        )
                        acting[0] = alice_action(alice, ctx, d)
                    for p in nodes:
                        if not p.active:
                            continue
                        d = Draws(
                            send=n_send.draw(p.id, s) if n_send else 1.0,
                            listen=n_listen.draw(p.id, s),
                            decoy=n_decoy.draw(p.id, s) if n_decoy else 1.0,
                        )
                        acting[p.id] = node_action(p, ctx, d)
                    for pid, act in acting.items():
                        if act == Action.LISTEN:
                            listeners.append(pid)
                        elif act != Action.IDLE:
                            role = everyone[pid].role
                            tx.append(Transmission.make(pid, act.payload, role))
                    busy = None
                    if plan.reactive_p > 0.0:
                        busy = bool(tx) or _contains(plan.nack_slots, s) or _contains(plan.garbage_slots, s)
                    sobs = AdversaryObservation(cfg, i, phase, step, replica, L, s, busy, obs.history)
                    had_budget = pool.remaining > 0
                    splan = plan_slot(strategy, plan, sobs, pool)
                    if splan.unpaid and exhaustion < 0:
                        exhaustion = gslot + s
                    outcome = resolve_slot(tx + list(splan.transmissions), splan.jams, listeners, s)
                    for pid, perc in outcome.perception.items():
                        absorb_perception(everyone[pid], ctx, perc)

                    has_m = any(x.payload == Payload.MESSAGE_M for x in tx)
                    has_decoy = any(x.payload == Payload.DECOY for x in tx)
                    jammed = bool(splan.jams)
                    rec.correct_tx += len(tx)
                    rec.correct_listens += len(listeners)
                    rec.byz_tx += len(splan.transmissions)
                    rec.jams += len(splan.jams)
                    rec.jammed_active += int(jammed and (has_m or has_decoy))
                    if had_budget and (has_m or has_decoy):
                        a, b, c, dd = rec.content_table
                        if has_m:
                            rec.content_table = (a + jammed, b + (not jammed), c, dd)
                        else:
                            rec.content_table = (a, b, c + jammed, dd + (not jammed))

                rec.newly_informed = sum(
                    1 for p in nodes if before[p.id] == Status.UNINFORMED and p.status == Status.INFORMED
                )
                gslot += L
                terminated_before = {p.id for p in everyone if p.status == Status.TERMINATED}
                end_ctx = PhaseContext(cfg, i, phase, sched, step, replica, L, approx)
                if phase != Phase.PROPAGATION or end_ctx.last_replica:
                    for p in everyone:
                        end_of_phase(p, end_ctx)
                if any(p.status == Status.TERMINATED and p.id not in terminated_before for p in everyone):
                    last_term = (gslot, i)
                rec.blocked = classify_blocked(cfg, phase, L, rec.jams, rec.jammed_active)
                records.append(rec)
            if all_done():
                break
    except ScheduleError as exc:
        aborted = str(exc)

    done = all_done()
    log = TrialLog(
        cfg=cfg, budgets=budgets,
        node_sends=np.array([p.ledger.sends for p in nodes], dtype=np.int64),
        node_listens=np.array([p.ledger.listens for p in nodes], dtype=np.int64),
        node_status=np.array([_STATUS_CODE[p.status] for p in nodes], dtype=np.int8),
        node_has_m=np.array([p.has_m for p in nodes], dtype=bool),
        node_exhausted=np.array([p.exhausted for p in nodes], dtype=bool),
        alice_sends=alice.ledger.sends, alice_listens=alice.ledger.listens,
        alice_terminated=alice.status == Status.TERMINATED,
        pool_spent=pool.spent, pool_jams=pool.jams, pool_sends=pool.sends, pool_capacity=pool.capacity,
        phases=records, clamps=clamps, rounds_run=rounds, total_slots=gslot,
        max_rounds_hit=not done and aborted is None, aborted=aborted,
        exhaustion_slot=exhaustion, approx_replicas=replicas,
    )
    if done:
        log.termination_slot, log.termination_round = last_term
    else:
        log.termination_slot = gslot
        log.termination_round = cfg.i_start + rounds - 1 if rounds else 0
    return log


def _contains(sorted_arr: np.ndarray, s: int) -> bool:
    j = int(np.searchsorted(sorted_arr, s))
    return j < sorted_arr.size and int(sorted_arr[j]) == s
