"""Vectorised trial simulation.

A phase is simulated as a whole: every correct participant's candidate
send/listen/decoy slots are drawn up front (they depend only on the seed,
ids and phase, never on what the adversary did), then the slot outcomes are
resolved with array operations.  The only intra-phase feedback is a node
getting informed, which changes its own later behaviour; with decoys this
can change other nodes' perceptions, so those phases are resolved window by
window and iterated to the unique causal fixpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .adversary import (
    AdversaryObservation,
    AdversaryPool,
    PhasePlan,
    Strategy,
    classify_blocked,
    make_strategy,
    reactive_coin,
)
from .channel import Payload
from .core import (
    Budgets,
    RoundSchedule,
    ScheduleError,
    SimConfig,
    derive_budgets,
    round_schedule,
)
from .protocol import ApproxSchedule, Phase, approx_n_schedule
from .streams import Purpose

INF = np.iinfo(np.int64).max
UNINFORMED, INFORMED, TERMINATED = 0, 1, 2

TRACE_COLUMNS = (
    "global_slot", "round", "phase", "step", "replica", "slot",
    "correct_tx", "byz_tx", "payload", "jammed", "listeners",
)


@dataclass
class PhaseRecord:
    round_index: int
    phase: str
    step: int
    replica: int
    length: int
    start_slot: int
    correct_tx: int = 0
    correct_listens: int = 0
    byz_tx: int = 0
    jams: int = 0
    jammed_active: int = 0
    blocked: bool = False
    newly_informed: int = 0
    # busy slots before pool exhaustion: (m jammed, m clear, decoy-only jammed, decoy-only clear)
    content_table: tuple[int, int, int, int] = (0, 0, 0, 0)

    @property
    def charged(self) -> int:
        return self.correct_tx + self.correct_listens + self.byz_tx + self.jams


@dataclass
class TrialLog:
    """Raw end state of one simulated trial."""

    cfg: SimConfig
    budgets: Budgets
    node_sends: np.ndarray
    node_listens: np.ndarray
    node_status: np.ndarray
    node_has_m: np.ndarray
    node_exhausted: np.ndarray
    alice_sends: int
    alice_listens: int
    alice_terminated: bool
    pool_spent: np.ndarray
    pool_jams: np.ndarray
    pool_sends: np.ndarray
    pool_capacity: int
    phases: list[PhaseRecord] = field(default_factory=list)
    clamps: list[tuple[int, str]] = field(default_factory=list)
    termination_slot: int = 0
    termination_round: int = 0
    rounds_run: int = 0
    total_slots: int = 0
    max_rounds_hit: bool = False
    aborted: str | None = None
    exhaustion_slot: int = -1
    approx_replicas: int = 0
    trace: list[tuple] | None = None

    @property
    def node_cost(self) -> np.ndarray:
        return self.node_sends + self.node_listens

    @property
    def alice_cost(self) -> int:
        return self.alice_sends + self.alice_listens

    @property
    def adversary_cost(self) -> int:
        return int(self.pool_spent.sum())

    def conservation_ok(self) -> bool:
        ledgers = int(self.node_cost.sum()) + self.alice_cost + self.adversary_cost
        logged = sum(r.charged for r in self.phases)
        return ledgers == logged

    def comparable(self) -> dict:
        """Everything two faithful runners must agree on."""
        return {
            "node_sends": self.node_sends.tolist(),
            "node_listens": self.node_listens.tolist(),
            "node_status": self.node_status.tolist(),
            "node_has_m": self.node_has_m.tolist(),
            "alice": (self.alice_sends, self.alice_listens, self.alice_terminated),
            "pool": (self.pool_spent.tolist(), self.pool_jams.tolist(), self.pool_sends.tolist()),
            "phases": [vars(r) for r in self.phases],
            "termination": (self.termination_slot, self.termination_round, self.rounds_run, self.max_rounds_hit),
            "exhaustion_slot": self.exhaustion_slot,
        }


def _key(cfg: SimConfig, i: int, phase: Phase, step: int, replica: int, purpose: Purpose) -> int:
    return streams.derive_key(cfg.seed, i, int(phase), step, replica, purpose)


def _by_slot(owner: np.ndarray, slot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((owner, slot))
    return owner[order], slot[order]


def _slice(owner: np.ndarray, slot: np.ndarray, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.searchsorted(slot, [lo, hi])
    return owner[a:b], slot[a:b]


def _isin_pairs(o1, s1, o2, s2, width: int) -> np.ndarray:
    if o1.size == 0 or o2.size == 0:
        return np.zeros(o1.size, dtype=bool)
    return np.isin(o1 * width + s1, o2 * width + s2)


class Engine:
    def __init__(self, cfg: SimConfig, strategy: Strategy | None = None, trace_cap: int = 0):
        self.cfg = cfg
        n, t = cfg.n, cfg.t
        self.budgets = derive_budgets(cfg)
        self.strategy = strategy if strategy is not None else make_strategy(cfg)
        self.pool = AdversaryPool(self.budgets, t, n + t + 1, np.arange(n + 1, n + t + 1))
        self.enforce = cfg.budget_policy_correct == "enforce"
        self.node_limit = self.budgets.node_budget
        self.alice_limit = self.budgets.alice_budget

        self.status = np.zeros(n, dtype=np.int8)
        self.has_m = np.zeros(n, dtype=bool)
        self.inf_round = np.full(n, -1, dtype=np.int64)
        self.inf_phase = np.full(n, -1, dtype=np.int64)
        self.inf_step = np.zeros(n, dtype=np.int64)
        self.duty_step = np.zeros(n, dtype=np.int64)
        self.sends = np.zeros(n, dtype=np.int64)
        self.listens = np.zeros(n, dtype=np.int64)
        self.exhausted = np.zeros(n, dtype=bool)
        self.counter = np.zeros(n, dtype=np.int64)

        self.a_active = True
        self.a_exhausted = False
        self.a_sends = 0
        self.a_listens = 0
        self.a_counter = 0

        self.global_slot = 0
        self.records: list[PhaseRecord] = []
        self.clamps: list[tuple[int, str]] = []
        self.exhaustion_slot = -1
        self.last_term_slot = 0
        self.last_term_round = 0
        self.trace_cap = trace_cap
        self.trace: list[tuple] | None = [] if trace_cap > 0 else None
        self._masks: dict = {}

    # ------------------------------------------------------------------
    def _target_mask(self, targets) -> np.ndarray | None:
        """Boolean membership over global ids 0..n (None: everyone)."""
        if targets is None:
            return None
        if targets not in self._masks:
            m = np.zeros(self.cfg.n + 1, dtype=bool)
            ids = np.fromiter((x for x in targets if 0 <= x <= self.cfg.n), dtype=np.int64)
            m[ids] = True
            self._masks[targets] = m
        return self._masks[targets]

    def _all_done(self) -> bool:
        return not self.a_active and not (self.status != TERMINATED).any()

    # ------------------------------------------------------------------
    def run(self) -> TrialLog:
        cfg = self.cfg
        log = TrialLog(
            cfg=cfg, budgets=self.budgets,
            node_sends=self.sends, node_listens=self.listens, node_status=self.status,
            node_has_m=self.has_m, node_exhausted=self.exhausted,
            alice_sends=0, alice_listens=0, alice_terminated=False,
            pool_spent=self.pool.spent, pool_jams=self.pool.jams, pool_sends=self.pool.sends,
            pool_capacity=self.pool.capacity,
        )
        rounds = 0
        try:
            for i in range(cfg.i_start, cfg.i_start + cfg.max_rounds):
                sched = round_schedule(cfg, i)
                approx = approx_n_schedule(cfg, i) if cfg.approx_n_exponent is not None else None
                if approx is not None:
                    log.approx_replicas = approx.replicas
                self.clamps.extend((i, name) for name in sched.clamped)
                rounds += 1
                self._round(i, sched, approx)
                if self._all_done():
                    break
        except ScheduleError as exc:
            log.aborted = str(exc)
        log.rounds_run = rounds
        log.max_rounds_hit = not self._all_done() and log.aborted is None
        log.alice_sends, log.alice_listens = self.a_sends, self.a_listens
        log.alice_terminated = not self.a_active
        log.phases = self.records
        log.clamps = self.clamps
        log.total_slots = self.global_slot
        if self._all_done():
            log.termination_slot, log.termination_round = self.last_term_slot, self.last_term_round
        else:
            log.termination_slot = self.global_slot
            log.termination_round = cfg.i_start + rounds - 1 if rounds else 0
        log.exhaustion_slot = self.exhaustion_slot
        log.trace = self.trace
        return log

    def _round(self, i: int, sched: RoundSchedule, approx: ApproxSchedule | None) -> None:
        k = self.cfg.k
        self._phase(i, Phase.INFORM, 0, 0, sched.inform_slots, sched, None)
        self._end_inform(i)
        for h in range(1, k):
            replicas = range(1, approx.replicas + 1) if approx is not None else (0,)
            for g in replicas:
                self._phase(i, Phase.PROPAGATION, h, g, sched.step_slots, sched, approx)
            self._end_step(i, h)
        self._phase(i, Phase.REQUEST, 0, 0, sched.request_slots, sched, None)
        self._end_request(i, sched)

    # ------------------------------------------------------------------
    # phase boundaries
    # ------------------------------------------------------------------
    def _mark_terminated(self, idx: np.ndarray, i: int) -> None:
        if idx.size:
            self.status[idx] = TERMINATED
            self.duty_step[idx] = 0
            self.last_term_slot = self.global_slot
            self.last_term_round = i

    def _end_inform(self, i: int) -> None:
        new = (self.status == INFORMED) & (self.inf_round == i) & (self.inf_phase == Phase.INFORM)
        self.duty_step[new] = 1

    def _end_step(self, i: int, h: int) -> None:
        live = self.status != TERMINATED
        self._mark_terminated(np.flatnonzero(live & (self.duty_step == h)), i)
        new = (self.status == INFORMED) & (self.inf_round == i) & (self.inf_phase == Phase.PROPAGATION) & (self.inf_step == h)
        if h < self.cfg.k - 1:
            self.duty_step[new] = h + 1
        else:
            self._mark_terminated(np.flatnonzero(new), i)

    def _end_request(self, i: int, sched: RoundSchedule) -> None:
        thr = sched.termination_threshold
        gate_open = i >= self.cfg.gate
        if gate_open:
            quit_ = (self.status == UNINFORMED) & (self.counter <= thr)
            self._mark_terminated(np.flatnonzero(quit_), i)
            if self.a_active and self.a_counter <= thr:
                self.a_active = False
                self.last_term_slot = self.global_slot
                self.last_term_round = i
        self.counter[:] = 0
        self.a_counter = 0

    # ------------------------------------------------------------------
    # one phase
    # ------------------------------------------------------------------
    def _phase(self, i: int, phase: Phase, step: int, replica: int, L: int,
               sched: RoundSchedule, approx: ApproxSchedule | None) -> None:
        cfg = self.cfg
        n = cfg.n
        rec = PhaseRecord(i, phase.label, step, replica, L, self.global_slot)
        obs = AdversaryObservation(cfg, i, phase, step, replica, L, history=tuple(self.records))
        plan = self.strategy.plan_phase(obs)

        live = (self.status != TERMINATED) & ~self.exhausted
        unin = np.flatnonzero(live & (self.status == UNINFORMED))
        alice_on = self.a_active and not self.a_exhausted
        key = lambda purpose: _key(cfg, i, phase, step, replica, purpose)  # noqa: E731
        empty = np.empty(0, np.int64)

        def cands(purpose, idx, p):
            o, s = streams.bernoulli_positions(key(purpose), idx + 1, p, L)
            return _by_slot(o - 1, s)

        a_send = a_listen = empty
        lis = snd = nack = dec = (empty, empty)
        if phase == Phase.INFORM:
            if alice_on:
                a_send = streams.bernoulli_positions(key(Purpose.ALICE_SEND), np.array([0]), sched.alice_send_p, L)[1]
            lis = cands(Purpose.NODE_LISTEN, unin, sched.node_inform_listen_p)
        elif phase == Phase.PROPAGATION:
            duty = np.flatnonzero(live & (self.duty_step == step))
            p = approx.send_p[replica - 1] if approx is not None else sched.informed_send_p
            snd = cands(Purpose.NODE_SEND, duty, p)
            lis = cands(Purpose.NODE_LISTEN, unin, sched.node_prop_listen_p)
        else:
            if alice_on:
                a_listen = streams.bernoulli_positions(
                    key(Purpose.ALICE_LISTEN), np.array([0]), sched.alice_request_listen_p, L)[1]
            nack = cands(Purpose.NACK, unin, sched.nack_send_p)
            lis = cands(Purpose.NODE_LISTEN, unin, sched.node_request_listen_p)
            drop = _isin_pairs(lis[0], lis[1], nack[0], nack[1], L)
            lis = (lis[0][~drop], lis[1][~drop])
        decoys = cfg.decoys_enabled and phase != Phase.REQUEST
        if decoys:
            dec = cands(Purpose.DECOY, np.flatnonzero(live), sched.decoy_send_p)

        tau = np.full(n, INF, dtype=np.int64)
        width = L if not decoys else max(64, -(-L // 32))
        for lo in range(0, L, width):
            hi = min(L, lo + width)
            self._window(rec, plan, obs, phase, lo, hi, L, tau,
                         a_send[np.searchsorted(a_send, lo):np.searchsorted(a_send, hi)],
                         a_listen[np.searchsorted(a_listen, lo):np.searchsorted(a_listen, hi)],
                         _slice(*lis, lo, hi), _slice(*snd, lo, hi),
                         _slice(*nack, lo, hi), _slice(*dec, lo, hi), decoys)

        got = np.flatnonzero(tau < INF)
        self.status[got] = INFORMED
        self.has_m[got] = True
        self.inf_round[got] = i
        self.inf_phase[got] = int(phase)
        self.inf_step[got] = step
        rec.newly_informed = int(got.size)
        rec.blocked = classify_blocked(cfg, phase, L, rec.jams, rec.jammed_active)
        self.records.append(rec)
        self.global_slot += L

    def _window(self, rec: PhaseRecord, plan: PhasePlan, obs: AdversaryObservation, phase: Phase,
                lo: int, hi: int, L: int, tau: np.ndarray,
                a_send: np.ndarray, a_listen: np.ndarray,
                lis, snd, nack, dec, decoys: bool) -> None:
        cfg = self.cfg
        W = hi - lo
        ls_o, ls_s = lis
        sd_o, sd_s = snd
        nk_o, nk_s = nack
        dc_o, dc_s = dec

        def cut(arr):
            a, b = np.searchsorted(arr, [lo, hi])
            return arr[a:b]

        pj_a, pj_b = np.searchsorted(plan.jam_slots, [lo, hi])
        pj_s = plan.jam_slots[pj_a:pj_b]
        pj_set = plan.jam_target_idx[pj_a:pj_b]
        bn_s = cut(plan.nack_slots)
        bg_s = cut(plan.garbage_slots)
        planned_byz = np.bincount(np.concatenate((bn_s, bg_s)) - lo, minlength=W)
        planned_jam = np.full(W, -1, dtype=np.int64)
        planned_jam[pj_s - lo] = pj_set
        coins = None
        if plan.reactive_p > 0.0:
            coins = reactive_coin(cfg, obs, np.arange(lo, hi))

        # Alice's events are state independent; only enforcement truncates them
        a_tx, a_ls = a_send, a_listen
        if self.enforce:
            room = max(0, self.alice_limit - self.a_sends - self.a_listens)
            a_tx = a_tx[:room]
            a_ls = a_ls[:max(0, room - a_tx.size)]

        pool_left = self.pool.remaining
        settled = tau.copy()
        guard = 0
        while True:
            guard += 1
            if guard > W + 3:
                raise RuntimeError("intra-phase fixpoint did not converge")
            lmask = ls_s <= tau[ls_o]
            L_o, L_s = ls_o[lmask], ls_s[lmask]
            if decoys:
                busy_node = _isin_pairs(dc_o, dc_s, L_o, L_s, L) | _isin_pairs(dc_o, dc_s, sd_o, sd_s, L)
                D_o, D_s = dc_o[~busy_node], dc_s[~busy_node]
            else:
                D_o, D_s = dc_o, dc_s
            S_o, S_s, N_o, N_s = sd_o, sd_s, nk_o, nk_s
            if self.enforce:
                (L_o, L_s), (S_o, S_s), (N_o, N_s), (D_o, D_s), dropped = self._truncate(
                    [(L_o, L_s), (S_o, S_s), (N_o, N_s), (D_o, D_s)], L)
            else:
                dropped = None

            m_slots = np.concatenate((a_tx, S_s)) - lo
            m_cnt = np.bincount(m_slots, minlength=W)
            nk_cnt = np.bincount(N_s - lo, minlength=W)
            dc_cnt = np.bincount(D_s - lo, minlength=W)
            correct_cnt = m_cnt + nk_cnt + dc_cnt
            busy = (correct_cnt + planned_byz) > 0

            jam_want = planned_jam.copy()
            if coins is not None:
                react = busy & (jam_want < 0) & (coins < plan.reactive_p)
                jam_want[react] = plan.reactive_targets
            # payment order: by slot, jam before nack before garbage
            w_slot = np.concatenate((np.flatnonzero(jam_want >= 0) + lo, bn_s, bg_s))
            w_kind = np.concatenate((np.zeros(int((jam_want >= 0).sum()), np.int64),
                                     np.ones(bn_s.size, np.int64), np.full(bg_s.size, 2, np.int64)))
            order = np.lexsort((w_kind, w_slot))
            w_slot, w_kind = w_slot[order], w_kind[order]
            paid = min(pool_left, w_slot.size)
            exhaust_at = int(w_slot[paid]) if paid < w_slot.size else -1
            p_slot, p_kind = w_slot[:paid], w_kind[:paid]

            jam_set = np.full(W, -1, dtype=np.int64)
            js = p_slot[p_kind == 0] - lo
            jam_set[js] = jam_want[js]
            byz_nack = np.bincount(p_slot[p_kind == 1] - lo, minlength=W)
            byz_garb = np.bincount(p_slot[p_kind == 2] - lo, minlength=W)
            total = correct_cnt + byz_nack + byz_garb

            # perceptions at node listens
            jammed = self._jammed(jam_set, L_s - lo, L_o + 1, plan)
            cnt = total[L_s - lo]
            deliver_m = ~jammed & (cnt == 1) & (m_cnt[L_s - lo] == 1)
            new_tau = settled.copy()
            np.minimum.at(new_tau, L_o[deliver_m], L_s[deliver_m])
            if np.array_equal(new_tau, tau):
                break
            tau[:] = new_tau
            if not decoys and not self.enforce:
                # a listener's own informing affects nobody else: drop its later listens
                keep = L_s <= tau[L_o]
                L_o, L_s, jammed, cnt = L_o[keep], L_s[keep], jammed[keep], cnt[keep]
                break

        # ---- commit ----
        n = cfg.n
        self.sends += np.bincount(S_o, minlength=n) + np.bincount(N_o, minlength=n) + np.bincount(D_o, minlength=n)
        self.listens += np.bincount(L_o, minlength=n)
        if dropped is not None:
            self.exhausted |= dropped
        self.a_sends += int(a_tx.size)
        self.a_listens += int(a_ls.size)
        if self.enforce and (a_tx.size < a_send.size or a_ls.size < a_listen.size):
            self.a_exhausted = True
        if paid:
            change = np.flatnonzero(np.diff(p_kind)) + 1
            for run in np.split(p_kind, change):
                self.pool.pay(int(run.size), "jam" if run[0] == 0 else "send")
        if exhaust_at >= 0 and self.exhaustion_slot < 0:
            self.exhaustion_slot = self.global_slot + exhaust_at

        if phase == Phase.REQUEST:
            noisy = jammed | (cnt > 0)
            self.counter += np.bincount(L_o[noisy], minlength=n)
            a_j = self._jammed(jam_set, a_ls - lo, np.zeros(a_ls.size, np.int64), plan)
            self.a_counter += int((a_j | (total[a_ls - lo] > 0)).sum())

        jam_slots = jam_set >= 0
        content = (m_cnt + dc_cnt) > 0
        rec.correct_tx += int(correct_cnt.sum())
        rec.correct_listens += int(L_o.size + a_ls.size)
        rec.byz_tx += int(byz_nack.sum() + byz_garb.sum())
        rec.jams += int(jam_slots.sum())
        rec.jammed_active += int((jam_slots & content).sum())
        if pool_left > 0:
            # a slot is pre-exhaustion iff the pool could still pay when it began
            paid_per_slot = np.bincount(p_slot - lo, minlength=W)
            before = np.concatenate(([0], np.cumsum(paid_per_slot)[:-1]))
            window = content & (pool_left - before > 0)
            has_m = window & (m_cnt > 0)
            only_d = window & (m_cnt == 0)
            a, b, c, d = rec.content_table
            rec.content_table = (
                a + int((has_m & jam_slots).sum()), b + int((has_m & ~jam_slots).sum()),
                c + int((only_d & jam_slots).sum()), d + int((only_d & ~jam_slots).sum()),
            )
        if self.trace is not None and len(self.trace) < self.trace_cap:
            self._trace_rows(rec, phase, lo, W, correct_cnt, byz_nack + byz_garb, total, m_cnt, nk_cnt,
                             dc_cnt, byz_nack, jam_slots, L_s, a_ls)

    def _jammed(self, jam_set: np.ndarray, rel_slots: np.ndarray, gids: np.ndarray, plan: PhasePlan) -> np.ndarray:
        sets = jam_set[rel_slots]
        hit = sets >= 0
        if not hit.any():
            return hit
        out = np.zeros(rel_slots.size, dtype=bool)
        for idx in np.unique(sets[hit]):
            sel = sets == idx
            mask = self._target_mask(plan.target_sets[int(idx)])
            out[sel] = True if mask is None else mask[gids[sel]]
        return out

    def _truncate(self, groups, L):
        """Keep each node's events in slot order until its budget runs out."""
        n = self.cfg.n
        sizes = [g[0].size for g in groups]
        o = np.concatenate([g[0] for g in groups])
        s = np.concatenate([g[1] for g in groups])
        tag = np.repeat(np.arange(len(groups)), sizes)
        dropped = np.zeros(n, dtype=bool)
        if o.size == 0:
            return [*groups, dropped]
        order = np.lexsort((s, o))
        o_s = o[order]
        first = np.searchsorted(o_s, o_s, side="left")
        rank = np.arange(o_s.size) - first
        room = self.node_limit - (self.sends + self.listens)
        keep_sorted = rank < room[o_s]
        dropped[np.unique(o_s[~keep_sorted])] = True
        keep = np.empty(o.size, dtype=bool)
        keep[order] = keep_sorted
        out = []
        for gi in range(len(groups)):
            sel = (tag == gi) & keep
            out.append((o[sel], s[sel]))
        return [*out, dropped]

    def _trace_rows(self, rec, phase, lo, W, correct_cnt, byz_cnt, total, m_cnt, nk_cnt, dc_cnt,
                    byz_nack, jam_slots, L_s, a_ls) -> None:
        listeners = np.bincount(L_s - lo, minlength=W) + np.bincount(a_ls - lo, minlength=W)
        room = self.trace_cap - len(self.trace)
        for j in range(min(W, room)):
            if total[j] == 1:
                if m_cnt[j]:
                    payload = Payload.MESSAGE_M.name
                elif nk_cnt[j] or byz_nack[j]:
                    payload = Payload.NACK.name
                elif dc_cnt[j]:
                    payload = Payload.DECOY.name
                else:
                    payload = Payload.GARBAGE.name
            else:
                payload = ""
            self.trace.append((
                self.global_slot + lo + j, rec.round_index, rec.phase, rec.step, rec.replica, lo + j,
                int(correct_cnt[j]), int(byz_cnt[j]), payload, int(jam_slots[j]), int(listeners[j]),
            ))


def simulate(cfg: SimConfig, strategy: Strategy | None = None, trace_cap: int = 0) -> TrialLog:
    return Engine(cfg, strategy, trace_cap).run()
