"""Carol's strategies, the pooled adversary budget, and blocked-phase rules."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import streams
from .channel import JamAction, Payload, Role, Transmission
from .core import Budgets, SimConfig
from .protocol import Phase
from .streams import Purpose


# --------------------------------------------------------------------------
# pooled budget
# --------------------------------------------------------------------------

class AdversaryPool:
    """Carol's ledger followed by the t Byzantine ledgers, drained round-robin.

    Payment is always enforced.  ``pay(n)`` is equivalent to ``n`` calls of
    ``pay_one()``, so bulk and slot-by-slot runners stay in lock step.
    """

    def __init__(self, budgets: Budgets, t: int, carol_id: int, byz_ids: np.ndarray):
        self.limits = np.concatenate(([budgets.carol_budget], np.full(t, budgets.node_budget))).astype(np.int64)
        self.spent = np.zeros(t + 1, dtype=np.int64)
        self.jams = np.zeros(t + 1, dtype=np.int64)
        self.sends = np.zeros(t + 1, dtype=np.int64)
        self.ids = np.concatenate(([carol_id], np.asarray(byz_ids, dtype=np.int64)))
        self.cursor = 0
        alive = self._alive_in_rotation()
        if alive.size:
            self.cursor = int(alive[0])

    @property
    def capacity(self) -> int:
        return int(self.limits.sum())

    @property
    def total(self) -> int:
        return int(self.spent.sum())

    @property
    def remaining(self) -> int:
        return self.capacity - self.total

    def _alive_in_rotation(self) -> np.ndarray:
        m = self.limits.size
        order = (np.arange(m) + self.cursor) % m
        return order[self.spent[order] < self.limits[order]]

    def _pay_units(self, count: int) -> np.ndarray:
        """Charge up to ``count`` units; return the per-ledger split."""
        paid = np.zeros_like(self.spent)
        left = min(count, self.remaining)
        while left > 0:
            alive = self._alive_in_rotation()
            room = self.limits[alive] - self.spent[alive]
            cycles = min(left // alive.size, int(room.min()))
            if cycles > 0:
                # whole rotations leave the cursor pointing at the same ledger
                self.spent[alive] += cycles
                paid[alive] += cycles
                left -= cycles * alive.size
                continue
            take = alive[:left]
            self.spent[take] += 1
            paid[take] += 1
            self.cursor = int(take[-1] + 1) % self.limits.size
            left = 0
        alive = self._alive_in_rotation()
        self.cursor = int(alive[0]) if alive.size else 0  # canonical: next ledger that can pay
        return paid

    def pay(self, count: int, kind: str = "jam") -> int:
        paid = self._pay_units(count)
        (self.jams if kind == "jam" else self.sends)[:] += paid
        return int(paid.sum())

    def pay_one(self, kind: str = "jam") -> int | None:
        """Pay a single unit; return the paying participant id or None if dry."""
        paid = self._pay_units(1)
        hit = np.flatnonzero(paid)
        if hit.size == 0:
            return None
        (self.jams if kind == "jam" else self.sends)[hit[0]] += 1
        return int(self.ids[hit[0]])


# --------------------------------------------------------------------------
# observations and plans
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AdversaryObservation:
    """What Carol knows when deciding.

    ``history`` is the per-phase activity record of everything before the
    current phase (who acted, never payload identity).  ``busy`` is only
    populated in reactive mode and only for the current slot.
    """

    cfg: SimConfig
    round_index: int
    phase: Phase
    step: int
    replica: int
    phase_length: int
    slot: int = 0
    busy: bool | None = None
    history: tuple = ()


@dataclass
class PhasePlan:
    """Adversary actions for one phase, fixed from history at phase start."""

    jam_slots: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    jam_target_idx: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    target_sets: list = field(default_factory=lambda: [None])  # None: everyone
    nack_slots: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    garbage_slots: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    reactive_p: float = 0.0  # jam busy slots with this probability (reactive mode)
    reactive_targets: int = 0  # index into target_sets

    @property
    def empty(self) -> bool:
        return (
            self.jam_slots.size == 0 and self.nack_slots.size == 0
            and self.garbage_slots.size == 0 and self.reactive_p <= 0.0
        )


@dataclass(frozen=True)
class SlotPlan:
    jams: tuple[JamAction, ...] = ()
    transmissions: tuple[Transmission, ...] = ()
    unpaid: bool = False  # some wanted action could not be paid for

    @property
    def empty(self) -> bool:
        return not self.jams and not self.transmissions


def phase_key(cfg: SimConfig, obs: AdversaryObservation, purpose: Purpose) -> int:
    return streams.derive_key(cfg.seed, obs.round_index, int(obs.phase), obs.step, obs.replica, purpose)


class Strategy:
    name = "null"
    reactive = False

    def begin_trial(self, cfg: SimConfig) -> None:
        self.cfg = cfg

    def active_in(self, obs: AdversaryObservation) -> bool:
        stop = self.cfg.adversary.stop_round
        return stop is None or obs.round_index <= stop

    def plan_phase(self, obs: AdversaryObservation) -> PhasePlan:
        return PhasePlan()


class NullStrategy(Strategy):
    name = "null"


def _victims(cfg: SimConfig) -> frozenset[int] | None:
    if cfg.adversary.victim_rule == "all-nodes":
        return None
    spared = round(cfg.spare_fraction * cfg.n)
    count = cfg.n - spared
    key = streams.derive_key(cfg.seed, Purpose.ADV_VICTIMS)
    picks = streams.random_subset(key, cfg.n, count)
    return frozenset(int(v) + 1 for v in picks)


class PhaseBlocker(Strategy):
    """Jam ceil(gamma * L) random slots of each targeted phase."""

    name = "phase_blocker"

    def begin_trial(self, cfg: SimConfig) -> None:
        super().begin_trial(cfg)
        self.victims = _victims(cfg)

    def plan_phase(self, obs: AdversaryObservation) -> PhasePlan:
        if not self.active_in(obs) or obs.phase.label not in self.cfg.adversary.targets:
            return PhasePlan()
        if self.victims is not None and not self.victims:
            return PhasePlan()
        want = math.ceil(self.cfg.gamma * obs.phase_length - 1e-12)
        slots = streams.random_subset(phase_key(self.cfg, obs, Purpose.ADV_SLOTS), obs.phase_length, want)
        return PhasePlan(
            jam_slots=slots,
            jam_target_idx=np.zeros(slots.size, np.int64),
            target_sets=[self.victims],
        )


class RequestSpoofer(Strategy):
    """Byzantine nacks in request slots to keep Alice's counter high."""

    name = "request_spoofer"

    def plan_phase(self, obs: AdversaryObservation) -> PhasePlan:
        if not self.active_in(obs) or obs.phase != Phase.REQUEST:
            return PhasePlan()
        want = math.ceil(self.cfg.gamma * obs.phase_length - 1e-12)
        slots = streams.random_subset(phase_key(self.cfg, obs, Purpose.ADV_SLOTS), obs.phase_length, want)
        return PhasePlan(nack_slots=slots)


class ReactiveJammer(Strategy):
    """Jam a slot iff carrier sense says busy (with probability p_commit)."""

    name = "reactive_jammer"
    reactive = True

    def plan_phase(self, obs: AdversaryObservation) -> PhasePlan:
        if not self.active_in(obs):
            return PhasePlan()
        return PhasePlan(reactive_p=self.cfg.adversary.p_commit)


@dataclass(frozen=True)
class ScriptRow:
    rounds: tuple[int, int]
    phase: str | None
    step: int | None
    slots: tuple[int, int] | None
    action: str
    targets: frozenset[int] | None


def _parse_range(text: str) -> tuple[int, int] | None:
    text = text.strip()
    if text in ("*", ""):
        return None
    if "-" in text:
        lo, hi = text.split("-", 1)
        return int(lo), int(hi)
    v = int(text)
    return v, v


def load_script(path: str | Path) -> list[ScriptRow]:
    """Read ``round,phase,step,slot,action,targets`` rows.

    ``round`` and ``slot`` accept ``*``, an integer or an inclusive ``a-b``
    range; ``targets`` is ``all`` or ``;``-separated participant ids.
    """
    rows: list[ScriptRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if line.strip() and not line.lstrip().startswith("#"))
        for rec in reader:
            rounds = _parse_range(rec["round"]) or (1, 1 << 30)
            phase = rec["phase"].strip().lower()
            step = rec.get("step", "*").strip()
            action = rec["action"].strip().lower()
            if action not in ("jam", "nack", "garbage"):
                raise ValueError(f"unknown scripted action {action!r}")
            tgt = (rec.get("targets") or "all").strip().lower()
            targets = None if tgt in ("all", "*", "") else frozenset(int(x) for x in tgt.split(";") if x)
            rows.append(ScriptRow(
                rounds=rounds,
                phase=None if phase == "*" else phase,
                step=None if step in ("*", "") else int(step),
                slots=_parse_range(rec["slot"]),
                action=action,
                targets=targets,
            ))
    return rows


class Scripted(Strategy):
    name = "scripted"

    def __init__(self, rows: list[ScriptRow] | None = None):
        self.rows = rows

    def begin_trial(self, cfg: SimConfig) -> None:
        super().begin_trial(cfg)
        if self.rows is None:
            self.rows = load_script(cfg.adversary.script)

    def plan_phase(self, obs: AdversaryObservation) -> PhasePlan:
        if not self.active_in(obs):
            return PhasePlan()
        jam: dict[int, int] = {}
        sets: list = []
        set_idx: dict = {}
        nacks: set[int] = set()
        garbage: set[int] = set()
        for row in self.rows:
            if not row.rounds[0] <= obs.round_index <= row.rounds[1]:
                continue
            if row.phase is not None and row.phase != obs.phase.label:
                continue
            if row.step is not None and obs.phase == Phase.PROPAGATION and row.step != obs.step:
                continue
            lo, hi = row.slots if row.slots is not None else (0, obs.phase_length - 1)
            span = range(max(lo, 0), min(hi, obs.phase_length - 1) + 1)
            if row.action == "jam":
                if row.targets not in set_idx:
                    set_idx[row.targets] = len(sets)
                    sets.append(row.targets)
                for s in span:
                    jam[s] = set_idx[row.targets]  # later rows win
            elif row.action == "nack":
                nacks.update(span)
            else:
                garbage.update(span)
        slots = np.array(sorted(jam), dtype=np.int64)
        return PhasePlan(
            jam_slots=slots,
            jam_target_idx=np.array([jam[s] for s in slots], dtype=np.int64),
            target_sets=sets or [None],
            nack_slots=np.array(sorted(nacks), dtype=np.int64),
            garbage_slots=np.array(sorted(garbage - nacks), dtype=np.int64),
        )


def make_strategy(cfg: SimConfig) -> Strategy:
    name = cfg.adversary.strategy
    if name == "null":
        s: Strategy = NullStrategy()
    elif name == "phase_blocker":
        s = PhaseBlocker()
    elif name == "request_spoofer":
        s = RequestSpoofer()
    elif name == "reactive_jammer":
        s = ReactiveJammer()
    elif name == "scripted":
        s = Scripted()
    else:  # validate_config rejects anything else
        raise ValueError(f"unknown strategy {name!r}")
    s.begin_trial(cfg)
    return s


def reactive_coin(cfg: SimConfig, obs: AdversaryObservation, slots: np.ndarray) -> np.ndarray:
    """Per-slot commit coins for the reactive jammer."""
    key = phase_key(cfg, obs, Purpose.ADV_COIN)
    return streams.uniforms(streams.participant_keys(key, np.array([0])), np.asarray(slots, dtype=np.int64))


def plan_slot(
    strategy: Strategy,
    plan: PhasePlan,
    obs: AdversaryObservation,
    pool: AdversaryPool,
) -> SlotPlan:
    """Scalar per-slot decision; payment happens here, jam before transmissions."""
    s = obs.slot
    jams: list[JamAction] = []
    tx: list[Transmission] = []
    idx = np.searchsorted(plan.jam_slots, s)
    wants_jam = idx < plan.jam_slots.size and plan.jam_slots[idx] == s
    targets = plan.target_sets[int(plan.jam_target_idx[idx])] if wants_jam else None
    if not wants_jam and plan.reactive_p > 0.0 and obs.busy:
        coin = float(reactive_coin(strategy.cfg, obs, np.array([s]))[0])
        wants_jam = coin < plan.reactive_p
        targets = plan.target_sets[plan.reactive_targets]
    unpaid = False
    if wants_jam:
        payer = pool.pay_one("jam")
        if payer is not None:
            jams.append(JamAction(payer, targets))
        unpaid = payer is None
    for slots, payload in ((plan.nack_slots, Payload.NACK), (plan.garbage_slots, Payload.GARBAGE)):
        j = np.searchsorted(slots, s)
        if j < slots.size and slots[j] == s:
            payer = pool.pay_one("send")
            if payer is not None:
                tx.append(Transmission.make(payer, payload, Role.BYZANTINE))
            unpaid = unpaid or payer is None
    return SlotPlan(tuple(jams), tuple(tx), unpaid)


# --------------------------------------------------------------------------
# blocked phases
# --------------------------------------------------------------------------

def blocked_threshold(cfg: SimConfig, phase: Phase, length: int) -> float:
    if phase == Phase.REQUEST:
        return (1.0 - math.exp(-4.0 * cfg.epsilon_prime)) * length
    if cfg.adversary_mode == "reactive" and cfg.decoys_enabled:
        return length / 4.0
    return cfg.beta * length


def classify_blocked(
    cfg: SimConfig,
    phase: Phase,
    length: int,
    jammed: int | None,
    jammed_active: int | None = None,
) -> bool:
    """True iff the phase counts as blocked.

    ``jammed_active`` is the number of jammed slots that carried m or at
    least one decoy; it is what matters in the reactive-with-decoys model.
    """
    if jammed is None:
        raise ValueError("incomplete log: no jam record for phase")
    count = jammed
    if phase != Phase.REQUEST and cfg.adversary_mode == "reactive" and cfg.decoys_enabled:
        if jammed_active is None:
            raise ValueError("incomplete log: reactive classification needs jammed_active")
        count = jammed_active
    return count > blocked_threshold(cfg, phase, length)
