"""Per-participant protocol state machine (scalar form).

These functions drive the slot-by-slot reference runner and document the
exact decision rules; the vectorised engine implements the same rules over
whole phases at once and is cross-checked against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

from .channel import Payload, Perception, PerceptionKind, Role
from .core import BudgetExhausted, CostLedger, RoundSchedule, SimConfig, ledger_charge


class Status(Enum):
    UNINFORMED = "uninformed"
    INFORMED = "informed"
    TERMINATED = "terminated"


class Phase(IntEnum):
    INFORM = 0
    PROPAGATION = 1
    REQUEST = 2

    @property
    def label(self) -> str:
        return ("inform", "propagation", "request")[self]


class Action(IntEnum):
    IDLE = 0
    LISTEN = 1
    SEND_M = 2
    SEND_NACK = 3
    SEND_DECOY = 4

    @property
    def payload(self) -> Payload | None:
        return {
            Action.SEND_M: Payload.MESSAGE_M,
            Action.SEND_NACK: Payload.NACK,
            Action.SEND_DECOY: Payload.DECOY,
        }.get(self)


@dataclass
class ParticipantState:
    id: int
    role: Role
    ledger: CostLedger
    status: Status = Status.UNINFORMED
    has_m: bool = False
    informed_round: int | None = None
    informed_phase: Phase | None = None
    informed_step: int = 0  # propagation step in which m arrived (0: inform phase)
    sender_duty: bool = False
    duty_step: int = 0
    noisy_heard: int = 0
    exhausted: bool = False
    terminated_round: int | None = None

    @property
    def active(self) -> bool:
        return self.status != Status.TERMINATED


def new_alice(cfg: SimConfig, budget: int) -> ParticipantState:
    return ParticipantState(
        id=0, role=Role.ALICE, ledger=CostLedger(budget), status=Status.INFORMED, has_m=True
    )


def new_node(pid: int, budget: int) -> ParticipantState:
    return ParticipantState(id=pid, role=Role.CORRECT, ledger=CostLedger(budget))


@dataclass(frozen=True)
class ApproxSchedule:
    nu: float
    replicas: int
    send_p: tuple[float, ...]  # indexed by g - 1


def approx_n_schedule(cfg: SimConfig, i: int) -> ApproxSchedule:
    """Replicated propagation step used when n is only known polynomially."""
    if cfg.approx_n_exponent is None:
        raise ValueError("approx_n_mode off")
    log_nu = cfg.approx_n_exponent * math.log(cfg.n)
    ell = math.ceil(cfg.c * log_nu)
    send = tuple(min(1.0, 2.0 ** (-(i + g))) for g in range(1, ell + 1))
    return ApproxSchedule(nu=math.exp(log_nu), replicas=ell, send_p=send)


@dataclass(frozen=True)
class PhaseContext:
    cfg: SimConfig
    round_index: int
    phase: Phase
    schedule: RoundSchedule
    step: int = 0  # 1..k-1 during propagation
    replica: int = 0  # 1..ell in approximate-n mode, else 0
    slot: int = 0
    approx: ApproxSchedule | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.phase == Phase.PROPAGATION and not 1 <= self.step <= self.cfg.k - 1:
            raise ValueError(f"propagation step {self.step} outside 1..{self.cfg.k - 1}")

    @property
    def last_replica(self) -> bool:
        return self.approx is None or self.replica == self.approx.replicas

    def duty_send_p(self) -> float:
        if self.approx is not None:
            return self.approx.send_p[self.replica - 1]
        return self.schedule.informed_send_p


@dataclass(frozen=True)
class Draws:
    """Uniform [0, 1) draws for one participant in one slot."""

    send: float = 1.0
    listen: float = 1.0
    decoy: float = 1.0


def _charge(state: ParticipantState, action: Action, policy: str) -> Action:
    if action == Action.IDLE:
        return action
    kind = "listen" if action == Action.LISTEN else "send"
    try:
        ledger_charge(state.ledger, kind, policy)
    except BudgetExhausted:
        state.exhausted = True
        return Action.IDLE
    return action


def alice_action(state: ParticipantState, ctx: PhaseContext, draws: Draws) -> Action:
    if not state.active or state.exhausted:
        return Action.IDLE
    sched = ctx.schedule
    action = Action.IDLE
    if ctx.phase == Phase.INFORM:
        if draws.send < sched.alice_send_p:
            action = Action.SEND_M
    elif ctx.phase == Phase.REQUEST:
        if draws.listen < sched.alice_request_listen_p:
            action = Action.LISTEN
    return _charge(state, action, ctx.cfg.budget_policy_correct)


def node_action(state: ParticipantState, ctx: PhaseContext, draws: Draws) -> Action:
    if not state.active or state.exhausted:
        return Action.IDLE
    sched = ctx.schedule
    uninformed = state.status == Status.UNINFORMED
    action = Action.IDLE
    if ctx.phase == Phase.INFORM:
        if uninformed and draws.listen < sched.node_inform_listen_p:
            action = Action.LISTEN
    elif ctx.phase == Phase.PROPAGATION:
        if state.sender_duty and state.duty_step == ctx.step:
            if draws.send < ctx.duty_send_p():
                action = Action.SEND_M
        elif uninformed and draws.listen < sched.node_prop_listen_p:
            action = Action.LISTEN
    else:
        if uninformed:
            if draws.send < sched.nack_send_p:
                action = Action.SEND_NACK
            elif draws.listen < sched.node_request_listen_p:
                action = Action.LISTEN
    if (
        action == Action.IDLE
        and ctx.cfg.decoys_enabled
        and ctx.phase != Phase.REQUEST
        and draws.decoy < sched.decoy_send_p
    ):
        action = Action.SEND_DECOY
    return _charge(state, action, ctx.cfg.budget_policy_correct)


def is_noisy(state: ParticipantState, perception: Perception) -> bool:
    """Every non-silent perception counts towards the request-phase counter."""
    return perception.kind != PerceptionKind.SILENCE


def absorb_perception(state: ParticipantState, ctx: PhaseContext, perception: Perception) -> ParticipantState:
    if not state.active:
        return state
    authentic_m = (
        perception.kind == PerceptionKind.DELIVERED
        and perception.payload == Payload.MESSAGE_M
        and perception.authenticated
    )
    if authentic_m and state.status == Status.UNINFORMED:
        state.status = Status.INFORMED
        state.has_m = True
        state.informed_round = ctx.round_index
        state.informed_phase = ctx.phase
        state.informed_step = ctx.step if ctx.phase == Phase.PROPAGATION else 0
    if ctx.phase == Phase.REQUEST and is_noisy(state, perception):
        state.noisy_heard += 1
    return state


def _terminate(state: ParticipantState, ctx: PhaseContext) -> None:
    state.status = Status.TERMINATED
    state.sender_duty = False
    state.terminated_round = ctx.round_index


def end_of_phase(state: ParticipantState, ctx: PhaseContext) -> ParticipantState:
    """Apply duty hand-off and termination rules at a phase (or step) boundary."""
    if not state.active:
        return state
    k = ctx.cfg.k
    if ctx.phase == Phase.INFORM:
        if state.role == Role.CORRECT and state.informed_round == ctx.round_index and state.status == Status.INFORMED:
            state.sender_duty = True
            state.duty_step = 1
        return state
    if ctx.phase == Phase.PROPAGATION:
        if not ctx.last_replica or state.role != Role.CORRECT:
            return state
        h = ctx.step
        if state.sender_duty and state.duty_step == h:
            _terminate(state, ctx)
        elif (
            state.status == Status.INFORMED
            and state.informed_round == ctx.round_index
            and state.informed_phase == Phase.PROPAGATION
            and state.informed_step == h
        ):
            if h < k - 1:
                state.sender_duty = True
                state.duty_step = h + 1
            else:
                _terminate(state, ctx)
        return state
    # request phase
    threshold_ok = state.noisy_heard <= ctx.schedule.termination_threshold
    gate_open = ctx.round_index >= ctx.cfg.gate
    candidate = state.role == Role.ALICE or state.status == Status.UNINFORMED
    if candidate and threshold_ok and gate_open:
        _terminate(state, ctx)
    state.noisy_heard = 0
    return state
