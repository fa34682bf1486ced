"""Exhaustive truth-table check of the channel on tiny instances.

The expected perceptions are written out as a table keyed by
(number of transmissions, whether the listener is jammed) and evaluated
without calling into :mod:`jamsim.channel`'s resolution logic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

from .channel import (
    NOISE,
    SILENCE,
    JamAction,
    Payload,
    Perception,
    Role,
    SlotOutcome,
    Transmission,
    delivered,
    resolve_slot,
)

ACTIONS = ("send_m", "send_nack", "jam_all", "jam_one", "listen", "idle")

# participant 0 plays Alice, 1 a correct node, 2 a Byzantine node
ROLES = (Role.ALICE, Role.CORRECT, Role.BYZANTINE)

# (transmission count bucket, listener jammed) -> outcome
# bucket: 0, 1 or "many"; "single" means the lone payload is delivered
TRUTH_TABLE = {
    (0, False): "silence",
    (0, True): "noise",
    (1, False): "single",
    (1, True): "noise",
    ("many", False): "noise",
    ("many", True): "noise",
}


@dataclass(frozen=True)
class Mismatch:
    actions: tuple[str, ...]
    listener: int
    expected: Perception | None
    got: Perception | None


def _expected_payload(pid: int, action: str) -> tuple[Payload, bool]:
    if action == "send_nack":
        return Payload.NACK, False
    if ROLES[pid] == Role.BYZANTINE:
        return Payload.GARBAGE, False
    return Payload.MESSAGE_M, True


def expected_perceptions(actions: tuple[str, ...]) -> dict[int, Perception]:
    m = len(actions)
    senders = [p for p, a in enumerate(actions) if a in ("send_m", "send_nack")]
    bucket = len(senders) if len(senders) < 2 else "many"
    out: dict[int, Perception] = {}
    for u, a in enumerate(actions):
        if a != "listen":
            continue
        jammed = False
        for p, b in enumerate(actions):
            if b == "jam_all" or (b == "jam_one" and (p + 1) % m == u):
                jammed = True
        verdict = TRUTH_TABLE[(bucket, jammed)]
        if verdict == "silence":
            out[u] = SILENCE
        elif verdict == "noise":
            out[u] = NOISE
        else:
            payload, auth = _expected_payload(senders[0], actions[senders[0]])
            out[u] = delivered(payload, auth)
    return out


def build_instance(actions: tuple[str, ...]) -> tuple[list[Transmission], list[JamAction], list[int]]:
    m = len(actions)
    tx, jams, listeners = [], [], []
    for p, a in enumerate(actions):
        if a == "send_m":
            tx.append(Transmission.make(p, Payload.MESSAGE_M, ROLES[p]))
        elif a == "send_nack":
            tx.append(Transmission.make(p, Payload.NACK, ROLES[p]))
        elif a == "jam_all":
            jams.append(JamAction(p, None))
        elif a == "jam_one":
            jams.append(JamAction(p, frozenset({(p + 1) % m})))
        elif a == "listen":
            listeners.append(p)
    return tx, jams, listeners


def faulty_resolve_slot(transmissions, jams, listeners, slot: int = 0) -> SlotOutcome:
    """Deliberately broken resolver: ignores single-target jams."""
    kept = [j for j in jams if j.targets is None]
    return resolve_slot(transmissions, kept, listeners, slot)


def run_oracle(
    max_participants: int = 3,
    resolver: Callable[..., SlotOutcome] = resolve_slot,
) -> tuple[int, int, list[Mismatch]]:
    """Enumerate every action profile for 1..max_participants participants.

    Returns (cases checked, mismatching cases, mismatch details).
    """
    if not 1 <= max_participants <= 3:
        raise ValueError("max_participants must be 1, 2 or 3")
    cases = 0
    bad: list[Mismatch] = []
    bad_cases = 0
    for m in range(1, max_participants + 1):
        for actions in itertools.product(ACTIONS, repeat=m):
            cases += 1
            tx, jams, listeners = build_instance(actions)
            got = dict(resolver(tx, jams, listeners).perception)
            want = expected_perceptions(actions)
            case_bad = False
            for u in sorted(set(got) | set(want)):
                if got.get(u) != want.get(u):
                    bad.append(Mismatch(actions, u, want.get(u), got.get(u)))
                    case_bad = True
            bad_cases += case_bad
    return cases, bad_cases, bad
