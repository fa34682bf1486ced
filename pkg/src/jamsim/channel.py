"""Single-slot channel semantics for the n-uniform jamming model."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Mapping


class Payload(IntEnum):
    MESSAGE_M = 1
    NACK = 2
    DECOY = 3
    GARBAGE = 4


class Role(Enum):
    ALICE = "alice"
    CORRECT = "correct"
    BYZANTINE = "byzantine"


class PerceptionKind(IntEnum):
    SILENCE = 0
    DELIVERED = 1
    NOISE = 2


@dataclass(frozen=True)
class Perception:
    kind: PerceptionKind
    payload: Payload | None = None
    authenticated: bool = False

    @property
    def noisy(self) -> bool:
        return self.kind != PerceptionKind.SILENCE

    def __repr__(self) -> str:
        if self.kind == PerceptionKind.DELIVERED:
            return f"Delivered({self.payload.name})"
        return self.kind.name.capitalize()


SILENCE = Perception(PerceptionKind.SILENCE)
NOISE = Perception(PerceptionKind.NOISE)


def delivered(payload: Payload, authenticated: bool = False) -> Perception:
    return Perception(PerceptionKind.DELIVERED, payload, authenticated)


@dataclass(frozen=True)
class Transmission:
    sender: int
    payload: Payload
    authenticated: bool = False

    @classmethod
    def make(cls, sender: int, payload: Payload, role: Role) -> "Transmission":
        """Apply the authentication rule for a sender of the given role.

        A copy of m carries Alice's signature, so m relayed by a correct node
        stays authentic; a Byzantine node cannot produce a valid m and its
        attempt is indistinguishable from garbage.
        """
        if payload == Payload.MESSAGE_M:
            if role == Role.BYZANTINE:
                return cls(sender, Payload.GARBAGE, False)
            return cls(sender, payload, True)
        return cls(sender, payload, False)


@dataclass(frozen=True)
class JamAction:
    jammer: int
    targets: frozenset[int] | None = None  # None: every listener

    def __post_init__(self) -> None:
        if self.targets is not None and not self.targets:
            raise ValueError("jam target set must be non-empty")

    def hits(self, listener: int) -> bool:
        return self.targets is None or listener in self.targets


@dataclass(frozen=True)
class SlotOutcome:
    slot: int
    transmissions: tuple[Transmission, ...]
    jams: tuple[JamAction, ...]
    perception: Mapping[int, Perception] = field(default_factory=dict)

    @property
    def noisy(self) -> bool:
        return bool(self.transmissions) or bool(self.jams)


class ChannelError(ValueError):
    pass


def resolve_slot(
    transmissions: Iterable[Transmission],
    jams: Iterable[JamAction],
    listeners: Iterable[int],
    slot: int = 0,
) -> SlotOutcome:
    tx = tuple(transmissions)
    jm = tuple(jams)
    senders = [t.sender for t in tx]
    if len(set(senders)) != len(senders):
        raise ChannelError(f"duplicate transmitter in slot {slot}")
    jammers = [j.jammer for j in jm]
    if len(set(jammers)) != len(jammers):
        raise ChannelError(f"jammer acts twice in slot {slot}")
    sending = set(senders)
    perception: dict[int, Perception] = {}
    for u in listeners:
        if u in sending:
            continue
        if any(j.hits(u) for j in jm):
            perception[u] = NOISE
        elif not tx:
            perception[u] = SILENCE
        elif len(tx) == 1:
            perception[u] = delivered(tx[0].payload, tx[0].authenticated)
        else:
            perception[u] = NOISE
    return SlotOutcome(slot, tx, jm, perception)


def busy_flag(transmissions: Iterable[Transmission], jams: Iterable[JamAction] = ()) -> bool:
    """Pre-jam carrier sense: true iff anyone transmits.  Content is never exposed."""
    return any(True for _ in transmissions)
