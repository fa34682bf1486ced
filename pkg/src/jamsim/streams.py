"""Counter-based randomness.

Every random decision is a pure function of a 64-bit key and a
(participant id, counter) pair, so the order in which draws are made never
changes their values.  Keys are derived by hashing structured tuples such
as (seed, round, phase, step, replica, purpose).
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_ID_MULT = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)
_UM1, _UM2 = np.uint64(_M1), np.uint64(_M2)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)

# cap on the number of uint64 cells materialised at once
_CELL_CAP = 1 << 22
# above this probability candidates are found by thresholding every slot
_DENSE_P = 0.25


class Purpose(IntEnum):
    ALICE_SEND = 1
    ALICE_LISTEN = 2
    NODE_LISTEN = 3
    NODE_SEND = 4
    NACK = 5
    DECOY = 6
    ADV_SLOTS = 7
    ADV_VICTIMS = 8
    ADV_COIN = 9
    TRIAL_SEED = 10


def mix_int(x: int) -> int:
    """splitmix64 finaliser on a Python int."""
    x &= MASK
    x = ((x ^ (x >> 30)) * _M1) & MASK
    x = ((x ^ (x >> 27)) * _M2) & MASK
    return x ^ (x >> 31)


def derive_key(*parts: int) -> int:
    h = _GOLDEN
    for p in parts:
        h = mix_int(h ^ (int(p) & MASK))
        h = (h + _GOLDEN) & MASK
    return mix_int(h)


def mix64(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x ^= x >> _S30
        x *= _UM1
        x ^= x >> _S27
        x *= _UM2
        x ^= x >> _S31
    return x


def participant_keys(key: int, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(key) + ids * np.uint64(_ID_MULT))


def uniforms(pkeys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draws for broadcastable (participant key, counter) arrays."""
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = mix64(pkeys ^ (counters * np.uint64(_GOLDEN)))
    return (h >> np.uint64(11)).astype(np.float64) * _INV53


def uniform(key: int, pid: int, counter: int) -> float:
    """Scalar form of :func:`uniforms`."""
    pk = participant_keys(key, np.array([pid]))
    return float(uniforms(pk, np.array([counter]))[0])


def bernoulli_positions(key: int, ids: np.ndarray, p: float, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Slots in ``[0, length)`` where each participant's Bernoulli(p) fires.

    Returns ``(owner, slot)`` int64 arrays sorted by owner order then slot.
    Positions come from geometric gaps over the participant's counter
    stream, so cost is proportional to the number of hits, not to length.
    For ``p >= 1/4`` every slot is thresholded directly instead.
    """
    ids = np.asarray(ids, dtype=np.int64)
    empty = (np.empty(0, np.int64), np.empty(0, np.int64))
    if ids.size == 0 or length <= 0 or p <= 0.0:
        return empty
    if p >= 1.0:
        owner = np.repeat(ids, length)
        slot = np.tile(np.arange(length, dtype=np.int64), ids.size)
        return owner, slot
    if p >= _DENSE_P:
        return _dense_positions(key, ids, p, length)
    log_q = np.log1p(-p)
    mean = length * p
    chunk = int(mean + 4.0 * np.sqrt(mean) + 8)
    rows_per_batch = max(1, _CELL_CAP // chunk)
    owners: list[np.ndarray] = []
    slots: list[np.ndarray] = []
    for start in range(0, ids.size, rows_per_batch):
        batch = ids[start:start + rows_per_batch]
        pk = participant_keys(key, batch)[:, None]
        base = np.zeros(batch.size, dtype=np.int64)  # next counter per row
        last = np.full(batch.size, -1, dtype=np.int64)  # last position per row
        active = np.arange(batch.size)
        row_parts: list[tuple[np.ndarray, np.ndarray]] = []
        while active.size:
            counters = base[active][:, None] + np.arange(chunk, dtype=np.int64)[None, :]
            u = uniforms(pk[active], counters)
            # clip before the cast: for tiny p the float gap overflows int64
            with np.errstate(over="ignore"):
                gaps = 1 + np.minimum(np.floor(np.log1p(-u) / log_q), length).astype(np.int64)
            pos = last[active][:, None] + np.cumsum(gaps, axis=1)
            keep = pos < length
            r, _ = np.nonzero(keep)
            row_parts.append((active[r], pos[keep]))
            last[active] = pos[:, -1]
            base[active] += chunk
            active = active[pos[:, -1] < length]
        rows = np.concatenate([rp[0] for rp in row_parts])
        pos = np.concatenate([rp[1] for rp in row_parts])
        order = np.lexsort((pos, rows))
        owners.append(batch[rows[order]])
        slots.append(pos[order])
    return np.concatenate(owners), np.concatenate(slots)


def _dense_positions(key: int, ids: np.ndarray, p: float, length: int) -> tuple[np.ndarray, np.ndarray]:
    # for large p a per-slot threshold is cheaper than geometric gaps
    rows_per_batch = max(1, _CELL_CAP // length)
    owners, slots = [], []
    slot_idx = np.arange(length, dtype=np.int64)
    for start in range(0, ids.size, rows_per_batch):
        batch = ids[start:start + rows_per_batch]
        u = uniforms(participant_keys(key, batch)[:, None], slot_idx[None, :])
        r, c = np.nonzero(u < p)
        owners.append(batch[r])
        slots.append(c.astype(np.int64))
    return np.concatenate(owners), np.concatenate(slots)


def random_subset(key: int, length: int, size: int) -> np.ndarray:
    """Sorted uniformly random subset of ``range(length)`` of the given size."""
    size = min(size, length)
    if size <= 0:
        return np.empty(0, dtype=np.int64)
    if size == length:
        return np.arange(length, dtype=np.int64)
    u = uniforms(participant_keys(key, np.array([0])), np.arange(length, dtype=np.int64))
    # ties are impossible in practice; stable sort keeps this deterministic anyway
    return np.sort(np.argsort(u, kind="stable")[:size]).astype(np.int64)


def slot_draw(key: int, pid: int, p: float, slot: int, is_candidate: bool) -> float:
    """A per-slot uniform consistent with :func:`bernoulli_positions`.

    ``draw < p`` holds exactly when ``slot`` is one of the participant's
    candidate positions, so a slot-by-slot runner comparing draws against
    ``p`` makes the same decisions as the vectorised sampler.
    """
    if _DENSE_P <= p < 1.0:
        return uniform(key, pid, slot)
    w = uniform(derive_key(key, 0x5107), pid, slot)
    return w * p if is_candidate else p + w * (1.0 - p)


def trial_seed(root: int, cell: int, trial: int) -> int:
    return derive_key(Purpose.TRIAL_SEED, root, cell, trial)
