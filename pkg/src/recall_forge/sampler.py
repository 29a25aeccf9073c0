"""Deterministic xxHash64-keyed sampling, optionally stratified by score decile.

A pair's key is xxHash64 over 9 bytes: its index as a little-endian u64
followed by one stratum byte. Sampling keeps the smallest keys, so samples are
a pure function of (candidate order, strata, k, seed).
"""

from __future__ import annotations

import struct

import numpy as np
import xxhash

N_STRATA = 10

_P1 = np.uint64(0x9E3779B185EBCA87)
_P2 = np.uint64(0xC2B2AE3D27D4EB4F)
_P3 = np.uint64(0x165667B19E3779F9)
_P4 = np.uint64(0x85EBCA77C2B2AE63)
_P5 = np.uint64(0x27D4EB2F165667C5)
_MSG_LEN = np.uint64(9)


def _rotl(x: np.ndarray, r: int) -> np.ndarray:
    return (x << np.uint64(r)) | (x >> np.uint64(64 - r))


def hash_key(id: int, stratum: int, seed: int) -> int:
    """xxHash64 of ``id`` (u64 LE) followed by the ``stratum`` byte."""
    return xxhash.xxh64_intdigest(struct.pack("<QB", id, stratum), seed=seed)


def hash_keys(ids, strata, seed: int) -> np.ndarray:
    """Vectorised ``hash_key`` over arrays of ids and stratum bytes."""
    lane = np.asarray(ids, dtype=np.uint64)
    tail = np.broadcast_to(np.asarray(strata, dtype=np.uint8), lane.shape).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = np.full(lane.shape, np.uint64(seed % 2**64), dtype=np.uint64) + _P5 + _MSG_LEN
        k1 = _rotl(lane * _P2, 31) * _P1
        h ^= k1
        h = _rotl(h, 27) * _P1 + _P4
        h ^= tail * _P5
        h = _rotl(h, 11) * _P1
        h ^= h >> np.uint64(33)
        h *= _P2
        h ^= h >> np.uint64(29)
        h *= _P3
        h ^= h >> np.uint64(32)
    return h


def assign_deciles(scores) -> np.ndarray:
    """Stratum min(9, floor(10 p)) per score."""
    p = np.asarray(scores, dtype=np.float64)
    return np.minimum(np.floor(p * N_STRATA), N_STRATA - 1).clip(0).astype(np.uint8)


def _smallest(ids: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    # key order with ties broken by the smaller id
    order = np.lexsort((ids, keys))
    return ids[order[:k]]


def hashed_order(max_id: int, seed: int, strata=None) -> np.ndarray:
    """All ids 0..max_id-1 sorted by key (ties by id)."""
    ids = np.arange(max_id, dtype=np.int64)
    keys = hash_keys(ids, 0 if strata is None else strata, seed)
    return ids[np.lexsort((ids, keys))]


def decile_quotas(populations, k: int) -> np.ndarray:
    """Per-stratum quotas summing to min(k, total population).

    Every stratum is offered floor(k / 10). Strata that cannot fill their
    quota give their members; the deficit (plus the k mod 10 remainder) is
    handed out one unit at a time, round-robin over strata that still have
    members, ranked by remaining population (largest first, ties by lower
    stratum index).
    """
    pop = np.asarray(populations, dtype=np.int64)
    total = min(int(k), int(pop.sum()))
    alloc = np.minimum(pop, k // pop.size)
    deficit = total - int(alloc.sum())
    while deficit > 0:
        remaining = pop - alloc
        order = [int(m) for m in np.lexsort((np.arange(pop.size), -remaining)) if remaining[m] > 0]
        if deficit >= len(order):
            # whole rounds: every eligible stratum gains the same amount
            step = min(deficit // len(order), int(remaining[order].min()))
            alloc[order] += step
            deficit -= step * len(order)
        else:
            alloc[order[:deficit]] += 1
            deficit = 0
    return alloc


def hashed_sample_ids(max_id: int, k: int, seed: int, strata=None, per_stratum: bool = True) -> np.ndarray:
    """Sorted ids of a deterministic hashed sample of size min(k, max_id).

    Without strata: the k smallest keys. With strata and ``per_stratum``: the
    smallest keys within each stratum, up to its quota from ``decile_quotas``.
    With strata and ``per_stratum=False``: the k smallest stratum-salted keys
    overall.
    """
    if k < 1:
        raise ValueError(f"sample size must be >= 1, got {k}")
    ids = np.arange(max_id, dtype=np.int64)
    if strata is None:
        return np.sort(_smallest(ids, hash_keys(ids, 0, seed), k))
    strata = np.asarray(strata, dtype=np.uint8)
    if strata.shape != (max_id,):
        raise ValueError("strata must have one entry per id")
    keys = hash_keys(ids, strata, seed)
    if not per_stratum:
        return np.sort(_smallest(ids, keys, k))
    pops = np.bincount(strata, minlength=N_STRATA)
    quotas = decile_quotas(pops, k)
    parts = []
    for m in range(N_STRATA):
        if quotas[m] == 0:
            continue
        members = np.flatnonzero(strata == m)
        parts.append(_smallest(members, keys[members], int(quotas[m])))
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(parts))


def build_calibration_sample(candidate_count: int, scores, k: int, seed: int, per_stratum: bool = True) -> np.ndarray:
    scores = np.asarray(scores)
    if scores.shape != (candidate_count,):
        raise ValueError("scores must have one entry per candidate")
    return hashed_sample_ids(candidate_count, k, seed, assign_deciles(scores), per_stratum)


def calibration_subsamples(
    candidate_count: int, scores, k: int, seed: int, n_subsamples: int = 9, per_stratum: bool = True
) -> list[np.ndarray]:
    """K stratified subsamples of size k // K with seeds seed+1 .. seed+K."""
    size = max(k // n_subsamples, 1)
    strata = assign_deciles(scores)
    return [
        hashed_sample_ids(candidate_count, size, seed + 1 + j, strata, per_stratum) for j in range(n_subsamples)
    ]


def equalize_inclusion(sample_ids, strata, seed: int, focus, min_share: float = 0.0) -> np.ndarray:
    """Sorted sub-selection of a stratified sample with one inclusion rate for all strata.

    Equal quotas over unequal strata give members of small strata a higher
    inclusion probability than members of large ones. The lowest rate
    n_m / N_m among strata holding ``focus`` members (e.g. labelled
    positives) is applied to every stratum by keeping its smallest-key
    members, so the result is a prefix of each stratum's own hashed sample.
    Strata whose estimated share of the focus population is below
    ``min_share`` do not set the rate; they keep all their members.
    """
    ids = np.asarray(sample_ids, dtype=np.int64)
    strata = np.asarray(strata, dtype=np.uint8)
    focus = np.asarray(focus, dtype=bool)
    pops = np.bincount(strata, minlength=N_STRATA)
    drawn = np.bincount(strata[ids], minlength=N_STRATA)
    hits = np.bincount(strata[ids[focus]], minlength=N_STRATA)
    mass = np.zeros(N_STRATA)
    np.divide(hits * pops, drawn, out=mass, where=drawn > 0)
    if mass.sum() == 0:
        return ids
    live = np.flatnonzero((hits > 0) & (mass >= min_share * mass.sum()))
    rate = float(np.min(drawn[live] / pops[live]))
    keys = hash_keys(ids, strata[ids], seed)
    parts = []
    for m in range(N_STRATA):
        members = ids[strata[ids] == m]
        if members.size == 0:
            continue
        keep = min(members.size, int(np.floor(rate * pops[m] + 0.5)))
        parts.append(_smallest(members, keys[strata[ids] == m], keep))
    return np.sort(np.concatenate(parts))


def random_sample_ids(max_id: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement; the baseline the hashed sampler replaces."""
    return np.sort(rng.choice(max_id, size=min(k, max_id), replace=False))


def stratified_quantile(sample_scores, sample_strata, populations, q: float) -> float:
    """q-quantile of the population estimated from a stratified sample.

    Each sampled score carries weight N_m / n_m for its stratum m.
    """
    s = np.asarray(sample_scores, dtype=np.float64)
    st = np.asarray(sample_strata, dtype=np.int64)
    pops = np.asarray(populations, dtype=np.float64)
    counts = np.bincount(st, minlength=pops.size).astype(np.float64)
    w = pops[st] / counts[st]
    order = np.argsort(s, kind="stable")
    cdf = np.cumsum(w[order]) / w.sum()
    return float(s[order][min(np.searchsorted(cdf, q), s.size - 1)])


def write_ids(path, ids) -> None:
    """Newline-delimited decimal ids, for audit."""
    with open(path, "w") as fh:
        fh.writelines(f"{int(i)}\n" for i in ids)
