"""Ground-truth match predicate, recall evaluation and review-cost accounting.

The predicate is an overlap ratio: intersection area over the smaller of the
two areas, computed either on the polygons (convex clipping) or on their MBRs.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Geometry, RingTable, ring_table

log = logging.getLogger(__name__)


class MatchMode(str, enum.Enum):
    MBR_OVERLAP_RATIO = "mbr_overlap_ratio"
    POLYGON_OVERLAP_RATIO = "polygon_overlap_ratio"


@dataclass(frozen=True)
class MatchPredicateConfig:
    mode: MatchMode = MatchMode.POLYGON_OVERLAP_RATIO
    min_overlap: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mode", MatchMode(self.mode))
        if not 0 < self.min_overlap <= 1:
            raise ValueError(f"min_overlap must lie in (0, 1], got {self.min_overlap}")


def _signed_area(pts) -> float:
    s = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def is_convex(ring) -> bool:
    """True if all turns share one orientation (collinear vertices allowed)."""
    r = np.asarray(ring, dtype=np.float64)
    d = np.roll(r, -1, axis=0) - r
    cross = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    return bool(np.all(cross >= 0) or np.all(cross <= 0))


def _ccw(ring) -> list[tuple[float, float]]:
    pts = [(float(x), float(y)) for x, y in ring]
    return pts if _signed_area(pts) >= 0 else pts[::-1]


def clip_convex(subject, clip) -> list[tuple[float, float]]:
    """Sutherland-Hodgman: the part of ``subject`` inside convex ``clip``."""
    out = _ccw(subject)
    window = _ccw(clip)
    m = len(window)
    for i in range(m):
        if not out:
            break
        ax, ay = window[i]
        bx, by = window[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        px, py = inp[-1]
        p_side = ex * (py - ay) - ey * (px - ax)
        for qx, qy in inp:
            q_side = ex * (qy - ay) - ey * (qx - ax)
            if q_side >= 0:
                if p_side < 0:
                    t = p_side / (p_side - q_side)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
                out.append((qx, qy))
            elif p_side >= 0:
                t = p_side / (p_side - q_side)
                out.append((px + t * (qx - px), py + t * (qy - py)))
            px, py, p_side = qx, qy, q_side
    return out


def convex_intersection_area(a, b) -> float:
    pts = clip_convex(a, b)
    return abs(_signed_area(pts)) if len(pts) >= 3 else 0.0


def _mbr_ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.maximum(0.0, np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]))
    ih = np.maximum(0.0, np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]))
    small = np.minimum((a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1]), (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1]))
    out = np.zeros(np.shape(small))
    np.divide(iw * ih, small, out=out, where=small > 0)
    return out


def _canonical(s: Geometry, t: Geometry) -> tuple[Geometry, Geometry]:
    # clip in a fixed order so is_match(s, t) and is_match(t, s) do identical arithmetic
    return (s, t) if (s.ring.tobytes(), s.id) <= (t.ring.tobytes(), t.id) else (t, s)


def overlap_ratio(s: Geometry, t: Geometry, cfg: MatchPredicateConfig = MatchPredicateConfig()) -> float:
    mode = cfg.mode
    if mode is MatchMode.POLYGON_OVERLAP_RATIO and not (is_convex(s.ring) and is_convex(t.ring)):
        log.warning("non-convex geometry in pair (%d, %d); using the MBR overlap ratio", s.id, t.id)
        mode = MatchMode.MBR_OVERLAP_RATIO
    if mode is MatchMode.MBR_OVERLAP_RATIO:
        box = lambda g: np.concatenate([g.ring.min(axis=0), g.ring.max(axis=0)])  # noqa: E731
        return float(_mbr_ratio(box(s), box(t)))
    a, b = _canonical(s, t)
    small = min(abs(_signed_area(_ccw(a.ring))), abs(_signed_area(_ccw(b.ring))))
    if small <= 0:
        return 0.0
    return min(1.0, convex_intersection_area(a.ring, b.ring) / small)


def is_match(s: Geometry, t: Geometry, cfg: MatchPredicateConfig = MatchPredicateConfig()) -> bool:
    return overlap_ratio(s, t, cfg) >= cfg.min_overlap


def evaluate_recall(scores, labels, tau: float) -> float:
    """Fraction of positive-labelled pairs with score >= tau."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("recall is undefined without positive labels")
    return int(np.count_nonzero(scores[labels] >= tau)) / n_pos


@dataclass
class CostCounter:
    """c_geom: geometric verifications requested; c_feat: feature + inference evaluations."""

    geom: int = 0
    feat: int = 0

    def to_dict(self) -> dict:
        return {"c_geom": self.geom, "c_feat": self.feat}


class MatchOracle:
    """Memoised predicate over index pairs of two fixed geometry lists.

    The memo only saves work across repeated queries; every requested pair is
    still charged to the caller's counter.
    """

    def __init__(self, S: Sequence[Geometry], T: Sequence[Geometry], cfg: MatchPredicateConfig = MatchPredicateConfig()):
        self.S, self.T, self.cfg = S, T, cfg
        self._src: RingTable = ring_table(S)
        self._tgt: RingTable = ring_table(T)
        self._memo: dict[int, bool] = {}

    def _key(self, si: np.ndarray, ti: np.ndarray) -> np.ndarray:
        return si * len(self.T) + ti

    def _compute(self, si: np.ndarray, ti: np.ndarray) -> np.ndarray:
        a, b = self._src.mbrs[si], self._tgt.mbrs[ti]
        if self.cfg.mode is MatchMode.MBR_OVERLAP_RATIO:
            return _mbr_ratio(a, b) >= self.cfg.min_overlap
        # MBR intersection bounds the polygon intersection, so this is a necessary condition
        iw = np.maximum(0.0, np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]))
        ih = np.maximum(0.0, np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]))
        small = np.minimum(self._src.area[si], self._tgt.area[ti])
        maybe = (small > 0) & (iw * ih >= self.cfg.min_overlap * small)
        out = np.zeros(si.size, dtype=bool)
        for k in np.flatnonzero(maybe):
            out[k] = is_match(self.S[si[k]], self.T[ti[k]], self.cfg)
        return out

    def label(self, si, ti, counter: CostCounter | None = None) -> np.ndarray:
        si = np.asarray(si, dtype=np.int64)
        ti = np.asarray(ti, dtype=np.int64)
        if counter is not None:
            counter.geom += int(si.size)
        keys = self._key(si, ti)
        known = np.array([k in self._memo for k in keys.tolist()], dtype=bool)
        out = np.empty(si.size, dtype=bool)
        out[known] = [self._memo[k] for k in keys[known].tolist()]
        fresh = ~known
        if fresh.any():
            vals = self._compute(si[fresh], ti[fresh])
            out[fresh] = vals
            self._memo.update(zip(keys[fresh].tolist(), vals.tolist()))
        return out


@dataclass
class VerificationOutcome:
    reviewed_count: int
    retained_pairs: np.ndarray  # (m, 2) source/target indices confirmed by the predicate
    achieved_recall: float
    budget: int
    true_matches: int = 0
    overrun: bool = field(init=False)

    def __post_init__(self):
        self.overrun = self.reviewed_count > self.budget

    def to_dict(self) -> dict:
        return {
            "reviewed_count": self.reviewed_count,
            "confirmed_count": int(self.retained_pairs.shape[0]),
            "true_matches": self.true_matches,
            "achieved_recall": self.achieved_recall,
            "budget": self.budget,
            "overrun": self.overrun,
        }


def verify_with_budget(
    pairs_at_tau, oracle: MatchOracle, budget: int, ground_truth_keys, counter: CostCounter | None = None
) -> VerificationOutcome:
    """Review every pair at or above the threshold and measure recall against ground truth.

    ``pairs_at_tau`` is an (m, 2) array of source/target indices;
    ``ground_truth_keys`` holds ``src * |T| + tgt`` for every true match.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    pairs = np.asarray(pairs_at_tau, dtype=np.int64).reshape(-1, 2)
    gt = np.unique(np.asarray(ground_truth_keys, dtype=np.int64))
    ok = oracle.label(pairs[:, 0], pairs[:, 1], counter)
    kept = pairs[ok]
    hits = int(np.isin(kept[:, 0] * len(oracle.T) + kept[:, 1], gt).sum())
    recall = hits / gt.size if gt.size else 0.0
    return VerificationOutcome(int(pairs.shape[0]), kept, recall, int(budget), gt.size)


def read_ground_truth(path) -> np.ndarray:
    """(m, 2) array of (src_id, tgt_id) from a ``src_id,tgt_id`` CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src_id", "tgt_id"]:
            raise ValueError(f"{path}: expected header 'src_id,tgt_id'")
        rows = [(int(a), int(b)) for a, b in reader]
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def write_ground_truth(path, pairs) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src_id", "tgt_id"])
        w.writerows(np.asarray(pairs, dtype=np.int64).reshape(-1, 2).tolist())
