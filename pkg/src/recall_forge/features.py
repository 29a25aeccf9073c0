"""Sixteen pair features and min-max scaling to [0, 10000].

Column order (ratios are min/max so they lie in [0, 1]):

 0 area ratio                  8 source aspect (w/h, clamped to [0, 100])
 1 perimeter ratio             9 target aspect
 2 shared grid-cell count     10 log1p(source area)
 3 MBR IoU                    11 log1p(target area)
 4 MBR overlap / smaller MBR  12 vertex-count ratio
 5 centroid distance / mean   13 MBR diagonal ratio
   MBR diagonal               14 farthest MBR corner distance / mean diagonal
 6 MBR width ratio            15 MBR centres in the same grid cell (0/1)
 7 MBR height ratio
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .geom_filter import GridSpec
from .geometry import Geometry, RingTable, ring_table

log = logging.getLogger(__name__)

N_FEATURES = 16
SCALE_MAX = 10_000.0
ASPECT_CAP = 100.0
FEATURE_MAGIC = b"RFFT"

FEATURE_NAMES = (
    "area_ratio",
    "perimeter_ratio",
    "tile_cooccurrence",
    "mbr_iou",
    "mbr_overlap_smaller",
    "centroid_distance",
    "width_ratio",
    "height_ratio",
    "source_aspect",
    "target_aspect",
    "log_source_area",
    "log_target_area",
    "vertex_ratio",
    "diagonal_ratio",
    "corner_distance",
    "same_cell",
)


def _ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    out = np.zeros_like(hi, dtype=np.float64)
    np.divide(lo, hi, out=out, where=hi > 0)
    return out


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(a, b).shape)
    np.divide(a, b, out=out, where=b > 0)
    return out


def _aspect(w: np.ndarray, h: np.ndarray) -> np.ndarray:
    out = np.zeros_like(w)
    np.divide(w, h, out=out, where=h > 0)
    out[(h == 0) & (w > 0)] = ASPECT_CAP
    return np.clip(out, 0.0, ASPECT_CAP)


def pair_features(src: RingTable, tgt: RingTable, si, ti, grid: GridSpec) -> np.ndarray:
    """Raw (unscaled) feature rows for pairs (src[si[k]], tgt[ti[k]])."""
    si = np.asarray(si, dtype=np.int64)
    ti = np.asarray(ti, dtype=np.int64)
    a, b = src.mbrs[si], tgt.mbrs[ti]
    out = np.empty((si.size, N_FEATURES))
    area_s, area_t = src.area[si], tgt.area[ti]
    per_s, per_t = src.perimeter[si], tgt.perimeter[ti]
    degenerate = int(np.count_nonzero((area_s == 0) | (area_t == 0) | (per_s == 0) | (per_t == 0)))
    if degenerate:
        log.warning("%d pairs involve zero-area or zero-perimeter geometry; their ratios are set to 0", degenerate)

    out[:, 0] = _ratio(area_s, area_t)
    out[:, 1] = _ratio(per_s, per_t)

    ra, rb = grid.cell_ranges(a), grid.cell_ranges(b)
    shared_x = np.maximum(0, np.minimum(ra[:, 2], rb[:, 2]) - np.maximum(ra[:, 0], rb[:, 0]) + 1)
    shared_y = np.maximum(0, np.minimum(ra[:, 3], rb[:, 3]) - np.maximum(ra[:, 1], rb[:, 1]) + 1)
    out[:, 2] = shared_x * shared_y

    wa, ha = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    wb, hb = b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]
    iw = np.maximum(0.0, np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]))
    ih = np.maximum(0.0, np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]))
    inter = iw * ih
    mbr_a, mbr_b = wa * ha, wb * hb
    out[:, 3] = _safe_div(inter, mbr_a + mbr_b - inter)
    out[:, 4] = _safe_div(inter, np.minimum(mbr_a, mbr_b))

    diag_a, diag_b = np.hypot(wa, ha), np.hypot(wb, hb)
    mean_diag = 0.5 * (diag_a + diag_b)
    d = src.centroid[si] - tgt.centroid[ti]
    out[:, 5] = _safe_div(np.hypot(d[:, 0], d[:, 1]), mean_diag)
    out[:, 6] = _ratio(wa, wb)
    out[:, 7] = _ratio(ha, hb)
    out[:, 8] = _aspect(wa, ha)
    out[:, 9] = _aspect(wb, hb)
    out[:, 10] = np.log1p(area_s)
    out[:, 11] = np.log1p(area_t)
    out[:, 12] = _ratio(src.counts[si].astype(np.float64), tgt.counts[ti].astype(np.float64))
    out[:, 13] = _ratio(diag_a, diag_b)
    far_x = np.maximum(np.abs(a[:, 2] - b[:, 0]), np.abs(b[:, 2] - a[:, 0]))
    far_y = np.maximum(np.abs(a[:, 3] - b[:, 1]), np.abs(b[:, 3] - a[:, 1]))
    out[:, 14] = _safe_div(np.hypot(far_x, far_y), mean_diag)
    cax, cay = grid.cell_of(0.5 * (a[:, 0] + a[:, 2]), 0.5 * (a[:, 1] + a[:, 3]))
    cbx, cby = grid.cell_of(0.5 * (b[:, 0] + b[:, 2]), 0.5 * (b[:, 1] + b[:, 3]))
    out[:, 15] = (cax == cbx) & (cay == cby)
    return out


def extract_features(s: Geometry, t: Geometry, grid: GridSpec) -> np.ndarray:
    return pair_features(ring_table([s]), ring_table([t]), [0], [0], grid)[0]


def candidate_features(S, T, csr, grid: GridSpec, chunk: int = 65536) -> np.ndarray:
    """Raw features for every candidate pair, in CSR order."""
    src, tgt = ring_table(S), ring_table(T)
    si, ti = csr.sources(), csr.values
    out = np.empty((si.size, N_FEATURES))
    for lo in range(0, si.size, chunk):
        out[lo : lo + chunk] = pair_features(src, tgt, si[lo : lo + chunk], ti[lo : lo + chunk], grid)
    return out


@dataclass(frozen=True)
class FeatureScaler:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.mins > self.maxs):
            raise ValueError("scaler mins must not exceed maxs")


def fit_scaler(rows) -> FeatureScaler:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("fit_scaler needs at least one row")
    return FeatureScaler(rows.min(axis=0), rows.max(axis=0))


def transform(scaler: FeatureScaler, rows) -> np.ndarray:
    """Map each feature onto [0, 10000]; constant features map to 0.

    The result is single precision so feature dumps round-trip exactly.
    """
    rows = np.asarray(rows, dtype=np.float64)
    span = scaler.maxs - scaler.mins
    scaled = np.zeros_like(rows)
    np.divide(SCALE_MAX * (rows - scaler.mins), span, out=scaled, where=span > 0)
    return np.clip(scaled, 0.0, SCALE_MAX).astype(np.float32)


def write_features(path, rows) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QH", rows.shape[0], rows.shape[1]))
        fh.write(rows.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not an RFFT file")
    n, m = struct.unpack_from("<QH", data, 4)
    off = 4 + struct.calcsize("<QH")
    return np.frombuffer(data, "<f4", n * m, off).reshape(n, m).astype(np.float32)
