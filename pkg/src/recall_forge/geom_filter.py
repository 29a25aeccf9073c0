"""Equigrid MBR filter producing candidate pairs in CSR form."""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Geometry, mbr_array

log = logging.getLogger(__name__)

CSR_MAGIC = b"RFCS"
CSR_VERSION = 1
SOURCE_CHUNK = 2048
MAX_CELLS_PER_AXIS = 1 << 16


@dataclass(frozen=True)
class GridSpec:
    theta_x: float
    theta_y: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        if not (self.theta_x > 0 and self.theta_y > 0):
            raise ValueError(f"grid cell extents must be positive, got {self.theta_x}, {self.theta_y}")

    def cell_ranges(self, mbrs: np.ndarray) -> np.ndarray:
        """(n, 4) inclusive cell index ranges ix0, iy0, ix1, iy1 for each rectangle."""
        out = np.empty(mbrs.shape, dtype=np.int64)
        out[:, 0] = np.floor((mbrs[:, 0] - self.origin_x) / self.theta_x)
        out[:, 1] = np.floor((mbrs[:, 1] - self.origin_y) / self.theta_y)
        out[:, 2] = np.floor((mbrs[:, 2] - self.origin_x) / self.theta_x)
        out[:, 3] = np.floor((mbrs[:, 3] - self.origin_y) / self.theta_y)
        return out

    def cell_of(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.floor((np.asarray(x) - self.origin_x) / self.theta_x).astype(np.int64),
            np.floor((np.asarray(y) - self.origin_y) / self.theta_y).astype(np.int64),
        )


@dataclass(frozen=True, eq=False)
class CsrCandidates:
    """Row i lists the target indices paired with source i, strictly increasing."""

    offsets: np.ndarray
    values: np.ndarray
    n_targets: int

    @property
    def n_sources(self) -> int:
        return self.offsets.size - 1

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other):
        return (
            isinstance(other, CsrCandidates)
            and self.n_targets == other.n_targets
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.values, other.values)
        )

    def row(self, i: int) -> np.ndarray:
        return self.values[self.offsets[i] : self.offsets[i + 1]]

    def sources(self) -> np.ndarray:
        """Source index of every pair, aligned with ``values``."""
        return np.repeat(np.arange(self.n_sources, dtype=np.int64), np.diff(self.offsets))

    def pair_keys(self) -> np.ndarray:
        return self.sources() * self.n_targets + self.values

    def pair_set(self) -> set[tuple[int, int]]:
        return set(zip(self.sources().tolist(), self.values.tolist()))

    def transpose(self) -> CsrCandidates:
        return csr_from_pairs(self.values, self.sources(), self.n_targets, self.n_sources)

    def check(self) -> None:
        off, val = self.offsets, self.values
        assert off[0] == 0 and off[-1] == val.size
        assert np.all(np.diff(off) >= 0)
        assert val.size == 0 or (val.min() >= 0 and val.max() < self.n_targets)
        inner = np.diff(val) > 0
        row_start = np.zeros(val.size, dtype=bool)
        row_start[off[:-1][off[:-1] < val.size]] = True
        assert np.all(inner | row_start[1:])


def csr_from_pairs(src, tgt, n_sources: int, n_targets: int) -> CsrCandidates:
    """Canonical CSR from possibly duplicated, unordered pairs."""
    keys = np.unique(np.asarray(src, dtype=np.int64) * n_targets + np.asarray(tgt, dtype=np.int64))
    s = keys // max(n_targets, 1)
    offsets = np.zeros(n_sources + 1, dtype=np.int64)
    np.cumsum(np.bincount(s, minlength=n_sources), out=offsets[1:])
    return CsrCandidates(offsets, keys - s * n_targets, n_targets)


def mean_cell_extents(geoms: Sequence[Geometry]) -> GridSpec:
    """Grid whose cells are the mean MBR width and height of ``geoms``."""
    if not geoms:
        raise ValueError("cannot size a grid from an empty geometry list")
    m = mbr_array(geoms)
    tx = float(np.mean(m[:, 2] - m[:, 0]))
    ty = float(np.mean(m[:, 3] - m[:, 1]))
    if tx <= 0 or ty <= 0:
        log.warning("degenerate mean MBR extent (%g, %g); falling back to 1.0", tx, ty)
        tx = tx if tx > 0 else 1.0
        ty = ty if ty > 0 else 1.0
    # cap the cell count per axis so cell indices stay small integers
    span_x = float(m[:, 2].max() - m[:, 0].min()) / MAX_CELLS_PER_AXIS
    span_y = float(m[:, 3].max() - m[:, 1].min()) / MAX_CELLS_PER_AXIS
    if tx < span_x or ty < span_y:
        log.warning("mean MBR extent (%g, %g) too fine for the data span; coarsening", tx, ty)
        tx, ty = max(tx, span_x), max(ty, span_y)
    return GridSpec(tx, ty, float(m[:, 0].min()), float(m[:, 1].min()))


def _expand_cells(ranges: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Owner, ix, iy for every cell covered by every range."""
    w = ranges[:, 2] - ranges[:, 0] + 1
    h = ranges[:, 3] - ranges[:, 1] + 1
    counts = w * h
    owner = np.repeat(np.arange(ranges.shape[0], dtype=np.int64), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(owner.size, dtype=np.int64) - starts[owner]
    ix = ranges[owner, 0] + local % w[owner]
    iy = ranges[owner, 1] + local // w[owner]
    return owner, ix, iy


class _TargetIndex:
    def __init__(self, mbrs: np.ndarray, grid: GridSpec):
        self.mbrs = mbrs
        self.grid = grid
        ranges = grid.cell_ranges(mbrs)
        owner, ix, iy = _expand_cells(ranges)
        self.ix0, self.iy0 = int(ranges[:, 0].min()), int(ranges[:, 1].min())
        self.ny = int(ranges[:, 3].max()) - self.iy0 + 1
        self.ix_max = int(ranges[:, 2].max())
        key = (ix - self.ix0) * self.ny + (iy - self.iy0)
        order = np.argsort(key, kind="stable")
        key = key[order]
        self.targets = owner[order]
        self.cells, self.cell_start, self.cell_count = np.unique(key, return_index=True, return_counts=True)

    def probe(self, src_mbrs: np.ndarray, src_offset: int) -> tuple[np.ndarray, np.ndarray]:
        ranges = self.grid.cell_ranges(src_mbrs)
        # clip to the indexed extent; cells outside hold no targets
        ranges[:, 0] = np.maximum(ranges[:, 0], self.ix0)
        ranges[:, 1] = np.maximum(ranges[:, 1], self.iy0)
        ranges[:, 2] = np.minimum(ranges[:, 2], self.ix_max)
        ranges[:, 3] = np.minimum(ranges[:, 3], self.iy0 + self.ny - 1)
        live = (ranges[:, 0] <= ranges[:, 2]) & (ranges[:, 1] <= ranges[:, 3])
        rows = np.flatnonzero(live)
        owner, ix, iy = _expand_cells(ranges[rows])
        owner = rows[owner]
        key = (ix - self.ix0) * self.ny + (iy - self.iy0)
        pos = np.searchsorted(self.cells, key)
        pos_c = np.minimum(pos, self.cells.size - 1)
        hit = self.cells[pos_c] == key
        owner, pos_c = owner[hit], pos_c[hit]
        cnt = self.cell_count[pos_c]
        src = np.repeat(owner, cnt)
        base = np.repeat(self.cell_start[pos_c] - (np.cumsum(cnt) - cnt), cnt)
        tgt = self.targets[base + np.arange(src.size)]
        a, b = src_mbrs[src], self.mbrs[tgt]
        keep = (a[:, 0] <= b[:, 2]) & (b[:, 0] <= a[:, 2]) & (a[:, 1] <= b[:, 3]) & (b[:, 1] <= a[:, 3])
        return src[keep] + src_offset, tgt[keep]


def _merge_chunks(parts, n_sources: int, n_targets: int) -> CsrCandidates:
    src = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int64)
    tgt = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int64)
    return csr_from_pairs(src, tgt, n_sources, n_targets)


def enumerate_candidates(
    S: Sequence[Geometry], T: Sequence[Geometry], grid: GridSpec, workers: int = 1
) -> CsrCandidates:
    """All (i, j) with MBR(S[i]) and MBR(T[j]) intersecting as closed rectangles.

    Targets are indexed by the grid cells their MBRs overlap; sources are
    probed in fixed-size chunks, so the output does not depend on ``workers``.
    """
    if not S or not T:
        raise ValueError("source and target sets must be non-empty")
    src_mbrs = mbr_array(S)
    return enumerate_candidates_mbr(src_mbrs, mbr_array(T), grid, workers)


def enumerate_candidates_mbr(src_mbrs: np.ndarray, tgt_mbrs: np.ndarray, grid: GridSpec, workers: int = 1):
    index = _TargetIndex(tgt_mbrs, grid)
    bounds = [(lo, min(lo + SOURCE_CHUNK, src_mbrs.shape[0])) for lo in range(0, src_mbrs.shape[0], SOURCE_CHUNK)]

    def run(b):
        return index.probe(src_mbrs[b[0] : b[1]], b[0])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    return _merge_chunks(parts, src_mbrs.shape[0], tgt_mbrs.shape[0])


def brute_force_candidates(S: Sequence[Geometry], T: Sequence[Geometry]) -> CsrCandidates:
    """Exhaustive all-pairs rectangle test; the reference for the grid filter."""
    a, b = mbr_array(S), mbr_array(T)
    src, tgt = [], []
    for i in range(a.shape[0]):
        hit = np.flatnonzero((a[i, 0] <= b[:, 2]) & (b[:, 0] <= a[i, 2]) & (a[i, 1] <= b[:, 3]) & (b[:, 1] <= a[i, 3]))
        src.append(np.full(hit.size, i, dtype=np.int64))
        tgt.append(hit)
    return csr_from_pairs(np.concatenate(src), np.concatenate(tgt), a.shape[0], b.shape[0])


def write_csr(path, csr: CsrCandidates) -> None:
    """RFCS file: magic, u16 version, u64 |S|, u64 |values|, u64 offsets, u32 values (all LE).

    The target count follows as a trailing u64 so the file is self-describing.
    """
    with open(path, "wb") as fh:
        fh.write(CSR_MAGIC)
        fh.write(struct.pack("<HQQ", CSR_VERSION, csr.n_sources, csr.values.size))
        fh.write(csr.offsets.astype("<u8").tobytes())
        fh.write(csr.values.astype("<u4").tobytes())
        fh.write(struct.pack("<Q", csr.n_targets))


def read_csr(path) -> CsrCandidates:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CSR_MAGIC:
        raise ValueError(f"{path}: not an RFCS file")
    version, n_src, n_val = struct.unpack_from("<HQQ", data, 4)
    if version != CSR_VERSION:
        raise ValueError(f"{path}: unsupported RFCS version {version}")
    pos = 4 + struct.calcsize("<HQQ")
    offsets = np.frombuffer(data, "<u8", n_src + 1, pos).astype(np.int64)
    pos += 8 * (n_src + 1)
    values = np.frombuffer(data, "<u4", n_val, pos).astype(np.int64)
    pos += 4 * n_val
    if len(data) >= pos + 8:
        (n_tgt,) = struct.unpack_from("<Q", data, pos)
    else:
        n_tgt = int(values.max()) + 1 if n_val else 0
    return CsrCandidates(offsets, values, int(n_tgt))
