"""Polygon records, bounding rectangles, and the ``id,wkt`` CSV format."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import shapely


class InvalidGeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Geometry:
    """A polygon's outer ring, stored open (no repeated closing vertex)."""

    id: int
    ring: np.ndarray

    def __post_init__(self):
        ring = np.asarray(self.ring, dtype=np.float64).reshape(-1, 2) if len(self.ring) else np.empty((0, 2))
        if ring.shape[0] >= 4 and np.array_equal(ring[0], ring[-1]):
            ring = ring[:-1]
        if ring.shape[0] == 0:
            raise InvalidGeometryError(f"geometry {self.id}: empty ring")
        if ring.shape[0] < 3:
            raise InvalidGeometryError(f"geometry {self.id}: ring needs >= 3 vertices, got {ring.shape[0]}")
        if not np.isfinite(ring).all():
            raise InvalidGeometryError(f"geometry {self.id}: non-finite coordinate")
        if self.id < 0:
            raise InvalidGeometryError(f"geometry id must be non-negative, got {self.id}")
        ring.setflags(write=False)
        object.__setattr__(self, "ring", ring)

    def __eq__(self, other):
        return isinstance(other, Geometry) and self.id == other.id and np.array_equal(self.ring, other.ring)

    def __hash__(self):
        return hash((self.id, self.ring.tobytes()))

    def to_wkt(self) -> str:
        pts = list(self.ring) + [self.ring[0]]
        return "POLYGON ((" + ", ".join(f"{float(x)!r} {float(y)!r}" for x, y in pts) + "))"


@dataclass(frozen=True)
class Mbr:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise InvalidGeometryError(f"inverted rectangle {self}")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    def intersects(self, other: Mbr) -> bool:
        # closed rectangles: shared edges and corners count
        return (
            self.min_x <= other.max_x
            and other.min_x <= self.max_x
            and self.min_y <= other.max_y
            and other.min_y <= self.max_y
        )


def compute_mbr(g: Geometry) -> Mbr:
    ring = g.ring
    if ring.shape[0] == 0:
        raise InvalidGeometryError(f"geometry {g.id}: empty ring")
    lo = ring.min(axis=0)
    hi = ring.max(axis=0)
    return Mbr(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def mbr_array(geoms: Sequence[Geometry]) -> np.ndarray:
    """(n, 4) array of min_x, min_y, max_x, max_y."""
    out = np.empty((len(geoms), 4))
    for i, g in enumerate(geoms):
        out[i, :2] = g.ring.min(axis=0)
        out[i, 2:] = g.ring.max(axis=0)
    return out


@dataclass(frozen=True)
class RingTable:
    """Concatenated rings with per-geometry shape statistics, for vectorised work."""

    coords: np.ndarray  # (total_vertices, 2)
    starts: np.ndarray  # (n,) offset of each ring in coords
    counts: np.ndarray  # (n,) vertices per ring
    mbrs: np.ndarray  # (n, 4)
    area: np.ndarray
    perimeter: np.ndarray
    centroid: np.ndarray  # (n, 2)

    def __len__(self):
        return self.starts.size


def ring_table(geoms: Sequence[Geometry]) -> RingTable:
    counts = np.array([g.ring.shape[0] for g in geoms], dtype=np.int64)
    coords = np.concatenate([g.ring for g in geoms]) if len(geoms) else np.empty((0, 2))
    starts = np.zeros(counts.size, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    owner = np.repeat(np.arange(counts.size), counts)
    nxt = np.arange(coords.shape[0]) + 1
    last = starts + counts - 1
    nxt[last] = starts
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = x[nxt], y[nxt]
    cross = x * yn - xn * y
    area2 = np.bincount(owner, cross, minlength=counts.size)
    edge = np.hypot(xn - x, yn - y)
    perimeter = np.bincount(owner, edge, minlength=counts.size)
    cx_num = np.bincount(owner, (x + xn) * cross, minlength=counts.size)
    cy_num = np.bincount(owner, (y + yn) * cross, minlength=counts.size)
    mean_x = np.bincount(owner, x, minlength=counts.size) / counts
    mean_y = np.bincount(owner, y, minlength=counts.size) / counts
    with np.errstate(divide="ignore", invalid="ignore"):
        cx = np.where(area2 != 0, cx_num / (3.0 * area2), mean_x)
        cy = np.where(area2 != 0, cy_num / (3.0 * area2), mean_y)
    mbrs = np.empty((counts.size, 4))
    if counts.size:
        mbrs[:, 0] = np.minimum.reduceat(x, starts)
        mbrs[:, 1] = np.minimum.reduceat(y, starts)
        mbrs[:, 2] = np.maximum.reduceat(x, starts)
        mbrs[:, 3] = np.maximum.reduceat(y, starts)
    return RingTable(coords, starts, counts, mbrs, np.abs(area2) / 2.0, perimeter, np.column_stack([cx, cy]))


def polygon_area(ring) -> float:
    """Shoelace area (unsigned) of an open ring."""
    r = np.asarray(ring, dtype=np.float64)
    x, y = r[:, 0], r[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))) / 2.0


def read_geometries(path) -> list[Geometry]:
    """Read an ``id,wkt`` CSV of POLYGONs; only the outer ring is kept."""
    ids, wkts = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "wkt"]:
            raise InvalidGeometryError(f"{path}: expected header 'id,wkt'")
        for row in reader:
            ids.append(int(row["id"]))
            wkts.append(row["wkt"])
    if len(set(ids)) != len(ids):
        raise InvalidGeometryError(f"{path}: duplicate geometry ids")
    polys = shapely.from_wkt(np.array(wkts, dtype=object))
    out = []
    for gid, poly in zip(ids, polys):
        if poly is None or poly.geom_type != "Polygon" or poly.is_empty:
            raise InvalidGeometryError(f"{path}: geometry {gid} is not a non-empty POLYGON")
        out.append(Geometry(gid, shapely.get_coordinates(poly.exterior)))
    return out


def write_geometries(path, geoms: Iterable[Geometry]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "wkt"])
        for g in geoms:
            w.writerow([g.id, g.to_wkt()])
