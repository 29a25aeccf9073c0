"""Seeded synthetic polygon sets with known ground truth.

Sources are convex quadrilaterals inscribed in randomly rotated ellipses, with
log-normal sizes, placed uniformly in a square world. A fraction of the
targets are jittered and rescaled copies of random sources; the rest are
independent quadrilaterals. Targets are shuffled so matches carry no
positional signal in their ids.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
import numpy as np

from .geometry import Geometry, write_geometries
from .oracle import MatchOracle, MatchPredicateConfig, write_ground_truth


@dataclass(frozen=True)
class SynthConfig:
    n_source: int = 5_000
    n_target: int = 20_000
    match_fraction: float = 0.3
    jitter_sd: float = 0.1
    scale_sd: float = 0.1
    world_extent: float = 45.0
    size_median: float = 1.0
    size_sigma: float = 0.5
    seed: int = 7

    def __post_init__(self):
        if self.n_source < 1 or self.n_target < 1:
            raise ValueError("n_source and n_target must be >= 1")
        if not 0.0 <= self.match_fraction <= 1.0:
            raise ValueError("match_fraction must lie in [0, 1]")
        if self.world_extent <= 0 or self.size_median <= 0:
            raise ValueError("world_extent and size_median must be positive")
        if min(self.jitter_sd, self.scale_sd, self.size_sigma) < 0:
            raise ValueError("noise scales must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthDataset:
    sources: list[Geometry]
    targets: list[Geometry]
    ground_truth: np.ndarray  # (m, 2) src_id, tgt_id, sorted
    seeded_pairs: np.ndarray  # (q, 2) the planted copies, before the predicate

    def write(self, source, target, ground_truth) -> None:
        write_geometries(source, self.sources)
        write_geometries(target, self.targets)
        write_ground_truth(ground_truth, self.ground_truth)


def _quads(rng: np.random.Generator, n: int, cfg: SynthConfig) -> np.ndarray:
    """(n, 4, 2) convex quadrilaterals centred at uniform positions."""
    centre = rng.uniform(0.0, cfg.world_extent, size=(n, 1, 2))
    size = cfg.size_median * np.exp(rng.normal(0.0, cfg.size_sigma, size=(n, 1)))
    aspect = np.exp(rng.normal(0.0, 0.3, size=(n, 1)))
    rot = rng.uniform(0.0, np.pi, size=(n, 1))
    # one vertex per quadrant of the ellipse keeps the quad convex and non-degenerate
    phi = (np.arange(4) * 0.5 * np.pi)[None, :] + rng.uniform(0.2, 0.5 * np.pi - 0.2, size=(n, 4))
    ex = 0.5 * size * aspect * np.cos(phi)
    ey = 0.5 * size / aspect * np.sin(phi)
    c, s = np.cos(rot), np.sin(rot)
    pts = np.stack([c * ex - s * ey, s * ex + c * ey], axis=-1)
    return pts + centre


def _perturb(rng: np.random.Generator, quads: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    scale = np.exp(rng.normal(0.0, cfg.scale_sd, size=(quads.shape[0], 1, 1)))
    shift = rng.normal(0.0, cfg.jitter_sd, size=(quads.shape[0], 1, 2))
    centre = quads.mean(axis=1, keepdims=True)
    return centre + scale * (quads - centre) + shift


def generate(cfg: SynthConfig = SynthConfig(), predicate: MatchPredicateConfig = MatchPredicateConfig()) -> SynthDataset:
    """Deterministic dataset for ``cfg.seed``.

    Ground truth is the planted (source, copy) pairs that satisfy
    ``predicate``. Unplanted pairs may also overlap enough to pass the
    predicate; they stay negatives, as the predicate only confirms a match.
    """
    rng = np.random.default_rng(cfg.seed)
    src = _quads(rng, cfg.n_source, cfg)
    n_match = int(round(cfg.match_fraction * cfg.n_target))
    parent = rng.integers(0, cfg.n_source, size=n_match)
    matched = _perturb(rng, src[parent], cfg)
    free = _quads(rng, cfg.n_target - n_match, cfg)
    tgt = np.concatenate([matched, free])
    order = rng.permutation(cfg.n_target)
    tgt = tgt[order]
    new_id = np.empty(cfg.n_target, dtype=np.int64)
    new_id[order] = np.arange(cfg.n_target)

    S = [Geometry(i, q) for i, q in enumerate(src)]
    T = [Geometry(j, q) for j, q in enumerate(tgt)]
    seeded = np.column_stack([parent, new_id[:n_match]]).astype(np.int64)
    keep = MatchOracle(S, T, predicate).label(seeded[:, 0], seeded[:, 1])
    gt = seeded[keep]
    gt = gt[np.lexsort((gt[:, 1], gt[:, 0]))]
    return SynthDataset(S, T, gt, seeded)
