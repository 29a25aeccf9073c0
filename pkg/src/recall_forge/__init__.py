"""Recall-calibrated geospatial entity matching."""

from .calibration import CalibrationSample, EnsembleResult, RuleKind, ThresholdEstimate
from .geom_filter import CsrCandidates, GridSpec, brute_force_candidates, enumerate_candidates, mean_cell_extents
from .geometry import Geometry, Mbr, compute_mbr
from .oracle import MatchPredicateConfig, is_match
from .pipeline import CalibratorMode, PipelineConfig, run_experiment, run_pipeline
from .synth import SynthConfig, generate

__all__ = [
    "CalibrationSample",
    "CalibratorMode",
    "CsrCandidates",
    "EnsembleResult",
    "Geometry",
    "GridSpec",
    "MatchPredicateConfig",
    "Mbr",
    "PipelineConfig",
    "RuleKind",
    "SynthConfig",
    "ThresholdEstimate",
    "brute_force_candidates",
    "compute_mbr",
    "enumerate_candidates",
    "generate",
    "is_match",
    "mean_cell_extents",
    "run_experiment",
    "run_pipeline",
]
