import dataclasses
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from recall_forge.geometry import Geometry
from recall_forge.pipeline import PipelineConfig
from recall_forge.synth import SynthConfig, generate

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
DESK_INI = ROOT / "configs" / "desk.ini"


def square(x0, y0, w=1.0, h=None, gid=0):
    h = w if h is None else h
    return Geometry(gid, [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)])


def random_rects(rng, n, extent=100.0, max_size=5.0, start_id=0):
    xy = rng.uniform(0, extent, size=(n, 2))
    wh = rng.uniform(0.0, max_size, size=(n, 2))
    return [square(x, y, w, h, start_id + i) for i, ((x, y), (w, h)) in enumerate(zip(xy, wh))]


def _write_dataset(root: Path, synth: SynthConfig, **cfg_kw) -> PipelineConfig:
    data = generate(synth)
    paths = {k: root / f"{k}.csv" for k in ("source", "target", "ground_truth")}
    data.write(paths["source"], paths["target"], paths["ground_truth"])
    return PipelineConfig(**paths, output_dir=root / "out", synth=synth, **cfg_kw)


SMALL_SYNTH = SynthConfig(n_source=600, n_target=2400, world_extent=45.0 * np.sqrt(600 / 5000), seed=11)
SMALL_RUN = dict(train_sample=20_000, train_labels=200, calib_sample=18_000, bootstrap=50)


@pytest.fixture(scope="session")
def small_config(tmp_path_factory) -> PipelineConfig:
    """Roughly 24k-candidate dataset for fast end-to-end checks."""
    return _write_dataset(tmp_path_factory.mktemp("small"), SMALL_SYNTH, **SMALL_RUN)


@pytest.fixture
def small_cfg(small_config, tmp_path) -> PipelineConfig:
    """``small_config`` with a private output directory."""
    return dataclasses.replace(small_config, output_dir=tmp_path / "out")


@pytest.fixture(scope="session")
def desk_config(tmp_path_factory) -> PipelineConfig:
    """The desk configuration of configs/desk.ini, with data generated into a temp dir."""
    base = PipelineConfig.from_ini(DESK_INI)
    root = tmp_path_factory.mktemp("desk")
    data = generate(base.synth, base.predicate)
    paths = {k: root / f"{k}.csv" for k in ("source", "target", "ground_truth")}
    data.write(paths["source"], paths["target"], paths["ground_truth"])
    return dataclasses.replace(base, **paths, output_dir=root / "out")


ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
