"""Shared fixtures: sys.path setup, hypothesis profile, small synthetic sequences."""

from pathlib import Path
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings as hypothesis_settings

BACKEND_DIR = Path(__file__).resolve().parents[1]
if str(BACKEND_DIR) not in sys.path:
    sys.path.insert(0, str(BACKEND_DIR))

from app.models.schemas import Frame, SemanticMap, SynthObject, SynthSpec  # noqa: E402
from app.services.frame_io import discover_sequences, load_sequence  # noqa: E402
from app.services.synth import _object_origins, render_frame, synth_suite  # noqa: E402

hypothesis_settings.register_profile(
    "fast",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture],
)
hypothesis_settings.load_profile("fast")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end checks on full-size synthetic data")


@pytest.fixture
def make_frame():
    def build(data, index=1):
        return Frame(data=np.asarray(data, dtype=np.uint8), index=index)

    return build


@pytest.fixture
def small_spec():
    return SynthSpec(
        width=48,
        height=40,
        num_frames=24,
        objects=[
            SynthObject(width=10, height=8, vx=2, vy=1, color=(210, 40, 40), x0=4, y0=6),
            SynthObject(width=6, height=12, vx=-1, vy=2, color=(30, 50, 220), x0=30, y0=20),
        ],
        noise_sigma=4.0,
        semantic_fidelity=0.9,
    )


@pytest.fixture
def render_sequence():
    """In-memory frames + semantic maps + ground truth for a SynthSpec and seed."""

    def build(spec, seed):
        rng = np.random.Generator(np.random.PCG64(seed))
        origins = _object_origins(spec, rng)
        frames, maps, gts = [], {}, {}
        for t in range(1, spec.num_frames + 1):
            frame, gt, semantic = render_frame(spec, origins, t, rng)
            frames.append(frame)
            maps[t] = semantic
            gts[t] = gt
        return frames, maps, gts

    return build


@pytest.fixture
def uniform_map():
    def build(shape, value, index=1):
        return SemanticMap(values=np.full(shape, value, dtype=np.uint8), index=index)

    return build


@pytest.fixture
def synthetic_tree(tmp_path, small_spec):
    """Two short synthetic videos on disk under <tmp>/data/synthetic/."""
    root = tmp_path / "data"
    synth_suite(small_spec, root / "synthetic", videos=2, seed=11)
    return root


@pytest.fixture
def loaded_suite(synthetic_tree):
    return [load_sequence(descriptor) for descriptor in discover_sequences(synthetic_tree)]
