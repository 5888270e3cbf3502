"""Tests for the synthetic sequence generator."""

from pathlib import Path
import sys

import numpy as np

BACKEND_DIR = Path(__file__).resolve().parents[1]
if str(BACKEND_DIR) not in sys.path:
    sys.path.insert(0, str(BACKEND_DIR))

from app.models.schemas import SynthObject, SynthSpec
from app.services.frame_io import discover_cdnet_sequence, load_ground_truth, load_semantic_map
from app.services.synth import background, derive_seeds, random_objects, synth, synth_suite


def tiny_spec(**overrides):
    values = dict(
        width=32,
        height=24,
        num_frames=6,
        objects=[SynthObject(width=8, height=6, vx=5, vy=3, color=(250, 10, 10))],
        noise_sigma=0.0,
        semantic_fidelity=1.0,
    )
    values.update(overrides)
    return SynthSpec(**values)


def test_perfect_semantics_equal_ground_truth(tmp_path):
    root = synth(tiny_spec(), tmp_path / "seq", seed=1)

    for t in range(1, 7):
        gt = load_ground_truth(root / "groundtruth" / f"gt{t:06d}.pgm")
        semantic = load_semantic_map(root / "semantic" / f"sem{t:06d}.pgm")
        np.testing.assert_array_equal(semantic.values, gt.labels)


def test_object_stays_fully_in_frame(tmp_path):
    root = synth(tiny_spec(num_frames=20), tmp_path / "seq", seed=2)

    for t in range(1, 21):
        gt = load_ground_truth(root / "groundtruth" / f"gt{t:06d}.pgm")
        assert np.count_nonzero(gt.labels == 255) == 8 * 6


def test_no_objects_means_empty_ground_truth(tmp_path):
    root = synth(tiny_spec(objects=[]), tmp_path / "seq", seed=3)

    gt = load_ground_truth(root / "groundtruth" / "gt000004.pgm")
    assert (gt.labels == 0).all()


def test_same_seed_gives_identical_files(tmp_path):
    spec = tiny_spec(noise_sigma=6.0, semantic_fidelity=0.8)
    a = synth(spec, tmp_path / "a", seed=42)
    b = synth(spec, tmp_path / "b", seed=42)
    c = synth(spec, tmp_path / "c", seed=43)

    for relative in ("input/in000003.ppm", "semantic/sem000003.pgm", "groundtruth/gt000003.pgm"):
        assert (a / relative).read_bytes() == (b / relative).read_bytes()
    assert (a / "input/in000003.ppm").read_bytes() != (c / "input/in000003.ppm").read_bytes()


def test_gradient_background_drifts():
    spec = tiny_spec(background="gradient", drift_per_frame=2.0)

    first, later = background(spec, 1), background(spec, 5)

    assert first.shape == (24, 32, 3)
    assert not np.allclose(first, later)
    np.testing.assert_allclose(background(tiny_spec(), 1), background(tiny_spec(), 9))


def test_generated_sequence_is_discoverable(tmp_path):
    root = synth(tiny_spec(), tmp_path / "synthetic" / "seq", seed=0)

    descriptor = discover_cdnet_sequence(root)

    assert descriptor.num_frames == 6
    assert descriptor.temporal_roi == (1, 6)
    assert descriptor.category == "synthetic"


def test_suite_uses_derived_seeds(tmp_path):
    paths = synth_suite(tiny_spec(noise_sigma=5.0), tmp_path, videos=3, seed=7)

    assert [p.name for p in paths] == ["seq001", "seq002", "seq003"]
    assert derive_seeds(7, 3) == derive_seeds(7, 3)
    assert len(set(derive_seeds(7, 3))) == 3
    first = (paths[0] / "input" / "in000001.ppm").read_bytes()
    second = (paths[1] / "input" / "in000001.ppm").read_bytes()
    assert first != second


def test_random_objects_are_seeded_and_always_move():
    objects = random_objects(6, (5, 4), seed=3, max_speed=1)

    assert objects == random_objects(6, (5, 4), seed=3, max_speed=1)
    assert all((o.width, o.height) == (5, 4) for o in objects)
    assert all(abs(o.vx) <= 1 and abs(o.vy) <= 1 and (o.vx, o.vy) != (0, 0) for o in objects)
    assert all(o.x0 is None and o.y0 is None for o in objects)
