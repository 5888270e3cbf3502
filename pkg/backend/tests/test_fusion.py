"""Tests for the decision tables and the per-frame fusion pipeline."""

from pathlib import Path
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

BACKEND_DIR = Path(__file__).resolve().parents[1]
if str(BACKEND_DIR) not in sys.path:
    sys.path.insert(0, str(BACKEND_DIR))

from app.models.schemas import ChangeVerdict, FusionMode, Label, PipelineConfig, SemanticDecision
from app.services.fusion import (
    RTSBS_TABLE,
    SBS_TABLE,
    RtSbsPipeline,
    combine_rtsbs,
    combine_rtsbs_map,
    combine_sbs,
    combine_sbs_map,
    config_for_mode,
    effective_change_params,
    process_frame,
    resolve_mode,
)
from app.services.semantic import FrameSubsample, Never
from app.services.vibe import init_model, median_post_filter
from app.utils.errors import ConfigError, ScheduleError

BG, FG = Label.BG, Label.FG
S_BG, S_FG, S_DK = SemanticDecision.BG, SemanticDecision.FG, SemanticDecision.DONT_KNOW
NC, CH, DC = ChangeVerdict.NO_CHANGE, ChangeVerdict.CHANGE, ChangeVerdict.DONT_CARE
SEEDS = range(10)


def base_config(**flat):
    values = {"tau_bg": 0.3, "tau_fg": 0.3, "tau_star_bg": 40, "tau_star_fg": 40, "seed": 3, "x": 1}
    values.update(flat)
    return PipelineConfig.from_flat(values)


def run_outputs(config, frames, maps):
    return RtSbsPipeline(config).run(frames, maps)


@pytest.mark.parametrize(
    "b, s, expected",
    [
        (BG, S_BG, BG),
        (BG, S_FG, FG),
        (BG, S_DK, BG),
        (FG, S_BG, BG),
        (FG, S_FG, FG),
        (FG, S_DK, FG),
    ],
)
def test_sbs_table(b, s, expected):
    assert combine_sbs(b, s) == expected
    assert SBS_TABLE[b, s] == expected


@pytest.mark.parametrize(
    "b, s, c, expected",
    [
        (BG, S_DK, NC, BG), (BG, S_DK, CH, BG), (BG, S_DK, DC, BG),
        (BG, S_BG, NC, BG), (BG, S_BG, CH, BG), (BG, S_BG, DC, BG),
        (BG, S_FG, NC, FG), (BG, S_FG, CH, BG), (BG, S_FG, DC, BG),
        (FG, S_DK, NC, FG), (FG, S_DK, CH, FG), (FG, S_DK, DC, FG),
        (FG, S_FG, NC, FG), (FG, S_FG, CH, FG), (FG, S_FG, DC, FG),
        (FG, S_BG, NC, BG), (FG, S_BG, CH, FG), (FG, S_BG, DC, FG),
    ],
)
def test_rtsbs_table(b, s, c, expected):
    assert combine_rtsbs(b, s, c) == expected
    assert RTSBS_TABLE[b, s, c] == expected


def test_dont_know_and_agreement_ignore_change_verdict():
    for b in Label:
        outputs = {combine_rtsbs(b, S_DK, c) for c in ChangeVerdict}
        assert outputs == {b}
        agreeing = SemanticDecision(int(b))
        assert {combine_rtsbs(b, agreeing, c) for c in ChangeVerdict} == {b}


def test_unchanged_pixels_reduce_to_sbs():
    for b in Label:
        for s in SemanticDecision:
            assert combine_rtsbs(b, s, NC) == combine_sbs(b, s)


def test_table_lookups_on_maps():
    b = np.array([[BG, FG], [FG, BG]], dtype=np.uint8)
    s = np.array([[S_FG, S_DK], [S_BG, S_BG]], dtype=np.uint8)
    c = np.array([[CH, NC], [NC, DC]], dtype=np.uint8)

    assert combine_sbs_map(b, s).tolist() == [[FG, FG], [BG, BG]]
    assert combine_rtsbs_map(b, s, c).tolist() == [[BG, FG], [BG, BG]]


@given(
    arrays(np.uint8, (4, 5), elements=st.integers(0, 1)),
    arrays(np.uint8, (4, 5), elements=st.integers(0, 2)),
    arrays(np.uint8, (4, 5), elements=st.integers(0, 2)),
)
def test_map_fusion_matches_scalar_tables(b, s, c):
    fused = combine_rtsbs_map(b, s, c)
    plain = combine_sbs_map(b, s)

    for (y, x), value in np.ndenumerate(fused):
        assert value == combine_rtsbs(b[y, x], s[y, x], c[y, x])
        assert plain[y, x] == combine_sbs(b[y, x], s[y, x])


@pytest.mark.parametrize(
    "name, mode, feedback",
    [
        ("vibe", FusionMode.PURE_BGS, None),
        ("sbs", FusionMode.SBS, None),
        ("rtsbs", FusionMode.RT_SBS, False),
        ("RTSBS-FB", FusionMode.RT_SBS, True),
        ("never", FusionMode.NEVER_REPEAT, None),
        ("always", FusionMode.ALWAYS_REPEAT, None),
        ("HeuristicNeverRepeat", FusionMode.NEVER_REPEAT, None),
    ],
)
def test_resolve_mode(name, mode, feedback):
    assert resolve_mode(name) == (mode, feedback)


def test_resolve_mode_rejects_unknown_names():
    with pytest.raises(ConfigError):
        resolve_mode("deep-magic")


def test_config_for_mode_forces_feedback_only_for_rtsbs_aliases():
    base = base_config(feedback=True)

    assert config_for_mode(base, "rtsbs").feedback is False
    assert config_for_mode(base, "sbs").feedback is True
    assert config_for_mode(base_config(), "rtsbs-fb").feedback is True


def test_heuristics_are_forced_thresholds():
    never = effective_change_params(config_for_mode(base_config(), "never"))
    always = effective_change_params(config_for_mode(base_config(), "always"))
    plain = effective_change_params(config_for_mode(base_config(), "rtsbs"))

    assert (never.tau_star_bg, never.tau_star_fg) == (-1, -1)
    assert (always.tau_star_bg, always.tau_star_fg) == (765, 765)
    assert (plain.tau_star_bg, plain.tau_star_fg) == (40, 40)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("feedback", [False, True])
def test_rtsbs_with_semantics_every_frame_matches_sbs(small_spec, render_sequence, seed, feedback):
    frames, maps, _ = render_sequence(small_spec, seed=seed)

    sbs = run_outputs(config_for_mode(base_config(x=1, feedback=feedback, seed=seed), "sbs"), frames, maps)
    rtsbs = run_outputs(base_config(x=1, feedback=feedback, mode="RtSbs", seed=seed), frames, maps)

    for a, b in zip(sbs, rtsbs):
        np.testing.assert_array_equal(a.output_mask, b.output_mask)
        np.testing.assert_array_equal(a.bgs_mask, b.bgs_mask)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", ["vibe", "rtsbs"])
def test_without_semantics_pipeline_is_plain_vibe(small_spec, render_sequence, seed, name):
    frames, _, _ = render_sequence(small_spec, seed=seed)
    config = config_for_mode(base_config(seed=seed + 100), name)
    pipeline = RtSbsPipeline(config, schedule=Never())
    reference = init_model(frames[0], config.vibe, seed=seed + 100)

    for frame in frames:
        result = pipeline.process_frame(frame)
        np.testing.assert_array_equal(result.output_mask, reference.step(frame))
        assert (result.semantic_mask == S_DK).all()


@pytest.mark.parametrize("seed", SEEDS)
def test_never_repeat_matches_sbs_under_same_schedule(small_spec, render_sequence, seed):
    frames, maps, _ = render_sequence(small_spec, seed=seed)

    sbs = run_outputs(config_for_mode(base_config(x=5, seed=seed), "sbs"), frames, maps)
    never = run_outputs(config_for_mode(base_config(x=5, seed=seed), "never"), frames, maps)

    for a, b in zip(sbs, never):
        np.testing.assert_array_equal(a.output_mask, b.output_mask)


@pytest.mark.parametrize("seed", SEEDS)
def test_always_repeat_reuses_last_semantic_decision(small_spec, render_sequence, seed):
    frames, maps, _ = render_sequence(small_spec, seed=seed)

    results = run_outputs(config_for_mode(base_config(x=4, seed=seed), "always"), frames, maps)

    last_fresh = None
    for frame, result in zip(frames, results):
        if (frame.index - 1) % 4 == 0:
            last_fresh = result.semantic_mask
        np.testing.assert_array_equal(result.semantic_mask, last_fresh)
        np.testing.assert_array_equal(result.output_mask, combine_sbs_map(result.bgs_mask, result.semantic_mask))
        assert not (result.change_mask == CH).any()


def test_sbs_reports_no_change_information(small_spec, render_sequence):
    frames, maps, _ = render_sequence(small_spec, seed=1)

    for result in run_outputs(config_for_mode(base_config(x=3), "sbs"), frames, maps):
        assert (result.change_mask == DC).all()


def test_rtsbs_changes_only_where_cache_is_stale(small_spec, render_sequence):
    frames, maps, _ = render_sequence(small_spec, seed=2)

    results = run_outputs(base_config(x=3), frames, maps)

    for frame, result in zip(frames, results):
        if (frame.index - 1) % 3 == 0:
            assert not (result.change_mask == CH).any()
        assert ((result.change_mask == DC) == (result.semantic_mask == S_DK)).all()


def test_missing_semantic_map_raises_schedule_error(make_frame):
    pipeline = RtSbsPipeline(base_config(x=1))

    with pytest.raises(ScheduleError):
        process_frame(pipeline, make_frame(np.zeros((4, 4, 3))))


def test_unexpected_semantic_map_raises_schedule_error(make_frame, uniform_map):
    pipeline = RtSbsPipeline(base_config(x=5))
    frame = make_frame(np.zeros((4, 4, 3)))
    pipeline.process_frame(frame, uniform_map((4, 4), 0), t=1)

    with pytest.raises(ScheduleError):
        pipeline.process_frame(make_frame(np.zeros((4, 4, 3)), index=2), uniform_map((4, 4), 0, index=2))


def test_run_treats_missing_maps_as_unavailable(small_spec, render_sequence):
    frames, maps, _ = render_sequence(small_spec, seed=4)
    partial = {t: semantic for t, semantic in maps.items() if t != 2}
    pipeline = RtSbsPipeline(base_config(x=1))

    results = pipeline.run(frames, partial)

    assert len(results) == len(frames)
    assert pipeline.frames_processed == len(frames)


def test_explicit_availability_override(make_frame, uniform_map):
    pipeline = RtSbsPipeline(config_for_mode(base_config(), "sbs"), schedule=FrameSubsample(1))
    available = np.array([[True, False], [False, False]])

    result = pipeline.process_frame(make_frame(np.zeros((2, 2, 3))), uniform_map((2, 2), 0), availability=available)

    assert result.semantic_mask[0, 0] != S_DK
    assert (result.semantic_mask.ravel()[1:] == S_DK).all()


def test_post_filter_only_touches_output(small_spec, render_sequence):
    frames, maps, _ = render_sequence(small_spec, seed=3)

    plain = run_outputs(base_config(x=2), frames, maps)
    filtered = run_outputs(base_config(x=2, post_filter=True), frames, maps)

    for a, b in zip(plain, filtered):
        np.testing.assert_array_equal(a.bgs_mask, b.bgs_mask)
        np.testing.assert_array_equal(median_post_filter(a.output_mask), b.output_mask)
