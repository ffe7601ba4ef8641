import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sama.autograd import ShapeError
from sama.filtering import (FilterThresholds, JudgeScores, ValidationError, filter_sample,
                            judge_and_filter, programmatic_judge)
from sama.metrics import (AXIS_MAPPING, EvalReport, SampleMetrics, edit_region_error,
                          motion_consistency, preservation_error, restoration_error)
from sama.synthetic import Shape, SceneSpec, VideoClip, make_edit_pair, random_scene, render_scene


def clip(seed=0, shape=(8, 32, 32, 3)):
    return np.random.default_rng(seed).random(shape)


def moving_square(T=8):
    spec = SceneSpec(32, 32, shapes=[Shape("square", (4.0, 10.0), (2.0, 0.0), 6, (1.0, 0.0, 0.0))])
    return render_scene(spec, T).frames


# ------------------------------------------------------------------ metrics


def test_edit_region_error_examples():
    a = clip()
    region = np.zeros(a.shape[:3], bool)
    region[:, 4:8, 4:8] = True
    assert edit_region_error(a, a, region) == 0.0
    b = a.copy()
    b[region] += 0.5
    assert edit_region_error(b, a, region) == pytest.approx(0.5)
    assert edit_region_error(b, a, np.zeros_like(region)) == 0.0
    with pytest.raises(ShapeError):
        edit_region_error(a, a[:4], region)


def test_preservation_error_examples():
    a = clip()
    region = np.zeros(a.shape[:3], bool)
    region[:, :4] = True
    assert preservation_error(a, a, region) == 0.0
    assert preservation_error(clip(1), a, np.ones_like(region)) == 0.0
    b = a.copy()
    b[0, 20, 20, 0] += 1.0
    outside = int((~region).sum()) * 3
    assert preservation_error(b, a, region) == pytest.approx(1.0 / outside, rel=1e-9)


def test_motion_consistency_examples():
    src = moving_square()
    assert motion_consistency(src, src) == pytest.approx(1.0)
    static = np.repeat(src[:1], 8, axis=0)
    assert motion_consistency(static, static) == 1.0
    assert motion_consistency(static, src) == 0.0
    # frozen except for a late jump: essentially uncorrelated with the motion
    frozen = static.copy()
    frozen[-1] = src[-1]
    assert abs(motion_consistency(frozen, src)) < 0.2
    with pytest.raises(ShapeError):
        motion_consistency(src[:1], src[:1])


def test_restoration_error_examples():
    binary = (clip(2) > 0.5).astype(np.float64)
    assert restoration_error(binary, binary) == 0.0
    assert restoration_error(np.full_like(binary, 0.5), binary) == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_are_symmetric_finite_and_perfect_on_identity(seed):
    a, b = clip(seed, (2, 4, 4, 3)), clip(seed + 1, (2, 4, 4, 3))
    region = np.random.default_rng(seed).random((2, 4, 4)) < 0.5
    for f in (lambda x, y: edit_region_error(x, y, region), lambda x, y: preservation_error(x, y, region),
              motion_consistency, restoration_error):
        assert np.isfinite(f(a, b))
        assert f(a, b) == pytest.approx(f(b, a))
    assert restoration_error(a, a) == 0.0 and motion_consistency(a, a) == pytest.approx(1.0)
    assert edit_region_error(a, b, region) >= 0 and preservation_error(a, b, region) >= 0


def test_report_means_and_files(tmp_path):
    rep = EvalReport([SampleMetrics("a", 0.1, 0.2, None, None), SampleMetrics("b", 0.3, None, 0.5, 0.4)])
    assert rep.means() == pytest.approx({"edit_region_error": 0.2, "preservation_error": 0.2,
                                         "motion_consistency": 0.5, "restoration_error": 0.4})
    rep.write(tmp_path / "r.json", tmp_path / "r.csv")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["header"]["axis_mapping"] == AXIS_MAPPING
    assert [s["sample_id"] for s in doc["samples"]] == ["a", "b"]
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1] == "a,0.1,0.2,,"


# ------------------------------------------------------------------ filtering


@pytest.mark.parametrize("scores, kind, keep", [
    ((9, 9, 9, None), "image", True),
    ((8.9, 9, 9, None), "image", False),
    ((9, 8.9, 9, None), "image", False),
    ((9, 9, 8.9, None), "image", False),
    ((8, 9, 8, 8), "video", True),
    ((8, 8.9, 8, 8), "video", False),
    ((7.9, 9, 8, 8), "video", False),
    ((8, 9, 8, 7.9), "video", False),
])
def test_threshold_table(scores, kind, keep):
    assert filter_sample(JudgeScores(*scores), kind) is keep


def test_filter_rejects_bad_inputs():
    with pytest.raises(ValidationError, match="motion_consistency"):
        filter_sample(JudgeScores(10, 10, 10), "video")
    with pytest.raises(ValidationError):
        filter_sample(JudgeScores(10, 10, 10), "audio")
    with pytest.raises(ValidationError):
        FilterThresholds(image={"instruction_following": 11.0})


@pytest.mark.parametrize("kind, T", [("recolor", 8), ("add", 8), ("remove", 1), ("style", 1)])
def test_perfect_pair_scores_ten_and_is_kept(kind, T):
    rng = np.random.default_rng(3)
    pair = make_edit_pair(random_scene(rng), kind, rng, T=T)
    scores, keep = judge_and_filter(pair)
    assert scores.content_preservation == 10.0 and scores.instruction_following == 10.0
    assert scores.visual_quality == 10.0
    assert (scores.motion_consistency is None) == (T == 1)
    assert keep


def test_judge_turns_are_deterministic_and_corruption_is_dropped():
    rng = np.random.default_rng(4)
    pair = make_edit_pair(random_scene(rng), "recolor", rng)
    noisy = VideoClip(np.clip(pair.target.frames + rng.normal(0, 0.15, pair.target.shape), 0, 1))
    a, b = programmatic_judge(noisy, pair), programmatic_judge(noisy, pair)
    assert a == b
    assert programmatic_judge(noisy, pair, turns=1) != a
    _, keep = judge_and_filter(pair, noisy)
    assert not keep
