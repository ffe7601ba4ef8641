from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sama import grammar
from sama.autograd import ContractError
from sama.synthetic import (COLORS, EDIT_KINDS, SceneSpec, Shape, caption, make_edit_pair,
                            make_image_edit_pair, random_scene, render_scene, sample_edit_kind,
                            sample_rng)
from sama.tokenization import PatchSpec, patchify

seeds = st.integers(0, 2 ** 20)


def test_square_moves_by_velocity():
    spec = SceneSpec(16, 16, shapes=[Shape("square", (2.0, 2.0), (1.0, 0.0), 4.0, COLORS["red"])])
    clip = render_scene(spec, 4)
    lit = np.argwhere(clip.frames[3, :, :, 0] > 0)
    # pixel centers at +0.5 within half=2 of (5, 2): columns 3..6, rows 0..3
    assert lit[:, 1].min() == 3 and lit[:, 1].max() == 6
    assert lit[:, 0].min() == 0 and lit[:, 0].max() == 3
    centroid = lit.mean(axis=0) + 0.5
    np.testing.assert_allclose(centroid, [2.0, 5.0])


def test_empty_scene_is_background_and_overlap_uses_painter_order():
    bg = (0.2, 0.3, 0.4)
    clip = render_scene(SceneSpec(8, 8, bg), 3)
    np.testing.assert_array_equal(clip.frames, np.broadcast_to(np.float32(bg), (3, 8, 8, 3)))
    a = Shape("square", (4.0, 4.0), (0.0, 0.0), 4.0, COLORS["red"])
    b = Shape("square", (4.0, 4.0), (0.0, 0.0), 2.0, COLORS["blue"])
    top = render_scene(SceneSpec(8, 8, shapes=[a, b]), 1).frames[0, 4, 4]
    np.testing.assert_array_equal(top, COLORS["blue"])


def test_contract_errors():
    with pytest.raises(ContractError):
        render_scene(SceneSpec(), 0)
    with pytest.raises(ContractError):
        Shape("square", (1, 1), (0, 0), 1.5, COLORS["red"])
    with pytest.raises(ContractError):
        make_edit_pair(SceneSpec(), "recolor", np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(seeds, st.sampled_from(EDIT_KINDS), st.sampled_from([1, 4, 8]))
def test_pixels_outside_edit_region_are_identical(seed, kind, T):
    rng = np.random.default_rng(seed)
    pair = make_edit_pair(random_scene(rng, 16, 16), kind, rng, T=T)
    assert pair.source.shape == pair.target.shape
    outside = ~pair.edit_region
    assert np.abs(pair.source.frames - pair.target.frames)[outside].max(initial=0.0) == 0.0
    assert grammar.parses(pair.instruction)


def test_remove_only_shape_gives_background():
    spec = SceneSpec(16, 16, shapes=[Shape("circle", (8.0, 8.0), (1.0, 0.0), 6.0, COLORS["green"])])
    pair = make_edit_pair(spec, "remove", np.random.default_rng(0))
    assert pair.instruction == "remove the green circle"
    assert not pair.target.frames.any()


def test_style_is_an_involution_over_the_whole_frame():
    rng = np.random.default_rng(3)
    pair = make_edit_pair(random_scene(rng), "style", rng)
    assert pair.edit_region.all()
    np.testing.assert_array_equal(1.0 - pair.target.frames, pair.source.frames)


def test_image_pair_is_one_frame_and_one_temporal_patch_row():
    rng = np.random.default_rng(4)
    pair = make_image_edit_pair(random_scene(rng), "recolor", rng)
    assert pair.source.T == 1
    tokens = patchify(pair.source, PatchSpec())
    assert tokens.grid[0] == 1


def test_edit_kind_frequencies():
    rng = np.random.default_rng(5)
    weights = {"recolor": 4.0, "remove": 3.0, "add": 2.0, "style": 1.0}
    counts = Counter(sample_edit_kind(rng, weights) for _ in range(10_000))
    for k, w in weights.items():
        expected = 10_000 * w / 10.0
        assert abs(counts[k] - expected) <= 0.1 * expected


def test_generation_is_deterministic_per_sample_stream():
    def make(i):
        rng = sample_rng(7, i)
        pair = make_edit_pair(random_scene(rng), sample_edit_kind(rng), rng)
        return pair.source.frames.tobytes(), pair.target.frames.tobytes(), pair.instruction

    forward = [make(i) for i in range(5)]
    backward = [make(i) for i in reversed(range(5))][::-1]
    assert forward == backward


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_captions_parse(seed):
    spec = random_scene(np.random.default_rng(seed), max_shapes=3)
    assert grammar.parses(caption(spec))
