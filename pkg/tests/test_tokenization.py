from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sama import autograd as ag
from sama.autograd import ContractError, ShapeError, Tensor
from sama.synthetic import VideoClip
from sama.tokenization import (ConfigurationError, FrozenEncoder, LatentTokens, PatchSpec,
                               encode_semantic, init_projection, latent_positions, patchify,
                               pool_semantic, project_semantic, region_grid,
                               select_anchor_frames, semantic_targets, unpatchify)

from fdcheck import max_rel_error


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(1, 8, 8), (2, 8, 4), (4, 16, 8), (8, 32, 32)]), st.integers(0, 1000))
def test_patchify_roundtrip_bit_exact(dims, seed):
    T, H, W = dims
    clip = VideoClip(np.random.default_rng(seed).random((T, H, W, 3)))
    back = unpatchify(patchify(clip, PatchSpec()), PatchSpec())
    assert back.frames.tobytes() == clip.frames.tobytes()


def test_patchify_layout():
    tok = patchify(VideoClip(np.zeros((8, 32, 32, 3))), PatchSpec())
    assert tok.grid == (4, 8, 8) and tok.length == 256 and tok.tokens.shape[1] == 96
    const = patchify(VideoClip(np.full((4, 8, 8, 3), 0.25)), PatchSpec()).tokens
    assert np.all(const == const[0])
    # raster order: token 1 is the patch one step along w
    clip = VideoClip(np.random.default_rng(0).random((2, 4, 8, 3)))
    z = patchify(clip, PatchSpec()).tokens
    np.testing.assert_array_equal(z[1].reshape(2, 4, 4, 3), clip.frames[:, :, 4:8])
    np.testing.assert_array_equal(latent_positions((1, 1, 2)), [[0, 0, 0], [0, 0, 1]])


def test_unpatchify_zero_and_single_token():
    spec = PatchSpec()
    assert not unpatchify(LatentTokens(np.zeros((4, 96)), (1, 2, 2), 2), spec).frames.any()
    whole = PatchSpec(p_t=2, p_h=4, p_w=4)
    clip = VideoClip(np.random.default_rng(1).random((2, 4, 4, 3)))
    z = patchify(clip, whole)
    assert z.length == 1
    np.testing.assert_array_equal(z.tokens[0], clip.frames.reshape(-1))


def test_patchify_shape_errors():
    with pytest.raises(ShapeError):
        patchify(VideoClip(np.zeros((3, 8, 8, 3))), PatchSpec())
    with pytest.raises(ShapeError):
        unpatchify(LatentTokens(np.zeros((3, 96)), (1, 2, 2), 2), PatchSpec())


def test_anchor_sampling():
    assert select_anchor_frames(8, 8, np.random.default_rng(0)) == list(range(8))
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = select_anchor_frames(8, 2, rng)
        assert 0 <= a < 4 <= b < 8
    counts = Counter(select_anchor_frames(8, 1, rng)[0] for _ in range(100_000))
    for k in range(8):
        assert abs(counts[k] / 100_000 - 1 / 8) <= 0.02
    with pytest.raises(ContractError):
        select_anchor_frames(4, 5, rng)


def test_encoder_is_frozen_deterministic_and_local():
    enc, again = FrozenEncoder(3), FrozenEncoder(3)
    assert enc.checksum() == again.checksum()
    assert enc.checksum() != FrozenEncoder(4).checksum()
    with pytest.raises(ValueError):
        enc.weight[0, 0] = 1.0
    rng = np.random.default_rng(2)
    frame = rng.random((8, 8, 3)).astype(np.float32)
    f0 = encode_semantic(frame, enc)
    assert f0.shape == (4, 4, 32)
    np.testing.assert_array_equal(f0, encode_semantic(frame.copy(), enc))
    changed = frame.copy()
    changed[0:2, 2:4] = 0.0  # patch (0, 1)
    diff = np.abs(encode_semantic(changed, enc) - f0).sum(axis=-1) > 0
    assert diff[0, 1] and diff.sum() == 1
    swapped = frame.copy()
    swapped[0:2, 0:2], swapped[2:4, 2:4] = frame[2:4, 2:4], frame[0:2, 0:2]
    f1 = encode_semantic(swapped, enc)
    np.testing.assert_allclose(f1[0, 0], f0[1, 1], rtol=1e-6)
    np.testing.assert_allclose(f1[1, 1], f0[0, 0], rtol=1e-6)
    with pytest.raises(ShapeError):
        encode_semantic(np.zeros((7, 8, 3)), enc)


def test_pooling():
    assert region_grid(16, 16, 64) == (8, 8)
    const = np.full((16, 16, 32), 0.7, dtype=np.float32)
    tok = pool_semantic(const, 64)
    assert tok.local.shape == (64, 32) and tok.global_.shape == (1, 32)
    np.testing.assert_allclose(tok.stacked(), 0.7, rtol=1e-5)
    feats = np.random.default_rng(3).random((4, 4, 5)).astype(np.float32)
    ident = pool_semantic(feats, 16)
    np.testing.assert_array_equal(ident.local, feats.reshape(16, 5))
    grid = np.random.default_rng(4).random((16, 16, 2))
    tok = pool_semantic(grid, 64)
    np.testing.assert_allclose(tok.local[9], grid[2:4, 2:4].mean(axis=(0, 1)), rtol=1e-6)
    with pytest.raises(ConfigurationError):
        region_grid(6, 6, 7)


def test_semantic_targets_count():
    clip = VideoClip(np.random.default_rng(5).random((8, 32, 32, 3)))
    tok = semantic_targets(clip, FrozenEncoder(), 64, 2, np.random.default_rng(0))
    assert tok.count == 2 * 64 + 2
    assert tok.anchor_indices == sorted(tok.anchor_indices)


def test_projection():
    rng = np.random.default_rng(6)
    params = init_projection(rng, 32, 96)
    x = Tensor(rng.standard_normal((65, 32)))
    assert project_semantic(x, params).shape == (65, 96)
    zero = {k: Tensor(np.zeros(v.shape)) for k, v in params.items()}
    assert not project_semantic(x, zero).data.any()
    with pytest.raises(ShapeError):
        project_semantic(np.zeros((3, 31)), params)
    small = init_projection(rng, 4, 6)
    xs = Tensor(rng.standard_normal((3, 4)))
    R = Tensor(rng.standard_normal((3, 6)))
    fn = lambda: ag.sum_(project_semantic(xs, small) * R)  # noqa: E731
    assert max_rel_error(fn, list(small.values())) < 1e-3
