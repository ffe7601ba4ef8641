"""Lossless patch tokenizer and the semantic-anchor feature path.

The patch tokenizer stands in for a VAE: it is an exact, parameter-free
reshaping, so reconstruction error never confounds the mechanisms under test.
Semantic features come from a frozen, seeded per-patch encoder, are pooled to
``M`` local tokens plus one global token per anchor frame, and are projected
into the latent token width by a trainable two-layer MLP.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ContractError, ShapeError, Tensor
from .synthetic import VideoClip


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PatchSpec:
    p_t: int = 2
    p_h: int = 4
    p_w: int = 4
    channels: int = 3

    @property
    def dim(self) -> int:
        return self.p_t * self.p_h * self.p_w * self.channels


@dataclass
class LatentTokens:
    tokens: np.ndarray  # (L, D)
    grid: tuple[int, int, int]
    frames: int  # clip length before temporal padding

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


def patchify(clip: VideoClip, spec: PatchSpec) -> LatentTokens:
    """Flatten each ``p_t x p_h x p_w x C`` block to a row, raster order (t, h, w).

    A single-frame clip (an image) is repeated to ``p_t`` frames so images and
    videos share one token width.
    """
    x = clip.frames
    T, H, W, C = x.shape
    if C != spec.channels:
        raise ShapeError(f"clip has {C} channels, patch spec expects {spec.channels}")
    if T == 1 and spec.p_t > 1:
        x = np.repeat(x, spec.p_t, axis=0)
    Tp = x.shape[0]
    if Tp % spec.p_t or H % spec.p_h or W % spec.p_w:
        raise ShapeError(
            f"clip dims {(T, H, W)} not divisible by patch {(spec.p_t, spec.p_h, spec.p_w)}")
    gt, gh, gw = Tp // spec.p_t, H // spec.p_h, W // spec.p_w
    blocks = x.reshape(gt, spec.p_t, gh, spec.p_h, gw, spec.p_w, C)
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5, 6)
    return LatentTokens(np.ascontiguousarray(blocks.reshape(gt * gh * gw, spec.dim)),
                        (gt, gh, gw), T)


def unpatchify(tokens: LatentTokens, spec: PatchSpec) -> VideoClip:
    gt, gh, gw = tokens.grid
    z = np.asarray(tokens.tokens, dtype=np.float32)
    if z.shape != (gt * gh * gw, spec.dim):
        raise ShapeError(f"token matrix {z.shape} does not match grid {tokens.grid} x {spec.dim}")
    blocks = z.reshape(gt, gh, gw, spec.p_t, spec.p_h, spec.p_w, spec.channels)
    x = blocks.transpose(0, 3, 1, 4, 2, 5, 6).reshape(
        gt * spec.p_t, gh * spec.p_h, gw * spec.p_w, spec.channels)
    return VideoClip(np.ascontiguousarray(x[:tokens.frames]))


def latent_positions(grid: tuple[int, int, int]) -> np.ndarray:
    gt, gh, gw = grid
    t, h, w = np.meshgrid(np.arange(gt), np.arange(gh), np.arange(gw), indexing="ij")
    return np.stack([t.ravel(), h.ravel(), w.ravel()], axis=1)


# ------------------------------------------------------------------ anchors


def select_anchor_frames(T: int, N: int, rng: np.random.Generator) -> list[int]:
    """One uniform index from each of ``N`` equal strata of ``[0, T)``."""
    if not 1 <= N <= T:
        raise ContractError(f"need 1 <= N <= T, got N={N}, T={T}")
    bounds = [(k * T) // N for k in range(N + 1)]
    return [int(rng.integers(bounds[k], bounds[k + 1])) for k in range(N)]


# ------------------------------------------------------------------ frozen encoder


class FrozenEncoder:
    """Seeded per-patch linear projection, gelu, then layer norm. Never trained."""

    def __init__(self, seed: int = 0, patch: int = 2, channels: int = 3, dim: int = 32):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E11]))
        fan_in = patch * patch * channels
        self.seed = seed
        self.patch = patch
        self.channels = channels
        self.dim = dim
        self.weight = (rng.standard_normal((fan_in, dim)) / np.sqrt(fan_in) * 2.0).astype(np.float32)
        self.bias = (rng.standard_normal(dim) * 0.5).astype(np.float32)
        self.weight.setflags(write=False)
        self.bias.setflags(write=False)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.weight.tobytes())
        h.update(self.bias.tobytes())
        return h.hexdigest()

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


def encode_semantic(frame: np.ndarray, enc: FrozenEncoder) -> np.ndarray:
    """Per-patch features of one ``H x W x C`` frame, shape ``(H/p, W/p, dim)``."""
    H, W, C = frame.shape
    p = enc.patch
    if H % p or W % p or C != enc.channels:
        raise ShapeError(f"frame {frame.shape} incompatible with encoder patch {p}, channels {enc.channels}")
    patches = frame.reshape(H // p, p, W // p, p, C).transpose(0, 2, 1, 3, 4)
    patches = patches.reshape(H // p, W // p, p * p * C).astype(np.float32)
    with ag.no_grad():
        h = ag.gelu(Tensor(patches @ enc.weight + enc.bias))
        return ag.layernorm_lastdim(h).data


def region_grid(h: int, w: int, M: int) -> tuple[int, int]:
    """Most square ``(m_h, m_w)`` with ``m_h * m_w == M`` dividing ``(h, w)``."""
    best = None
    for mh in range(1, M + 1):
        if M % mh:
            continue
        mw = M // mh
        if h % mh or w % mw:
            continue
        if best is None or abs(mh - mw) < abs(best[0] - best[1]):
            best = (mh, mw)
    if best is None:
        raise ConfigurationError(f"M={M} cannot be laid out as a region grid over {h}x{w} features")
    return best


@dataclass
class SemanticTokens:
    local: np.ndarray  # (N*M, D_s)
    global_: np.ndarray  # (N, D_s)
    anchor_indices: list[int]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.local, self.global_], axis=0)

    @property
    def count(self) -> int:
        return self.local.shape[0] + self.global_.shape[0]


def pool_features(features: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    h, w, d = features.shape
    mh, mw = region_grid(h, w, M)
    regions = features.reshape(mh, h // mh, mw, w // mw, d).mean(axis=(1, 3))
    return regions.reshape(M, d), features.reshape(-1, d).mean(axis=0, keepdims=True)


def pool_semantic(features: list[np.ndarray] | np.ndarray, M: int,
                  anchor_indices: list[int] | None = None) -> SemanticTokens:
    """Average-pool each anchor frame's feature grid to ``M`` regions plus a global mean."""
    if isinstance(features, np.ndarray) and features.ndim == 3:
        features = [features]
    locs, globs = zip(*(pool_features(f, M) for f in features))
    idx = list(anchor_indices) if anchor_indices is not None else list(range(len(features)))
    return SemanticTokens(np.concatenate(locs).astype(np.float32),
                          np.concatenate(globs).astype(np.float32), idx)


def semantic_targets(clip: VideoClip, enc: FrozenEncoder, M: int, N: int,
                     rng: np.random.Generator) -> SemanticTokens:
    """Anchor selection, frozen encoding, and pooling for a target clip."""
    idx = select_anchor_frames(clip.T, N, rng)
    feats = [encode_semantic(clip.frames[i], enc) for i in idx]
    return pool_semantic(feats, M, idx)


def init_projection(rng: np.random.Generator, d_in: int, d_out: int, hidden: int | None = None
                    ) -> dict[str, Tensor]:
    hidden = hidden or d_out
    return {
        "w1": Tensor(rng.standard_normal((d_in, hidden)) / np.sqrt(d_in), requires_grad=True),
        "b1": Tensor(np.zeros(hidden), requires_grad=True),
        "w2": Tensor(rng.standard_normal((hidden, d_out)) / np.sqrt(hidden), requires_grad=True),
        "b2": Tensor(np.zeros(d_out), requires_grad=True),
    }


def project_semantic(tokens: Tensor | np.ndarray, params: dict[str, Tensor]) -> Tensor:
    """linear -> gelu -> linear applied to each token."""
    x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if x.shape[-1] != params["w1"].shape[0]:
        raise ShapeError(f"semantic width {x.shape[-1]} does not match projection input {params['w1'].shape[0]}")
    h = ag.gelu(ag.matmul(x, params["w1"]) + params["b1"])
    return ag.matmul(h, params["w2"]) + params["b2"]
