"""In-context diffusion transformer.

The input sequence is ``[source ; semantic ; target]``. Segment roles are
disambiguated either by a learned type embedding (``type_embed``) or by
offsetting each segment's positional indices (``shifted_positions``). Each
block applies timestep-modulated self-attention over the whole sequence,
cross-attention to the instruction tokens, and a gated MLP.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .grammar import VocabularyError, vocab_size
from .tokenization import LatentTokens, init_projection, latent_positions

SOURCE, SEMANTIC, TARGET = 0, 1, 2
POSITIONAL_SCHEMES = ("type_embed", "shifted_positions")
POSITION_ENCODINGS = ("sinusoidal", "rope")


@dataclass
class DiTConfig:
    layers: int = 4
    heads: int = 4
    dim: int = 96
    ff_dim: int = 384
    token_dim: int = 96
    semantic_dim: int = 32
    positional: str = "type_embed"
    vocab_size: int = field(default_factory=vocab_size)
    semantic_shift: int = 8
    target_shift: int = 80
    adaln_zero: bool = True
    init_seed: int = 0
    pos_max_period: float = 10000.0
    position_encoding: str = "sinusoidal"
    rope_base: float = 100.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"model dim {self.dim} not divisible by {self.heads} heads")
        if self.positional not in POSITIONAL_SCHEMES:
            raise ValueError(f"positional scheme must be one of {POSITIONAL_SCHEMES}, got {self.positional!r}")
        if self.position_encoding not in POSITION_ENCODINGS:
            raise ValueError(f"position encoding must be one of {POSITION_ENCODINGS}, "
                             f"got {self.position_encoding!r}")
        if self.position_encoding == "rope" and (self.dim // self.heads) % 6:
            raise ValueError(f"rope needs a head width divisible by 6, got {self.dim // self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SequenceLayout:
    source: slice
    semantic: slice
    target: slice

    @property
    def length(self) -> int:
        return self.target.stop

    def offsets(self) -> tuple[int, int, int]:
        return self.source.start, self.semantic.start, self.target.start


@dataclass
class AssembledSequence:
    tokens: np.ndarray  # (L, token_dim)
    type_ids: np.ndarray  # (L,)
    positions: np.ndarray  # (L, 3) integer (t, h, w)
    layout: SequenceLayout


def assemble_sequence(z_s: LatentTokens, s_noised: np.ndarray | None, z_t_noised: np.ndarray
                      ) -> AssembledSequence:
    """Concatenate ``[z_s ; s ; z_t]`` with type ids 0/1/2.

    Source and target share the latent grid coordinates; semantic tokens get
    sequential indices along the first positional axis.
    """
    zs = np.asarray(z_s.tokens, dtype=np.float32)
    zt = np.asarray(z_t_noised, dtype=np.float32)
    sem = np.zeros((0, zs.shape[1]), np.float32) if s_noised is None else np.asarray(s_noised, np.float32)
    d = zs.shape[1]
    if zt.shape != zs.shape:
        raise ShapeError(f"target tokens {zt.shape} do not match source tokens {zs.shape}")
    if sem.ndim != 2 or sem.shape[1] != d:
        raise ShapeError(f"semantic tokens {sem.shape} do not have width {d}")
    ls, lm = zs.shape[0], sem.shape[0]
    layout = SequenceLayout(slice(0, ls), slice(ls, ls + lm), slice(ls + lm, 2 * ls + lm))
    grid_pos = latent_positions(z_s.grid)
    sem_pos = np.zeros((lm, 3), dtype=np.int64)
    sem_pos[:, 0] = np.arange(lm)
    return AssembledSequence(
        tokens=np.concatenate([zs, sem, zt]),
        type_ids=np.concatenate([np.full(ls, SOURCE), np.full(lm, SEMANTIC), np.full(ls, TARGET)]),
        positions=np.concatenate([grid_pos, sem_pos, grid_pos]),
        layout=layout,
    )


def readout_velocity(output: Tensor, layout: SequenceLayout) -> tuple[Tensor, Tensor]:
    """Rows of the semantic and target segments; source rows are discarded."""
    return output[layout.semantic], output[layout.target]


def sinusoidal(values: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / max(half, 1))
    ang = values[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if emb.shape[1] < dim:
        emb = np.pad(emb, ((0, 0), (0, dim - emb.shape[1])))
    return emb.astype(np.float32)


def positional_embedding(positions: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Additive sinusoidal code over the (t, h, w) indices; one third of the width each."""
    per = (dim // 3) // 2 * 2
    parts = [sinusoidal(positions[:, a], per, max_period) for a in range(3)]
    emb = np.concatenate(parts, axis=1)
    return np.pad(emb, ((0, 0), (0, dim - emb.shape[1])))


def rope_tables(positions: np.ndarray, head_dim: int, base: float = 100.0
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cos/sin tables ``(L, head_dim)`` and the rotate-half matrix for rotary
    attention over (t, h, w): each axis rotates one third of every head."""
    per = head_dim // 3
    half = per // 2
    freqs = base ** (-np.arange(half) / half)
    ang = np.concatenate([np.tile(positions[:, a:a + 1] * freqs, 2) for a in range(3)], axis=1)
    rot = np.zeros((head_dim, head_dim), dtype=np.float32)
    for a in range(3):
        o = a * per
        for i in range(half):
            # (x @ rot)[o + i] = -x[o + i + half]; (x @ rot)[o + i + half] = x[o + i]
            rot[o + i + half, o + i] = -1.0
            rot[o + i, o + i + half] = 1.0
    return np.cos(ang).astype(np.float32), np.sin(ang).astype(np.float32), rot


def _normal(rng, shape, std):
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def init_params(cfg: DiTConfig, rng: np.random.Generator | None = None,
                adaln_zero: bool | None = None) -> dict[str, Tensor]:
    """Parameter dict. With ``adaln_zero`` the block modulation starts at zero so
    every block is the identity at initialization."""
    rng = rng if rng is not None else np.random.default_rng(cfg.init_seed)
    adaln_zero = cfg.adaln_zero if adaln_zero is None else adaln_zero
    D, F, K = cfg.dim, cfg.ff_dim, cfg.token_dim
    lin = lambda i, o: _normal(rng, (i, o), 1.0 / math.sqrt(i))  # noqa: E731
    p: dict[str, Tensor] = {
        "in_w": lin(K, D),
        "in_b": _zeros(D),
        "type_embed": _normal(rng, (3, D), 0.5),
        "txt_embed": _normal(rng, (cfg.vocab_size, D), 1.0),
        "t_w1": lin(D, D),
        "t_b1": _zeros(D),
        "t_w2": lin(D, D),
        "t_b2": _zeros(D),
    }
    p["type_embed"].data[SOURCE] = 0.0
    for i in range(cfg.layers):
        pre = f"blocks.{i}."
        for name in ("q", "k", "v", "o", "cq", "ck", "cv", "co"):
            p[pre + name + "_w"] = lin(D, D)
            p[pre + name + "_b"] = _zeros(D)
        p[pre + "ln_c_g"] = Tensor(np.ones(D), requires_grad=True)
        p[pre + "ln_c_b"] = _zeros(D)
        p[pre + "ff1_w"] = lin(D, F)
        p[pre + "ff1_b"] = _zeros(F)
        p[pre + "ff2_w"] = lin(F, D)
        p[pre + "ff2_b"] = _zeros(D)
        p[pre + "mod_w"] = _zeros((D, 6 * D)) if adaln_zero else _normal(rng, (D, 6 * D), 0.3 / math.sqrt(D))
        p[pre + "mod_b"] = _zeros(6 * D)
    p["final_mod_w"] = _zeros((D, 2 * D)) if adaln_zero else _normal(rng, (D, 2 * D), 0.3 / math.sqrt(D))
    p["final_mod_b"] = _zeros(2 * D)
    p["out_w"] = _normal(rng, (D, K), 0.02)
    p["out_b"] = _zeros(K)
    p["sem_head_w"] = _normal(rng, (D, K), 1.0 / math.sqrt(D))
    p["sem_head_b"] = _zeros(K)
    for name, t in init_projection(rng, cfg.semantic_dim, K).items():
        p["sem_proj." + name] = t
    return p


def semantic_projection(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("sem_proj.")}


# type id 0 (source) is the reference role and carries no embedding, mirroring
# the zero shift of the source segment in shifted_positions mode
_TYPE_MASK = np.array([[0.0], [1.0], [1.0]], dtype=np.float32)


def _heads(x: Tensor, heads: int) -> Tensor:
    L, D = x.shape
    return ag.transpose(ag.reshape(x, (L, heads, D // heads)), (1, 0, 2))


def _merge(x: Tensor) -> Tensor:
    H, L, dh = x.shape
    return ag.reshape(ag.transpose(x, (1, 0, 2)), (L, H * dh))


def _rotate(x: Tensor, rope) -> Tensor:
    cos, sin, rot = rope
    return x * cos + ag.matmul(x, rot) * sin


def _attention(q: Tensor, k: Tensor, v: Tensor, heads: int, rope=None) -> Tensor:
    qh, kh, vh = _heads(q, heads), _heads(k, heads), _heads(v, heads)
    if rope is not None:
        qh, kh = _rotate(qh, rope), _rotate(kh, rope)
    dh = qh.shape[-1]
    scores = ag.scale(ag.matmul(qh, ag.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
    return _merge(ag.matmul(ag.softmax_lastdim(scores), vh))


def _linear(x: Tensor, p: dict[str, Tensor], name: str) -> Tensor:
    return ag.matmul(x, p[name + "_w"]) + p[name + "_b"]


def _modulate(x: Tensor, shift: Tensor, scale_: Tensor) -> Tensor:
    return ag.layernorm_lastdim(x) * (scale_ + 1.0) + shift


class DiT:
    def __init__(self, cfg: DiTConfig, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> None:
        ag.zero_grads(self.params.values())

    def forward(self, seq, type_ids, positions, t: float, instruction_ids,
                semantic_rows: slice | None = None) -> tuple[Tensor, Tensor | None]:
        """Per-token output of the same shape as ``seq``.

        Also returns the final-block hidden states at ``semantic_rows`` (for the
        semantic head), or ``None`` when no rows are requested.
        """
        cfg, p = self.cfg, self.params
        x = seq if isinstance(seq, Tensor) else Tensor(seq)
        if x.ndim != 2 or x.shape[1] != cfg.token_dim:
            raise ShapeError(f"sequence must be L x {cfg.token_dim}, got {x.shape}")
        if not 0.0 <= float(t) <= 1.0:
            raise ValueError(f"time must lie in [0, 1], got {t}")
        ids = np.asarray(instruction_ids, dtype=np.int64)
        if ids.size == 0 or ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise VocabularyError(f"instruction token ids outside vocabulary of size {cfg.vocab_size}")
        type_ids = np.asarray(type_ids, dtype=np.int64)
        positions = np.array(positions, dtype=np.int64)
        D = cfg.dim

        h = _linear(x, p, "in")
        if cfg.positional == "type_embed":
            table = p["type_embed"] * Tensor(_TYPE_MASK)
            h = h + ag.take_rows(table, type_ids)
        else:
            positions[type_ids == SEMANTIC, 0] += cfg.semantic_shift
            positions[type_ids == TARGET, 0] += cfg.target_shift
        rope = None
        if cfg.position_encoding == "rope":
            cos, sin, rot = rope_tables(positions.astype(np.float64), D // cfg.heads, cfg.rope_base)
            rope = (Tensor(cos), Tensor(sin), Tensor(rot))
        else:
            h = h + Tensor(positional_embedding(positions, D, cfg.pos_max_period))

        temb = Tensor(sinusoidal(np.array([float(t) * 1000.0]), D))
        c = ag.matmul(ag.gelu(ag.matmul(temb, p["t_w1"]) + p["t_b1"]), p["t_w2"]) + p["t_b2"]
        c_act = ag.gelu(c)

        ctx = ag.take_rows(p["txt_embed"], ids) + Tensor(sinusoidal(np.arange(ids.size), D))
        for i in range(cfg.layers):
            pre = f"blocks.{i}."
            mod = ag.matmul(c_act, p[pre + "mod_w"]) + p[pre + "mod_b"]  # (1, 6D)
            sh1, sc1, g1, sh2, sc2, g2 = (mod[:, k * D:(k + 1) * D] for k in range(6))

            a_in = _modulate(h, sh1, sc1)
            att = _attention(_linear(a_in, p, pre + "q"), _linear(a_in, p, pre + "k"),
                             _linear(a_in, p, pre + "v"), cfg.heads, rope)
            h = h + _linear(att, p, pre + "o") * g1

            c_in = ag.layernorm_lastdim(h, p[pre + "ln_c_g"], p[pre + "ln_c_b"])
            cross = _attention(_linear(c_in, p, pre + "cq"), _linear(ctx, p, pre + "ck"),
                               _linear(ctx, p, pre + "cv"), cfg.heads)
            h = h + _linear(cross, p, pre + "co")

            f_in = _modulate(h, sh2, sc2)
            ff = _linear(ag.gelu(_linear(f_in, p, pre + "ff1")), p, pre + "ff2")
            h = h + ff * g2

        fmod = ag.matmul(c_act, p["final_mod_w"]) + p["final_mod_b"]
        out = _linear(_modulate(h, fmod[:, :D], fmod[:, D:]), p, "out")
        hidden = h[semantic_rows] if semantic_rows is not None else None
        return out, hidden

    def semantic_head(self, hidden: Tensor) -> Tensor:
        """Per-token linear map from final-block hidden states to semantic tokens."""
        return _linear(hidden, self.params, "sem_head")
