"""Flow-matching training with the semantic anchoring auxiliary loss.

One item is a source clip, an instruction, and a target clip. The target
latents (and, with semantic anchoring, the projected anchor-frame tokens) are
noised jointly with a single ``t``; the model regresses the velocity
``x1 - x0`` at the semantic and target positions and predicts the anchor
tokens from its final hidden states at the semantic positions.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from . import autograd as ag
from . import grammar
from .autograd import ShapeError, Tensor
from .dit import DiT, DiTConfig, SequenceLayout, assemble_sequence, readout_velocity, semantic_projection
from .pretext import PretextSample, PretextTask, make_pretext_sample, sample_task
from .synthetic import EditPair, VideoClip
from .tokenization import (ConfigurationError, FrozenEncoder, PatchSpec, patchify,
                           project_semantic, semantic_targets)

log = logging.getLogger(__name__)

Sample = Union[EditPair, PretextSample]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 2e-5
    lam: float = 0.1
    ema_decay: float = 0.9998
    ema: bool = True
    batch_size: int = 4
    steps: int = 1000
    stage: str = "stage0"
    sa: bool = True
    ma: bool = True
    seed: int = 0
    optimizer: str = "sgd"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float | None = None
    M: int = 64
    N: int = 1
    mask_ratio: float = 0.3
    stage0_image_fraction: float = 0.5
    stage1_image_fraction: float = 0.1
    encoder_seed: int = 0
    checkpoint_every: int = 0
    lr_schedule: str = "constant"
    warmup: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.ema_decay < 1:
            raise ConfigurationError(f"EMA decay must lie in (0, 1), got {self.ema_decay}")
        if self.stage not in ("stage0", "stage1"):
            raise ConfigurationError(f"stage must be stage0 or stage1, got {self.stage!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


# ------------------------------------------------------------------ losses


def interpolate(x0, x1, t: float):
    """Point ``t * x1 + (1 - t) * x0`` on the straight noise-to-data path."""
    if isinstance(x0, Tensor) or isinstance(x1, Tensor):
        a, b = ag._as_tensor(x0), ag._as_tensor(x1)
        if a.shape != b.shape:
            raise ShapeError(f"interpolate: shapes {a.shape} and {b.shape} differ")
        return ag.scale(b, t) + ag.scale(a, 1.0 - t)
    x0 = np.asarray(x0, dtype=np.float32)
    x1 = np.asarray(x1, dtype=np.float32)
    if x0.shape != x1.shape:
        raise ShapeError(f"interpolate: shapes {x0.shape} and {x1.shape} differ")
    t32 = np.float32(t)
    return t32 * x1 + (np.float32(1.0) - t32) * x0


def fm_loss(v_pred: Tensor, x1, x0) -> Tensor:
    """Mean squared error between the predicted velocity and ``x1 - x0``."""
    target = np.asarray(getattr(x1, "data", x1), np.float32) - np.asarray(getattr(x0, "data", x0), np.float32)
    return ag.mse_loss(v_pred, Tensor(target))


def sem_loss(s_hat: Tensor, s: Tensor) -> Tensor:
    """Elementwise-mean L1 distance between anchor tokens and predicted tokens."""
    return ag.l1_loss(s, s_hat)


def total_loss(fm, sem, lam: float):
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    if isinstance(fm, Tensor):
        return fm if sem is None else fm + ag.scale(sem, lam)
    return fm + lam * (sem or 0.0)


# ------------------------------------------------------------------ items


@dataclass
class TrainItem:
    tokens: np.ndarray
    type_ids: np.ndarray
    positions: np.ndarray
    layout: SequenceLayout
    instruction_ids: list[int]
    t: float
    x0: np.ndarray  # noise over [semantic ; target]
    x1: np.ndarray  # clean [s_hat ; z_t]
    xt: np.ndarray
    velocity: np.ndarray
    s_hat: Tensor | None  # projected anchor tokens, still attached to the projection
    anchor_indices: list[int] = field(default_factory=list)
    semantic_input: np.ndarray | None = None  # pooled encoder tokens before projection

    @property
    def n_semantic(self) -> int:
        return self.layout.semantic.stop - self.layout.semantic.start


def sample_timestep(rng: np.random.Generator) -> float:
    return float(rng.uniform(0.0, 1.0))


def sample_parts(sample: Sample) -> tuple[VideoClip, VideoClip, str]:
    if isinstance(sample, EditPair):
        return sample.source, sample.target, sample.instruction
    return sample.perturbed_source, sample.target, sample.prompt


def build_train_item(sample: Sample, model: DiT, encoder: FrozenEncoder, patch: PatchSpec,
                     sa: bool, rng: np.random.Generator, M: int = 64, N: int = 1,
                     t: float | None = None) -> TrainItem:
    src, tgt, text = sample_parts(sample)
    z_s = patchify(src, patch)
    z_t = patchify(tgt, patch)
    ids = grammar.encode(text)
    s_hat = sem_in = None
    anchors: list[int] = []
    if sa:
        sem = semantic_targets(tgt, encoder, M, min(N, tgt.T), rng)
        anchors = sem.anchor_indices
        sem_in = sem.stacked()
        s_hat = project_semantic(sem_in, semantic_projection(model.params))
        x1 = np.concatenate([s_hat.data, z_t.tokens])
    else:
        x1 = z_t.tokens
    if t is None:
        t = sample_timestep(rng)
    x0 = rng.standard_normal(x1.shape).astype(np.float32)
    xt = interpolate(x0, x1, t)
    k = x1.shape[0] - z_t.length
    seq = assemble_sequence(z_s, xt[:k] if sa else None, xt[k:])
    return TrainItem(seq.tokens, seq.type_ids, seq.positions, seq.layout, ids, t,
                     x0, x1, xt, x1 - x0, s_hat, anchors, sem_in)


@dataclass
class ItemLosses:
    total: Tensor
    fm: Tensor
    sem: Tensor | None
    fm_target: float


def item_losses(model: DiT, item: TrainItem, lam: float) -> ItemLosses:
    has_sem = item.n_semantic > 0
    out, hidden = model.forward(item.tokens, item.type_ids, item.positions, item.t,
                                item.instruction_ids, item.layout.semantic if has_sem else None)
    v_sem, v_tgt = readout_velocity(out, item.layout)
    v = ag.concat([v_sem, v_tgt]) if has_sem else v_tgt
    fm = ag.mse_loss(v, Tensor(item.velocity))
    k = item.n_semantic
    fm_target = float(np.mean((v_tgt.data.astype(np.float64) - item.velocity[k:]) ** 2))
    sem = None
    if has_sem:
        sem = sem_loss(item.s_hat, model.semantic_head(hidden))
    return ItemLosses(total_loss(fm, sem, lam), fm, sem, fm_target)


# ------------------------------------------------------------------ optimizers / EMA


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, Tensor]) -> None:
        lr = np.float32(self.lr)
        for p in params.values():
            if p.grad is not None:
                p.data -= lr * p.grad

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            if p.grad is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= np.float32(b1)
            m += np.float32(1 - b1) * p.grad
            v *= np.float32(b2)
            v += np.float32(1 - b2) * p.grad * p.grad
            p.data -= np.float32(self.lr) * (m / np.float32(c1)) / (np.sqrt(v / np.float32(c2)) + np.float32(self.eps))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        out["t"] = np.array([self.t], dtype=np.float32)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays.get("t", np.zeros(1))[0])
        self.m = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("m.")}
        self.v = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("v.")}


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr, cfg.betas, cfg.eps)
    return SGD(cfg.lr)


class EMA:
    """Shadow parameters: ``shadow <- decay * shadow + (1 - decay) * param``."""

    def __init__(self, params: dict[str, Tensor], decay: float):
        self.decay = decay
        self.shadow = {k: p.data.copy() for k, p in params.items()}

    def update(self, params: dict[str, Tensor]) -> None:
        d = np.float32(self.decay)
        c = np.float32(1.0 - self.decay)
        for k, p in params.items():
            s = self.shadow[k]
            s *= d
            s += c * p.data

    def params(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.shadow.items()}


# ------------------------------------------------------------------ state / step


@dataclass
class StepStats:
    step: int
    fm_loss: float
    sem_loss: float
    total: float
    fm_target: float
    wall_ms: float


@dataclass
class TrainState:
    model: DiT
    encoder: FrozenEncoder
    patch: PatchSpec
    cfg: TrainConfig
    optimizer: object
    ema: EMA | None
    rng: np.random.Generator
    step: int = 0

    @classmethod
    def create(cls, model_cfg: DiTConfig, cfg: TrainConfig, patch: PatchSpec | None = None,
               model: DiT | None = None) -> "TrainState":
        patch = patch or PatchSpec()
        if model is None:
            from .dit import init_params
            model = DiT(model_cfg, init_params(model_cfg, np.random.default_rng(
                np.random.SeedSequence([cfg.seed, 0]))))
        encoder = FrozenEncoder(cfg.encoder_seed, dim=model_cfg.semantic_dim)
        ema = EMA(model.params, cfg.ema_decay) if cfg.ema else None
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        return cls(model, encoder, patch, cfg, make_optimizer(cfg), ema, rng)


def _clip_grads(params: dict[str, Tensor], max_norm: float) -> None:
    sq = sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values() if p.grad is not None)
    norm = math.sqrt(sq)
    if norm > max_norm:
        f = np.float32(max_norm / (norm + 1e-12))
        for p in params.values():
            if p.grad is not None:
                p.grad *= f


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Rate for the update taken at 0-based ``step``: linear warmup, then constant or cosine to 0."""
    if step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    if cfg.lr_schedule == "constant":
        return cfg.lr
    span = max(cfg.steps - cfg.warmup, 1)
    frac = min((step - cfg.warmup) / span, 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def train_step(state: TrainState, batch: list[Sample]) -> StepStats:
    """One optimizer step on the mean loss of ``batch``, followed by the EMA update."""
    t0 = time.perf_counter()
    cfg, model = state.cfg, state.model
    model.zero_grads()
    fm_sum = sem_sum = tot_sum = fmt_sum = 0.0
    w = 1.0 / len(batch)
    for sample in batch:
        item = build_train_item(sample, model, state.encoder, state.patch, cfg.sa, state.rng, cfg.M, cfg.N)
        losses = item_losses(model, item, cfg.lam)
        total = losses.total.item()
        if not math.isfinite(total):
            raise TrainingError(f"non-finite loss {total} at step {state.step}")
        ag.backward(ag.scale(losses.total, w))
        fm_sum += losses.fm.item()
        sem_sum += losses.sem.item() if losses.sem is not None else 0.0
        tot_sum += total
        fmt_sum += losses.fm_target
    if cfg.grad_clip:
        _clip_grads(model.params, cfg.grad_clip)
    state.optimizer.lr = learning_rate(cfg, state.step)
    with ag.no_grad():
        state.optimizer.step(model.params)
        if state.ema is not None:
            state.ema.update(model.params)
    state.step += 1
    return StepStats(state.step, fm_sum * w, sem_sum * w, tot_sum * w, fmt_sum * w,
                     (time.perf_counter() - t0) * 1000.0)


# ------------------------------------------------------------------ batches


@dataclass
class Corpus:
    image_edit: list[EditPair] = field(default_factory=list)
    video_edit: list[EditPair] = field(default_factory=list)
    t2v: list[tuple[VideoClip, str]] = field(default_factory=list)  # raw 2T clip + caption


def stage_batch(stage: str, corpus: Corpus, rng: np.random.Generator, cfg: TrainConfig,
                size: int | None = None) -> list[Sample]:
    """Stage 0 mixes image edits with pretext-transformed videos; stage 1 mixes
    paired video edits with a small image-edit fraction and no pretext tasks."""
    size = size or cfg.batch_size
    if stage == "stage0":
        need = [("image_edit", cfg.stage0_image_fraction > 0), ("t2v", cfg.stage0_image_fraction < 1)]
    elif stage == "stage1":
        need = [("video_edit", cfg.stage1_image_fraction < 1), ("image_edit", cfg.stage1_image_fraction > 0)]
    else:
        raise ConfigurationError(f"unknown stage {stage!r}")
    for kind, required in need:
        if required and not getattr(corpus, kind):
            raise ConfigurationError(f"{stage} needs {kind} samples but the corpus has none")
    batch: list[Sample] = []
    for _ in range(size):
        if stage == "stage0":
            if rng.random() < cfg.stage0_image_fraction:
                batch.append(corpus.image_edit[int(rng.integers(len(corpus.image_edit)))])
            else:
                raw, cap = corpus.t2v[int(rng.integers(len(corpus.t2v)))]
                task = sample_task(rng) if cfg.ma else PretextTask.NONE
                batch.append(make_pretext_sample(raw, cap, task, rng, cfg.mask_ratio))
        else:
            if rng.random() < cfg.stage1_image_fraction:
                batch.append(corpus.image_edit[int(rng.integers(len(corpus.image_edit)))])
            else:
                batch.append(corpus.video_edit[int(rng.integers(len(corpus.video_edit)))])
    return batch


# ------------------------------------------------------------------ logging / loop

LOG_COLUMNS = ("step", "fm_loss", "sem_loss", "total", "wall_ms", "fm_target")


class TrainLog:
    def __init__(self, path):
        self.path = Path(path)
        self._f = open(self.path, "w", newline="")
        self._w = csv.writer(self._f)
        self._w.writerow(LOG_COLUMNS)

    def write(self, s: StepStats) -> None:
        self._w.writerow([s.step, repr(s.fm_loss), repr(s.sem_loss), repr(s.total),
                          f"{s.wall_ms:.3f}", repr(s.fm_target)])
        self._f.flush()

    def close(self) -> None:
        self._f.close()


def read_log(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"training log {path} has no rows")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def train(state: TrainState, corpus: Corpus, steps: int | None = None, log_path=None,
          on_checkpoint=None, fixed_batch: list[Sample] | None = None) -> list[StepStats]:
    steps = steps if steps is not None else state.cfg.steps
    writer = TrainLog(log_path) if log_path else None
    history = []
    try:
        for _ in range(steps):
            batch = fixed_batch if fixed_batch is not None else stage_batch(
                state.cfg.stage, corpus, state.rng, state.cfg)
            stats = train_step(state, batch)
            history.append(stats)
            if writer:
                writer.write(stats)
            k = state.cfg.checkpoint_every
            if on_checkpoint and k and state.step % k == 0:
                on_checkpoint(state)
            if state.step % 100 == 0:
                log.info("step %d total %.4f fm %.4f sem %.4f", stats.step, stats.total,
                         stats.fm_loss, stats.sem_loss)
    finally:
        if writer:
            writer.close()
    return history


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    if "betas" in d:
        d["betas"] = list(d["betas"])
    return d
