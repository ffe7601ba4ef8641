"""Checkpoint directories: named VTensor files plus a JSON config."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import vtensor
from .autograd import Tensor
from .dit import DiT, DiTConfig, init_params
from .tokenization import FrozenEncoder, PatchSpec
from .training import EMA, TrainConfig, TrainState, config_dict, make_optimizer

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _save_group(d: Path, arrays: dict[str, np.ndarray]) -> None:
    d.mkdir(parents=True, exist_ok=True)
    for name, arr in arrays.items():
        vtensor.save(d / f"{name}.vt", arr)


def _load_group(d: Path) -> dict[str, np.ndarray]:
    if not d.is_dir():
        return {}
    return {p.name[:-3]: vtensor.load(p) for p in sorted(d.glob("*.vt"))}


def save_checkpoint(directory, state: TrainState) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    model = state.model
    _save_group(d / "params", {k: p.data for k, p in model.params.items()})
    if state.ema is not None:
        _save_group(d / "ema", state.ema.shadow)
    _save_group(d / "encoder", state.encoder.arrays())
    _save_group(d / "optimizer", state.optimizer.state_arrays())
    cfg = {
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "model": model.cfg.to_dict(),
        "train": config_dict(state.cfg),
        "patch": {"p_t": state.patch.p_t, "p_h": state.patch.p_h, "p_w": state.patch.p_w,
                  "channels": state.patch.channels},
        "encoder": {"seed": state.encoder.seed, "patch": state.encoder.patch, "dim": state.encoder.dim},
    }
    (d / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    return d


@dataclass
class LoadedCheckpoint:
    state: TrainState
    config: dict

    @property
    def n_semantic(self) -> int:
        t = self.state.cfg
        return t.N * t.M + t.N if t.sa else 0

    def sampling_model(self, use_ema: bool = True) -> DiT:
        if use_ema and self.state.ema is not None:
            return DiT(self.state.model.cfg, self.state.ema.params())
        return self.state.model


def load_checkpoint(directory) -> LoadedCheckpoint:
    d = Path(directory)
    cfg_path = d / "config.json"
    if not cfg_path.exists():
        raise CheckpointError(f"no config.json in checkpoint {d}")
    cfg = json.loads(cfg_path.read_text())
    if cfg.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {cfg.get('version')}")
    model_cfg = DiTConfig(**cfg["model"])
    expected = {k: p.shape for k, p in init_params(model_cfg, np.random.default_rng(0)).items()}
    arrays = _load_group(d / "params")
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise CheckpointError(f"parameter names differ from config: missing {missing}, unexpected {extra}")
    for k, a in arrays.items():
        if a.shape != expected[k]:
            raise CheckpointError(f"parameter {k}: shape {a.shape} does not match config {expected[k]}")
    params = {k: Tensor(arrays[k], requires_grad=True) for k in expected}
    train_cfg = TrainConfig(**cfg["train"])
    patch = PatchSpec(**cfg["patch"])
    enc_cfg = cfg["encoder"]
    encoder = FrozenEncoder(enc_cfg["seed"], patch=enc_cfg["patch"], dim=enc_cfg["dim"])
    stored = _load_group(d / "encoder")
    if stored and (not np.array_equal(stored["weight"], encoder.weight)
                   or not np.array_equal(stored["bias"], encoder.bias)):
        raise CheckpointError("stored encoder parameters do not match their seed")
    model = DiT(model_cfg, params)
    ema = None
    shadow = _load_group(d / "ema")
    if shadow:
        ema = EMA(model.params, train_cfg.ema_decay)
        ema.shadow = {k: shadow[k] for k in expected}
    opt = make_optimizer(train_cfg)
    opt.load_state_arrays(_load_group(d / "optimizer"))
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1, cfg["step"]]))
    state = TrainState(model, encoder, patch, train_cfg, opt, ema, rng, cfg["step"])
    return LoadedCheckpoint(state, cfg)
