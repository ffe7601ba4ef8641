"""Batch entry points: ``sama synth | train | edit | eval | plot``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric or
training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import vtensor
from .autograd import ShapeError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigurationError, RunConfig, apply_override, from_dict, load_config
from .dit import DiT
from .filtering import judge_and_filter
from .grammar import GrammarError, VocabularyError
from .metrics import (EvalReport, SampleMetrics, edit_region_error, motion_consistency,
                      preservation_error, restoration_error)
from .plotting import dump_frames, loss_svg, summary_rows, write_summary
from .pretext import PretextTask, tube_shuffle
from .sampler import IntegrationError, SamplerConfig, edit_video, restore_pretext
from .synthetic import (EditPair, ManifestError, ManifestRecord, VideoClip, caption, load_manifest,
                        make_edit_pair, random_scene, render_scene, sample_edit_kind, write_manifest)
from .tokenization import PatchSpec
from .training import Corpus, TrainingError, TrainState, read_log, train

log = logging.getLogger("sama")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
KIND_CODES = {"image_edit": 0, "video_edit": 1, "t2v": 2}


def _rng(seed: int, kind: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), KIND_CODES[kind], int(index)]))


# ------------------------------------------------------------------ synth


def synth_corpus(cfg: RunConfig, out_dir: Path) -> list[ManifestRecord]:
    """Generate the configured corpus under ``out_dir`` and write ``manifest.jsonl``."""
    d = cfg.data
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    counts = {"image_edit": d.n_image_edit, "video_edit": d.n_video_edit, "t2v": d.n_t2v}
    for kind, n in counts.items():
        (out_dir / kind).mkdir(exist_ok=True)
        for i in range(n):
            rng = _rng(cfg.seed, kind, i)
            split = "heldout" if rng.random() < d.heldout_fraction else "train"
            spec = random_scene(rng, d.height, d.width, d.max_shapes)
            sid = f"{kind}-{i:05d}"
            if kind == "t2v":
                raw = render_scene(spec, 2 * d.T)
                rel = f"{kind}/{sid}_raw.vt"
                vtensor.save(out_dir / rel, raw.frames)
                records.append(ManifestRecord(sid, kind, {"raw": rel}, caption(spec), split))
                continue
            edit_kind = sample_edit_kind(rng, d.edit_weights)
            pair = make_edit_pair(spec, edit_kind, rng, T=1 if kind == "image_edit" else d.T)
            ground_truth = pair
            if rng.random() < d.corrupt_fraction:
                # stand-in for a flawed generated target that the judge should reject
                noisy = pair.target.frames + d.corrupt_noise * rng.standard_normal(pair.target.frames.shape)
                pair = EditPair(pair.source, VideoClip(np.clip(noisy, 0.0, 1.0).astype(np.float32)),
                                pair.instruction, pair.edit_kind, pair.edit_region)
            files = {}
            for name, arr in (("source", pair.source.frames), ("target", pair.target.frames),
                              ("region", pair.edit_region.astype(np.float32))):
                files[name] = f"{kind}/{sid}_{name}.vt"
                vtensor.save(out_dir / files[name], arr)
            rec = ManifestRecord(sid, kind, files, pair.instruction, split, edit_kind=edit_kind)
            if d.judge:
                scores, keep = judge_and_filter(ground_truth, pair.target)
                rec.scores, rec.keep = scores.as_dict(), keep
            records.append(rec)
    write_manifest(out_dir / "manifest.jsonl", records)
    return records


def load_pair(root: Path, rec: ManifestRecord) -> EditPair:
    return EditPair(VideoClip(vtensor.load(root / rec.files["source"])),
                    VideoClip(vtensor.load(root / rec.files["target"])),
                    rec.instruction, rec.edit_kind or "recolor",
                    vtensor.load(root / rec.files["region"]) > 0.5)


def load_corpus(manifest: Path, split: str = "train") -> Corpus:
    records = load_manifest(manifest)
    root = manifest.parent
    corpus = Corpus()
    for rec in records:
        if rec.split != split or rec.keep is False:
            continue
        if rec.kind == "t2v":
            corpus.t2v.append((VideoClip(vtensor.load(root / rec.files["raw"])), rec.instruction))
        else:
            getattr(corpus, rec.kind).append(load_pair(root, rec))
    return corpus


def cmd_synth(args, cfg: RunConfig) -> int:
    out = args.workdir / cfg.paths.data_dir
    records = synth_corpus(cfg, out)
    hist = {k: sum(r.kind == k for r in records) for k in KIND_CODES}
    kept = sum(r.keep is not False for r in records)
    print(" ".join(f"{k}={v}" for k, v in hist.items()), f"kept={kept}", f"manifest={out / 'manifest.jsonl'}")
    return EXIT_OK


# ------------------------------------------------------------------ train


def cmd_train(args, cfg: RunConfig) -> int:
    manifest = args.workdir / cfg.paths.data_dir / "manifest.jsonl"
    run = args.workdir / cfg.paths.run_dir
    run.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(manifest)
    if args.init:
        loaded = load_checkpoint(args.workdir / args.init)
        state = TrainState.create(loaded.state.model.cfg, cfg.train, model=loaded.state.model)
    else:
        state = TrainState.create(cfg.model, cfg.train)
    (run / "config.json").write_text(cfg.dumps())

    def on_checkpoint(s):
        save_checkpoint(run / f"checkpoint_{s.step:06d}", s)

    hist = train(state, corpus, cfg.train.steps, run / "log.csv", on_checkpoint)
    save_checkpoint(run / "checkpoint", state)
    last = hist[-1] if hist else None
    print(f"steps={state.step}", f"final_total={last.total:.6f}" if last else "", f"checkpoint={run / 'checkpoint'}")
    return EXIT_OK


# ------------------------------------------------------------------ edit / eval


def _model_for(args, cfg: RunConfig):
    """Sampling model plus its semantic-token count; ``--untrained`` gives a fresh init."""
    if getattr(args, "untrained", False):
        state = TrainState.create(cfg.model, cfg.train)
        n_sem = cfg.train.N * cfg.train.M + cfg.train.N if cfg.train.sa else 0
        return state.model, n_sem, state.patch
    if not args.checkpoint:
        raise ConfigurationError("a --checkpoint (or --untrained) is required")
    loaded = load_checkpoint(args.workdir / args.checkpoint)
    return loaded.sampling_model(cfg.sampler.use_ema), loaded.n_semantic, loaded.state.patch


def cmd_edit(args, cfg: RunConfig) -> int:
    model, n_sem, patch = _model_for(args, cfg)
    source = VideoClip(vtensor.load(args.workdir / args.source))
    out = edit_video(model, source, args.instruction, cfg.sampler, patch, n_sem)
    out_path = args.workdir / args.out
    out_path.parent.mkdir(parents=True, exist_ok=True)
    vtensor.save(out_path, out.frames)
    if args.frames:
        dump_frames(args.workdir / args.frames, out.frames)
    print(f"wrote {out_path}")
    return EXIT_OK


def evaluate(model: DiT, n_sem: int, patch: PatchSpec, manifest: Path, sampler: SamplerConfig,
             split: str = "heldout", kinds=("video_edit", "image_edit", "t2v"), limit: int | None = None,
             edit_kinds=None) -> EvalReport:
    """Edit records are scored against their pair; t2v records are tube-shuffled
    with a per-record seed and scored on restoration."""
    root = manifest.parent
    report = EvalReport()
    report.header.update({"split": split, "sampler_steps": sampler.steps, "seed": sampler.seed})
    chosen = [r for r in load_manifest(manifest) if r.split == split and r.kind in kinds
              and (edit_kinds is None or r.kind == "t2v" or r.edit_kind in edit_kinds)]
    for rec in chosen[:limit]:
        if rec.kind == "t2v":
            raw = vtensor.load(root / rec.files["raw"])
            clip = VideoClip(raw[: raw.shape[0] // 2].copy())
            idx = int(rec.id.rsplit("-", 1)[1])
            shuffled, _ = tube_shuffle(clip, _rng(sampler.seed, "t2v", idx))
            restored = restore_pretext(model, shuffled, PretextTask.TUBE_SHUFFLE, rec.instruction,
                                       sampler, patch, n_sem)
            report.samples.append(SampleMetrics(rec.id, restoration_error=restoration_error(restored, clip)))
            continue
        pair = load_pair(root, rec)
        out = edit_video(model, pair.source, pair.instruction, sampler, patch, n_sem)
        mc = motion_consistency(out, pair.target) if pair.source.T > 1 else None
        report.samples.append(SampleMetrics(
            rec.id, edit_region_error(out, pair.target, pair.edit_region),
            preservation_error(out, pair.source, pair.edit_region), mc,
            restoration_error(out, pair.target)))
    return report


def cmd_eval(args, cfg: RunConfig) -> int:
    model, n_sem, patch = _model_for(args, cfg)
    manifest = args.workdir / (args.manifest or f"{cfg.paths.data_dir}/manifest.jsonl")
    kinds = tuple(args.kinds.split(",")) if args.kinds else ("video_edit", "image_edit", "t2v")
    edit_kinds = tuple(args.edit_kinds.split(",")) if args.edit_kinds else None
    report = evaluate(model, n_sem, patch, manifest, cfg.sampler, args.split, kinds, args.limit, edit_kinds)
    out = args.workdir / (args.out or cfg.paths.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.json", out / "report.csv")
    print(json.dumps(report.means(), sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ plot


def cmd_plot(args, cfg: RunConfig | None = None) -> int:
    series = {}
    for spec in args.logs:
        name, _, path = spec.rpartition("=")
        path = args.workdir / path
        data = read_log(path)
        series[name or path.parent.name] = (data["step"], data[args.column])
    out = args.workdir / args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "loss_curves.svg").write_text(loss_svg(series, title=args.column, window=args.window))
    write_summary(out / "loss_summary.csv", summary_rows(series, args.window))
    print(f"wrote {out / 'loss_curves.svg'}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sama", description=__doc__.splitlines()[0])
    p.add_argument("--workdir", type=Path, default=Path("."), help="root for every relative path")
    p.add_argument("--config", help="JSON run config (relative to workdir)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. train.lr=1e-3")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate the synthetic corpus")

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("--stage", type=int, choices=(0, 1))
    t.add_argument("--no-sa", action="store_true", help="disable semantic anchoring")
    t.add_argument("--no-ma", action="store_true", help="disable pretext tasks in stage 0")
    t.add_argument("--positional", choices=("type_embed", "shifted_positions", "shifted"))
    t.add_argument("--steps", type=int)
    t.add_argument("--init", help="checkpoint whose weights initialize the model")

    helps = {"edit": "edit one source video from an instruction",
             "eval": "score held-out manifest records and write a report"}
    for name in ("edit", "eval"):
        e = sub.add_parser(name, help=helps[name])
        e.add_argument("--checkpoint")
        e.add_argument("--untrained", action="store_true", help="use a freshly initialized model")
        e.add_argument("--out", default="edit/output.vt" if name == "edit" else None)
        if name == "edit":
            e.add_argument("--source", required=True)
            e.add_argument("--instruction", required=True)
            e.add_argument("--frames", help="directory for per-frame PPM dumps")
        else:
            e.add_argument("--manifest")
            e.add_argument("--split", default="heldout")
            e.add_argument("--kinds", help="comma-separated record kinds")
            e.add_argument("--edit-kinds", help="comma-separated edit kinds")
            e.add_argument("--limit", type=int)

    pl = sub.add_parser("plot", help="SVG loss curves and CSV summary from training logs")
    pl.add_argument("logs", nargs="+", metavar="[NAME=]LOG")
    pl.add_argument("--out", default="plots")
    pl.add_argument("--column", default="fm_loss")
    pl.add_argument("--window", type=int, default=20)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.workdir / args.config) if args.config else from_dict({"version": 1})
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        cfg = apply_override(cfg, key, _parse_value(value))
    if args.command == "train":
        if args.stage is not None:
            cfg = apply_override(cfg, "train.stage", f"stage{args.stage}")
        if args.no_sa:
            cfg = apply_override(cfg, "train.sa", False)
        if args.no_ma:
            cfg = apply_override(cfg, "train.ma", False)
        if args.positional:
            mode = "shifted_positions" if args.positional == "shifted" else args.positional
            cfg = apply_override(cfg, "model.positional", mode)
        if args.steps is not None:
            cfg = apply_override(cfg, "train.steps", args.steps)
    return cfg


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "edit": cmd_edit, "eval": cmd_eval, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigurationError, VocabularyError, GrammarError, ManifestError, CheckpointError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, vtensor.VTensorError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, IntegrationError, FloatingPointError, ShapeError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
