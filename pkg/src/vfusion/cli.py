"""Command line: ``vfusion {synth,preprocess,train,eval,predict}``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import synth, video
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, build_config, field_help
from .model import CLASSES, ModelConfig, build_model, model_forward
from .tensor import no_grad
from .train import OptimizerState, TrainRun, best_record_path, evaluate, fit, write_best_record

log = logging.getLogger("vfusion")


def _epilog() -> str:
    lines = ["run configuration fields (config file key=value, or --set key=value):"]
    for name, default, help in field_help():
        lines.append(f"  {name:<18} default {default!r:<10} {help}")
    return "\n".join(lines)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config field")
    p.add_argument("--manifest", help="manifest path")
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")


def make_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="vfusion", description=__doc__, epilog=_epilog(), formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset", epilog=_epilog(), formatter_class=fmt)
    _add_common(p)
    p.add_argument("--n-clips", type=int, default=16)
    p.add_argument("--frames", type=int, default=synth.N_FRAMES)
    p.add_argument("--size", type=int, default=synth.FRAME_SIZE)

    p = sub.add_parser("preprocess", help="cache keyframe-selected S-frame sequences", epilog=_epilog(),
                       formatter_class=fmt)
    _add_common(p)

    p = sub.add_parser("train", help="train with periodic hold-out validation", epilog=_epilog(),
                       formatter_class=fmt)
    _add_common(p)

    p = sub.add_parser("eval", help="accuracy and confusion matrix over a manifest", epilog=_epilog(),
                       formatter_class=fmt)
    _add_common(p)

    p = sub.add_parser("predict", help="classify one clip directory", epilog=_epilog(), formatter_class=fmt)
    _add_common(p)
    p.add_argument("clip", help="directory of PPM frames")
    return parser


def _config(args, base: dict | None = None) -> RunConfig:
    return build_config(args.config, args.set, base, manifest=args.manifest, checkpoint=args.checkpoint,
                        out=args.out, seed=args.seed)


def _load_clips(records, cfg: RunConfig, what: str):
    pcfg = cfg.pipeline_config()
    clips = []
    for r in records:
        try:
            clips.append(video.load_prepared(r, pcfg))
        except (OSError, ValueError) as e:
            log.warning("%s: skipping %s: %s", what, r.path, e)
    return clips


def cmd_synth(args) -> int:
    cfg = _config(args)
    records = synth.generate(cfg.out, args.n_clips, cfg.seed, args.size, args.frames)
    print(f"wrote {len(records)} clips and {Path(cfg.out) / 'manifest.tsv'}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    if not cfg.manifest:
        raise ConfigError(["manifest: required for preprocess"])
    records = video.load_manifest(cfg.manifest)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    pcfg = cfg.pipeline_config()
    cached, report, failed = [], [], 0
    for k, r in enumerate(records):
        dest = out / f"{k:05d}_{Path(r.path).name}"
        try:
            prepared = video.prepare(video.load_clip(r.path, r.label, cfg.crop_size), pcfg)
        except (OSError, ValueError) as e:
            failed += 1
            report.append(f"FAILED\t{r.path}\t{e}")
            continue
        if dest.exists():
            shutil.rmtree(dest)
        dest.mkdir()
        for t, frame in enumerate(prepared.frames):
            video.write_ppm(dest / f"frame_{t:04d}.ppm", frame)
        meta = {"source": str(r.path), "label": video.LABELS[r.label], "kept": prepared.kept,
                "threshold": prepared.threshold, "sequence_length": cfg.sequence_length}
        (dest / video.SIDECAR).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        cached.append(video.ManifestRecord(dest, r.label, r.split))
        report.append(f"ok\t{r.path}\t{len(set(prepared.kept))} keyframes")
    video.write_manifest(out / "manifest.tsv", cached)
    (out / "report.txt").write_text("\n".join(report) + "\n")
    print(f"preprocessed {len(cached)} clips, {failed} failed; report in {out / 'report.txt'}")
    for line in report:
        if line.startswith("FAILED"):
            print(line, file=sys.stderr)
    return 1 if failed else 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if not cfg.manifest:
        raise ConfigError(["manifest: required for train"])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    records = video.load_manifest(cfg.manifest)
    train_r, val_r, test_r = video.split_dataset(records, cfg.ratios, cfg.seed)
    split_rows = [video.ManifestRecord(r.path, r.label, s) for s, rs in
                  (("train", train_r), ("val", val_r), ("test", test_r)) for r in rs]
    video.write_manifest(out / "splits.tsv", split_rows)
    print(f"split: {len(train_r)} train / {len(val_r)} val / {len(test_r)} test")

    train_set = _load_clips(train_r, cfg, "train")
    val_set = _load_clips(val_r, cfg, "val")
    test_set = _load_clips(test_r, cfg, "test")

    params = build_model(cfg.model_config(), cfg.seed)
    optimizer = OptimizerState.for_params(params, **cfg.optimizer_hyper())
    metrics = out / "metrics.csv"
    if metrics.exists():
        metrics.unlink()
    ckpt = out / "best.vdcp"
    run = TrainRun(epochs=cfg.epochs, batch_size=cfg.batch_size, validation_period=cfg.validation_period,
                   seed=cfg.seed, checkpoint_path=ckpt, metrics_path=metrics)
    run_meta = {"seed": cfg.seed}
    fit(params, train_set, val_set, optimizer, run, run_meta)
    if not val_set:
        log.warning("no validation clips; keeping the final parameters as the checkpoint")
        save_checkpoint(ckpt, params, optimizer)
        write_best_record(best_record_path(ckpt), cfg.epochs, None, dict(run_meta, **params.config.to_dict()))
    else:
        print(f"best validation accuracy {run.best_val_accuracy:.4f} at epoch {run.best_epoch}")

    if test_set:
        best, _ = load_checkpoint(ckpt, params)
        acc, cm = evaluate(best, test_set, cfg.batch_size)
        cm.write(out)
        print(cm.to_text(), end="")
    return 0


def _checkpoint_config(args) -> RunConfig:
    """Model fields come from the checkpoint's sidecar unless the user overrides them."""
    base = {}
    ckpt = args.checkpoint
    if ckpt:
        sidecar = best_record_path(Path(ckpt))
        if sidecar.exists():
            stored = json.loads(sidecar.read_text()).get("config", {})
            base = {k: v for k, v in stored.items() if k in ModelConfig.__dataclass_fields__}
    cfg = _config(args, base)
    if not cfg.checkpoint:
        raise ConfigError(["checkpoint: required"])
    return cfg


def _load_model(cfg: RunConfig):
    like = build_model(cfg.model_config(), 0)
    params, _ = load_checkpoint(cfg.checkpoint, like)
    return params


def cmd_eval(args) -> int:
    cfg = _checkpoint_config(args)
    if not cfg.manifest:
        raise ConfigError(["manifest: required for eval"])
    params = _load_model(cfg)
    clips = _load_clips(video.load_manifest(cfg.manifest), cfg, "eval")
    acc, cm = evaluate(params, clips, cfg.batch_size)
    print(cm.to_text(), end="")
    if args.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        cm.write(cfg.out)
    return 0


def cmd_predict(args) -> int:
    cfg = _checkpoint_config(args)
    params = _load_model(cfg)
    clip = video.load_prepared(video.ManifestRecord(Path(args.clip), 0), cfg.pipeline_config())
    x = video.to_model_input(clip, cfg.crop_size, train=False)
    with no_grad():
        _, probs = model_forward(x, params)
    p = probs.data.astype(np.float64)
    label = CLASSES[int(np.argmax(p))]
    print(f"{label} {p[0]:.9f} {p[1]:.9f}")
    return 0


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
            "eval": cmd_eval, "predict": cmd_predict}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
