"""Command-line interface: ``ddt <command> [options]``.

Exit codes: 0 success, 1 verification failure, 2 configuration or usage
error, 3 I/O or data-format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import encoder, synthdata
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import load_config
from .errors import ConfigError, DimensionError, DomainError, FormatError, IoError, ManifestError, ShapeError
from .prototype import build_prototype
from .protocol import (DEFAULT_SHOTS, evaluate, fewshot_sweep, finetune, pretrain, sample_shots)

log = logging.getLogger("ddt")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


def _echo_config(command, settings, **extra):
    resolved = {"command": command, **settings.as_dict(), **extra}
    print("effective configuration: " + json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)


def _shots(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"shot list must be comma-separated integers, got {text!r}") from None
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError("shot counts must be non-negative")
    return values


def _train_overrides(args):
    return dict(mode=getattr(args, "mode", None), seed=getattr(args, "seed", None),
                max_epochs=getattr(args, "max_epochs", None), batch_size=getattr(args, "batch_size", None),
                p_mix=getattr(args, "p_mix", None), p_flip=getattr(args, "p_flip", None),
                pretrain_lr=getattr(args, "lr", None), finetune_lr=getattr(args, "finetune_lr", None))


def _settings(args):
    settings = load_config(args.config)
    settings = settings.override("train", **_train_overrides(args))
    settings = settings.override("model", embedding_dim=getattr(args, "embedding_dim", None))
    settings.train.validate()
    return settings


def _model_for(ckpt: Checkpoint, settings):
    """Prototype for ``ckpt``; refuses when the config pins a different (C, K)."""
    explicit = settings.explicit.get("model", set())
    want = {"n_classes": ckpt.n_classes, "embedding_dim": ckpt.dim}
    for key, value in want.items():
        if key in explicit and getattr(settings.model, key) != value:
            raise ConfigError(
                f"config sets {key}={getattr(settings.model, key)} but the checkpoint was trained with {value}"
            )
    return build_prototype(ckpt.n_classes, ckpt.dim)


def cmd_gen_data(args):
    settings = load_config(args.config)
    settings = settings.override("data", preset=args.preset, seed=args.seed, image_size=args.image_size,
                                 per_class_train=args.per_class_train, per_class_val=args.per_class_val,
                                 per_class_test=args.per_class_test)
    _echo_config("gen-data", settings, out=args.out)
    d = settings.data
    spec = synthdata.preset(d.preset, d.seed, d.per_class_train, d.per_class_test, d.per_class_val, d.image_size)
    ds = synthdata.generate_domain(spec)
    manifest = synthdata.write_dataset(ds, args.out)
    print(json.dumps({"manifest": str(manifest), "samples": len(ds)}))
    return EXIT_OK


def cmd_pretrain(args):
    settings = _settings(args)
    _echo_config("pretrain", settings, data=args.data, out=args.out)
    source = synthdata.load_dataset(args.data)
    proto = build_prototype(settings.model.n_classes, settings.model.embedding_dim)
    ckpt, history = pretrain(settings.train, source, proto, settings.model.build_arch())
    save_checkpoint(ckpt, args.out)
    hist_path = Path(str(args.out) + ".history.csv")
    try:
        with open(hist_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "lr", "train_loss", "val_loss", "val_accuracy"])
            for rec in history:
                writer.writerow([rec.epoch, f"{rec.lr:.6g}", f"{rec.train_loss:.6f}", f"{rec.val_loss:.6f}",
                                 f"{rec.val_accuracy:.6f}"])
    except OSError as exc:
        raise IoError(f"cannot write {hist_path}: {exc}") from exc
    val = evaluate(ckpt, proto, source, "val")
    print(json.dumps({"checkpoint": str(args.out), "mode": ckpt.mode, "epochs": len(history),
                      "val_loss": round(val.mean_loss, 6), "val_accuracy": round(val.accuracy, 6)}))
    return EXIT_OK


def cmd_finetune(args):
    settings = _settings(args)
    _echo_config("finetune", settings, model=args.model, target=args.target, source=args.source,
                 shots=args.shots, out=args.out)
    ckpt = load_checkpoint(args.model)
    proto = _model_for(ckpt, settings)
    target = synthdata.load_dataset(args.target)
    source = synthdata.load_dataset(args.source)
    rng = np.random.default_rng(settings.train.seed)
    shots = sample_shots(target, args.shots, proto.n_classes, rng, settings.train.shots_per_class)
    tuned = finetune(ckpt, shots, source, settings.train, proto)
    save_checkpoint(tuned, args.out)
    print(json.dumps({"checkpoint": str(args.out), "shots": args.shots}))
    return EXIT_OK


def cmd_eval(args):
    settings = _settings(args)
    _echo_config("eval", settings, model=args.model, data=args.data, split=args.split)
    ckpt = load_checkpoint(args.model)
    proto = _model_for(ckpt, settings)
    ds = synthdata.load_dataset(args.data)
    m = evaluate(ckpt, proto, ds, args.split)
    print(json.dumps({"mode": ckpt.mode, "split": args.split, **m.as_dict()}, default=float))
    return EXIT_OK


def cmd_sweep(args):
    settings = _settings(args)
    _echo_config("sweep", settings, model=args.model, target=args.target, source=args.source,
                 shots=args.shots, runs=args.runs, jobs=args.jobs, out=args.out)
    ckpt = load_checkpoint(args.model)
    proto = _model_for(ckpt, settings)
    target = synthdata.load_dataset(args.target)
    source = synthdata.load_dataset(args.source)
    result = fewshot_sweep(ckpt, source, target, args.shots, args.runs, settings.train, proto, jobs=args.jobs)
    md_path = Path(args.out).with_suffix(".md")
    try:
        Path(args.out).write_bytes(result.to_csv().encode("utf-8"))
        md_path.write_bytes(result.to_markdown().encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write sweep output: {exc}") from exc
    print(result.to_markdown(), end="")
    return EXIT_OK


def run_gradcheck(seed: int):
    """Max relative gradient errors (ddt, ce) on a tiny random network."""
    arch = encoder.tiny_arch()
    proto = build_prototype(2, 4)
    params = encoder.init_encoder(arch, 4, 2, seed, head=True)
    rng = np.random.default_rng(seed)
    batch = encoder.Batch(rng.random((4, arch.input_size, arch.input_size, 3)), np.array([0, 1, 1, 0]))
    return (encoder.finite_diff_check(params, batch, proto, loss="ddt"),
            encoder.finite_diff_check(params, batch, proto, loss="ce"))


def cmd_gradcheck(args):
    print(f"effective configuration: {json.dumps({'command': 'gradcheck', 'seed': args.seed, 'tol': GRADCHECK_TOL})}",
          file=sys.stderr)
    ddt_err, ce_err = run_gradcheck(args.seed)
    ok = ddt_err <= GRADCHECK_TOL and ce_err <= GRADCHECK_TOL
    print(json.dumps({"ddt_max_rel_error": ddt_err, "ce_max_rel_error": ce_err, "pass": bool(ok)}))
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser():
    parser = argparse.ArgumentParser(prog="ddt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_train(p, mode=False):
        p.add_argument("--config", help="INI config file ([model], [train], [data]); flags override it")
        p.add_argument("--seed", type=int, help="training seed (default 0)")
        p.add_argument("--batch-size", type=int, help="mini-batch size (default 32)")
        p.add_argument("--p-mix", type=float, help="spatial mixup probability (default 0.5)")
        p.add_argument("--p-flip", type=float, help="horizontal flip probability (default 0.5)")
        if mode:
            p.add_argument("--mode", choices=("ddt", "ce"), help="loss: W2 prototypes or cross-entropy (default ddt)")
            p.add_argument("--max-epochs", type=int, help="epoch cap (default 200)")
            p.add_argument("--lr", type=float, help="pre-training learning rate (default 1e-3)")
            p.add_argument("--embedding-dim", type=int, help="latent dimension K (default 16)")
        else:
            p.add_argument("--finetune-lr", type=float, help="fine-tuning learning rate (default 1e-5)")

    p = sub.add_parser("gen-data", help="generate a synthetic domain as PPM files + index.tsv")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", choices=("A", "B"), help="domain preset (default A)")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.add_argument("--image-size", type=int, help="image side length (default 32)")
    p.add_argument("--per-class-train", type=int, help="train images per class (default 500)")
    p.add_argument("--per-class-val", type=int, help="validation images per class (default 100)")
    p.add_argument("--per-class-test", type=int, help="test images per class (default 100)")
    p.add_argument("--config", help="INI config file")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pre-train an encoder on a source dataset")
    p.add_argument("--data", required=True, help="source dataset directory (needs train and val splits)")
    p.add_argument("--out", required=True, help="checkpoint path; history goes to <out>.history.csv")
    common_train(p, mode=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on k target images per class")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True, help="target dataset directory")
    p.add_argument("--source", required=True, help="source dataset directory (mixup partners)")
    p.add_argument("--shots", type=int, required=True, help="images per class (0 = zero-shot copy)")
    p.add_argument("--out", required=True)
    common_train(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=synthdata.SPLITS)
    p.add_argument("--config", help="INI config file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="few-shot sweep; writes CSV and a markdown table")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--shots", type=_shots, default=list(DEFAULT_SHOTS),
                   help="comma-separated shot counts (default 0,5,10,25,50,100)")
    p.add_argument("--runs", type=int, default=10, help="runs per shot count (default 10)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", required=True, help="CSV path; the markdown table goes next to it as .md")
    common_train(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of both losses on a tiny network")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DimensionError, DomainError, ShapeError) as exc:
        print(f"ddt {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, FormatError, ManifestError, OSError) as exc:
        print(f"ddt {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
