"""Command-line entry point: make-toy, train, translate, strip, evaluate.

Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime failure. Errors
print a single `Category: message` line to stderr. Every training run writes
its effective merged config, loss history and checkpoints under a run
directory (runs/<name>/ by default).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation, networks, training
from .config import TrainingConfig, apply_overrides, load_config, save_config
from .errors import (CheckpointWriteError, ClientFailure, DegenerateFeature, EmptyBatch,
                     EmptyTestSet, InvalidLabel, InvalidResolution, ManifestParseError,
                     MissingImage, NonFiniteLoss, NotToyImage, OutOfRangeAge, ShapeMismatch,
                     UnknownConfigKey, ZeroVector)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_USAGE_ERRORS = (UnknownConfigKey,)
_DATA_ERRORS = (ManifestParseError, MissingImage, OutOfRangeAge, InvalidResolution,
                EmptyTestSet, EmptyBatch, InvalidLabel, NotToyImage, ShapeMismatch,
                ZeroVector, FileNotFoundError)
_RUNTIME_ERRORS = (NonFiniteLoss, CheckpointWriteError, ClientFailure, DegenerateFeature)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agegan",
                                     description="Continuous-age face translation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_toy = sub.add_parser("make-toy", help="materialize a synthetic toy corpus")
    p_toy.add_argument("--seed", type=int, default=7)
    p_toy.add_argument("--identities", type=int, default=8)
    p_toy.add_argument("--samples-per-identity", type=int, default=32)
    p_toy.add_argument("--resolution", type=int, default=32)
    p_toy.add_argument("--output-dir", type=Path, default=Path("toy-corpus"))

    p_train = sub.add_parser("train", help="train on a manifest")
    p_train.add_argument("--manifest", type=Path, required=True)
    p_train.add_argument("--config", type=Path, default=None,
                         help="key=value config file; defaults are the full-scale settings")
    p_train.add_argument("--toy-preset", action="store_true",
                         help="start from the desk-scale preset instead of full-scale defaults")
    p_train.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="KEY=VALUE", help="override one config key (repeatable)")
    p_train.add_argument("--seed", type=int, default=None, help="shorthand for --set seed=N")
    p_train.add_argument("--steps", type=int, default=None,
                         help="shorthand for --set total_steps=N")
    p_train.add_argument("--run-dir", type=Path, default=None,
                         help="output directory (default runs/<name>)")
    p_train.add_argument("--name", default="run")
    p_train.add_argument("--resume-from", type=Path, default=None)
    p_train.add_argument("--checkpoint-interval", type=int, default=500)
    p_train.add_argument("--log-every", type=int, default=100)

    p_tr = sub.add_parser("translate", help="translate one image to a target age")
    p_tr.add_argument("--checkpoint", type=Path, required=True)
    p_tr.add_argument("--input", type=Path, required=True)
    p_tr.add_argument("--age", type=float, required=True)
    p_tr.add_argument("--output", type=Path, required=True)

    p_strip = sub.add_parser("strip", help="render an aging strip across an age range")
    p_strip.add_argument("--checkpoint", type=Path, required=True)
    p_strip.add_argument("--input", type=Path, required=True)
    p_strip.add_argument("--from", dest="from_age", type=float, required=True)
    p_strip.add_argument("--to", dest="to_age", type=float, required=True)
    p_strip.add_argument("--step", type=float, default=2.0)
    p_strip.add_argument("--output-dir", type=Path, required=True)

    p_eval = sub.add_parser("evaluate", help="run both evaluation reports")
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--manifest", type=Path, required=True)
    p_eval.add_argument("--output-dir", type=Path, required=True)
    p_eval.add_argument("--threshold", type=float, default=73.795)
    p_eval.add_argument("--max-samples", type=int, default=32,
                        help="cap on evaluated samples, 0 for all")
    p_eval.add_argument("--cache-dir", type=Path, default=None,
                        help="cache verifier calls on disk under this directory")
    p_eval.add_argument("--seed", type=int, default=0)
    return parser


def _merged_config(args) -> TrainingConfig:
    config = TrainingConfig.toy() if args.toy_preset else TrainingConfig()
    if args.config is not None:
        config = load_config(args.config, base=config)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.steps is not None:
        overrides.append(f"total_steps={args.steps}")
    return apply_overrides(config, overrides)


def _cmd_make_toy(args) -> int:
    samples = data_mod.generate_toy_corpus(args.seed, args.identities,
                                           args.samples_per_identity, args.resolution)
    manifest = data_mod.materialize_corpus(samples, args.output_dir)
    print(f"wrote {len(samples)} samples, manifest at {manifest}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _merged_config(args)
    entries, stats = data_mod.load_manifest(args.manifest)
    samples = data_mod.load_samples(entries)
    run_dir = args.run_dir if args.run_dir is not None else Path("runs") / args.name
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / "config.txt")
    state, history = training.train(
        config, samples, run_dir, stats=stats, resume_from=args.resume_from,
        checkpoint_interval=args.checkpoint_interval, log_every=args.log_every)
    print(f"finished at step {state.step}; history and checkpoints in {run_dir}")
    return EXIT_OK


def _load_bundle(checkpoint: Path):
    bundle, stats_dict, _ = networks.load_checkpoint(checkpoint)
    return bundle, data_mod.DatasetStats(**stats_dict)


def _cmd_translate(args) -> int:
    bundle, stats = _load_bundle(args.checkpoint)
    image = data_mod.load_image(args.input)
    out = evaluation.translate_image(bundle, image, args.age, stats)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    data_mod.save_image(args.output, out)
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_strip(args) -> int:
    bundle, stats = _load_bundle(args.checkpoint)
    image = data_mod.load_image(args.input)
    if args.step <= 0:
        raise UnknownConfigKey("--step must be positive")
    ages = list(np.arange(args.from_age, args.to_age + 1e-9, args.step))
    frames = evaluation.generate_aging_strip(bundle, image, ages, stats)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    for age, frame in zip(ages, frames):
        data_mod.save_image(args.output_dir / f"age_{age:05.1f}.png", frame)
    data_mod.save_image(args.output_dir / "strip.png", np.concatenate(frames, axis=1))
    print(f"wrote {len(frames)} frames and strip.png to {args.output_dir}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    bundle, stats = _load_bundle(args.checkpoint)
    entries, _ = data_mod.load_manifest(args.manifest)
    if args.max_samples:
        entries = entries[:args.max_samples]
    samples = data_mod.load_samples(entries)
    client = evaluation.internal_oracle(data_mod.toy_render_spec(bundle.config.resolution))
    if args.cache_dir is not None:
        client = evaluation.DiskCachedClient(client, args.cache_dir)
    groups = evaluation.default_age_groups()
    args.output_dir.mkdir(parents=True, exist_ok=True)
    age_report = evaluation.evaluate_age_fidelity(bundle, samples, groups, client, stats,
                                                  seed=args.seed)
    evaluation.write_age_report(age_report, args.output_dir / "age_report.csv",
                                args.output_dir / "age_report.txt")
    ver_report = evaluation.evaluate_identity_preservation(bundle, samples, groups, client,
                                                           stats, args.threshold)
    evaluation.write_verification_report(ver_report, args.output_dir / "verification_report.csv",
                                         args.output_dir / "verification_report.txt")
    print(f"wrote age and verification reports to {args.output_dir}")
    return EXIT_OK


_COMMANDS = {
    "make-toy": _cmd_make_toy,
    "train": _cmd_train,
    "translate": _cmd_translate,
    "strip": _cmd_strip,
    "evaluate": _cmd_evaluate,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"DataError: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _RUNTIME_ERRORS as exc:
        print(f"RuntimeFailure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything unexpected is still a single parseable line
        print(f"RuntimeFailure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
