"""``egopnr`` command-line entry point.

Subcommands: gen, analyze-sampling, train, eval, baseline. Exit status is 0
on success, 2 on usage errors and 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluate, model, sampling
from .annotations import (
    SynthConfig,
    generate_synthetic,
    parse_prior,
    read_features,
    read_manifest,
    write_features,
    write_manifest,
)
from .errors import ConfigError, EgoPNRError
from .train import TrainConfig, train

log = logging.getLogger("egopnr")

_SAMPLER_FLAGS = {"even": "even", "stratified": "stratified", "random": "random"}


def _setup_logging() -> None:
    level = os.environ.get("EGO_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_split(data_dir, split: str):
    d = Path(data_dir)
    return read_manifest(d / f"{split}.json"), read_features(d / f"{split}.egf")


def _split_seeds(seed: int, k: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def cmd_gen(args) -> int:
    base = SynthConfig(
        p_pos=args.p_pos, snr=args.snr, feature_dim=args.dim, views=args.views,
        bump_half_width=args.bump_half_width, world_seed=args.seed, **parse_prior(args.prior),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = [("train", args.clips, "c"), ("val", args.val_clips, "v"), ("test", args.test_clips, "t")]
    for (split, count, prefix), seed in zip(splits, _split_seeds(args.seed, 3)):
        if count == 0 and split != "train":
            continue
        cfg = dataclasses.replace(base, count=count, split=split, id_prefix=prefix)
        manifest, store = generate_synthetic(cfg, seed)
        write_manifest(manifest, out / f"{split}.json")
        write_features(store, out / f"{split}.egf")
        log.info("wrote %d %s clips to %s", count, split, out)
    return 0


def cmd_analyze(args) -> int:
    kind = sampling.SamplerKind.parse(args.sampler)
    stats = sampling.monte_carlo_shift(
        kind, args.n, args.fps, args.trials, args.seed,
        trim_frames=args.trim_frames, workers=args.workers,
    )
    s_min = sampling.trim_length(sampling.TRIM_MIN_S, args.fps)
    s_max = sampling.trim_length(sampling.TRIM_MAX_S, args.fps)
    if args.trim_frames is not None:
        s_min = s_max = args.trim_frames
    report = {
        "sampler": kind.value,
        "n": args.n,
        "fps": args.fps,
        "trials": args.trials,
        "seed": args.seed,
        "trim_frames": args.trim_frames,
        "shift": stats.to_dict(),
        "half_gap_bound_s": sampling.half_gap_expected_shift(args.n, args.fps, s_min, s_max),
    }
    _write_text(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_train(args) -> int:
    if args.write_template:
        _write_text(args.write_template, TrainConfig().to_json())
        return 0
    if not (args.config and args.data and args.out):
        raise ConfigError("train needs --config, --data and --out (or --write-template)")
    cfg = TrainConfig.load(args.config)
    mt, st = _load_split(args.data, "train")
    mv, sv = _load_split(args.data, "val")
    out = Path(args.out)
    result = train(mt, mv, st, sv, cfg, out_dir=out)
    (out / "config.json").write_text(cfg.to_json())
    best = result.history.records[result.history.best_epoch]
    log.info("best epoch %d: acc %s err %s", result.history.best_epoch,
             best["val_oscc_accuracy"], best["val_abs_temporal_error_s"])
    return 0


def cmd_eval(args) -> int:
    cfg, params = model.load_checkpoint(args.checkpoint)
    manifest, store = _load_split(args.data, args.split)
    preds = evaluate.predict_manifest(params, cfg, manifest, store, args.views)
    if args.split == "test":
        # test labels are not used for scoring
        doc = {"split": "test", "predictions": [dataclasses.asdict(p) for p in preds]}
        _write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return 0
    report = evaluate.compute_metrics(manifest, preds)
    report.baselines = {
        "always_positive": evaluate.baseline_always_positive(manifest),
        "center": evaluate.baseline_fixed_fraction(manifest, 0.5),
        "fixed_0.45": evaluate.baseline_fixed_fraction(manifest, 0.45),
    }
    _write_text(args.out, report.to_json())
    if args.csv:
        evaluate.write_error_csv(args.csv, manifest, preds)
    return 0


def cmd_baseline(args) -> int:
    manifest = read_manifest(Path(args.data) / f"{args.split}.json")
    if args.mode == "positive":
        report = evaluate.baseline_always_positive(manifest)
    elif args.mode == "center":
        report = evaluate.baseline_fixed_fraction(manifest, 0.5)
    else:
        if args.fraction is None:
            raise ConfigError("--mode fixed needs --fraction")
        report = evaluate.baseline_fixed_fraction(manifest, args.fraction)
    _write_text(args.out, report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egopnr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen", help="generate a synthetic dataset (manifests + feature files)")
    g.add_argument("--clips", type=int, required=True, help="number of training clips")
    g.add_argument("--val-clips", type=int, default=None,
                   help="number of validation clips (default: clips // 4, at least 1)")
    g.add_argument("--test-clips", type=int, default=0, help="number of test clips (default 0)")
    g.add_argument("--p-pos", type=float, default=0.477,
                   help="fraction of clips with a state change (default 0.477)")
    g.add_argument("--prior", default="uniform",
                   help="PNR time prior: 'uniform' or 'beta@F' peaked at fraction F")
    g.add_argument("--snr", type=float, default=8.0, help="bump magnitude over unit noise")
    g.add_argument("--dim", type=int, default=16, help="feature dimension")
    g.add_argument("--views", type=int, default=3, help="views per clip")
    g.add_argument("--bump-half-width", type=int, default=SynthConfig.bump_half_width,
                   help="half-width of the PNR bump in frames")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("analyze-sampling", help="Monte-Carlo sampling shift vs the half-gap bound")
    a.add_argument("--sampler", choices=sorted(_SAMPLER_FLAGS), default="even",
                   help="frame sampler")
    a.add_argument("--n", type=int, default=16, help="frames sampled per clip")
    a.add_argument("--fps", type=float, default=30.0, help="frame rate")
    a.add_argument("--trials", type=int, default=1_000_000, help="Monte-Carlo trials")
    a.add_argument("--seed", type=int, default=0, help="random seed")
    a.add_argument("--trim-frames", type=int, default=None,
                   help="fix the trim length instead of drawing it")
    a.add_argument("--workers", type=int, default=1, help="worker threads (result is unchanged)")
    a.add_argument("--out", default=None, help="report JSON path (default: stdout)")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("train", help="fine-tune the two-head model")
    t.add_argument("--config", help="training config JSON")
    t.add_argument("--data", help="dataset directory written by 'gen'")
    t.add_argument("--out", help="output directory for history and checkpoints")
    t.add_argument("--write-template", metavar="FILE",
                   help="write a default config (the full recipe) to FILE and exit")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint with multi-view logit averaging")
    e.add_argument("--checkpoint", required=True, help="checkpoint file (.ckpt)")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--split", choices=["val", "test"], default="val", help="split to evaluate")
    e.add_argument("--views", type=int, default=3, help="views averaged per clip")
    e.add_argument("--out", default=None, help="metrics JSON path (default: stdout)")
    e.add_argument("--csv", default=None, help="optional per-clip error CSV")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="score a constant predictor")
    b.add_argument("--mode", choices=["positive", "center", "fixed"], required=True,
                   help="always-positive, always-center or fixed fraction")
    b.add_argument("--fraction", type=float, default=None, help="fraction for --mode fixed")
    b.add_argument("--data", required=True, help="dataset directory")
    b.add_argument("--split", choices=["train", "val"], default="val", help="split to score")
    b.add_argument("--out", default=None, help="report JSON path (default: stdout)")
    b.set_defaults(func=cmd_baseline)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "val_clips", 0) is None:
        args.val_clips = max(1, args.clips // 4)
    _setup_logging()
    try:
        return args.func(args)
    except (EgoPNRError, OSError) as e:
        print(f"egopnr {args.command}: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
