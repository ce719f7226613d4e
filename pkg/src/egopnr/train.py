"""Multi-task fine-tuning loop with per-epoch validation and best-checkpoint selection."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import labels, model
from .annotations import DatasetManifest, FeatureStore
from .errors import ConfigError, NumericError
from .evaluate import evaluate_model
from .labels import Batch, MixConfig
from .model import ModelConfig
from .optim import AdamWState, OptimConfig, adamw_step, layer_lr_scale, lr_at
from .sampling import SamplerKind, sample_clip

log = logging.getLogger(__name__)

SELECTION_METRICS = ("oscc_accuracy", "temporal_error", "combined")

# Recipe rows kept for the record; they describe pixel-level processing that
# this harness does not run.
RECORDED_ONLY = {
    "optimizer": "adamw",
    "lr_schedule": "cosine",
    "patch_size": 16,
    "tubelet_size": 2,
    "input_size": 224,
    "augmentation": "RandAugment(9, 0.5)",
}


@dataclass(frozen=True)
class TrainConfig:
    optim: OptimConfig = field(default_factory=OptimConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: str = "stratified"
    n_frames: int = 16
    lambda1: float = 1.0
    lambda2: float = 1.0
    seed: int = 0
    epochs: int = 100
    eval_every: int = 1
    selection: str = "combined"
    test_views: int = 3
    checkpoint_dir: str | None = None

    def validate(self) -> None:
        self.optim.validate()
        self.mix.validate()
        self.model.validate()
        SamplerKind.parse(self.sampler)
        if self.epochs < 1 or self.eval_every < 1:
            raise ConfigError("epochs and eval_every must be >= 1")
        if not (math.isfinite(self.lambda1) and math.isfinite(self.lambda2)):
            raise ConfigError("loss weights must be finite")
        if self.selection not in SELECTION_METRICS:
            raise ConfigError(f"selection must be one of {SELECTION_METRICS}")
        if self.n_frames < 1 or self.test_views < 1:
            raise ConfigError("n_frames and test_views must be >= 1")

    # Flat JSON layout, one key per recipe row.
    def to_dict(self) -> dict:
        o, m, mc = self.optim, self.mix, self.model
        d = dict(RECORDED_ONLY)
        d.update({
            "base_lr": o.base_lr,
            "weight_decay": o.weight_decay,
            "betas": list(o.betas),
            "eps": o.eps,
            "batch_size": o.batch_size,
            "epochs": self.epochs,
            "warmup_lr": o.warmup_lr,
            "warmup_epochs": o.warmup_epochs,
            "layer_decay": o.layer_decay,
            "min_lr": o.min_lr,
            "loss_weight": [self.lambda1, self.lambda2],
            "drop_path": mc.drop_path_rate,
            "mixup": m.mixup_alpha,
            "cutmix": m.cutmix_alpha,
            "label_smoothing": m.smoothing_eps,
            "mix_switch_prob": m.switch_prob,
            "n_frames": self.n_frames,
            "sampler": self.sampler,
            "hidden_dim": mc.hidden_dim,
            "depth": mc.depth,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "selection": self.selection,
            "test_views": self.test_views,
            "checkpoint_dir": self.checkpoint_dir,
        })
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        default = cls().to_dict()
        unknown = set(d) - set(default)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        for k, v in RECORDED_ONLY.items():
            if k in d and d[k] != v:
                raise ConfigError(f"{k}={d[k]!r} is not supported (only {v!r})")
        merged = {**default, **d}
        try:
            lam = merged["loss_weight"]
            if len(lam) != 2:
                raise ConfigError("loss_weight must have two entries")
            cfg = cls(
                optim=OptimConfig(
                    base_lr=float(merged["base_lr"]),
                    weight_decay=float(merged["weight_decay"]),
                    betas=tuple(float(b) for b in merged["betas"]),
                    eps=float(merged["eps"]),
                    batch_size=int(merged["batch_size"]),
                    warmup_lr=float(merged["warmup_lr"]),
                    warmup_epochs=merged["warmup_epochs"],
                    layer_decay=float(merged["layer_decay"]),
                    min_lr=float(merged["min_lr"]),
                ),
                mix=MixConfig(
                    mixup_alpha=float(merged["mixup"]),
                    cutmix_alpha=float(merged["cutmix"]),
                    smoothing_eps=float(merged["label_smoothing"]),
                    switch_prob=float(merged["mix_switch_prob"]),
                ),
                model=ModelConfig(
                    hidden_dim=int(merged["hidden_dim"]),
                    depth=int(merged["depth"]),
                    drop_path_rate=float(merged["drop_path"]),
                    n_frames=int(merged["n_frames"]),
                ),
                sampler=str(merged["sampler"]),
                n_frames=int(merged["n_frames"]),
                lambda1=float(lam[0]),
                lambda2=float(lam[1]),
                seed=int(merged["seed"]),
                epochs=int(merged["epochs"]),
                eval_every=int(merged["eval_every"]),
                selection=str(merged["selection"]),
                test_views=int(merged["test_views"]),
                checkpoint_dir=merged["checkpoint_dir"],
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad training config value: {e}") from e
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: malformed JSON at line {e.lineno}: {e.msg}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config root must be an object")
        return cls.from_dict(doc)


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    steps: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


@dataclass
class TrainResult:
    history: TrainHistory
    best_params: dict
    final_params: dict
    model_config: ModelConfig


def selection_score(record: dict, metric: str) -> float:
    """Higher is better. Missing temporal error counts as a full clip duration."""
    acc = record["val_oscc_accuracy"]
    err = record["val_abs_temporal_error_s"]
    dur = record["val_clip_duration_s"]
    if err is None:
        err = dur
    if metric == "oscc_accuracy":
        return acc
    if metric == "temporal_error":
        return -err
    if metric == "combined":
        return acc - err / dur
    raise ConfigError(f"unknown selection metric {metric!r}")


def select_best(history, metric: str = "combined") -> int:
    """Index of the best evaluated epoch; ties go to the earlier one.

    ``history`` is a :class:`TrainHistory` or a list of records. Records may
    also be plain accuracies/errors (floats), interpreted per ``metric``.
    """
    records = history.records if isinstance(history, TrainHistory) else list(history)
    if not records:
        raise ConfigError("empty history")
    best, best_score = None, -math.inf
    for i, r in enumerate(records):
        if isinstance(r, (int, float)):
            score = -r if metric == "temporal_error" else r
        else:
            if r.get("val_oscc_accuracy") is None:
                continue
            score = selection_score(r, metric)
        if score > best_score:
            best, best_score = i, score
    if best is None:
        raise ConfigError("no evaluated epochs in history")
    return best


def _param_groups(params: dict, cfg: ModelConfig, decay: float):
    scales = {k: layer_lr_scale(model.layer_index(k, cfg.depth), cfg.depth, decay) for k in params}
    mask = {k: model.decays(k) for k in params}
    return scales, mask


def _make_batch(clips, store, cfg: TrainConfig, kind, rng):
    feats, targets = [], []
    for ann in clips:
        view = int(rng.integers(store.views))
        sc = sample_clip(ann, cfg.n_frames, kind, rng, trim=True)
        feats.append(store[ann.clip_id][view, list(sc.frame_indices), :])
        targets.append(labels.build_targets(sc, ann))
    return Batch.stack(feats, targets)


def train(
    manifest_train: DatasetManifest,
    manifest_val: DatasetManifest,
    store_train: FeatureStore,
    store_val: FeatureStore,
    cfg: TrainConfig,
    out_dir=None,
) -> TrainResult:
    """Fit the two-head model by minimising ``lambda1 * L_oscc + lambda2 * L_tl``.

    Every epoch re-trims and re-samples each training clip. Validation uses
    the untrimmed clip with evenly spaced frames, averaged over
    ``cfg.test_views`` views. If ``out_dir`` (or ``cfg.checkpoint_dir``) is set,
    ``history.jsonl``, ``steps.jsonl`` and ``best.ckpt`` are written there.
    """
    cfg.validate()
    store_train.check_covers(manifest_train)
    store_val.check_covers(manifest_val)
    if len(manifest_train) == 0 or len(manifest_val) == 0:
        raise ConfigError("train and val manifests must be non-empty")
    kind = SamplerKind.parse(cfg.sampler)
    mcfg = dataclasses.replace(cfg.model, feature_dim=manifest_train.feature_dim,
                               n_frames=cfg.n_frames)
    # schedule spans the run; short runs shorten warmup to fit
    ocfg = dataclasses.replace(cfg.optim, total_epochs=cfg.epochs,
                               warmup_epochs=min(cfg.optim.warmup_epochs, cfg.epochs))
    ocfg.validate()
    out = Path(out_dir or cfg.checkpoint_dir) if (out_dir or cfg.checkpoint_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    init_ss, loop_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    params = model.init(mcfg, int(init_ss.generate_state(1)[0]))
    rng = np.random.default_rng(loop_ss)
    state = AdamWState.zeros_like(params)
    scales, mask = _param_groups(params, mcfg, ocfg.layer_decay)

    clips = manifest_train.clips
    bs = ocfg.batch_size
    steps_per_epoch = math.ceil(len(clips) / bs)
    val_dur = float(np.mean([c.duration_s for c in manifest_val.clips]))
    views = min(cfg.test_views, store_val.views)

    history = TrainHistory()
    best_params, best_score = None, -math.inf
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(clips))
        sums = np.zeros(2)
        seen = 0
        lr = None
        for b in range(steps_per_epoch):
            chunk = [clips[i] for i in order[b * bs:(b + 1) * bs]]
            batch = labels.augment(_make_batch(chunk, store_train, cfg, kind, rng), cfg.mix, rng)
            lr = lr_at(step, steps_per_epoch, ocfg)
            try:
                lb, grads = model.loss_and_grad(
                    params, mcfg, batch, cfg.lambda1, cfg.lambda2, "train", rng,
                    clip_ids=[c.clip_id for c in chunk],
                )
            except NumericError as e:
                raise NumericError(f"epoch {epoch} step {step}: {e}") from e
            adamw_step(params, grads, state, lr, ocfg, scales, mask)
            history.steps.append({"step": step, "epoch": epoch, "lr": lr, "loss": lb.to_dict()})
            sums += len(chunk) * np.array([lb.l_oscc, lb.l_tl])
            seen += len(chunk)
            step += 1

        l_o, l_t = (sums / seen).tolist()
        rec = {
            "epoch": epoch,
            "train_l_oscc": l_o,
            "train_l_tl": l_t,
            "train_total": cfg.lambda1 * l_o + cfg.lambda2 * l_t,
            "lambda1": cfg.lambda1,
            "lambda2": cfg.lambda2,
            "lr": lr,
            "val_oscc_accuracy": None,
            "val_abs_temporal_error_s": None,
            "val_clip_duration_s": val_dur,
        }
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            report, _ = evaluate_model(params, mcfg, manifest_val, store_val, views,
                                       with_baselines=False)
            rec["val_oscc_accuracy"] = report.oscc_accuracy
            rec["val_abs_temporal_error_s"] = report.abs_temporal_error_mean_s
            score = selection_score(rec, cfg.selection)
            if score > best_score:
                best_score = score
                history.best_epoch = epoch
                best_params = {k: v.copy() for k, v in params.items()}
                if out is not None:
                    model.save_checkpoint(out / "best.ckpt", mcfg, best_params)
        history.records.append(rec)
        log.info(
            "epoch %d loss %.4f (oscc %.4f, tl %.4f) val acc %s err %s",
            epoch, rec["train_total"], l_o, l_t,
            rec["val_oscc_accuracy"], rec["val_abs_temporal_error_s"],
        )

    if out is not None:
        (out / "history.jsonl").write_text(history.to_jsonl())
        (out / "steps.jsonl").write_text(
            "".join(json.dumps(s, sort_keys=True) + "\n" for s in history.steps)
        )
        model.save_checkpoint(out / "last.ckpt", mcfg, params)
    return TrainResult(history, best_params, params, mcfg)
