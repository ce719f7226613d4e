"""Inference, metrics and the simple baselines.

At test time each clip has several views (stand-ins for random spatial
crops). Every view is run through the model on the same evenly spaced frame
grid over the whole clip, and the raw logits are averaged before any softmax
or argmax.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .annotations import DatasetManifest, FeatureStore
from .errors import ConfigError, ContractError
from .model import ModelConfig, forward_batch, softmax


@dataclass(frozen=True)
class Prediction:
    clip_id: str
    oscc_prob_change: float
    pnr_time_s: float | None = None

    @property
    def predicts_change(self) -> bool:
        return self.oscc_prob_change > 0.5


@dataclass
class MetricsReport:
    oscc_accuracy: float | None
    abs_temporal_error_mean_s: float | None
    n_clips: int
    n_state_change_clips: int
    n_temporal_scored: int = 0
    n_missed_pnr: int = 0
    n_spurious_pnr: int = 0
    name: str = "model"
    baselines: dict[str, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["baselines"] = {k: v.to_dict() for k, v in self.baselines.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def aggregate_views(logit_sets):
    """Entrywise mean of raw logits over views, per head."""
    if len(logit_sets) == 0:
        raise ContractError("need at least one view")
    o = [np.asarray(v[0], dtype=np.float64) for v in logit_sets]
    t = [np.asarray(v[1], dtype=np.float64) for v in logit_sets]
    if len({a.shape for a in o}) != 1 or len({a.shape for a in t}) != 1:
        raise ContractError("views disagree on logit shapes")
    return np.mean(o, axis=0), np.mean(t, axis=0)


def eval_grid(num_frames: int, n: int) -> np.ndarray:
    """Evenly spaced indices over the untrimmed clip."""
    if n > num_frames:
        raise ContractError(f"cannot place {n} frames in a {num_frames}-frame clip")
    idx = kernels.sample_indices(
        kernels.EVEN, n, np.array([0]), np.array([num_frames]), np.zeros((1, n))
    )
    return idx[0]


def _decode(clip_id: str, oscc, tl, grid, fps) -> Prediction:
    N = len(grid)
    p_change = float(softmax(oscc)[1])
    cls = int(np.argmax(tl))
    t = None if cls == N else float(grid[cls] / fps)
    return Prediction(clip_id, p_change, t)


def predict(params, cfg: ModelConfig, clip_views: np.ndarray, fps: float,
            clip_id: str = "", views: int | None = None) -> Prediction:
    """Run every view on the eval grid, average raw logits, decode.

    ``clip_views`` is ``[V, num_frames, D]``; ``views`` keeps only the first
    ``views`` of them.
    """
    clip_views = np.asarray(clip_views)
    if clip_views.ndim != 3:
        raise ContractError(f"expected [views, frames, dim], got {clip_views.shape}")
    if views is not None:
        clip_views = clip_views[:views]
    grid = eval_grid(clip_views.shape[1], cfg.n_frames)
    o, t, _ = forward_batch(params, cfg, clip_views[:, grid, :], mode="eval")
    agg_o, agg_t = aggregate_views(list(zip(o, t)))
    return _decode(clip_id, agg_o, agg_t, grid, fps)


def predict_manifest(params, cfg: ModelConfig, manifest: DatasetManifest, store: FeatureStore,
                     views: int | None = None, chunk: int = 256) -> list[Prediction]:
    """Batched :func:`predict` over a manifest; same results, fewer Python calls."""
    store.check_covers(manifest)
    V = store.views if views is None else views
    if not 1 <= V <= store.views:
        raise ConfigError(f"views must lie in [1, {store.views}]")
    grid = eval_grid(store.frames, cfg.n_frames)
    preds = []
    clips = manifest.clips
    for s in range(0, len(clips), chunk):
        part = clips[s:s + chunk]
        x = np.stack([store[c.clip_id][:V, grid, :] for c in part])
        flat = x.reshape(len(part) * V, cfg.n_frames, store.dim)
        o, t, _ = forward_batch(params, cfg, flat, mode="eval")
        o = o.reshape(len(part), V, -1).mean(axis=1)
        t = t.reshape(len(part), V, -1).mean(axis=1)
        for c, oi, ti in zip(part, o, t):
            preds.append(_decode(c.clip_id, oi, ti, grid, c.fps))
    return preds


def abs_temporal_error(pred_time_s: float, gt_frame: int, fps: float) -> float:
    return abs(pred_time_s - gt_frame / fps)


def compute_metrics(manifest: DatasetManifest, predictions: list[Prediction],
                    name: str = "model") -> MetricsReport:
    """Accuracy over all clips; temporal error over clips where both the label
    and the prediction place a PNR. Disagreements are counted separately."""
    by_id = {p.clip_id: p for p in predictions}
    correct = 0
    errs = []
    missed = spurious = 0
    for c in manifest.clips:
        p = by_id.get(c.clip_id)
        if p is None:
            raise ContractError(f"no prediction for clip {c.clip_id}")
        correct += p.predicts_change == c.has_state_change
        if c.has_state_change and p.pnr_time_s is not None:
            errs.append(abs_temporal_error(p.pnr_time_s, c.pnr_frame, c.fps))
        elif c.has_state_change:
            missed += 1
        elif p.pnr_time_s is not None:
            spurious += 1
    n = len(manifest.clips)
    return MetricsReport(
        oscc_accuracy=correct / n if n else None,
        abs_temporal_error_mean_s=float(np.mean(errs)) if errs else None,
        n_clips=n,
        n_state_change_clips=sum(c.has_state_change for c in manifest.clips),
        n_temporal_scored=len(errs),
        n_missed_pnr=missed,
        n_spurious_pnr=spurious,
        name=name,
    )


def baseline_always_positive(manifest: DatasetManifest) -> MetricsReport:
    n = len(manifest.clips)
    pos = sum(c.has_state_change for c in manifest.clips)
    return MetricsReport(
        oscc_accuracy=pos / n if n else None,
        abs_temporal_error_mean_s=None,
        n_clips=n,
        n_state_change_clips=pos,
        name="always_positive",
    )


def baseline_fixed_fraction(manifest: DatasetManifest, fraction: float) -> MetricsReport:
    """Predict the PNR at ``fraction * duration`` for every state-change clip."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must lie in [0, 1], got {fraction}")
    pos = [c for c in manifest.clips if c.has_state_change]
    if pos:
        pred = np.array([fraction * c.num_frames / c.fps for c in pos])
        gt = np.array([c.pnr_frame / c.fps for c in pos])
        err = float(np.abs(pred - gt).mean())
    else:
        err = None
    return MetricsReport(
        oscc_accuracy=None,
        abs_temporal_error_mean_s=err,
        n_clips=len(manifest.clips),
        n_state_change_clips=len(pos),
        n_temporal_scored=len(pos),
        name="center" if fraction == 0.5 else f"fixed_{fraction:g}",
    )


def evaluate_model(params, cfg: ModelConfig, manifest: DatasetManifest, store: FeatureStore,
                   views: int | None = None, with_baselines: bool = True):
    preds = predict_manifest(params, cfg, manifest, store, views)
    report = compute_metrics(manifest, preds)
    if with_baselines:
        report.baselines = {
            "always_positive": baseline_always_positive(manifest),
            "center": baseline_fixed_fraction(manifest, 0.5),
            "fixed_0.45": baseline_fixed_fraction(manifest, 0.45),
        }
    return report, preds


def write_error_csv(path, manifest: DatasetManifest, predictions: list[Prediction]) -> None:
    by_id = {p.clip_id: p for p in predictions}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["clip_id", "has_state_change", "gt_pnr_s", "oscc_prob_change",
                    "pred_pnr_s", "abs_error_s"])
        for c in manifest.clips:
            p = by_id[c.clip_id]
            err = ""
            if c.has_state_change and p.pnr_time_s is not None:
                err = repr(abs_temporal_error(p.pnr_time_s, c.pnr_frame, c.fps))
            w.writerow([
                c.clip_id, int(c.has_state_change),
                "" if c.pnr_time_s is None else repr(c.pnr_time_s),
                repr(p.oscc_prob_change),
                "" if p.pnr_time_s is None else repr(p.pnr_time_s),
                err,
            ])
