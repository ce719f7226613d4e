"""Targets for the two heads, plus label smoothing, mixup and temporal cutmix.

The temporal head has ``N + 1`` classes: slot ``i < N`` means "the PNR is
sampled frame ``i``" and class ``N`` means "no state change in this clip".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import ClipAnnotation
from .errors import ConfigError, ContractError
from .sampling import SampledClip

NO_CHANGE, CHANGE = 0, 1


@dataclass(frozen=True)
class TargetPair:
    oscc: np.ndarray
    temporal: np.ndarray


@dataclass(frozen=True)
class MixConfig:
    mixup_alpha: float = 0.8
    cutmix_alpha: float = 1.0
    smoothing_eps: float = 0.1
    # chance of cutmix instead of mixup when both are enabled
    switch_prob: float = 0.5

    def validate(self) -> None:
        if min(self.mixup_alpha, self.cutmix_alpha, self.smoothing_eps) < 0:
            raise ConfigError("mix parameters must be >= 0")
        if self.smoothing_eps >= 1:
            raise ConfigError("smoothing_eps must be < 1")
        if not 0.0 <= self.switch_prob <= 1.0:
            raise ConfigError("switch_prob must lie in [0, 1]")


@dataclass
class Batch:
    """Stacked features ``[B, N, D]`` with soft targets ``[B, 2]`` and ``[B, N+1]``."""

    features: np.ndarray
    oscc: np.ndarray
    temporal: np.ndarray

    def __len__(self):
        return self.features.shape[0]

    @classmethod
    def stack(cls, features, targets: list[TargetPair]) -> "Batch":
        feats = np.stack([np.asarray(f, dtype=np.float64) for f in features])
        return cls(
            feats,
            np.stack([t.oscc for t in targets]),
            np.stack([t.temporal for t in targets]),
        )

    def copy(self) -> "Batch":
        return Batch(self.features.copy(), self.oscc.copy(), self.temporal.copy())


def one_hot(k: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[k] = 1.0
    return v


def build_targets(sampled: SampledClip, ann: ClipAnnotation) -> TargetPair:
    if sampled.clip_id != ann.clip_id:
        raise ContractError(f"sample {sampled.clip_id} does not belong to clip {ann.clip_id}")
    N = sampled.n
    if ann.has_state_change:
        if sampled.pseudo_pnr_slot is None:
            raise ContractError(f"clip {ann.clip_id}: positive clip without a pseudo-PNR slot")
        return TargetPair(one_hot(CHANGE, 2), one_hot(sampled.pseudo_pnr_slot, N + 1))
    if sampled.pseudo_pnr_slot is not None:
        raise ContractError(f"clip {ann.clip_id}: negative clip carries a pseudo-PNR slot")
    return TargetPair(one_hot(NO_CHANGE, 2), one_hot(N, N + 1))


def smooth(target: np.ndarray, eps: float) -> np.ndarray:
    """``(1 - eps) * target + eps / K``; works row-wise on ``[..., K]`` arrays."""
    if not 0.0 <= eps < 1.0:
        raise ConfigError(f"smoothing eps must lie in [0, 1), got {eps}")
    target = np.asarray(target, dtype=np.float64)
    if eps == 0.0:
        return target.copy()
    K = target.shape[-1]
    # same value as (1 - eps) * t + eps / K, but exact for one-hot K=2 targets
    return target - eps * (target - 1.0 / K)


def _partner(B: int, rng, perm):
    if perm is None:
        perm = rng.permutation(B)
    perm = np.asarray(perm)
    if perm.shape != (B,):
        raise ContractError(f"permutation has shape {perm.shape}, batch size is {B}")
    return perm


def _check_batch(batch: Batch) -> None:
    B = len(batch)
    if batch.oscc.shape[0] != B or batch.temporal.shape[0] != B:
        raise ContractError("features and targets disagree on batch size")


def _mix_targets(t: np.ndarray, perm: np.ndarray, lam: np.ndarray) -> np.ndarray:
    # t_a + (1 - lam)(t_b - t_a): exact identity when lam == 1 or t_b == t_a
    return t + (1.0 - lam)[:, None] * (t[perm] - t)


def mixup(batch: Batch, alpha: float, rng: np.random.Generator, lam=None, perm=None) -> Batch:
    """Blend each example with a partner from a random permutation.

    One ``lam ~ Beta(alpha, alpha)`` per example; features and both target
    vectors use the same ``lam``.
    """
    _check_batch(batch)
    B = len(batch)
    perm = _partner(B, rng, perm)
    if lam is None:
        lam = rng.beta(alpha, alpha, size=B) if alpha > 0 else np.ones(B)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (B,))
    x = batch.features
    bshape = (B,) + (1,) * (x.ndim - 1)
    feats = x + (1.0 - lam).reshape(bshape) * (x[perm] - x)
    return Batch(feats, _mix_targets(batch.oscc, perm, lam), _mix_targets(batch.temporal, perm, lam))


def cutmix_temporal(
    batch: Batch, alpha: float, rng: np.random.Generator, lam=None, perm=None, starts=None
) -> Batch:
    """Swap a contiguous block of frames in with the partner's.

    Block length is ``round((1 - lam) * N)`` with a uniform start; targets are
    mixed with the realised ``lam' = 1 - block / N``.
    """
    _check_batch(batch)
    B, N = batch.features.shape[:2]
    perm = _partner(B, rng, perm)
    if lam is None:
        lam = rng.beta(alpha, alpha, size=B) if alpha > 0 else np.ones(B)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (B,))
    blocks = np.floor((1.0 - lam) * N + 0.5).astype(int)
    blocks = np.clip(blocks, 0, N)
    if starts is None:
        starts = np.array([rng.integers(0, N - b + 1) for b in blocks], dtype=int)
    starts = np.broadcast_to(np.asarray(starts, dtype=int), (B,))
    feats = batch.features.copy()
    for i in range(B):
        s, b = starts[i], blocks[i]
        if b:
            feats[i, s:s + b] = batch.features[perm[i], s:s + b]
    lam_eff = 1.0 - blocks / N
    return Batch(
        feats,
        _mix_targets(batch.oscc, perm, lam_eff),
        _mix_targets(batch.temporal, perm, lam_eff),
    )


def augment(batch: Batch, cfg: MixConfig, rng: np.random.Generator) -> Batch:
    """Training-time target pipeline: mixup or cutmix (one per batch), then smoothing."""
    use_mix = cfg.mixup_alpha > 0 and len(batch) > 1
    use_cut = cfg.cutmix_alpha > 0 and len(batch) > 1
    if use_mix and use_cut:
        use_mix = rng.random() >= cfg.switch_prob
        use_cut = not use_mix
    if use_cut:
        batch = cutmix_temporal(batch, cfg.cutmix_alpha, rng)
    elif use_mix:
        batch = mixup(batch, cfg.mixup_alpha, rng)
    return Batch(
        batch.features,
        smooth(batch.oscc, cfg.smoothing_eps),
        smooth(batch.temporal, cfg.smoothing_eps),
    )
