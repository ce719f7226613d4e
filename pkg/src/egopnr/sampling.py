"""Clip trimming, frame samplers, pseudo-PNR assignment and shift analysis.

Training clips are trimmed to a random 5-8 s window (length ``S`` uniform on
``[150, 240]`` frames at 30 fps), ``n`` frames are sampled from that window,
and the sampled frame nearest the true PNR becomes the pseudo-PNR label.
The distance between the two is the temporal shift that sampling adds.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .annotations import ClipAnnotation
from .errors import ConfigError, SamplingError

TRIM_MIN_S = 5.0
TRIM_MAX_S = 8.0
CLIP_SECONDS = 8.0

_MC_CHUNK = 1 << 16


class SamplerKind(enum.Enum):
    EVEN = "even"
    STRATIFIED = "stratified"
    RANDOM = "random"

    @property
    def code(self) -> int:
        return _CODES[self]

    @classmethod
    def parse(cls, value: "SamplerKind | str") -> "SamplerKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "evenlyspaced": "even", "evenly_spaced": "even",
            "stratifiedrandom": "stratified", "uniformrandom": "random",
            "uniform": "random",
        }
        key = str(value).lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ConfigError(f"unknown sampler {value!r}") from None


_CODES = {
    SamplerKind.EVEN: kernels.EVEN,
    SamplerKind.STRATIFIED: kernels.STRATIFIED,
    SamplerKind.RANDOM: kernels.RANDOM,
}


@dataclass(frozen=True)
class TrimmedRange:
    start_frame: int
    length_frames: int

    @property
    def stop_frame(self) -> int:
        return self.start_frame + self.length_frames


@dataclass(frozen=True)
class SampledClip:
    clip_id: str
    frame_indices: tuple[int, ...]
    trimmed: TrimmedRange
    pseudo_pnr_slot: int | None = None

    @property
    def n(self) -> int:
        return len(self.frame_indices)


@dataclass(frozen=True)
class ShiftStats:
    mean_s: float
    std_s: float
    max_s: float
    trials: int

    def to_dict(self) -> dict:
        return {"mean_s": self.mean_s, "std_s": self.std_s, "max_s": self.max_s,
                "trials": self.trials}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def trim_length(duration_s: float, fps: float) -> int:
    return _round_half_up(duration_s * fps)


def trim_clip(
    ann: ClipAnnotation,
    rng: np.random.Generator,
    duration_s: float | None = None,
    min_s: float = TRIM_MIN_S,
    max_s: float = TRIM_MAX_S,
) -> TrimmedRange:
    """Draw a trimmed window inside ``ann``.

    The window length is ``round(u * fps)`` for ``u ~ U[min_s, max_s]``
    (pass ``duration_s`` to force ``u``), its start is uniform over the valid
    positions, and for state-change clips the window is then shifted by the
    least amount that brings ``pnr_frame`` inside it.
    """
    s_min = trim_length(min_s, ann.fps)
    if ann.num_frames < s_min:
        raise SamplingError(
            f"clip {ann.clip_id}: {ann.num_frames} frames cannot hold a "
            f"{min_s:g} s trim ({s_min} frames)"
        )
    if duration_s is None:
        duration_s = min_s + (max_s - min_s) * rng.random()
    S = min(trim_length(duration_s, ann.fps), ann.num_frames)
    start = int(math.floor(rng.random() * (ann.num_frames - S + 1)))
    start = min(start, ann.num_frames - S)
    if ann.has_state_change:
        p = ann.pnr_frame
        if p < start:
            start = p
        elif p >= start + S:
            start = p - S + 1
    return TrimmedRange(start, S)


def full_range(ann: ClipAnnotation) -> TrimmedRange:
    return TrimmedRange(0, ann.num_frames)


def _draw_uniforms(kind: SamplerKind, n: int, rng: np.random.Generator | None, rows: int):
    if kind is SamplerKind.EVEN:
        return np.zeros((rows, n))
    if rng is None:
        raise SamplingError(f"sampler {kind.value} needs an rng")
    return rng.random((rows, n))


def sample_frames(
    trimmed: TrimmedRange,
    n: int,
    kind: SamplerKind | str = SamplerKind.STRATIFIED,
    rng: np.random.Generator | None = None,
) -> list[int]:
    """Pick ``n`` strictly increasing frame indices inside ``trimmed``.

    even:       ``start + floor((i + 0.5) * S / n)``
    stratified: one uniform frame from each segment ``[i*S/n, (i+1)*S/n)``
    random:     ``n`` distinct uniform frames, sorted
    """
    kind = SamplerKind.parse(kind)
    if n < 1:
        raise SamplingError(f"n must be >= 1, got {n}")
    if n > trimmed.length_frames:
        raise SamplingError(
            f"cannot sample {n} distinct frames from a {trimmed.length_frames}-frame window"
        )
    u = _draw_uniforms(kind, n, rng, 1)
    idx = kernels.sample_indices(
        kind.code, n, np.array([trimmed.start_frame]), np.array([trimmed.length_frames]), u
    )
    return [int(v) for v in idx[0]]


def assign_pseudo_pnr(frame_indices, pnr_frame: int) -> int:
    """Slot whose frame is closest to ``pnr_frame``; ties go to the smaller slot."""
    if len(frame_indices) == 0:
        raise SamplingError("frame_indices is empty")
    idx = np.asarray(frame_indices, dtype=np.int64)[None, :]
    return int(kernels.nearest_slots(idx, np.array([pnr_frame]))[0])


def sample_clip(
    ann: ClipAnnotation,
    n: int,
    kind: SamplerKind | str,
    rng: np.random.Generator | None,
    trim: bool = True,
) -> SampledClip:
    """Trim (or take the whole clip), sample frames and attach the pseudo-PNR slot."""
    window = trim_clip(ann, rng) if trim else full_range(ann)
    idx = sample_frames(window, n, kind, rng)
    slot = assign_pseudo_pnr(idx, ann.pnr_frame) if ann.has_state_change else None
    return SampledClip(ann.clip_id, tuple(idx), window, slot)


def half_gap_expected_shift(n: int, fps: float, s_min: float, s_max: float) -> float:
    """``E[S] / (2 n fps)`` with ``S`` uniform on ``[s_min, s_max]`` frames.

    This is half the mean spacing of ``n`` evenly spaced samples, i.e. the
    largest distance a PNR can be from its nearest sample, averaged over
    trim lengths. It upper-bounds the mean shift for evenly spaced samples.
    """
    if n <= 0 or fps <= 0 or s_min <= 0 or s_max <= 0:
        raise ConfigError("n, fps, s_min and s_max must all be positive")
    if s_min > s_max:
        raise ConfigError(f"s_min {s_min} > s_max {s_max}")
    return (s_min + s_max) / 2.0 / (n * fps * 2.0)


def draw_trims(num_frames: int, fps: float, size: int, rng: np.random.Generator,
               fixed_length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`trim_clip` without PNR containment: ``(starts, lengths)``."""
    if fixed_length is None:
        dur = TRIM_MIN_S + (TRIM_MAX_S - TRIM_MIN_S) * rng.random(size)
        S = np.minimum(np.floor(dur * fps + 0.5).astype(np.int64), num_frames)
    else:
        S = np.full(size, fixed_length, dtype=np.int64)
    starts = np.floor(rng.random(size) * (num_frames - S + 1)).astype(np.int64)
    return np.minimum(starts, num_frames - S), S


def _mc_chunk(kind_code, n, fps, num_frames, fixed_S, seed, chunk, size):
    rng = np.random.default_rng([seed, chunk])
    starts, S = draw_trims(num_frames, fps, size, rng, fixed_S)
    pnr = starts + np.minimum(np.floor(rng.random(size) * S).astype(np.int64), S - 1)
    u = rng.random((size, n)) if kind_code != kernels.EVEN else np.zeros((size, n))
    d = kernels.shift_distances(kind_code, n, starts, S, pnr, u)
    return int(d.sum()), int((d * d).sum()), int(d.max())


def monte_carlo_shift(
    kind: SamplerKind | str,
    n: int = 16,
    fps: float = 30.0,
    trials: int = 100_000,
    seed: int = 0,
    trim_frames: int | None = None,
    workers: int = 1,
) -> ShiftStats:
    """Empirical distribution of |nearest sampled frame - PNR| in seconds.

    Each trial draws a trim (or uses ``trim_frames``), a PNR uniform over the
    trimmed window, and a frame sample. Trials are processed in fixed-size
    chunks seeded from ``(seed, chunk index)`` and reduced with exact integer
    sums, so the result does not depend on ``workers``.
    """
    kind = SamplerKind.parse(kind)
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if n < 1 or fps <= 0:
        raise ConfigError("n must be >= 1 and fps > 0")
    num_frames = _round_half_up(CLIP_SECONDS * fps)
    min_S = trim_frames if trim_frames is not None else min(trim_length(TRIM_MIN_S, fps), num_frames)
    if trim_frames is not None and not 1 <= trim_frames <= num_frames:
        raise ConfigError(f"trim_frames must lie in [1, {num_frames}]")
    if n > min_S:
        raise SamplingError(f"n={n} exceeds the smallest window ({min_S} frames)")

    sizes = [_MC_CHUNK] * (trials // _MC_CHUNK)
    if trials % _MC_CHUNK:
        sizes.append(trials % _MC_CHUNK)
    args = [(kind.code, n, fps, num_frames, trim_frames, seed, c, sz) for c, sz in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _mc_chunk(*a), args))
    else:
        parts = [_mc_chunk(*a) for a in args]

    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    dmax = max(p[2] for p in parts)
    mean = total / trials
    var = max(total_sq / trials - mean * mean, 0.0)
    return ShiftStats(mean / fps, math.sqrt(var) / fps, dmax / fps, trials)


def trim_length_probabilities(fps: float = 30.0) -> dict[int, float]:
    """Exact law of the rounded trim length ``S = round(u * fps)``."""
    lo_c, hi_c = TRIM_MIN_S * fps, TRIM_MAX_S * fps
    probs = {}
    for S in range(trim_length(TRIM_MIN_S, fps), trim_length(TRIM_MAX_S, fps) + 1):
        a, b = max(lo_c, S - 0.5), min(hi_c, S + 0.5)
        if b > a:
            probs[S] = (b - a) / (hi_c - lo_c)
    return probs
