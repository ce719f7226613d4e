"""Clip manifests, per-frame feature stores and a synthetic data generator.

A manifest is a JSON document listing clips; features live in a separate
little-endian binary file (``EGF1``) holding ``views x frames x dim`` float32
values per clip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FeatureFormatError, ManifestError

SPLITS = ("train", "val", "test")

FEATURE_MAGIC = b"EGF1"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
_ID_LEN = struct.Struct("<H")

_MANIFEST_KEYS = {"split", "feature_dim", "views_per_clip", "clips"}
_CLIP_KEYS = {"clip_id", "fps", "num_frames", "has_state_change", "pnr_frame"}


@dataclass(frozen=True)
class ClipAnnotation:
    clip_id: str
    has_state_change: bool
    pnr_frame: int | None = None
    fps: float = 30.0
    num_frames: int = 240

    def __post_init__(self):
        validate_clip(self)

    @property
    def duration_s(self) -> float:
        return self.num_frames / self.fps

    @property
    def pnr_time_s(self) -> float | None:
        if self.pnr_frame is None:
            return None
        return self.pnr_frame / self.fps


def validate_clip(clip: ClipAnnotation) -> None:
    cid = clip.clip_id
    if not isinstance(cid, str) or not cid:
        raise ManifestError(f"clip_id must be a non-empty string, got {cid!r}")
    if not (isinstance(clip.fps, (int, float)) and clip.fps > 0):
        raise ManifestError(f"clip {cid}: fps must be > 0")
    if not (isinstance(clip.num_frames, int) and clip.num_frames > 0):
        raise ManifestError(f"clip {cid}: num_frames must be a positive integer")
    if clip.has_state_change:
        if clip.pnr_frame is None:
            raise ManifestError(f"clip {cid}: state change without pnr_frame")
        if not isinstance(clip.pnr_frame, int) or isinstance(clip.pnr_frame, bool):
            raise ManifestError(f"clip {cid}: pnr_frame must be an integer")
        if not 0 <= clip.pnr_frame < clip.num_frames:
            raise ManifestError(
                f"clip {cid}: pnr_frame {clip.pnr_frame} outside [0, {clip.num_frames})"
            )
    elif clip.pnr_frame is not None:
        raise ManifestError(f"clip {cid}: pnr_frame given but has_state_change is false")


@dataclass
class DatasetManifest:
    split: str
    clips: list[ClipAnnotation]
    feature_dim: int
    views_per_clip: int = 3

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not isinstance(self.feature_dim, int) or self.feature_dim < 1:
            raise ManifestError("feature_dim must be a positive integer")
        if not isinstance(self.views_per_clip, int) or self.views_per_clip < 1:
            raise ManifestError("views_per_clip must be >= 1")
        seen = set()
        for c in self.clips:
            if c.clip_id in seen:
                raise ManifestError(f"duplicate clip_id {c.clip_id}")
            seen.add(c.clip_id)

    def __len__(self):
        return len(self.clips)

    def by_id(self) -> dict[str, ClipAnnotation]:
        return {c.clip_id: c for c in self.clips}

    def to_dict(self) -> dict:
        clips = []
        for c in self.clips:
            d = {
                "clip_id": c.clip_id,
                "fps": c.fps,
                "num_frames": c.num_frames,
                "has_state_change": c.has_state_change,
            }
            if c.pnr_frame is not None:
                d["pnr_frame"] = c.pnr_frame
            clips.append(d)
        return {
            "split": self.split,
            "feature_dim": self.feature_dim,
            "views_per_clip": self.views_per_clip,
            "clips": clips,
        }


@dataclass
class FeatureStore:
    """Per-clip feature tensors of shape ``[views, frames, dim]`` (float32)."""

    views: int
    frames: int
    dim: int
    data: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, clip_id: str) -> np.ndarray:
        return self.data[clip_id]

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self.data

    def __len__(self):
        return len(self.data)

    def add(self, clip_id: str, tensor: np.ndarray) -> None:
        tensor = np.asarray(tensor, dtype=np.float32)
        if tensor.shape != (self.views, self.frames, self.dim):
            raise FeatureFormatError(
                f"clip {clip_id}: shape {tensor.shape} != "
                f"{(self.views, self.frames, self.dim)}"
            )
        if not np.all(np.isfinite(tensor)):
            raise FeatureFormatError(f"clip {clip_id}: non-finite feature values")
        self.data[clip_id] = tensor

    def check_covers(self, manifest: DatasetManifest) -> None:
        if manifest.views_per_clip != self.views or manifest.feature_dim != self.dim:
            raise FeatureFormatError(
                f"store is views={self.views} dim={self.dim}, manifest expects "
                f"views={manifest.views_per_clip} dim={manifest.feature_dim}"
            )
        for c in manifest.clips:
            if c.clip_id not in self.data:
                raise FeatureFormatError(f"no features for clip {c.clip_id}")
            if c.num_frames != self.frames:
                raise FeatureFormatError(
                    f"clip {c.clip_id}: {c.num_frames} frames, store has {self.frames}"
                )


# -- manifest I/O -----------------------------------------------------------


def _require_int(value, what: str, cid: str | None = None) -> int:
    where = f"clip {cid}: " if cid else ""
    if isinstance(value, bool) or not isinstance(value, int):
        raise ManifestError(f"{where}{what} must be an integer, got {value!r}")
    return value


def parse_manifest(text: str | bytes) -> DatasetManifest:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ManifestError(f"manifest is not valid UTF-8: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(
            f"malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e
    if not isinstance(doc, dict):
        raise ManifestError("manifest root must be an object")
    unknown = set(doc) - _MANIFEST_KEYS
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    missing = {"split", "feature_dim", "clips"} - set(doc)
    if missing:
        raise ManifestError(f"missing manifest keys: {sorted(missing)}")
    if not isinstance(doc["clips"], list):
        raise ManifestError("'clips' must be a list")

    clips = []
    for i, raw in enumerate(doc["clips"]):
        if not isinstance(raw, dict):
            raise ManifestError(f"clips[{i}] must be an object")
        cid = raw.get("clip_id")
        if not isinstance(cid, str):
            raise ManifestError(f"clips[{i}]: clip_id must be a string")
        unknown = set(raw) - _CLIP_KEYS
        if unknown:
            raise ManifestError(f"clip {cid}: unknown keys {sorted(unknown)}")
        if "has_state_change" not in raw or not isinstance(raw["has_state_change"], bool):
            raise ManifestError(f"clip {cid}: has_state_change must be a boolean")
        fps = raw.get("fps", 30)
        if isinstance(fps, bool) or not isinstance(fps, (int, float)):
            raise ManifestError(f"clip {cid}: fps must be a number")
        pnr = raw.get("pnr_frame")
        if pnr is not None:
            pnr = _require_int(pnr, "pnr_frame", cid)
        clips.append(
            ClipAnnotation(
                clip_id=cid,
                has_state_change=raw["has_state_change"],
                pnr_frame=pnr,
                fps=float(fps),
                num_frames=_require_int(raw.get("num_frames", 240), "num_frames", cid),
            )
        )
    return DatasetManifest(
        split=doc["split"],
        clips=clips,
        feature_dim=_require_int(doc["feature_dim"], "feature_dim"),
        views_per_clip=_require_int(doc.get("views_per_clip", 3), "views_per_clip"),
    )


def dump_manifest(manifest: DatasetManifest) -> str:
    return json.dumps(manifest.to_dict(), indent=1) + "\n"


def write_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(dump_manifest(manifest), encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    return parse_manifest(Path(path).read_bytes())


# -- feature I/O ------------------------------------------------------------


def write_features(store: FeatureStore, path) -> None:
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                FEATURE_MAGIC, FEATURE_VERSION, len(store.data),
                store.views, store.frames, store.dim,
            )
        )
        for cid, tensor in store.data.items():
            raw_id = cid.encode("utf-8")
            f.write(_ID_LEN.pack(len(raw_id)))
            f.write(raw_id)
            f.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def read_features(path) -> FeatureStore:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FeatureFormatError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(buf)}"
        )
    magic, version, count, views, frames, dim = _HEADER.unpack_from(buf, 0)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"unsupported feature file version {version}")
    store = FeatureStore(views=views, frames=frames, dim=dim)
    payload = views * frames * dim * 4
    off = _HEADER.size
    for i in range(count):
        if off + _ID_LEN.size > len(buf):
            raise FeatureFormatError(f"truncated id length for clip #{i} at byte {off}")
        (n,) = _ID_LEN.unpack_from(buf, off)
        off += _ID_LEN.size
        if off + n > len(buf):
            raise FeatureFormatError(f"truncated clip id for clip #{i}")
        cid = buf[off:off + n].decode("utf-8")
        off += n
        avail = len(buf) - off
        if avail < payload:
            raise FeatureFormatError(
                f"clip {cid}: truncated payload, expected {payload} bytes, got {avail}"
            )
        arr = np.frombuffer(buf, dtype="<f4", count=views * frames * dim, offset=off)
        off += payload
        store.add(cid, arr.reshape(views, frames, dim).astype(np.float32))
    if off != len(buf):
        raise FeatureFormatError(
            f"{len(buf) - off} trailing bytes after {count} clips "
            f"(expected {off} bytes total, got {len(buf)})"
        )
    return store


# -- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for :func:`generate_synthetic`.

    ``prior`` is ``"uniform"`` (PNR uniform over the clip) or ``"beta"``
    (Beta-distributed PNR fraction with mean ``prior_fraction`` and
    concentration ``prior_concentration``).
    """

    count: int = 100
    p_pos: float = 0.477
    prior: str = "uniform"
    prior_fraction: float = 0.45
    prior_concentration: float = 10.0
    feature_dim: int = 16
    views: int = 3
    snr: float = 8.0
    bump_half_width: int = 8
    fps: float = 30.0
    num_frames: int = 240
    split: str = "train"
    id_prefix: str = "c"
    # fixes the bump direction; keep it equal across splits of one dataset
    world_seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.p_pos <= 1.0:
            raise ConfigError(f"p_pos must lie in [0, 1], got {self.p_pos}")
        if self.snr < 0:
            raise ConfigError(f"snr must be >= 0, got {self.snr}")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.count < 0 or self.views < 1 or self.num_frames < 1:
            raise ConfigError("count >= 0, views >= 1 and num_frames >= 1 required")
        if self.bump_half_width < 0:
            raise ConfigError("bump_half_width must be >= 0")
        if self.prior not in ("uniform", "beta"):
            raise ConfigError(f"unknown prior {self.prior!r}")
        if self.prior == "beta" and not (
            0.0 < self.prior_fraction < 1.0 and self.prior_concentration > 0
        ):
            raise ConfigError("beta prior needs fraction in (0, 1) and concentration > 0")


def parse_prior(text: str) -> dict:
    """Turn a CLI prior string (``uniform`` or ``beta@0.45``) into SynthConfig kwargs."""
    if text == "uniform":
        return {"prior": "uniform"}
    if text.startswith("beta@"):
        try:
            frac = float(text[5:])
        except ValueError:
            raise ConfigError(f"bad prior {text!r}") from None
        return {"prior": "beta", "prior_fraction": frac}
    raise ConfigError(f"bad prior {text!r}; expected 'uniform' or 'beta@F'")


def _streams(seed: int):
    labels_ss, feats_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(labels_ss), np.random.default_rng(feats_ss)


def synth_annotations(cfg: SynthConfig, seed: int) -> DatasetManifest:
    """Labels only; identical to the manifest half of :func:`generate_synthetic`."""
    cfg.validate()
    rng, _ = _streams(seed)
    return _draw_manifest(cfg, rng)


def _draw_manifest(cfg: SynthConfig, rng: np.random.Generator) -> DatasetManifest:
    positive = rng.random(cfg.count) < cfg.p_pos
    if cfg.prior == "uniform":
        frac = rng.random(cfg.count)
    else:
        a = cfg.prior_fraction * cfg.prior_concentration
        b = (1.0 - cfg.prior_fraction) * cfg.prior_concentration
        frac = rng.beta(a, b, size=cfg.count)
    pnr = np.minimum(np.floor(frac * cfg.num_frames), cfg.num_frames - 1).astype(int)
    width = max(4, len(str(max(cfg.count - 1, 0))))
    clips = [
        ClipAnnotation(
            clip_id=f"{cfg.id_prefix}{i:0{width}d}",
            has_state_change=bool(positive[i]),
            pnr_frame=int(pnr[i]) if positive[i] else None,
            fps=float(cfg.fps),
            num_frames=cfg.num_frames,
        )
        for i in range(cfg.count)
    ]
    return DatasetManifest(
        split=cfg.split, clips=clips, feature_dim=cfg.feature_dim, views_per_clip=cfg.views
    )


def bump_profile(num_frames: int, center: int, half_width: int, snr: float) -> np.ndarray:
    """Per-frame bump amplitude: ``snr`` at the center, tapering linearly to
    ``snr/2`` at ``half_width`` frames away, zero beyond."""
    d = np.abs(np.arange(num_frames) - center)
    prof = np.zeros(num_frames)
    inside = d <= half_width
    if half_width == 0:
        prof[inside] = snr
    else:
        prof[inside] = snr * (1.0 - 0.5 * d[inside] / half_width)
    return prof


def bump_direction(dim: int, world_seed: int = 0) -> np.ndarray:
    v = np.random.default_rng([world_seed, dim]).standard_normal(dim)
    return v / np.linalg.norm(v)


def generate_synthetic(cfg: SynthConfig, seed: int) -> tuple[DatasetManifest, FeatureStore]:
    """Generate a labelled manifest and matching noisy features.

    Negative clips are unit-variance Gaussian noise. Positive clips add
    ``bump_profile(...) * direction`` along a unit direction fixed by
    ``cfg.world_seed``, so splits generated with different seeds share it; the bump is at the same frames in every view, which
    differ only in their noise.
    """
    cfg.validate()
    label_rng, feat_rng = _streams(seed)
    manifest = _draw_manifest(cfg, label_rng)

    direction = bump_direction(cfg.feature_dim, cfg.world_seed)
    store = FeatureStore(views=cfg.views, frames=cfg.num_frames, dim=cfg.feature_dim)
    shape = (cfg.views, cfg.num_frames, cfg.feature_dim)
    for clip in manifest.clips:
        x = feat_rng.standard_normal(shape)
        if clip.has_state_change:
            prof = bump_profile(cfg.num_frames, clip.pnr_frame, cfg.bump_half_width, cfg.snr)
            x += prof[None, :, None] * direction[None, None, :]
        store.add(clip.clip_id, x.astype(np.float32))
    return manifest, store
