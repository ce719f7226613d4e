"""Shared-trunk multi-task classifier with hand-written backprop.

Per frame: linear embedding plus a learned position embedding, then ``depth``
residual MLP blocks with drop path. The state-change head is linear on the
mean-pooled frames. The ``(N + 1)``-way temporal head scores slot ``i`` from
frame ``i`` and the "no change" class from the pooled vector.

Everything runs in float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ContractError, NumericError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    hidden_dim: int = 384
    depth: int = 2
    drop_path_rate: float = 0.1
    n_frames: int = 16

    def validate(self) -> None:
        if min(self.feature_dim, self.hidden_dim, self.depth, self.n_frames) < 1:
            raise ConfigError("feature_dim, hidden_dim, depth and n_frames must be >= 1")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ConfigError("drop_path_rate must lie in [0, 1)")

    @property
    def n_temporal(self) -> int:
        return self.n_frames + 1


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    l_oscc: float
    l_tl: float
    lambda1: float = 1.0
    lambda2: float = 1.0

    def to_dict(self) -> dict:
        return {"total": self.total, "l_oscc": self.l_oscc, "l_tl": self.l_tl,
                "lambda1": self.lambda1, "lambda2": self.lambda2}


Params = dict  # name -> ndarray, insertion order is declaration order


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, H, N = cfg.feature_dim, cfg.hidden_dim, cfg.n_frames
    shapes = {"embed.w": (D, H), "embed.b": (H,), "pos": (N, H)}
    for k in range(cfg.depth):
        shapes[f"blocks.{k}.w1"] = (H, H)
        shapes[f"blocks.{k}.b1"] = (H,)
        shapes[f"blocks.{k}.w2"] = (H, H)
        shapes[f"blocks.{k}.b2"] = (H,)
    shapes["head_oscc.w"] = (H, 2)
    shapes["head_oscc.b"] = (2,)
    shapes["head_tl.w"] = (H, N + 1)
    shapes["head_tl.b"] = (N + 1,)
    return shapes


def layer_index(name: str, depth: int) -> int:
    """Layer id used for layer-wise lr decay: embedding 0, block k -> k, heads -> depth."""
    if name.startswith("blocks."):
        return int(name.split(".")[1])
    if name.startswith("head"):
        return depth
    return 0


def decays(name: str) -> bool:
    """Weight decay applies to weight matrices only, not biases or the position table."""
    return name.endswith(".w") or name.endswith(".w1") or name.endswith(".w2")


def sinusoid_table(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init(cfg: ModelConfig, seed: int) -> Params:
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "pos":
            params[name] = sinusoid_table(cfg.n_frames, cfg.hidden_dim)
        elif len(shape) == 2:
            params[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
        else:
            params[name] = np.zeros(shape)
    return params


def _gelu(a):
    """tanh-approximate GELU and its derivative."""
    a2 = a * a
    t = np.tanh(_GELU_C * a * (1.0 + _GELU_K * a2))
    half = 0.5 * (1.0 + t)
    out = a * half
    # d/da: half + 0.5 a (1 - t^2) c (1 + 3k a^2)
    grad = (1.0 - t * t)
    grad *= (0.5 * _GELU_C) * a * (1.0 + 3.0 * _GELU_K * a2)
    grad += half
    return out, grad


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row ``-sum(t * log softmax(z))``."""
    return -(targets * log_softmax(logits)).sum(axis=-1)


def drop_masks(cfg: ModelConfig, batch: int, mode: str, rng) -> np.ndarray:
    """Per-block, per-example residual scales: 0 (dropped) or ``1/(1-rate)``."""
    if mode == "eval" or cfg.drop_path_rate == 0.0:
        return np.ones((cfg.depth, batch))
    if rng is None:
        raise ContractError("train mode with drop path needs an rng")
    keep = rng.random((cfg.depth, batch)) >= cfg.drop_path_rate
    return keep / (1.0 - cfg.drop_path_rate)


def _check_input(cfg: ModelConfig, x: np.ndarray) -> None:
    if x.ndim != 3 or x.shape[1:] != (cfg.n_frames, cfg.feature_dim):
        raise ContractError(
            f"expected features [B, {cfg.n_frames}, {cfg.feature_dim}], got {x.shape}"
        )


def forward_batch(params: Params, cfg: ModelConfig, x: np.ndarray, mode="eval", rng=None,
                  masks=None):
    """Batched forward pass. Returns ``(oscc_logits [B,2], tl_logits [B,N+1], cache)``."""
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    _check_input(cfg, x)
    B, N, _ = x.shape
    H = cfg.hidden_dim
    if masks is None:
        masks = drop_masks(cfg, B, mode, rng)
    # token-major 2-D layout [B*N, H] keeps every product a single BLAS call
    h = (_flat(x) @ params["embed.w"] + params["embed.b"]).reshape(B, N, H)
    h += params["pos"]
    h = _flat(h)
    blocks = []
    for k in range(cfg.depth):
        a = h @ params[f"blocks.{k}.w1"] + params[f"blocks.{k}.b1"]
        z, dz = _gelu(a)
        r = z @ params[f"blocks.{k}.w2"] + params[f"blocks.{k}.b2"]
        blocks.append((h, z, dz))
        r = r.reshape(B, N, H)
        r *= masks[k][:, None, None]
        h = h + _flat(r)
    h = h.reshape(B, N, H)
    pooled = h.mean(axis=1)
    oscc = pooled @ params["head_oscc.w"] + params["head_oscc.b"]
    tl = _temporal_head(params, h, pooled)
    cache = {"x": x, "blocks": blocks, "h": h, "pooled": pooled, "masks": masks}
    return oscc, tl, cache


def _temporal_head(params: Params, h: np.ndarray, pooled: np.ndarray) -> np.ndarray:
    # slot i reads frame token i through column i; "no change" reads the pooled vector
    W, b = params["head_tl.w"], params["head_tl.b"]
    N = h.shape[1]
    slots = np.einsum("bnh,hn->bn", h, W[:, :N])
    none = pooled @ W[:, N]
    return np.concatenate([slots, none[:, None]], axis=1) + b


def forward(params: Params, cfg: ModelConfig, clip_features: np.ndarray, mode="eval", rng=None):
    """Single clip ``[n_frames, feature_dim]`` -> ``(oscc_logits, tl_logits, cache)``."""
    clip_features = np.asarray(clip_features, dtype=np.float64)
    if clip_features.ndim != 2:
        raise ContractError(f"expected [n_frames, feature_dim], got {clip_features.shape}")
    o, t, cache = forward_batch(params, cfg, clip_features[None], mode, rng)
    return o[0], t[0], cache


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def backward(params: Params, cfg: ModelConfig, cache, d_oscc: np.ndarray, d_tl: np.ndarray):
    """Gradients of a scalar loss given its gradients w.r.t. both heads' logits."""
    x, pooled, masks = cache["x"], cache["pooled"], cache["masks"]
    N = cfg.n_frames
    g = {}
    Wt = params["head_tl.w"]
    d_pooled = d_oscc @ params["head_oscc.w"].T + np.outer(d_tl[:, N], Wt[:, N])
    dWt = np.empty_like(Wt)
    dWt[:, :N] = np.einsum("bnh,bn->hn", cache["h"], d_tl[:, :N])
    dWt[:, N] = pooled.T @ d_tl[:, N]
    head = {
        "head_oscc.w": pooled.T @ d_oscc, "head_oscc.b": d_oscc.sum(axis=0),
        "head_tl.w": dWt, "head_tl.b": d_tl.sum(axis=0),
    }
    dh = d_pooled[:, None, :] / N + d_tl[:, :N, None] * Wt[:, :N].T[None]
    for k in reversed(range(cfg.depth)):
        h_in, z, dz = cache["blocks"][k]
        dr = _flat(dh * masks[k][:, None, None])
        g[f"blocks.{k}.w2"] = z.T @ dr
        g[f"blocks.{k}.b2"] = dr.sum(axis=0)
        da = (dr @ params[f"blocks.{k}.w2"].T) * dz
        g[f"blocks.{k}.w1"] = h_in.T @ da
        g[f"blocks.{k}.b1"] = da.sum(axis=0)
        dh = dh + (da @ params[f"blocks.{k}.w1"].T).reshape(dh.shape)
    g["embed.w"] = _flat(x).T @ _flat(dh)
    g["embed.b"] = dh.sum(axis=(0, 1))
    g["pos"] = dh.sum(axis=0)
    g.update(head)
    return {name: g[name] for name in params}


def loss_and_grad(params: Params, cfg: ModelConfig, batch, lambda1=1.0, lambda2=1.0,
                  mode="train", rng=None, masks=None, clip_ids=None):
    """Mean soft cross-entropy of both heads, combined as
    ``lambda1 * l_oscc + lambda2 * l_tl``, and its exact gradient.

    ``batch`` is a :class:`~egopnr.labels.Batch`. With drop path active the
    gradient is exact for the mask drawn from ``rng`` (or given as ``masks``).
    """
    B = len(batch)
    if B == 0:
        raise ContractError("empty batch")
    oscc, tl, cache = forward_batch(params, cfg, batch.features, mode, rng, masks)
    ce_o = soft_cross_entropy(oscc, batch.oscc)
    ce_t = soft_cross_entropy(tl, batch.temporal)
    bad = ~(np.isfinite(ce_o) & np.isfinite(ce_t))
    if bad.any():
        i = int(np.argmax(bad))
        who = clip_ids[i] if clip_ids is not None else f"#{i}"
        raise NumericError(f"non-finite loss for clip {who}")
    l_o = float(ce_o.mean())
    l_t = float(ce_t.mean())
    total = lambda1 * l_o + lambda2 * l_t
    # softmax * sum(t) - t, targets need not be exactly normalised
    d_o = (softmax(oscc) * batch.oscc.sum(-1, keepdims=True) - batch.oscc) * (lambda1 / B)
    d_t = (softmax(tl) * batch.temporal.sum(-1, keepdims=True) - batch.temporal) * (lambda2 / B)
    grads = backward(params, cfg, cache, d_o, d_t)
    return LossBreakdown(total, l_o, l_t, lambda1, lambda2), grads


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"EGCK"
CKPT_VERSION = 1
_CFG = struct.Struct("<IIIId")


def save_checkpoint(path, cfg: ModelConfig, params: Params) -> None:
    """Write ``EGCK`` v1: config, then each tensor as name, shape header and f64 data."""
    out = bytearray()
    out += CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(params))
    out += _CFG.pack(cfg.feature_dim, cfg.hidden_dim, cfg.depth, cfg.n_frames, cfg.drop_path_rate)
    for name, arr in params.items():
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[ModelConfig, Params]:
    buf = Path(path).read_bytes()
    try:
        if buf[:4] != CKPT_MAGIC:
            raise CheckpointError(f"bad magic {buf[:4]!r}")
        version, count = struct.unpack_from("<II", buf, 4)
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        D, H, depth, N, rate = _CFG.unpack_from(buf, off)
        off += _CFG.size
        cfg = ModelConfig(D, H, depth, rate, N)
        params = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 8 * size > len(buf):
                raise CheckpointError(f"truncated tensor {name}")
            params[name] = np.frombuffer(buf, "<f8", size, off).reshape(shape).copy()
            off += 8 * size
    except struct.error as e:
        raise CheckpointError(f"truncated checkpoint: {e}") from e
    expected = param_shapes(cfg)
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise CheckpointError("checkpoint tensors do not match its config")
    return cfg, params
