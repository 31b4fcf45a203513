"""Preprocessing, a small convolutional encoder, and per-level projection heads.

The desk-scale reference encoder is two stride-2 3x3 convolution blocks
(3 -> 16 -> 32 channels, ReLU), global average pooling and a linear layer to
a 256-dim backbone feature. Each projection head is linear -> ReLU -> linear
(hidden dim = input dim) followed by row-wise L2 normalization, so head
outputs always satisfy the unit-norm contract the contrastive loss assumes.

Forward and backward are hand-rolled in 64-bit numpy; gradients are checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

CHECKPOINT_MAGIC = b"UIWF"
CHECKPOINT_VERSION = 1
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class PreprocessConfig:
    width: int = 112
    height: int = 64
    brightness: float = 0.0  # additive jitter amplitude, fraction of 255
    hflip_prob: float = 0.0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("target dims must be at least 8x8")
        if not 0.0 <= self.brightness <= 1.0:
            raise ValueError("brightness amplitude must be in [0, 1]")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip probability must be in [0, 1]")


@dataclass(frozen=True)
class EncoderConfig:
    height: int = 64
    width: int = 112
    conv_channels: tuple[int, int] = (16, 32)
    kernel: int = 3
    feature_dim: int = 256
    # one entry per projection head, e.g. {"svc": 128} (single-task) or
    # {"s": 128, "sv": 128, "svc": 128} (multi-task)
    head_dims: dict[str, int] = field(default_factory=lambda: {"svc": 128})

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "conv_channels": list(self.conv_channels),
            "kernel": self.kernel,
            "feature_dim": self.feature_dim,
            "head_dims": dict(self.head_dims),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderConfig":
        return cls(
            height=obj["height"],
            width=obj["width"],
            conv_channels=tuple(obj["conv_channels"]),
            kernel=obj["kernel"],
            feature_dim=obj["feature_dim"],
            head_dims=dict(obj["head_dims"]),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def preprocess(image: np.ndarray, config: PreprocessConfig, augment: bool,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Resize (bilinear) and scale to [0, 1]; optionally jitter brightness
    and flip horizontally. Random cropping is deliberately never applied."""
    image = np.asarray(image, dtype=np.uint8)
    if image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError("zero-sized image")
    resized = Image.fromarray(image).resize((config.width, config.height),
                                            Image.BILINEAR)
    out = np.asarray(resized, dtype=np.float64)
    if augment:
        if rng is None:
            raise ValueError("augment=True requires an rng")
        if config.brightness > 0:
            shift = rng.uniform(-config.brightness * 255.0,
                                config.brightness * 255.0)
            out = np.clip(out + shift, 0.0, 255.0)
        if rng.random() < config.hflip_prob:
            out = out[:, ::-1, :]
    return out / 255.0


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF,
                                zlib.crc32(name.encode("utf-8"))]))


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...],
                    fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: EncoderConfig, seed: int) -> dict[str, np.ndarray]:
    """Per-tensor seeded init: tensors shared between architectures get
    identical values for identical (seed, name), regardless of which heads
    exist."""
    k = config.kernel
    c1, c2 = config.conv_channels
    params: dict[str, np.ndarray] = {}

    def add(name, shape, fan_in):
        params[name] = _uniform_fan_in(_tensor_rng(seed, name), shape, fan_in)

    add("conv1.w", (c1, 3, k, k), 3 * k * k)
    params["conv1.b"] = np.zeros(c1)
    add("conv2.w", (c2, c1, k, k), c1 * k * k)
    params["conv2.b"] = np.zeros(c2)
    add("fc.w", (config.feature_dim, c2), c2)
    params["fc.b"] = np.zeros(config.feature_dim)
    for head, dim in sorted(config.head_dims.items()):
        f = config.feature_dim
        add(f"head.{head}.w1", (f, f), f)
        params[f"head.{head}.b1"] = np.zeros(f)
        add(f"head.{head}.w2", (dim, f), f)
        params[f"head.{head}.b2"] = np.zeros(dim)
    return params


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  stride: int, pad: int):
    n, h, wd, _ = x.shape
    cout = w.shape[0]
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (N, OH, OW, C, k, k)
    oh, ow = win.shape[1], win.shape[2]
    cols = win.reshape(n * oh * ow, -1)
    wmat = w.reshape(cout, -1)
    y = (cols @ wmat.T + b).reshape(n, oh, ow, cout)
    cache = (cols, wmat, xp.shape, (n, oh, ow), k, stride, pad)
    return y, cache


def _conv_backward(dy: np.ndarray, cache):
    cols, wmat, xpshape, (n, oh, ow), k, stride, pad = cache
    cout = wmat.shape[0]
    dy2 = dy.reshape(n * oh * ow, cout)
    dwmat = dy2.T @ cols
    db = dy2.sum(axis=0)
    dcols = dy2 @ wmat
    cin = xpshape[3]
    dcols6 = dcols.reshape(n, oh, ow, cin, k, k)
    dxp = np.zeros(xpshape)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki:ki + stride * oh:stride,
                kj:kj + stride * ow:stride, :] += dcols6[:, :, :, :, ki, kj]
    dw = dwmat.reshape(cout, cin, k, k)
    if pad:
        dx = dxp[:, pad:-pad, pad:-pad, :]
    else:
        dx = dxp
    return dx, dw, db


def forward(params: dict[str, np.ndarray], batch: np.ndarray,
            config: EncoderConfig):
    """Backbone features for an (N, H, W, 3) float batch; returns cache."""
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != (config.height, config.width, 3):
        raise ValueError(
            f"batch shape {x.shape[1:]} does not match config "
            f"({config.height}, {config.width}, 3)")
    a1, c1cache = _conv_forward(x, params["conv1.w"], params["conv1.b"],
                                stride=2, pad=1)
    h1 = np.maximum(a1, 0.0)
    a2, c2cache = _conv_forward(h1, params["conv2.w"], params["conv2.b"],
                                stride=2, pad=1)
    h2 = np.maximum(a2, 0.0)
    gap = h2.mean(axis=(1, 2))
    features = gap @ params["fc.w"].T + params["fc.b"]
    cache = {"a1": a1, "c1": c1cache, "a2": a2, "c2": c2cache,
             "h2shape": h2.shape, "gap": gap}
    return features, cache


def project(params: dict[str, np.ndarray], features: np.ndarray, head: str,
            config: EncoderConfig):
    """Unit-norm embeddings from one projection head; returns cache."""
    if head not in config.head_dims:
        raise KeyError(f"head {head!r} not present in this model")
    w1, b1 = params[f"head.{head}.w1"], params[f"head.{head}.b1"]
    w2, b2 = params[f"head.{head}.w2"], params[f"head.{head}.b2"]
    z1 = features @ w1.T + b1
    hid = np.maximum(z1, 0.0)
    z2 = hid @ w2.T + b2
    norms = np.maximum(np.linalg.norm(z2, axis=1, keepdims=True), _NORM_EPS)
    emb = z2 / norms
    cache = {"features": features, "z1": z1, "hid": hid, "z2": z2,
             "norms": norms, "emb": emb, "head": head}
    return emb, cache


def _normalize_backward(cache, demb: np.ndarray) -> np.ndarray:
    emb, norms = cache["emb"], cache["norms"]
    return (demb - (demb * emb).sum(axis=1, keepdims=True) * emb) / norms


def head_backward(params: dict[str, np.ndarray], cache, demb: np.ndarray,
                  grads: dict[str, np.ndarray]) -> np.ndarray:
    """Accumulate one head's parameter grads; returns dL/dfeatures."""
    head = cache["head"]
    dz2 = _normalize_backward(cache, demb)
    grads[f"head.{head}.w2"] = grads.get(f"head.{head}.w2", 0) \
        + dz2.T @ cache["hid"]
    grads[f"head.{head}.b2"] = grads.get(f"head.{head}.b2", 0) + dz2.sum(axis=0)
    dhid = dz2 @ params[f"head.{head}.w2"]
    dz1 = dhid * (cache["z1"] > 0)
    grads[f"head.{head}.w1"] = grads.get(f"head.{head}.w1", 0) \
        + dz1.T @ cache["features"]
    grads[f"head.{head}.b1"] = grads.get(f"head.{head}.b1", 0) + dz1.sum(axis=0)
    return dz1 @ params[f"head.{head}.w1"]


def backbone_backward(params: dict[str, np.ndarray], cache,
                      dfeatures: np.ndarray,
                      grads: dict[str, np.ndarray]) -> None:
    grads["fc.w"] = grads.get("fc.w", 0) + dfeatures.T @ cache["gap"]
    grads["fc.b"] = grads.get("fc.b", 0) + dfeatures.sum(axis=0)
    dgap = dfeatures @ params["fc.w"]
    n, oh, ow, c = cache["h2shape"]
    dh2 = np.broadcast_to(dgap[:, None, None, :] / (oh * ow),
                          (n, oh, ow, c))
    da2 = dh2 * (cache["a2"] > 0)
    dh1, dw2, db2 = _conv_backward(da2, cache["c2"])
    grads["conv2.w"] = grads.get("conv2.w", 0) + dw2
    grads["conv2.b"] = grads.get("conv2.b", 0) + db2
    da1 = dh1 * (cache["a1"] > 0)
    _, dw1, db1 = _conv_backward(da1, cache["c1"])
    grads["conv1.w"] = grads.get("conv1.w", 0) + dw1
    grads["conv1.b"] = grads.get("conv1.b", 0) + db1


def backward(params: dict[str, np.ndarray], config: EncoderConfig,
             backbone_cache, head_caches: dict[str, dict],
             demb_per_head: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Full parameter gradient from per-head embedding gradients."""
    grads: dict[str, np.ndarray] = {}
    dfeatures = np.zeros_like(backbone_cache["gap"] @ params["fc.w"].T)
    for head, demb in demb_per_head.items():
        dfeatures = dfeatures + head_backward(params, head_caches[head],
                                              demb, grads)
    backbone_backward(params, backbone_cache, dfeatures, grads)
    # heads that received no gradient still occupy parameter slots
    for name, value in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(value)
    return grads


def embed(params: dict[str, np.ndarray], batch: np.ndarray,
          config: EncoderConfig, head: str = "svc") -> np.ndarray:
    features, _ = forward(params, batch, config)
    emb, _ = project(params, features, head, config)
    return emb


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    config: EncoderConfig) -> None:
    """Versioned binary checkpoint.

    Byte layout (little-endian throughout):
      magic b"UIWF" | u32 version | u32 config-JSON length | config JSON
      (canonical, sorted keys, utf-8) | 32-byte sha256 of the config JSON |
      u32 array count | per array: u16 name length, name utf-8, u8 ndim,
      ndim x u32 dims, float64 data.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(config.to_json(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(hashlib.sha256(blob).digest())
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray],
                                               EncoderConfig]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (blen,) = struct.unpack("<I", fh.read(4))
        blob = fh.read(blen)
        digest = fh.read(32)
        if hashlib.sha256(blob).digest() != digest:
            raise ValueError(f"{path}: config digest mismatch")
        config = EncoderConfig.from_json(json.loads(blob.decode("utf-8")))
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8")
            params[name] = data.reshape(shape).copy()
    return params, config
