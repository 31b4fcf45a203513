"""Seeded training loop: batch assembly, Adam updates, checkpointing.

Batch sampling is plain shuffling (no class balancing); the loss's
skipped-anchor count is logged per epoch so starved batches are visible.
All accumulation is 64-bit. A fixed (config, manifest, seed) fully
determines the checkpoint bytes in single-worker mode.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import DatasetManifest, load_image
from .labels import project
from .losses import ContrastiveBatch, SHLConfig, shl_loss
from .model import (EncoderConfig, PreprocessConfig, backward, forward,
                    init_params, preprocess, project as project_head,
                    save_checkpoint)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    temperature: float = 0.1
    shl: SHLConfig = field(default_factory=SHLConfig)
    seed: int = 0
    architecture: str = "multi-task"  # or "single-task"
    head_dim: int = 128  # per head in multi-task; svc dim in single-task
    preprocess: PreprocessConfig = field(
        default_factory=lambda: PreprocessConfig(width=112, height=64,
                                                 brightness=0.1,
                                                 hflip_prob=0.5))
    checkpoint_every: int = 50  # epochs

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2 or self.learning_rate < 0:
            raise ValueError("epochs >= 1, batch size >= 2, lr >= 0 required")
        for beta in (self.beta1, self.beta2):
            if not 0.0 < beta < 1.0:
                raise ValueError("beta values must be in (0, 1)")
        if self.temperature <= 0 or self.eps <= 0:
            raise ValueError("temperature and eps must be positive")
        if self.architecture not in ("single-task", "multi-task"):
            raise ValueError(f"unknown architecture: {self.architecture!r}")
        if self.architecture == "single-task" \
                and set(self.shl.weights) != {"svc"}:
            raise ValueError(
                "single-task architecture exposes only the svc head; "
                f"SHL levels {sorted(self.shl.weights)} do not fit")

    def encoder_config(self, height: int | None = None,
                       width: int | None = None) -> EncoderConfig:
        height = height if height is not None else self.preprocess.height
        width = width if width is not None else self.preprocess.width
        if self.architecture == "single-task":
            heads = {"svc": self.head_dim}
        else:
            heads = {level: self.head_dim for level in self.shl.weights}
        return EncoderConfig(height=height, width=width, head_dims=heads)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                obj = tomllib.load(fh)
        else:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        return cls.from_json(obj)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if "shl" in obj:
            shl = obj["shl"]
            obj["shl"] = SHLConfig(
                weights={k: float(v) for k, v in shl["weights"].items()},
                temperature=float(shl.get("temperature",
                                          obj.get("temperature", 0.1))))
        if "preprocess" in obj:
            obj["preprocess"] = PreprocessConfig(**obj["preprocess"])
        return cls(**obj)

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "temperature": self.temperature,
            "shl": {"weights": dict(self.shl.weights),
                    "temperature": self.shl.temperature},
            "seed": self.seed,
            "architecture": self.architecture,
            "head_dim": self.head_dim,
            "preprocess": {
                "width": self.preprocess.width,
                "height": self.preprocess.height,
                "brightness": self.preprocess.brightness,
                "hflip_prob": self.preprocess.hflip_prob,
            },
            "checkpoint_every": self.checkpoint_every,
        }


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   step=0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig
              ) -> tuple[dict[str, np.ndarray], AdamState, bool]:
    """Bias-corrected Adam update. Non-finite gradients skip the whole step
    (reported via the returned flag) so one bad batch cannot poison moments."""
    for name, grad in grads.items():
        if params[name].shape != grad.shape:
            raise ValueError(f"shape mismatch for {name}: "
                             f"{params[name].shape} vs {grad.shape}")
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        return params, state, True
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    new_params = {}
    new_m = {}
    new_v = {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = p - config.learning_rate * m_hat \
            / (np.sqrt(v_hat) + config.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, step=t), False


def _cache_resized(manifest: DatasetManifest, records,
                   config: PreprocessConfig) -> list[np.ndarray]:
    cached = []
    for rec in records:
        img = load_image(manifest.resolve(rec))
        resized = Image.fromarray(img).resize((config.width, config.height),
                                              Image.BILINEAR)
        cached.append(np.asarray(resized, dtype=np.uint8))
    return cached


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    encoder: EncoderConfig
    log: list[dict]  # rows: epoch, level, loss, skipped_anchors


def train(manifest: DatasetManifest, config: TrainConfig,
          out_dir: str | Path | None = None) -> TrainResult:
    """Train the encoder + heads on the manifest's train split."""
    records = manifest.split_records("train")
    if not records:
        raise ValueError("empty train split")
    records = sorted(records, key=lambda r: (r.video_id, r.frame_index,
                                             r.synthetic))
    encoder = config.encoder_config()
    levels = list(config.shl.levels)
    missing = [l for l in levels if l not in encoder.head_dims]
    if missing:
        raise ValueError(f"architecture lacks heads for levels {missing}")

    images = _cache_resized(manifest, records, config.preprocess)
    level_keys = {level: [project(r.label, level) for r in records]
                  for level in levels}

    params = init_params(encoder, config.seed)
    state = AdamState.fresh(params)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFFFFFFFFFF, 1]))
    augment_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFFFFFFFFFF, 2]))

    out_dir = Path(out_dir) if out_dir is not None else None
    log: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(records))
        epoch_loss = {level: 0.0 for level in levels}
        epoch_skipped = {level: 0 for level in levels}
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.size < 2:
                continue  # the contrastive objective needs N >= 2
            batch = np.stack([
                preprocess(images[i], config.preprocess, augment=True,
                           rng=augment_rng)
                for i in idx
            ])
            features, bb_cache = forward(params, batch, encoder)
            head_caches = {}
            batches = {}
            for level in levels:
                emb, cache = project_head(params, features, level, encoder)
                head_caches[level] = cache
                batches[level] = ContrastiveBatch(
                    embeddings=emb,
                    keys=[level_keys[level][i] for i in idx],
                    temperature=config.temperature)
            result = shl_loss(batches, config.shl)
            grads = backward(params, encoder, bb_cache, head_caches,
                             result.grads)
            params, state, skipped_step = adam_step(params, grads, state,
                                                    config)
            for level in levels:
                epoch_loss[level] += result.per_level[level].loss
                epoch_skipped[level] += result.per_level[level].skipped_anchors
            n_batches += 1
        for level in levels:
            log.append({
                "epoch": epoch,
                "level": level,
                "loss": epoch_loss[level] / max(n_batches, 1),
                "skipped_anchors": epoch_skipped[level],
            })
        if out_dir is not None and (epoch % config.checkpoint_every == 0
                                    or epoch == config.epochs):
            save_checkpoint(out_dir / f"checkpoint_{epoch:04d}.uiwf",
                            params, encoder)

    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint_final.uiwf", params, encoder)
        with open(out_dir / "train_log.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["epoch", "level", "loss", "skipped_anchors"])
            writer.writeheader()
            writer.writerows(log)
    return TrainResult(params=params, encoder=encoder, log=log)
