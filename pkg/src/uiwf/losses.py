"""Supervised contrastive loss and its per-level weighted sum.

The loss follows the raw-sum form (no division by the anchor count); the
per-anchor mean is reported alongside for observability. Anchors with no
positives contribute zero and are counted, not raised on: small batches
hit this routinely. Log-sum-exp uses per-anchor max subtraction, which is
exact, not an approximation.

Gradients are with respect to the (already normalized) embedding rows;
composing with the normalization Jacobian is the model module's job.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ContrastiveBatch:
    embeddings: np.ndarray  # (N, d), rows unit-norm
    keys: list  # hashable per-sample class key at the evaluated level
    temperature: float = 0.1

    def __post_init__(self):
        emb = np.asarray(self.embeddings)
        if emb.ndim != 2 or emb.shape[0] < 2:
            raise ValueError("batch needs an (N, d) matrix with N >= 2")
        if len(self.keys) != emb.shape[0]:
            raise ValueError("one key per embedding row required")
        if not np.all(np.isfinite(emb)):
            raise ValueError("non-finite embeddings")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class SupConResult:
    loss: float  # raw sum over anchors, per the objective
    mean_loss: float  # per contributing anchor
    grad: np.ndarray  # (N, d), d loss / d embeddings
    skipped_anchors: int  # anchors with empty positive sets


@dataclass(frozen=True)
class SHLConfig:
    weights: dict[str, float] = field(
        default_factory=lambda: {"s": 0.2, "sv": 0.4, "svc": 0.4})
    temperature: float = 0.1

    def __post_init__(self):
        if not self.weights:
            raise ValueError("at least one hierarchy level required")
        for level, lam in self.weights.items():
            if not np.isfinite(lam) or lam < 0:
                raise ValueError(f"invalid weight for level {level!r}: {lam}")

    @classmethod
    def two_level(cls, temperature: float = 0.1) -> "SHLConfig":
        return cls(weights={"sv": 0.5, "svc": 0.5}, temperature=temperature)

    @property
    def levels(self) -> list[str]:
        order = {"s": 0, "sv": 1, "svc": 2}
        return sorted(self.weights, key=lambda l: order.get(l, 99))


def supcon_loss(batch: ContrastiveBatch) -> SupConResult:
    """Loss and analytic gradient of the supervised contrastive objective.

    For each anchor i with positive set P_i (same key, other index):
      L_i = (1/|P_i|) * sum_{p in P_i} -log( exp(s_ip) / sum_{a != i} exp(s_ia) )
    with s = (F F^T) / temperature. The total is the raw sum over anchors.
    """
    f = np.asarray(batch.embeddings, dtype=np.float64)
    n = f.shape[0]
    sims = f @ f.T / batch.temperature
    keys = batch.keys
    same = np.array([[keys[i] == keys[j] for j in range(n)] for i in range(n)])
    np.fill_diagonal(same, False)
    off = ~np.eye(n, dtype=bool)

    # dL/dS, accumulated anchor by anchor in fixed order for bit-stability
    dls = np.zeros((n, n))
    total = 0.0
    skipped = 0
    for i in range(n):
        pos = np.nonzero(same[i])[0]
        if pos.size == 0:
            skipped += 1
            continue
        row = sims[i][off[i]]
        m = row.max()
        lse = m + np.log(np.exp(row - m).sum())
        total += float(lse - sims[i, pos].mean())
        soft = np.exp(sims[i] - lse)
        soft[i] = 0.0
        dls[i] += soft
        dls[i, pos] -= 1.0 / pos.size
    grad = (dls @ f + dls.T @ f) / batch.temperature
    contributing = n - skipped
    mean = total / contributing if contributing else 0.0
    return SupConResult(loss=total, mean_loss=mean, grad=grad,
                        skipped_anchors=skipped)


@dataclass(frozen=True)
class SHLResult:
    loss: float
    per_level: dict[str, SupConResult]
    grads: dict[str, np.ndarray]  # per head, already scaled by its weight


def shl_loss(batches: dict[str, ContrastiveBatch], config: SHLConfig
             ) -> SHLResult:
    """Weighted sum of per-level supervised contrastive losses.

    Each level's loss runs on its own head's embeddings; levels never mix.
    """
    if set(batches) != set(config.weights):
        raise ValueError(
            f"level/batch mismatch: batches {sorted(batches)} vs "
            f"weights {sorted(config.weights)}")
    sizes = {level: np.asarray(b.embeddings).shape[0]
             for level, b in batches.items()}
    if len(set(sizes.values())) > 1:
        raise ValueError(f"batches disagree on sample count: {sizes}")
    per_level = {}
    grads = {}
    total = 0.0
    for level in config.levels:
        result = supcon_loss(batches[level])
        per_level[level] = result
        lam = config.weights[level]
        grads[level] = lam * result.grad
        total += lam * result.loss
    return SHLResult(loss=total, per_level=per_level, grads=grads)
