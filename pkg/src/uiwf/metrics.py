"""Retrieval and clustering evaluation over embedding sets.

Retrieval uses cosine similarity (dot products of unit rows) with ties
broken by ascending database index. Per-query scores are grouped by the
query's class at the evaluated level and macro-averaged with equal class
weight; classes without valid queries are excluded and counted.

AMI uses natural-log entropies (the score is log-base invariant) and the
standard hypergeometric permutation model for the expected mutual
information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .dataset import DatasetManifest, load_image, split_database_query
from .labels import ChainLabel, project
from .model import EncoderConfig, PreprocessConfig, embed, preprocess

_RETRIEVAL_LEVELS = ("s", "sv", "svc")


@dataclass(frozen=True)
class EmbeddingSet:
    matrix: np.ndarray  # (N, d), rows unit-norm
    labels: list[ChainLabel]
    head: str

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != len(self.labels):
            raise ValueError("matrix rows must align with labels")
        norms = np.linalg.norm(m, axis=1)
        if m.shape[0] and not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("embedding rows must be unit-norm")

    def keys(self, level: str) -> list:
        return [project(lab, level) for lab in self.labels]


@dataclass(frozen=True)
class RetrievalIndex:
    database: EmbeddingSet
    query: EmbeddingSet
    level: str

    def __post_init__(self):
        if self.database.matrix.shape[1] != self.query.matrix.shape[1]:
            raise ValueError("database and query dims differ")


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray  # cluster id per item, in [0, k)

    def __post_init__(self):
        object.__setattr__(self, "assignment",
                           np.asarray(self.assignment, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.assignment)


def knn_retrieve(index: RetrievalIndex, query_row: int, k: int) -> np.ndarray:
    """Indices of the k most cosine-similar database rows, best first."""
    if k > index.database.matrix.shape[0]:
        raise ValueError("k exceeds database size")
    return _ranking(index)[query_row][:k]


def _ranking(index: RetrievalIndex) -> np.ndarray:
    sims = index.query.matrix @ index.database.matrix.T
    n_db = sims.shape[1]
    # descending similarity, ties by ascending database index
    order = np.lexsort((np.broadcast_to(np.arange(n_db), sims.shape),
                        -sims), axis=1)
    return order


def _per_query_scores(index: RetrievalIndex, score_fn) -> tuple[dict, int, int]:
    """Run score_fn(hits_in_rank_order, R_q) per query; macro-group results.

    Returns (per-class mean scores, skipped_queries).
    """
    db_keys = index.database.keys(index.level)
    q_keys = index.query.keys(index.level)
    db_keys_arr = np.array([str(k) for k in db_keys], dtype=object)
    ranking = _ranking(index)
    per_class: dict = {}
    skipped_queries = 0
    for qi, key in enumerate(q_keys):
        r_q = sum(1 for k in db_keys if k == key)
        if r_q == 0:
            skipped_queries += 1
            continue
        ranked_keys = db_keys_arr[ranking[qi]]
        hits = ranked_keys == str(key)
        per_class.setdefault(key, []).append(score_fn(hits, r_q))
    means = {key: float(np.mean(vals)) for key, vals in per_class.items()}
    return means, skipped_queries


def _macro(per_class: dict) -> float:
    if not per_class:
        return float("nan")
    return float(np.mean(list(per_class.values())))


def precision_at_1(index: RetrievalIndex) -> tuple[dict, float, int]:
    """Per-class nearest-neighbor accuracy plus its macro average."""
    per_class, skipped = _per_query_scores(
        index, lambda hits, r_q: float(hits[0]))
    return per_class, _macro(per_class), skipped


def r_precision(index: RetrievalIndex) -> tuple[dict, float, int]:
    """Per-query r_q / R_q with r_q = hits among the top R_q ranks."""
    per_class, skipped = _per_query_scores(
        index, lambda hits, r_q: float(hits[:r_q].sum()) / r_q)
    return per_class, _macro(per_class), skipped


def map_at_r(index: RetrievalIndex) -> tuple[dict, float, int]:
    """Mean of precision-at-i over the first R_q ranks, zero where no hit."""

    def score(hits, r_q):
        top = hits[:r_q].astype(np.float64)
        prec = np.cumsum(top) / np.arange(1, r_q + 1)
        return float((prec * top).sum() / r_q)

    per_class, skipped = _per_query_scores(index, score)
    return per_class, _macro(per_class), skipped


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator,
                 max_iter: int) -> tuple[np.ndarray, float]:
    n = x.shape[0]
    # k-means++ seeding
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(0, n))
    centers[0] = x[first]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            choices = np.nonzero(d2 <= 0)[0]
            pick = int(choices[rng.integers(0, len(choices))])
        else:
            r = rng.random() * total
            pick = int(np.searchsorted(np.cumsum(d2), r))
            pick = min(pick, n - 1)
        centers[j] = x[pick]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        for j in range(k):
            members = new_assign == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster from the farthest point
                far = int(dists.min(axis=1).argmax())
                centers[j] = x[far]
                new_assign[far] = j
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    inertia = float(dists[np.arange(n), assign].sum())
    return assign, inertia


def kmeans(embeddings: np.ndarray, k: int, seed: int = 0, n_init: int = 10,
           max_iter: int = 300) -> Partition:
    """Lloyd iterations from k-means++ seeding, best of n_init restarts."""
    x = np.asarray(embeddings, dtype=np.float64)
    if k > x.shape[0]:
        raise ValueError("k exceeds number of points")
    seeds = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF]).spawn(n_init)
    best = None
    best_inertia = np.inf
    for ss in seeds:
        assign, inertia = _kmeans_once(x, k, np.random.default_rng(ss),
                                       max_iter)
        if inertia < best_inertia:
            best, best_inertia = assign, inertia
    return Partition(best)


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def _expected_mi(a: np.ndarray, b: np.ndarray, n: int) -> float:
    """E[MI] under the hypergeometric permutation model."""
    emi = 0.0
    lg = gammaln
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                term = nij / n * np.log(n * nij / (ai * bj))
                log_w = (lg(ai + 1) + lg(bj + 1)
                         + lg(n - ai + 1) + lg(n - bj + 1)
                         - lg(n + 1) - lg(nij + 1)
                         - lg(ai - nij + 1) - lg(bj - nij + 1)
                         - lg(n - ai - bj + nij + 1))
                emi += term * np.exp(log_w)
    return emi


def ami(u: Partition, v: Partition) -> float:
    """Adjusted mutual information: (MI - E[MI]) / (mean(H) - E[MI])."""
    if len(u) != len(v):
        raise ValueError("partitions differ in length")
    n = len(u)
    _, ui = np.unique(u.assignment, return_inverse=True)
    _, vi = np.unique(v.assignment, return_inverse=True)
    ku, kv = ui.max() + 1, vi.max() + 1
    contingency = np.zeros((ku, kv), dtype=np.int64)
    np.add.at(contingency, (ui, vi), 1)
    a = contingency.sum(axis=1)
    b = contingency.sum(axis=0)
    nz = contingency > 0
    pij = contingency[nz] / n
    outer = np.outer(a, b)[nz] / (n * n)
    mi = float((pij * np.log(pij / outer)).sum())
    hu, hv = _entropy(a), _entropy(b)
    emi = _expected_mi(a, b, n)
    denom = (hu + hv) / 2 - emi
    if abs(denom) < 1e-12:
        return 0.0
    return (mi - emi) / denom


@dataclass(frozen=True)
class MetricsReport:
    per_level: dict[str, dict]

    def to_json(self) -> dict:
        return {"levels": self.per_level}

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def embed_records(params: dict[str, np.ndarray], encoder: EncoderConfig,
                  manifest: DatasetManifest, records, head: str = "svc",
                  batch_size: int = 64) -> EmbeddingSet:
    pp = PreprocessConfig(width=encoder.width, height=encoder.height)
    rows = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        batch = np.stack([
            preprocess(load_image(manifest.resolve(r)), pp, augment=False)
            for r in chunk
        ])
        rows.append(embed(params, batch, encoder, head=head))
    matrix = np.concatenate(rows) if rows else np.zeros((0, 1))
    return EmbeddingSet(matrix=matrix, labels=[r.label for r in records],
                        head=head)


def evaluate(params: dict[str, np.ndarray], encoder: EncoderConfig,
             manifest: DatasetManifest, levels: list[str] | None = None,
             head: str = "svc", seed: int = 0) -> MetricsReport:
    """Score the test split: retrieval metrics over the database/query video
    split plus AMI of K-Means assignments, all from one head's embeddings."""
    levels = list(levels) if levels is not None else ["svc"]
    test_records = manifest.split_records("test")
    if not test_records:
        raise ValueError("manifest has no test split")
    db_records, q_records = split_database_query(test_records, seed=seed)
    db_set = embed_records(params, encoder, manifest, db_records, head=head)
    q_set = embed_records(params, encoder, manifest, q_records, head=head)
    all_matrix = np.concatenate([db_set.matrix, q_set.matrix])
    all_labels = db_set.labels + q_set.labels

    report: dict[str, dict] = {}
    for level in levels:
        if level not in _RETRIEVAL_LEVELS:
            raise ValueError(f"unknown level {level!r}")
        index = RetrievalIndex(database=db_set, query=q_set, level=level)
        p1_class, p1, p1_skip = precision_at_1(index)
        rp_class, rp, rp_skip = r_precision(index)
        mp_class, mp, mp_skip = map_at_r(index)
        truth_keys = [project(lab, level) for lab in all_labels]
        uniq = sorted(set(truth_keys), key=str)
        truth = Partition(np.array([uniq.index(k) for k in truth_keys]))
        clusters = kmeans(all_matrix, k=len(uniq), seed=seed)
        report[level] = {
            "ami": ami(truth, clusters),
            "precision_at_1": p1,
            "r_precision": rp,
            "map_at_r": mp,
            "per_class": {
                str(key): {
                    "precision_at_1": p1_class.get(key),
                    "r_precision": rp_class.get(key),
                    "map_at_r": mp_class.get(key),
                }
                for key in sorted(set(p1_class) | set(rp_class)
                                  | set(mp_class), key=str)
            },
            "skipped_queries": max(p1_skip, rp_skip, mp_skip),
            "num_classes": len(uniq),
        }
    return MetricsReport(per_level=report)


def export_embeddings(embeddings: EmbeddingSet, path: str | Path) -> None:
    """Flat little-endian float64 binary plus a JSON sidecar describing it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = np.ascontiguousarray(embeddings.matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(matrix.tobytes())
    sidecar = {
        "dtype": "float64-le",
        "shape": list(matrix.shape),
        "head": embeddings.head,
        "labels": [
            {"software": lab.software, "view": lab.view,
             "context": str(lab.context)}
            for lab in embeddings.labels
        ],
    }
    with open(path.with_suffix(path.suffix + ".json"), "w",
              encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
