"""Manifest ingestion/persistence, image loading, splits and label statistics.

The manifest is JSON-lines, one frame record per line, so it is streamable,
diff-friendly and append-safe. Images live under the manifest root in a
``<root>/<video_id>/<frame_index>.png`` layout and must be PNG: selected-text
highlights are few-pixel features and would not survive lossy compression.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .labels import ChainLabel, ContextValue, LabelRegistry

SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Parse or validation failure while reading a manifest."""


@dataclass(frozen=True)
class FrameRecord:
    video_id: str
    frame_index: int
    image_path: str
    label: ChainLabel
    context_observed: bool
    synthetic: bool
    split: str

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "frame_index": self.frame_index,
            "image_path": self.image_path,
            "software": self.label.software,
            "view": self.label.view,
            "context": str(self.label.context),
            "context_observed": self.context_observed,
            "synthetic": self.synthetic,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FrameRecord":
        label = ChainLabel(
            software=obj["software"],
            view=obj["view"],
            context=ContextValue.from_string(obj["context"]),
        )
        frame_index = int(obj["frame_index"])
        if frame_index < 0:
            raise ValueError(f"negative frame_index: {frame_index}")
        split = obj["split"]
        if split not in SPLITS:
            raise ValueError(f"unknown split: {split!r}")
        return cls(
            video_id=str(obj["video_id"]),
            frame_index=frame_index,
            image_path=str(obj["image_path"]),
            label=label,
            context_observed=bool(obj["context_observed"]),
            synthetic=bool(obj["synthetic"]),
            split=split,
        )


class DatasetManifest:
    """Immutable index of frame records plus their on-disk root."""

    def __init__(self, root: str | Path, registry: LabelRegistry,
                 records: list[FrameRecord]):
        self.root = Path(root)
        self.registry = registry
        self.records = list(records)
        self._validate()

    def _validate(self) -> None:
        seen = set()
        train_videos = set()
        test_videos = set()
        for rec in self.records:
            try:
                self.registry.validate(rec.label)
            except Exception as exc:
                raise ManifestError(
                    f"record ({rec.video_id}, {rec.frame_index}): {exc}") from exc
            ident = (rec.video_id, rec.frame_index, rec.synthetic)
            if ident in seen:
                raise ManifestError(f"duplicate record identity: {ident}")
            seen.add(ident)
            if rec.split == "train":
                train_videos.add(rec.video_id)
            else:
                test_videos.add(rec.video_id)
        overlap = train_videos & test_videos
        if overlap:
            raise ManifestError(
                f"video ids present in both train and test: {sorted(overlap)}")

    def split_records(self, split: str) -> list[FrameRecord]:
        return [r for r in self.records if r.split == split]

    def with_records(self, records: list[FrameRecord]) -> "DatasetManifest":
        return DatasetManifest(self.root, self.registry, records)

    def resolve(self, rec: FrameRecord) -> Path:
        return self.root / rec.image_path


def load_manifest(path: str | Path, registry: LabelRegistry,
                  root: str | Path | None = None) -> DatasetManifest:
    """Load a JSONL manifest; the root defaults to the manifest's directory."""
    path = Path(path)
    if root is None:
        root = path.parent
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(FrameRecord.from_json(obj))
            except ManifestError:
                raise
            except Exception as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return DatasetManifest(root, registry, records)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def load_image(path: str | Path) -> np.ndarray:
    """Load a PNG as an HxWx3 uint8 array. Non-PNG files are rejected."""
    path = Path(path)
    with Image.open(path) as im:
        if im.format != "PNG":
            raise ManifestError(
                f"{path}: only PNG images are accepted (got {im.format})")
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(image: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(
        path, format="PNG")


def split_database_query(test_records: list[FrameRecord], seed: int = 0
                         ) -> tuple[list[FrameRecord], list[FrameRecord]]:
    """Partition the test set by whole video id into database and query halves.

    Videos are packed largest-first into the database half until it holds at
    least half of the frames; ties between equally sized videos are broken by
    a seeded shuffle, so the result is deterministic for a given seed.
    """
    by_video: dict[str, list[FrameRecord]] = {}
    for rec in test_records:
        by_video.setdefault(rec.video_id, []).append(rec)
    if len(by_video) < 2:
        raise ValueError("database/query split needs at least 2 video ids")
    rng = np.random.default_rng(seed)
    videos = sorted(by_video)
    rng.shuffle(videos)
    videos.sort(key=lambda v: -len(by_video[v]))  # stable: keeps shuffled tie order
    total = sum(len(v) for v in by_video.values())
    database: list[FrameRecord] = []
    query: list[FrameRecord] = []
    db_count = 0
    for i, vid in enumerate(videos):
        # never let the database swallow every video
        if db_count * 2 < total and i < len(videos) - 1:
            database.extend(by_video[vid])
            db_count += len(by_video[vid])
        else:
            query.extend(by_video[vid])
    return database, query


def label_stats(manifest: DatasetManifest, level: str) -> dict:
    """Per-class percentage of records at the given hierarchy level."""
    counts = Counter(rec.label.key(level) for rec in manifest.records)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {key: 100.0 * n / total for key, n in sorted(counts.items(), key=str)}


def context_stats(manifest: DatasetManifest) -> dict[str, float]:
    """Context-value percentage table over records with observed context."""
    counts = Counter(str(rec.label.context) for rec in manifest.records
                     if rec.context_observed)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {key: 100.0 * n / total for key, n in sorted(counts.items())}


def relabel_context(rec: FrameRecord, context: ContextValue) -> FrameRecord:
    return replace(rec, label=replace(rec.label, context=context))
