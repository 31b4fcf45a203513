"""Synthetic context-menu and selected-text instance generation.

Assets are pasted opaquely: real menus occlude content, so no alpha
blending. Oversized menus are downscaled (bilinear, aspect preserved) to
fit; upscaling is never applied. Natural context already present on a base
frame is neither detected nor corrected -- that label noise is accepted by
design.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import DatasetManifest, FrameRecord, load_image, relabel_context, save_image
from .labels import ContextValue

# Selection crops must be wide enough that a 25%-width crop is still visible.
MIN_SELECTION_WIDTH = 4
SELECTION_MIN_CROP_FRACTION = 0.25


class NoAssetForClassError(ValueError):
    """No context-menu asset collected for the requested software class."""


class EmptySelectionDBError(ValueError):
    """The selected-text asset pool is empty."""


@dataclass(frozen=True)
class MenuAsset:
    image: np.ndarray
    software_condition: str
    source_id: str


@dataclass(frozen=True)
class SelectionAsset:
    image: np.ndarray
    source_id: str

    def __post_init__(self):
        if self.image.shape[1] < MIN_SELECTION_WIDTH:
            raise ValueError(
                f"selection asset {self.source_id!r} narrower than "
                f"{MIN_SELECTION_WIDTH} px")


@dataclass(frozen=True)
class Placement:
    """Where a synthetic asset landed on the base frame."""

    x: int
    y: int
    width: int
    height: int
    source_id: str

    def rectangle(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.width, self.height)


class AssetDB:
    """Context-menu crops keyed by software class, plus selected-text crops."""

    def __init__(self, menus: dict[str, list[MenuAsset]],
                 selections: list[SelectionAsset]):
        self.menus = {k: list(v) for k, v in menus.items() if v}
        self.selections = list(selections)

    @classmethod
    def from_directory(cls, root: str | Path) -> "AssetDB":
        """Load ``menus/<software>/<id>.png`` and ``selections/<id>.png``."""
        root = Path(root)
        menus: dict[str, list[MenuAsset]] = {}
        menus_dir = root / "menus"
        if menus_dir.is_dir():
            for software_dir in sorted(menus_dir.iterdir()):
                if not software_dir.is_dir():
                    continue
                assets = [
                    MenuAsset(load_image(p), software_dir.name, p.stem)
                    for p in sorted(software_dir.glob("*.png"))
                ]
                if assets:
                    menus[software_dir.name] = assets
        selections = []
        sel_dir = root / "selections"
        if sel_dir.is_dir():
            selections = [SelectionAsset(load_image(p), p.stem)
                          for p in sorted(sel_dir.glob("*.png"))]
        return cls(menus, selections)

    def menus_for(self, software: str) -> list[MenuAsset]:
        assets = self.menus.get(software, [])
        if not assets:
            raise NoAssetForClassError(
                f"no context-menu asset for software class {software!r}")
        return assets


def _resize_to_fit(image: np.ndarray, max_w: int, max_h: int) -> np.ndarray:
    h, w = image.shape[:2]
    if w <= max_w and h <= max_h:
        return image
    scale = min(max_w / w, max_h / h)
    new_w = max(1, int(w * scale))
    new_h = max(1, int(h * scale))
    resized = Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR)
    return np.asarray(resized, dtype=np.uint8)


def _paste(base: np.ndarray, patch: np.ndarray,
           rng: np.random.Generator, source_id: str) -> tuple[np.ndarray, Placement]:
    bh, bw = base.shape[:2]
    ph, pw = patch.shape[:2]
    x = int(rng.integers(0, bw - pw + 1))
    y = int(rng.integers(0, bh - ph + 1))
    out = base.copy()
    out[y:y + ph, x:x + pw] = patch
    return out, Placement(x=x, y=y, width=pw, height=ph, source_id=source_id)


def gen_context_menu(image: np.ndarray, software: str, db: AssetDB,
                     rng: np.random.Generator
                     ) -> tuple[np.ndarray, ContextValue, Placement]:
    """Paste a class-conditioned menu crop at a uniform in-bounds location."""
    assets = db.menus_for(software)
    asset = assets[int(rng.integers(0, len(assets)))]
    patch = _resize_to_fit(asset.image, image.shape[1], image.shape[0])
    out, placement = _paste(image, patch, rng, asset.source_id)
    return out, ContextValue.MENU, placement


def gen_selected_text(image: np.ndarray, db: AssetDB, rng: np.random.Generator
                      ) -> tuple[np.ndarray, ContextValue, Placement]:
    """Width-crop, maybe flip, and paste a selected-text crop in bounds."""
    if not db.selections:
        raise EmptySelectionDBError("selected-text asset pool is empty")
    asset = db.selections[int(rng.integers(0, len(db.selections)))]
    patch = asset.image
    w = patch.shape[1]
    w_min = max(1, int(round(SELECTION_MIN_CROP_FRACTION * w)))
    crop_w = int(rng.integers(w_min, w + 1))
    start = int(rng.integers(0, w - crop_w + 1))
    patch = patch[:, start:start + crop_w]
    if rng.random() < 0.5:
        patch = patch[:, ::-1]
    patch = _resize_to_fit(patch, image.shape[1], image.shape[0])
    out, placement = _paste(image, patch, rng, asset.source_id)
    return out, ContextValue.SELECTED_TEXT, placement


def record_rng(seed: int, rec: FrameRecord) -> np.random.Generator:
    """Per-record RNG stream so parallel generation order cannot change outputs."""
    vid_hash = zlib.crc32(rec.video_id.encode("utf-8"))
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, vid_hash,
                                rec.frame_index]))


def synthetic_image_path(rec: FrameRecord) -> str:
    return f"synthetic/{rec.video_id}/{rec.frame_index}.png"


def augment_dataset(manifest: DatasetManifest, db: AssetDB, fraction: float,
                    seed: int) -> DatasetManifest:
    """Add one synthetic instance to floor(fraction * N) natural train records.

    The generator per record is chosen uniformly between the menu and
    selected-text generators; the synthetic record's context label is
    overwritten to the generated class regardless of what the base frame
    naturally contains. Originals are retained; already-synthetic frames are
    never used as bases. Synthesized PNGs are written under
    ``<root>/synthetic/<video_id>/<frame_index>.png``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    pool = [r for r in manifest.records
            if r.split == "train" and not r.synthetic]
    n = int(fraction * len(pool))
    picker = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF]))
    chosen_idx = picker.choice(len(pool), size=n, replace=False) if n else []
    new_records = []
    for idx in sorted(int(i) for i in np.atleast_1d(chosen_idx)):
        rec = pool[idx]
        rng = record_rng(seed, rec)
        base = load_image(manifest.resolve(rec))
        try:
            if rng.integers(0, 2) == 0:
                out, context, _ = gen_context_menu(base, rec.label.software,
                                                   db, rng)
            else:
                out, context, _ = gen_selected_text(base, db, rng)
        except (NoAssetForClassError, EmptySelectionDBError) as exc:
            raise type(exc)(
                f"record ({rec.video_id}, {rec.frame_index}): {exc}") from exc
        synth = FrameRecord(
            video_id=rec.video_id,
            frame_index=rec.frame_index,
            image_path=synthetic_image_path(rec),
            label=rec.label,
            context_observed=True,
            synthetic=True,
            split="train",
        )
        synth = relabel_context(synth, context)
        save_image(out, manifest.root / synth.image_path)
        new_records.append(synth)
    return DatasetManifest(manifest.root, manifest.registry,
                           manifest.records + new_records)
