"""Shared fixtures: a small synthetic dataset whose three label levels are
visually encoded (background color = software, corner glyph = view, pasted
asset = context), plus asset pools for the generators."""

from __future__ import annotations

import numpy as np
import pytest

from uiwf.dataset import DatasetManifest, FrameRecord, save_image
from uiwf.labels import ChainLabel, ContextValue, LabelRegistry
from uiwf.synthgen import (AssetDB, MenuAsset, SelectionAsset,
                           gen_context_menu, gen_selected_text, record_rng)

TOY_W, TOY_H = 96, 64
SOFTWARES = ["RedApp", "GreenApp", "BlueApp"]
VIEWS = ["Main", "Alt"]
BG = {
    "RedApp": (200, 55, 55),
    "GreenApp": (55, 200, 55),
    "BlueApp": (55, 55, 200),
}


def toy_registry() -> LabelRegistry:
    return LabelRegistry([(s, v) for s in SOFTWARES for v in VIEWS])


def toy_frame(software: str, view: str, rng: np.random.Generator) -> np.ndarray:
    img = np.empty((TOY_H, TOY_W, 3), dtype=np.float64)
    img[:] = BG[software]
    img += rng.uniform(-18, 18, size=img.shape)
    if view == "Main":
        img[4:20, 4:20] = 250  # white block, top-left
    else:
        img[-20:-4, -20:-4] = 5  # black block, bottom-right
    return np.clip(img, 0, 255).astype(np.uint8)


def toy_menu_asset(software: str, idx: int) -> MenuAsset:
    h, w = 30, 40
    img = np.full((h, w, 3), (28, 28, 38), dtype=np.uint8)
    img[0:2, :] = 255
    img[:, 0:2] = 255
    # accent strip tied to the software class, so conditioning is visible
    img[4:8, 4:-4] = BG[software]
    return MenuAsset(image=img, software_condition=software,
                     source_id=f"{software}_menu{idx}")


def toy_selection_asset(idx: int) -> SelectionAsset:
    h, w = 14, 64
    img = np.full((h, w, 3), (250, 225, 30), dtype=np.uint8)
    img[h // 2 - 1:h // 2 + 1, :] = 60  # text-ish dark line
    return SelectionAsset(image=img, source_id=f"sel{idx}")


def toy_asset_db() -> AssetDB:
    menus = {s: [toy_menu_asset(s, i) for i in range(3)] for s in SOFTWARES}
    selections = [toy_selection_asset(i) for i in range(4)]
    return AssetDB(menus, selections)


def build_toy_dataset(root, seed: int = 7, per_context_train: int = 40,
                      per_context_test: int = 10) -> DatasetManifest:
    """40 train + 20 test frames per svc class by default (test frames are
    spread over two videos per software/view pair so the database/query
    split has whole videos to work with)."""
    registry = toy_registry()
    db = toy_asset_db()
    rng = np.random.default_rng(seed)
    records = []

    def emit(video_id, split, n_per_context, frame_offset=0):
        idx = frame_offset
        software, view = video_id.split("-")[1:3]
        for context in (ContextValue.NONE, ContextValue.MENU,
                        ContextValue.SELECTED_TEXT):
            for _ in range(n_per_context):
                base = toy_frame(software, view, rng)
                rec = FrameRecord(
                    video_id=video_id, frame_index=idx,
                    image_path=f"{video_id}/{idx}.png",
                    label=ChainLabel(software, view, context),
                    context_observed=True, synthetic=False, split=split)
                rrng = record_rng(seed, rec)
                if context is ContextValue.MENU:
                    base, _, _ = gen_context_menu(base, software, db, rrng)
                elif context is ContextValue.SELECTED_TEXT:
                    base, _, _ = gen_selected_text(base, db, rrng)
                save_image(base, root / rec.image_path)
                records.append(rec)
                idx += 1

    for software in SOFTWARES:
        for view in VIEWS:
            emit(f"train-{software}-{view}-0", "train", per_context_train)
            emit(f"test-{software}-{view}-0", "test", per_context_test)
            emit(f"test-{software}-{view}-1", "test", per_context_test)
    return DatasetManifest(root, registry, records)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_dataset")
    return build_toy_dataset(root)


@pytest.fixture(scope="session")
def toy_assets():
    return toy_asset_db()
