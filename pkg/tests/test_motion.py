"""Motion filter tests against brute-force pixel oracles (direct 2D
convolution, naive max filter, flood-fill components)."""

import numpy as np
import pytest

from uiwf.motion import (MotionConfig, abs_diff, calc_areas, dilate,
                         find_contours, gaussian_kernel_1d, gaussian_sigma,
                         kept_frame_indices, motion_det, to_gray)


# ---------------------------------------------------------------- oracles

def oracle_blur(gray, k):
    """Direct O(H W k^2) convolution with the separable kernel's outer
    product and clamped (replicate) indexing."""
    kern1 = gaussian_kernel_1d(k)
    kern2 = np.outer(kern1, kern1)
    h, w = gray.shape
    r = k // 2
    out = np.zeros_like(gray, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += kern2[dy + r, dx + r] * gray[yy, xx]
            out[y, x] = acc
    return out


def oracle_max_filter(img, kh, kw):
    h, w = img.shape
    rt, rl = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(y - rt, 0), min(y + (kh - 1 - rt), h - 1)
            x0, x1 = max(x - rl, 0), min(x + (kw - 1 - rl), w - 1)
            out[y, x] = img[y0:y1 + 1, x0:x1 + 1].max()
    return out


def oracle_components(binary):
    """Flood-fill 8-connected regions; returns list of pixel-coordinate
    sets."""
    h, w = binary.shape
    seen = np.zeros_like(binary, dtype=bool)
    regions = []
    for y in range(h):
        for x in range(w):
            if binary[y, x] and not seen[y, x]:
                stack = [(y, x)]
                seen[y, x] = True
                region = set()
                while stack:
                    cy, cx = stack.pop()
                    region.add((cy, cx))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if (0 <= ny < h and 0 <= nx < w
                                    and binary[ny, nx] and not seen[ny, nx]):
                                seen[ny, nx] = True
                                stack.append((ny, nx))
                regions.append(region)
    return regions


def region_bbox_area(region):
    ys = [p[0] for p in region]
    xs = [p[1] for p in region]
    return (max(ys) - min(ys) + 1) * (max(xs) - min(xs) + 1)


# ---------------------------------------------------------------- abs_diff

def test_abs_diff_identical_inputs():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    assert np.all(abs_diff(img, img, (5, 5)) == 0)


def test_abs_diff_constant_images():
    a = np.zeros((16, 16, 3), dtype=np.uint8)
    b = np.full((16, 16, 3), 255, dtype=np.uint8)
    diff = abs_diff(a, b, (5, 5))
    assert np.allclose(diff, 255.0)


def test_abs_diff_dimension_mismatch():
    with pytest.raises(ValueError):
        abs_diff(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)), (5, 5))


def test_abs_diff_single_hot_pixel_matches_reference_convolution():
    a = np.zeros((15, 15, 3), dtype=np.uint8)
    b = a.copy()
    b[7, 7] = 255
    diff = abs_diff(a, b, (5, 5))
    expected = oracle_blur(to_gray(b), 5)
    assert np.allclose(diff, expected, atol=1e-9)
    # center value is the kernel peak times 255
    kern = gaussian_kernel_1d(5)
    assert diff[7, 7] == pytest.approx(255 * kern[2] ** 2)


def test_gaussian_kernel_convention():
    assert gaussian_sigma(5) == pytest.approx(1.1)
    kern = gaussian_kernel_1d(5)
    assert kern.sum() == pytest.approx(1.0)
    assert np.all(kern == kern[::-1])


# ------------------------------------------------------------- contours

def test_find_contours_blank():
    assert find_contours(np.zeros((10, 10)), (5, 5), 40) == []


def test_find_contours_block_grows_by_dilation():
    diff = np.zeros((40, 40))
    diff[10:20, 12:22] = 255.0  # 10x10 block
    contours = find_contours(diff, (5, 5), 40)
    assert len(contours) == 1
    areas = calc_areas(contours)
    assert areas == [14 * 14]


def test_find_contours_two_separated_blocks():
    diff = np.zeros((40, 60))
    diff[5:10, 5:10] = 255.0
    diff[30:35, 45:50] = 255.0
    contours = find_contours(diff, (5, 5), 40)
    assert len(contours) == 2


def test_find_contours_matches_flood_fill_oracle_on_random_images():
    rng = np.random.default_rng(1)
    for _ in range(15):
        diff = (rng.random((24, 24)) < 0.08) * 255.0
        contours = find_contours(diff, (3, 3), 40)
        binary = oracle_max_filter(diff, 3, 3) > 40
        regions = oracle_components(binary)
        assert len(contours) == len(regions)
        got = sorted(calc_areas(contours))
        want = sorted(float(region_bbox_area(r)) for r in regions)
        assert got == want


def test_dilation_never_loses_foreground():
    rng = np.random.default_rng(5)
    diff = (rng.random((30, 30)) < 0.05) * 255.0
    small = dilate(diff, (1, 1)) > 40
    big = dilate(diff, (5, 5)) > 40
    assert np.all(big[small])


def test_dilate_matches_naive_max_filter():
    rng = np.random.default_rng(9)
    diff = rng.random((17, 23)) * 255
    assert np.allclose(dilate(diff, (5, 3)), oracle_max_filter(diff, 3, 5))


# ------------------------------------------------------------ calc_areas

def test_calc_areas_empty():
    assert calc_areas([]) == []


def test_calc_areas_rectangle():
    contour = [(0, 0), (0, 13), (13, 13), (13, 0)]
    assert calc_areas([contour]) == [196.0]


def test_calc_areas_l_shape_bbox():
    # L-shaped border whose bounding box is 20 rows x 30 cols
    pts = [(r, 0) for r in range(20)] + [(19, c) for c in range(30)]
    assert calc_areas([pts]) == [600.0]


# ------------------------------------------------------------ motion_det

def test_motion_det_constant_video():
    frame = np.full((16, 16, 3), 77, dtype=np.uint8)
    assert motion_det([frame] * 50, MotionConfig()) == []


def test_motion_det_single_frame():
    frame = np.zeros((8, 8, 3), dtype=np.uint8)
    assert motion_det([frame], MotionConfig()) == []


def test_motion_det_empty_list():
    with pytest.raises(ValueError):
        motion_det([], MotionConfig())


def _white_square_fixture():
    black = np.zeros((120, 120, 3), dtype=np.uint8)
    square = black.copy()
    square[28:92, 28:92] = 255  # 64x64 white square
    return [black] * 5 + [square]


def test_motion_det_white_square_matches_pixel_oracle():
    # Oracle-derived expectations for the square-appears fixture:
    # the base frame b is retained over the still frames 0..4, so the saved
    # transition is (0, 5); Gaussian spill above T_B widens the thresholded
    # region by 1 px per side before dilation adds 2 more, so the bbox is
    # (64 + 2*3)^2 = 4900 px^2.
    frames = _white_square_fixture()
    config = MotionConfig(contour_area_threshold=2000)
    assert motion_det(frames, config) == [(0, 5)]

    diff = np.abs(oracle_blur(to_gray(frames[5]), 5)
                  - oracle_blur(to_gray(frames[0]), 5))
    binary = oracle_max_filter(diff, 5, 5) > config.binarize_threshold
    regions = oracle_components(binary)
    assert len(regions) == 1
    oracle_area = region_bbox_area(regions[0])
    assert oracle_area == 70 * 70 == 4900

    contours = find_contours(
        abs_diff(frames[5], frames[0], config.gaussian_kernel),
        config.dilation_kernel, config.binarize_threshold)
    assert calc_areas(contours) == [float(oracle_area)]


def test_motion_det_threshold_monotonicity():
    # saved transition pairs restructure as the retained base frame advances
    # differently, so the monotone quantity is the number of saved
    # transitions, not the pair set itself
    for seed in range(5):
        rng = np.random.default_rng(seed)
        frames = [rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
                  for _ in range(8)]
        previous = None
        for tc in np.linspace(5000, 0, 10):
            n_saved = len(motion_det(frames, MotionConfig(
                contour_area_threshold=float(tc))))
            if previous is not None:
                assert previous <= n_saved
            previous = n_saved


def test_motion_det_pairs_strictly_increasing():
    rng = np.random.default_rng(4)
    frames = []
    base = np.zeros((24, 24, 3), dtype=np.uint8)
    for i in range(12):
        f = base.copy()
        if i % 3 == 0:
            f[:12, :12] = rng.integers(0, 256, size=(12, 12, 3))
        frames.append(f)
    saved = motion_det(frames, MotionConfig(contour_area_threshold=10))
    for prev, nxt in saved:
        assert prev < nxt
    for (a, b), (c, d) in zip(saved, saved[1:]):
        assert a < c and b < d


def test_kept_frame_indices_deduplicates():
    assert kept_frame_indices([(0, 5), (5, 9), (9, 11)]) == [0, 5, 9, 11]


def test_motion_config_validation():
    with pytest.raises(ValueError):
        MotionConfig(gaussian_kernel=(4, 5))
    with pytest.raises(ValueError):
        MotionConfig(dilation_kernel=(0, 5))
    with pytest.raises(ValueError):
        MotionConfig(binarize_threshold=300)
    with pytest.raises(ValueError):
        MotionConfig(contour_area_threshold=-1)
