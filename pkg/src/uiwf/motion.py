"""Near-duplicate frame filtering via frame differencing.

Pipeline per consecutive frame pair: grayscale + Gaussian blur, absolute
difference, dilation (before binarization, for sensitivity), thresholding,
outer-border following of 8-connected regions, bounding-box area gating.

Documented constants:
  - Gaussian sigma for a k-wide kernel: 0.3 * ((k - 1) / 2 - 1) + 0.8,
    kernel values normalized to sum 1 (the common OpenCV convention).
  - Grayscale luma weights 0.299 / 0.587 / 0.114.
  - Replicate-edge padding for blur and dilation, so frame borders never
    produce spurious differences.
  - "Area" is the axis-aligned bounding-rectangle area of a contour: the
    gate is a sensitivity check, and polygon area would under-count thin
    selections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DEFAULT_CONTOUR_AREA = 500.0  # px^2; the area gate is meant to be tuned per video


@dataclass(frozen=True)
class MotionConfig:
    gaussian_kernel: tuple[int, int] = (5, 5)
    dilation_kernel: tuple[int, int] = (5, 5)
    binarize_threshold: float = 40.0
    contour_area_threshold: float = DEFAULT_CONTOUR_AREA

    def __post_init__(self):
        gw, gh = self.gaussian_kernel
        dw, dh = self.dilation_kernel
        if gw < 1 or gh < 1 or dw < 1 or dh < 1:
            raise ValueError("kernel dims must be >= 1")
        if gw % 2 == 0 or gh % 2 == 0:
            raise ValueError("gaussian kernel dims must be odd")
        if not 0 <= self.binarize_threshold <= 255:
            raise ValueError("binarize threshold must be in [0, 255]")
        if self.contour_area_threshold < 0:
            raise ValueError("contour area threshold must be >= 0")


def gaussian_sigma(k: int) -> float:
    return 0.3 * ((k - 1) / 2 - 1) + 0.8


def gaussian_kernel_1d(k: int) -> np.ndarray:
    sigma = gaussian_sigma(k)
    x = np.arange(k, dtype=np.float64) - (k - 1) / 2
    kern = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return kern / kern.sum()


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma grayscale of an HxWx3 image, as float64."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    wr, wg, wb = LUMA_WEIGHTS
    return wr * img[..., 0] + wg * img[..., 1] + wb * img[..., 2]


def gaussian_blur(gray: np.ndarray, kernel: tuple[int, int]) -> np.ndarray:
    """Separable Gaussian blur with replicate-edge padding."""
    kw, kh = kernel
    out = ndimage.correlate1d(gray, gaussian_kernel_1d(kh), axis=0,
                              mode="nearest")
    out = ndimage.correlate1d(out, gaussian_kernel_1d(kw), axis=1,
                              mode="nearest")
    return out


def abs_diff(a: np.ndarray, b: np.ndarray,
             gaussian_kernel: tuple[int, int]) -> np.ndarray:
    """Per-pixel |blur(gray(a)) - blur(gray(b))| as a single-channel image."""
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise ValueError(f"dimension mismatch: {ga.shape} vs {gb.shape}")
    return np.abs(gaussian_blur(ga, gaussian_kernel)
                  - gaussian_blur(gb, gaussian_kernel))


def dilate(diff: np.ndarray, kernel: tuple[int, int]) -> np.ndarray:
    """Max filter with an all-ones structuring element, replicate padding."""
    kw, kh = kernel
    return ndimage.maximum_filter(diff, size=(kh, kw), mode="nearest")


# Clockwise Moore neighborhood, starting straight up; (row, col) offsets.
_NEIGH = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def _label_components(binary: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labels via BFS; labels start at 1."""
    h, w = binary.shape
    labels = np.zeros((h, w), dtype=np.int32)
    current = 0
    for r0 in range(h):
        for c0 in range(w):
            if binary[r0, c0] and labels[r0, c0] == 0:
                current += 1
                stack = [(r0, c0)]
                labels[r0, c0] = current
                while stack:
                    r, c = stack.pop()
                    for dr, dc in _NEIGH:
                        nr, nc = r + dr, c + dc
                        if (0 <= nr < h and 0 <= nc < w
                                and binary[nr, nc] and labels[nr, nc] == 0):
                            labels[nr, nc] = current
                            stack.append((nr, nc))
    return labels, current


def _trace_outer_border(labels: np.ndarray, comp: int,
                        start: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighbor border following around one 8-connected component.

    `start` must be the component's topmost-leftmost pixel, so its left
    neighbor is guaranteed background. Stops on re-entering the start pixel
    with the same first move (Jacob's criterion).
    """
    h, w = labels.shape

    def fg(p):
        r, c = p
        return 0 <= r < h and 0 <= c < w and labels[r, c] == comp

    contour = [start]
    prev = (start[0], start[1] - 1)
    cur = start
    first_move = None
    limit = 4 * labels.size + 8
    for _ in range(limit):
        base = _NEIGH.index((prev[0] - cur[0], prev[1] - cur[1]))
        nxt = None
        for k in range(1, 9):
            j = (base + k) % 8
            cand = (cur[0] + _NEIGH[j][0], cur[1] + _NEIGH[j][1])
            if fg(cand):
                nxt = cand
                prev = (cur[0] + _NEIGH[(j - 1) % 8][0],
                        cur[1] + _NEIGH[(j - 1) % 8][1])
                break
        if nxt is None:
            break  # isolated pixel
        if cur == start:
            if first_move is None:
                first_move = nxt
            elif nxt == first_move:
                break
        contour.append(nxt)
        cur = nxt
    else:
        raise RuntimeError("border following did not terminate")
    if len(contour) > 1 and contour[-1] == start:
        contour.pop()
    return contour


def find_contours(diff: np.ndarray, dilation_kernel: tuple[int, int],
                  binarize_threshold: float) -> list[list[tuple[int, int]]]:
    """Outer borders of the 8-connected regions of the dilated, binarized diff.

    Returns one contour per region as a list of (row, col) border points.
    """
    if diff.ndim != 2:
        raise ValueError("diff must be single-channel")
    binary = dilate(diff, dilation_kernel) > binarize_threshold
    labels, count = _label_components(binary)
    contours = []
    for comp in range(1, count + 1):
        rows, cols = np.nonzero(labels == comp)
        top = rows.min()
        left = cols[rows == top].min()
        contours.append(_trace_outer_border(labels, comp, (int(top), int(left))))
    return contours


def calc_areas(contours: list[list[tuple[int, int]]]) -> list[float]:
    """Axis-aligned bounding-rectangle area of each contour, in px^2."""
    areas = []
    for contour in contours:
        rows = [p[0] for p in contour]
        cols = [p[1] for p in contour]
        areas.append(float((max(rows) - min(rows) + 1)
                           * (max(cols) - min(cols) + 1)))
    return areas


def motion_det(frames: list[np.ndarray],
               config: MotionConfig) -> list[tuple[int, int]]:
    """Saved (prev_index, next_index) transitions of the b/a state machine.

    A transition is saved when any region area exceeds the contour area
    threshold; the base frame then advances to the moved frame, otherwise
    the base frame is retained and the candidate discarded.
    """
    if len(frames) == 0:
        raise ValueError("frame list must not be empty")
    saved: list[tuple[int, int]] = []
    b = None  # (index, frame)
    for i, frame in enumerate(frames):
        if b is None:
            b = (i, frame)
            continue
        diff = abs_diff(frame, b[1], config.gaussian_kernel)
        contours = find_contours(diff, config.dilation_kernel,
                                 config.binarize_threshold)
        areas = calc_areas(contours)
        if any(area > config.contour_area_threshold for area in areas):
            saved.append((b[0], i))
            b = (i, frame)
    return saved


def kept_frame_indices(transitions: list[tuple[int, int]]) -> list[int]:
    """Deduplicated, sorted frame indices appearing in any saved transition."""
    kept = sorted({i for pair in transitions for i in pair})
    return kept
