"""FAST-9 corners on real-valued phase congruency maps, with grid bucketing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)
ARC = 9


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    score: float


def _has_arc(mask: np.ndarray, arc: int) -> np.ndarray:
    """True where ``mask`` (16, ...) holds ``arc`` contiguous circular hits."""
    ext = np.concatenate([mask, mask[: arc - 1]], axis=0).astype(np.int16)
    csum = np.concatenate([np.zeros((1,) + mask.shape[1:], np.int16), np.cumsum(ext, axis=0)])
    runs = csum[arc:] - csum[:-arc]
    return (runs[: len(mask)] == arc).any(axis=0)


def fast_score_map(img, threshold: float, arc: int = ARC) -> np.ndarray:
    """Segment-test corner score per pixel; 0 where the test fails.

    The score is the larger of the summed excess brightness/darkness of the
    circle pixels beyond ``threshold``. Pixels within 3 of the border get 0.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    out = np.zeros((h, w))
    if h < 7 or w < 7:
        return out
    c = img[3:h - 3, 3:w - 3]
    ring = np.stack([img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx] for dx, dy in CIRCLE])
    diff = ring - c
    bright = diff > threshold
    dark = diff < -threshold
    corner = _has_arc(bright, arc) | _has_arc(dark, arc)
    sb = np.where(bright, diff - threshold, 0.0).sum(axis=0)
    sd = np.where(dark, -diff - threshold, 0.0).sum(axis=0)
    out[3:h - 3, 3:w - 3] = np.where(corner, np.maximum(sb, sd), 0.0)
    return out


def strict_local_maxima(score: np.ndarray) -> np.ndarray:
    """Mask of positive scores strictly greater than all 8 neighbours."""
    padded = np.pad(score, 1, mode="constant", constant_values=-np.inf)
    h, w = score.shape
    keep = score > 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            keep &= score > padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    return keep


def detect_fast(pc, target_count: int = 1000, fast_threshold: float = 0.05,
                grid: int | tuple[int, int] = 8, margin: int = 0) -> list[Keypoint]:
    """Detect up to ``target_count`` FAST-9 keypoints spread over a grid.

    Corners survive 3x3 non-maximum suppression and must lie at least
    ``margin`` pixels from every border. The interior is split into
    ``grid`` cells and corners are drawn round-robin, best first, from each
    cell so that every cell gets its share before any cell gets more.
    The result is sorted by descending score, ties by lower y then lower x.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    pc = getattr(pc, "pc", pc)
    pc = np.asarray(pc, dtype=np.float64)
    h, w = pc.shape
    gy, gx = (grid, grid) if isinstance(grid, int) else grid

    score = fast_score_map(pc, fast_threshold)
    keep = strict_local_maxima(score)
    m = int(np.ceil(margin))
    if m > 0:
        keep[:m, :] = False
        keep[h - m:, :] = False
        keep[:, :m] = False
        keep[:, w - m:] = False
    ys, xs = np.nonzero(keep)
    if len(ys) == 0:
        return []
    s = score[ys, xs]

    x0, x1 = m, w - m
    y0, y1 = m, h - m
    cx = np.minimum(((xs - x0) * gx) // max(x1 - x0, 1), gx - 1)
    cy = np.minimum(((ys - y0) * gy) // max(y1 - y0, 1), gy - 1)
    cell = cy * gx + cx

    # best first inside each cell; deterministic tie-break on (y, x)
    order = np.lexsort((xs, ys, -s, cell))
    cell_sorted = cell[order]
    starts = np.searchsorted(cell_sorted, np.arange(gx * gy), side="left")
    rank = np.arange(len(order)) - starts[cell_sorted]
    # round-robin: rank first, then cell index
    rr = order[np.lexsort((cell_sorted, rank))]
    chosen = rr[:target_count]

    pts = [Keypoint(int(xs[i]), int(ys[i]), float(s[i])) for i in chosen]
    pts.sort(key=lambda k: (-k.score, k.y, k.x))
    return pts
