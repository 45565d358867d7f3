"""Integer-pixel template matching on phase congruency maps."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import correlate

from .features import Keypoint

# stabilisers for a unit dynamic range
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2
SSIM_C3 = SSIM_C2 / 2

_VAR_FLOOR = 1e-14


class Metric(str, enum.Enum):
    SSD = "ssd"
    LAD = "lad"
    NCC = "ncc"
    SSIM = "ssim"


class WindowError(ValueError):
    """Template or search window does not fit inside the raster."""


@dataclass(frozen=True)
class TemplateSpec:
    template_size: int = 101
    search_radius: int = 10
    metric: Metric = Metric.SSIM

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if self.template_size < 5 or self.template_size % 2 == 0:
            raise ValueError("template_size must be odd and >= 5")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")

    @property
    def half(self) -> int:
        return self.template_size // 2


@dataclass(frozen=True)
class CoarseMatch:
    ref: Keypoint
    tgt_x: int
    tgt_y: int
    score: float
    metric: Metric = Metric.SSIM


def ssim_patch(g, i, c1: float = SSIM_C1, c2: float = SSIM_C2) -> float:
    """Single-window SSIM with unit exponents and population statistics."""
    g = np.asarray(g, dtype=np.float64).ravel()
    i = np.asarray(i, dtype=np.float64).ravel()
    if g.shape != i.shape or g.size < 2:
        raise ValueError("ssim_patch needs two equal-size windows of >= 2 samples")
    mg, mi = g.mean(), i.mean()
    vg = np.mean((g - mg) ** 2)
    vi = np.mean((i - mi) ** 2)
    cov = np.mean((g - mg) * (i - mi))
    return float((2 * mg * mi + c1) * (2 * cov + c2) / ((mg**2 + mi**2 + c1) * (vg + vi + c2)))


def ncc(g, i) -> float:
    g = np.asarray(g, dtype=np.float64).ravel()
    i = np.asarray(i, dtype=np.float64).ravel()
    dg = g - g.mean()
    di = i - i.mean()
    vg = np.mean(dg**2)
    vi = np.mean(di**2)
    if vg <= _VAR_FLOOR or vi <= _VAR_FLOOR:
        return 0.0
    return float(np.mean(dg * di) / np.sqrt(vg * vi))


def metric_score(g, i, metric) -> float:
    """Similarity score where larger is always better."""
    metric = Metric(metric)
    g = np.asarray(g, dtype=np.float64)
    i = np.asarray(i, dtype=np.float64)
    if g.shape != i.shape:
        raise ValueError("windows differ in shape")
    if metric is Metric.SSD:
        return -float(np.sum((g - i) ** 2))
    if metric is Metric.LAD:
        return -float(np.sum(np.abs(g - i)))
    if metric is Metric.NCC:
        return ncc(g, i)
    return ssim_patch(g, i)


def _box_sums(a: np.ndarray, m: int) -> np.ndarray:
    """Sums over every m x m window of ``a`` (valid positions only)."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    return c[m:, m:] - c[:-m, m:] - c[m:, :-m] + c[:-m, :-m]


def score_surface(template, search, metric, method: str = "fast") -> np.ndarray:
    """Metric value for every placement of ``template`` inside ``search``.

    ``method="direct"`` evaluates :func:`metric_score` per placement and
    serves as the reference for the vectorised ``"fast"`` path, which uses
    running sums and FFT correlation.
    """
    metric = Metric(metric)
    t = np.asarray(template, dtype=np.float64)
    s = np.asarray(search, dtype=np.float64)
    m = t.shape[0]
    if t.shape != (m, m) or s.shape[0] < m or s.shape[1] < m:
        raise ValueError("template must be square and fit inside the search window")

    if method == "direct":
        win = sliding_window_view(s, (m, m))
        return np.array([[metric_score(t, win[r, c], metric) for c in range(win.shape[1])]
                         for r in range(win.shape[0])])
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")

    if metric is Metric.LAD:
        nr, nc = s.shape[0] - m + 1, s.shape[1] - m + 1
        out = np.empty((nr, nc))
        for r in range(nr):
            for c in range(nc):
                out[r, c] = -np.abs(s[r:r + m, c:c + m] - t).sum()
        return out

    n = t.size
    cross = correlate(s, t, mode="valid", method="fft")
    sum_i = _box_sums(s, m)
    sum_i2 = _box_sums(s * s, m)
    if metric is Metric.SSD:
        return -(np.sum(t * t) - 2 * cross + sum_i2)

    mg = t.mean()
    vg = np.mean((t - mg) ** 2)
    mi = sum_i / n
    vi = np.maximum(sum_i2 / n - mi**2, 0.0)
    cov = cross / n - mg * mi
    if metric is Metric.NCC:
        den = np.sqrt(vg * vi)
        ok = (vi > _VAR_FLOOR) & (vg > _VAR_FLOOR)
        return np.where(ok, cov / np.where(ok, den, 1.0), 0.0)
    return ((2 * mg * mi + SSIM_C1) * (2 * cov + SSIM_C2)
            / ((mg**2 + mi**2 + SSIM_C1) * (vg + vi + SSIM_C2)))


def pick_best(surface: np.ndarray, radius: int, tol: float = 1e-12):
    """Argmax of a (2r+1)^2 surface; ties go to the smallest displacement,
    then to lower y, then lower x. Returns ``(dx, dy, score)``."""
    best = float(surface.max())
    cand = np.argwhere(surface >= best - tol * max(1.0, abs(best)))
    dy = cand[:, 0] - radius
    dx = cand[:, 1] - radius
    k = np.lexsort((dx, dy, dx * dx + dy * dy))[0]
    return int(dx[k]), int(dy[k]), float(surface[cand[k, 0], cand[k, 1]])


def window(raster, cx: int, cy: int, half: int) -> np.ndarray:
    h, w = raster.shape
    if cx - half < 0 or cy - half < 0 or cx + half >= w or cy + half >= h:
        raise WindowError(f"window of half-size {half} at ({cx}, {cy}) leaves the raster")
    return raster[cy - half:cy + half + 1, cx - half:cx + half + 1]


def coarse_match(pc_ref, pc_tgt, kp: Keypoint, spec: TemplateSpec = TemplateSpec(),
                 predicted: tuple[int, int] | None = None, method: str = "fast") -> CoarseMatch:
    """Exhaustive search of the template around ``kp`` over the target.

    Candidates are centred within ``spec.search_radius`` of ``predicted``
    (defaults to the keypoint itself). Raises :class:`WindowError` when
    either window leaves its raster.
    """
    ref = np.asarray(getattr(pc_ref, "pc", pc_ref), dtype=np.float64)
    tgt = np.asarray(getattr(pc_tgt, "pc", pc_tgt), dtype=np.float64)
    px, py = (kp.x, kp.y) if predicted is None else (int(predicted[0]), int(predicted[1]))
    half, rad = spec.half, spec.search_radius
    tmpl = window(ref, kp.x, kp.y, half)
    search = window(tgt, px, py, half + rad)
    surf = score_surface(tmpl, search, spec.metric, method=method)
    dx, dy, score = pick_best(surf, rad)
    return CoarseMatch(kp, px + dx, py + dy, score, spec.metric)
