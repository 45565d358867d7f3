"""Match evaluation: RANSAC outlier removal, epipolar residuals, CMR/NCM/RMSE."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .raster import AffinePair

log = logging.getLogger(__name__)

CORRECT_THRESHOLD = 2.0


class EstimationError(ValueError):
    """Not enough (or only degenerate) matches to estimate a model."""


class Model(str, enum.Enum):
    AFFINE = "affine"
    FUNDAMENTAL = "fundamental"


_MIN_SAMPLES = {Model.AFFINE: 3, Model.FUNDAMENTAL: 8}


# --------------------------------------------------------------------------
# Model fitting


def fit_affine(src, dst) -> AffinePair:
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    a = np.column_stack([src, np.ones(len(src))])
    coef, *_ = np.linalg.lstsq(a, dst, rcond=None)
    # coef rows: x, y, 1 ; columns: x', y'
    return AffinePair(coef[2, 0], coef[0, 0], coef[1, 0], coef[2, 1], coef[0, 1], coef[1, 1])


def affine_errors(t: AffinePair, src, dst) -> np.ndarray:
    src = np.asarray(src, dtype=float)
    px, py = t.apply(src[:, 0], src[:, 1])
    dst = np.asarray(dst, dtype=float)
    return np.hypot(dst[:, 0] - px, dst[:, 1] - py)


def _hartley(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
    h = np.column_stack([pts, np.ones(len(pts))]) @ t.T
    return h, t


def fit_fundamental(src, dst) -> np.ndarray:
    """Normalised eight-point estimate with rank-2 projection.

    Returns ``H`` with ``[x2, y2, 1] H [x1, y1, 1]^T = 0``, unit Frobenius norm.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 8:
        raise EstimationError("fundamental matrix needs at least 8 matches")
    p1, t1 = _hartley(src)
    p2, t2 = _hartley(dst)
    a = np.column_stack([
        p2[:, 0] * p1[:, 0], p2[:, 0] * p1[:, 1], p2[:, 0],
        p2[:, 1] * p1[:, 0], p2[:, 1] * p1[:, 1], p2[:, 1],
        p1[:, 0], p1[:, 1], np.ones(len(p1)),
    ])
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(f)
    s[2] = 0.0
    f = u @ np.diag(s) @ vt
    f = t2.T @ f @ t1
    u, s, vt = np.linalg.svd(f)
    s[2] = 0.0
    f = u @ np.diag(s) @ vt
    return f / np.linalg.norm(f)


def epipolar_lines(h, src) -> np.ndarray:
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    return np.column_stack([src, np.ones(len(src))]) @ np.asarray(h, dtype=float).T


def epipolar_residual(h, src, dst):
    """Offset of each target point from the foot of its perpendicular on
    the epipolar line ``H [x1, y1, 1]^T``.

    Returns ``(residuals (n, 2), valid)``; lines with a vanishing normal are
    marked invalid and get a zero residual.
    """
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    lines = epipolar_lines(h, src)
    nn = lines[:, 0] ** 2 + lines[:, 1] ** 2
    valid = nn > 1e-24
    alg = lines[:, 0] * dst[:, 0] + lines[:, 1] * dst[:, 1] + lines[:, 2]
    k = np.where(valid, alg / np.where(valid, nn, 1.0), 0.0)
    return np.column_stack([k * lines[:, 0], k * lines[:, 1]]), valid


def _fundamental_errors(h, src, dst):
    r, valid = epipolar_residual(h, src, dst)
    e = np.hypot(r[:, 0], r[:, 1])
    return np.where(valid, e, np.inf)


def _fit(model, src, dst):
    return fit_affine(src, dst) if model is Model.AFFINE else fit_fundamental(src, dst)


def _errors(model, params, src, dst):
    if model is Model.AFFINE:
        return affine_errors(params, src, dst)
    return _fundamental_errors(params, src, dst)


def _degenerate(model, src, dst) -> bool:
    if model is Model.AFFINE:
        v1, v2 = src[1] - src[0], src[2] - src[0]
        w1, w2 = dst[1] - dst[0], dst[2] - dst[0]
        return abs(v1[0] * v2[1] - v1[1] * v2[0]) < 1e-6 or abs(w1[0] * w2[1] - w1[1] * w2[0]) < 1e-6
    p1, _ = _hartley(src)
    p2, _ = _hartley(dst)
    a = np.column_stack([p2[:, :1] * p1, p2[:, 1:2] * p1, p1])
    return np.linalg.matrix_rank(a, tol=1e-8) < 8


def ransac_model(src, dst, model=Model.AFFINE, threshold: float = 2.0,
                 max_trials: int = 10_000, seed: int = 42, confidence: float = 0.999):
    """Robust model fit by RANSAC.

    The best hypothesis maximises the inlier count (ties: smaller summed
    inlier error, then lower trial index). The trial budget adapts to the
    observed inlier ratio and is capped at ``max_trials``. The winner is
    refit on all its inliers; the refit is kept only if it does not lose
    inliers, so every reported inlier is within ``threshold``.

    Returns ``(params, inlier_mask)``.
    """
    model = Model(model)
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    k = _MIN_SAMPLES[model]
    if n < k:
        raise EstimationError(f"{model.value} model needs at least {k} matches, got {n}")
    rng = np.random.default_rng(seed)

    best = None  # (count, -err_sum, params, mask)
    needed = max_trials
    trial = 0
    degenerate_run = 0
    while trial < min(needed, max_trials):
        idx = rng.choice(n, size=k, replace=False)
        if _degenerate(model, src[idx], dst[idx]):
            degenerate_run += 1
            if degenerate_run > 1000:
                break
            continue
        degenerate_run = 0
        trial += 1
        try:
            params = _fit(model, src[idx], dst[idx])
        except np.linalg.LinAlgError:
            continue
        err = _errors(model, params, src, dst)
        mask = err <= threshold
        cnt = int(mask.sum())
        esum = float(err[mask].sum())
        if best is None or cnt > best[0] or (cnt == best[0] and esum < best[1]):
            best = (cnt, esum, params, mask)
            ratio = cnt / n
            if ratio >= 1.0:
                needed = trial
            elif ratio > 0:
                denom = math.log(max(1.0 - ratio**k, 1e-300))
                needed = int(math.ceil(math.log(1.0 - confidence) / denom)) if denom < 0 else max_trials
    if best is None or best[0] < k:
        raise EstimationError("RANSAC found no consensus set")

    cnt, _, params, mask = best
    try:
        refit = _fit(model, src[mask], dst[mask])
        rmask = _errors(model, refit, src, dst) <= threshold
        if rmask.sum() >= cnt:
            params, mask = refit, rmask
    except (np.linalg.LinAlgError, EstimationError):
        pass
    return params, mask


# --------------------------------------------------------------------------
# Scoring


@dataclass(frozen=True)
class KnownTransform:
    """Forward map from reference to target pixel coordinates."""

    transform: AffinePair


@dataclass(frozen=True)
class Fundamental:
    h: np.ndarray


@dataclass(frozen=True)
class GroundTruthPoints:
    points: np.ndarray


@dataclass
class EvalReport:
    ncm: int
    total: int
    cmr: float
    rmse: float
    failure: bool
    convergence_rate: float | None = None
    residuals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)), repr=False)
    valid: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("residuals")
        d.pop("valid")
        d["rmse"] = None if math.isnan(self.rmse) else self.rmse
        return d

    def to_json(self) -> str:
        return json.dumps({"schema": 1, **self.summary()}, indent=2, sort_keys=True)


def match_residuals(src, dst, truth):
    """Per-match residual vectors against a truth source and a validity mask."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if isinstance(truth, KnownTransform):
        px, py = truth.transform.apply(src[:, 0], src[:, 1])
        return dst - np.column_stack([px, py]), np.ones(len(src), bool)
    if isinstance(truth, GroundTruthPoints):
        gt = np.asarray(truth.points, dtype=float).reshape(-1, 2)
        if gt.shape != dst.shape:
            raise ValueError("ground-truth points do not match the number of matches")
        return dst - gt, np.ones(len(src), bool)
    if isinstance(truth, Fundamental):
        return epipolar_residual(truth.h, src, dst)
    raise TypeError(f"unknown truth source {truth!r}")


def score_matches(src, dst, truth, ncm_threshold: float = CORRECT_THRESHOLD) -> EvalReport:
    """CMR, NCM and RMSE of matches against ``truth``.

    A match is correct when its residual magnitude is below
    ``ncm_threshold``; RMSE is taken over correct matches only. Matches whose
    residual cannot be computed (degenerate epipolar line) count as wrong.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    if len(src) == 0:
        raise ValueError("no matches to score")
    res, valid = match_residuals(src, dst, truth)
    mag = np.hypot(res[:, 0], res[:, 1])
    correct = valid & (mag < ncm_threshold)
    ncm = int(correct.sum())
    total = len(src)
    rmse = float(np.sqrt(np.mean(mag[correct] ** 2))) if ncm else float("nan")
    failure = ncm == 0 or rmse > CORRECT_THRESHOLD
    return EvalReport(ncm, total, ncm / total, rmse, failure, residuals=res, valid=valid)


def convergence_rate(coarse_ncm: int, fine_ncm: int) -> float:
    """Share of coarse correct matches that survive fine matching."""
    if coarse_ncm < 0 or fine_ncm < 0:
        raise ValueError("counts must be non-negative")
    if coarse_ncm == 0:
        log.warning("no correct coarse matches; convergence rate set to 0")
        return 0.0
    rate = fine_ncm / coarse_ncm
    if rate > 1.0:
        log.warning("fine NCM %d exceeds coarse NCM %d; clamping rate to 1", fine_ncm, coarse_ncm)
        rate = 1.0
    return rate
