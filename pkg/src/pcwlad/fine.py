"""Sub-pixel refinement of coarse matches.

Each coarse match is refined by fitting a linear radiometric plus affine
geometric model between the reference window ``G`` and the target map ``I``::

    G(x, y) = r0 + r1 * I(a0 + a1*x + a2*y, b0 + b1*x + b2*y)

with ``(x, y)`` relative to the window centres. The model is linearised
around the current estimate (Gauss-Newton) and each increment is solved as a
weighted least-absolute-deviation problem by IRLS. Observation weights combine
a mutual-structure term, which down-weights pixels whose local structure
disagrees between the two windows, with the IRLS residual weights.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import uniform_filter

from .coarse import CoarseMatch, WindowError, ssim_patch, window
from .features import Keypoint
from .raster import bicubic, in_support

log = logging.getLogger(__name__)

PARAM_NAMES = ("r0", "r1", "a0", "a1", "a2", "b0", "b1", "b2")
_VAR_FLOOR = 1e-14
_MAD_TO_SIGMA = 1.4826
# float noise allowed when comparing SSIM before/after sub-tolerance updates
SSIM_SLACK = 1e-9


class RankError(np.linalg.LinAlgError):
    """Weighted normal matrix is (numerically) singular."""


class DivergenceError(RuntimeError):
    """Transformed window left the target's interpolation support."""


class MsRefresh(str, enum.Enum):
    ONCE = "once"
    EACH = "each"


@dataclass(frozen=True)
class TransformParams:
    r0: float = 0.0
    r1: float = 1.0
    a0: float = 0.0
    a1: float = 1.0
    a2: float = 0.0
    b0: float = 0.0
    b1: float = 0.0
    b2: float = 1.0

    @classmethod
    def from_vector(cls, v) -> "TransformParams":
        return cls(*(float(x) for x in v))

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES])

    @property
    def det(self) -> float:
        return self.a1 * self.b2 - self.a2 * self.b1

    def plausible(self) -> bool:
        return self.r1 > 0 and 0.5 <= self.det <= 2.0


@dataclass(frozen=True)
class FineConfig:
    window_size: int = 81
    ms_patch: int = 5
    max_iters: int = 20
    shift_tol: float = 0.05
    ssim_gate: float = 0.4
    irls_iters: int = 10
    irls_tol: float = 1e-6
    # "mad" scales IRLS residuals by a robust sigma; a float uses a fixed scale
    residual_scale: str | float = "mad"
    ms_refresh: MsRefresh = MsRefresh.EACH
    radiometric_init: bool = True
    max_halvings: int = 3

    def __post_init__(self):
        object.__setattr__(self, "ms_refresh", MsRefresh(self.ms_refresh))
        if self.window_size < 9 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and >= 9")
        if self.ms_patch < 3 or self.ms_patch % 2 == 0:
            raise ValueError("ms_patch must be odd and >= 3")
        if self.max_iters < 1 or self.irls_iters < 1:
            raise ValueError("iteration limits must be >= 1")
        if not (self.residual_scale == "mad" or float(self.residual_scale) > 0):
            raise ValueError("residual_scale must be 'mad' or a positive number")


@dataclass(frozen=True)
class FineMatch:
    ref: Keypoint
    tgt_x: float
    tgt_y: float
    params: TransformParams
    iterations: int
    converged: bool
    final_ssim: float
    initial_ssim: float = float("nan")
    status: str = "ok"
    residuals: np.ndarray | None = field(default=None, repr=False, compare=False)


# --------------------------------------------------------------------------
# Mutual structure


def mutual_structure(gp, ip) -> float:
    """Symmetric two-way regression residual between two patches.

    Equals ``var(I)(1 - rho^2) + var(G)(1 - rho^2)``: the mean squared error
    of regressing G on I plus that of regressing I on G. Zero when the
    patches are exactly linearly related (either sign) or both constant.
    """
    g = np.asarray(gp, dtype=np.float64).ravel()
    i = np.asarray(ip, dtype=np.float64).ravel()
    if g.shape != i.shape or g.size < 4:
        raise ValueError("mutual_structure needs equal patches of >= 4 samples")
    vg = np.mean((g - g.mean()) ** 2)
    vi = np.mean((i - i.mean()) ** 2)
    cov = np.mean((g - g.mean()) * (i - i.mean()))
    return float(_ms_from_moments(vg, vi, cov))


def _ms_from_moments(vg, vi, cov):
    vg = np.asarray(vg, dtype=float)
    vi = np.asarray(vi, dtype=float)
    ok = (vg > _VAR_FLOOR) & (vi > _VAR_FLOOR)
    rho2 = np.where(ok, cov**2 / np.where(ok, vg * vi, 1.0), 0.0)
    return np.maximum((vg + vi) * (1.0 - np.minimum(rho2, 1.0)), 0.0)


def mutual_structure_map(g, i, patch: int) -> np.ndarray:
    """MS of the ``patch x patch`` neighbourhood centred on every pixel
    (borders clamped)."""
    g = np.asarray(g, dtype=np.float64)
    i = np.asarray(i, dtype=np.float64)

    def box(a):
        return uniform_filter(a, size=patch, mode="nearest")

    mg, mi = box(g), box(i)
    vg = np.maximum(box(g * g) - mg * mg, 0.0)
    vi = np.maximum(box(i * i) - mi * mi, 0.0)
    cov = box(g * i) - mg * mi
    return _ms_from_moments(vg, vi, cov)


def structure_weights(g_win, i_win, cfg: FineConfig = FineConfig()) -> np.ndarray:
    """Per-pixel weights in (0, 1] from neighbourhood-averaged mutual structure.

    ``w = 1 / (1 + MSbar / s)`` with ``s`` the median of ``MSbar`` so that
    structurally consistent pixels keep a weight near one.
    """
    ms = mutual_structure_map(g_win, i_win, cfg.ms_patch)
    ms_bar = uniform_filter(ms, size=cfg.ms_patch, mode="nearest")
    ms_bar = np.maximum(ms_bar, 0.0)
    s = float(np.median(ms_bar))
    if s <= _VAR_FLOOR:
        pos = ms_bar[ms_bar > _VAR_FLOOR]
        if pos.size == 0:
            return np.ones_like(ms_bar)
        s = float(pos.mean())
    return 1.0 / (1.0 + ms_bar / s)


# --------------------------------------------------------------------------
# Linearisation and WLAD


def window_coords(size: int):
    h = size // 2
    yy, xx = np.mgrid[-h:h + 1, -h:h + 1].astype(np.float64)
    return xx, yy


def warp_window(tgt, params: TransformParams, center, size: int, gradient: bool = False):
    """Sample the target through ``params`` on a ``size x size`` window."""
    xx, yy = window_coords(size)
    sx = center[0] + params.a0 + params.a1 * xx + params.a2 * yy
    sy = center[1] + params.b0 + params.b1 * xx + params.b2 * yy
    if not in_support(tgt.shape, sx, sy).all():
        raise DivergenceError("transformed window exits the target raster")
    return bicubic(tgt, sx, sy, gradient=gradient)


def linearize(g_win, tgt, params: TransformParams, center):
    """Observation matrix and misclosure vector of the linearised model.

    Rows are ``[1, I, r1*Ix, r1*Ix*x, r1*Ix*y, r1*Iy, r1*Iy*x, r1*Iy*y]`` for
    the increments of ``(r0, r1, a0, a1, a2, b0, b1, b2)``; the misclosure
    is ``G - (r0 + r1*I)``. Raises :class:`DivergenceError` when the window
    leaves the target.
    """
    g = np.asarray(g_win, dtype=np.float64)
    size = g.shape[0]
    tgt = np.asarray(tgt, dtype=np.float64)
    val, ix, iy = warp_window(tgt, params, center, size, gradient=True)
    xx, yy = window_coords(size)
    r1 = params.r1
    b = np.stack([
        np.ones_like(val), val,
        r1 * ix, r1 * ix * xx, r1 * ix * yy,
        r1 * iy, r1 * iy * xx, r1 * iy * yy,
    ], axis=-1).reshape(-1, 8)
    l = (g - (params.r0 + r1 * val)).ravel()
    return b, l


def _residual_scale(d, mode) -> float:
    if mode == "mad":
        return max(_MAD_TO_SIGMA * float(np.median(np.abs(d))), 1e-12)
    return float(mode)


def weighted_lstsq(b, l, w, cond_limit: float = 1e10):
    """Solve the weighted normal equations ``(B'WB) x = B'Wl``.

    Columns are equilibrated before the conditioning check; raises
    :class:`RankError` for singular or ill-conditioned systems.
    """
    bw = b * w[:, None]
    n = b.T @ bw
    diag = np.sqrt(np.diag(n))
    if not np.all(diag > 1e-300):
        raise RankError("zero-weight or all-zero column in observation matrix")
    ns = n / np.outer(diag, diag)
    if np.linalg.cond(ns) > cond_limit:
        raise RankError("weighted normal matrix is ill-conditioned")
    rhs = bw.T @ l
    return np.linalg.solve(ns, rhs / diag) / diag


def wlad_solve(b, l, w_struct=None, max_iters: int = 10, tol: float = 1e-6,
               residual_scale="mad", history: list | None = None):
    """Weighted least absolute deviation by iteratively reweighted least squares.

    The first pass uses ``w_struct`` alone; afterwards each observation gets
    ``w_struct / (1 + |d| / s)`` from the previous residuals ``d``, where
    ``s`` is a robust residual scale (``residual_scale="mad"``) or a fixed
    number. Stops when no coefficient moves more than ``tol``.

    Returns ``(x, residuals, iterations)`` with residuals ``B x - l``.
    If ``history`` is a list, the weighted L1 objective of every iterate is
    appended to it.
    """
    b = np.asarray(b, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64).ravel()
    n_obs = b.shape[0]
    if n_obs < 16:
        raise ValueError("wlad_solve needs at least 16 observations")
    ws = np.ones(n_obs) if w_struct is None else np.asarray(w_struct, dtype=np.float64).ravel()
    w = ws
    x_prev = None
    it = 0
    for it in range(1, max_iters + 1):
        x = weighted_lstsq(b, l, w)
        d = b @ x - l
        if not np.all(np.isfinite(d)):
            raise FloatingPointError("non-finite residuals in WLAD iteration")
        if history is not None:
            history.append(float(np.sum(ws * np.abs(d))))
        # an exact fit cannot be improved by reweighting
        if np.max(np.abs(d)) <= 1e-12 * max(1.0, float(np.max(np.abs(l)))):
            break
        if x_prev is not None and np.max(np.abs(x - x_prev)) < tol:
            break
        x_prev = x
        w = ws / (1.0 + np.abs(d) / _residual_scale(d, residual_scale))
    return x, d, it


# --------------------------------------------------------------------------


def _regression_init(g, i):
    """Radiometric start ``G ~ r0 + r1*I``; falls back to moment matching
    when the windows are anti-correlated."""
    mg, mi = g.mean(), i.mean()
    vi = np.mean((i - mi) ** 2)
    vg = np.mean((g - mg) ** 2)
    if vi <= _VAR_FLOOR:
        return 0.0, 1.0
    r1 = np.mean((g - mg) * (i - mi)) / vi
    if r1 <= 0:
        r1 = np.sqrt(vg / vi) if vg > _VAR_FLOOR else 1.0
    return float(mg - r1 * mi), float(r1)


def refine(coarse: CoarseMatch, pc_ref, pc_tgt, cfg: FineConfig = FineConfig()) -> FineMatch:
    """Refine one coarse match to sub-pixel precision.

    Never raises for numerical trouble; failures come back as
    ``converged=False`` with a ``status`` describing the cause.
    """
    ref = np.asarray(getattr(pc_ref, "pc", pc_ref), dtype=np.float64)
    tgt = np.asarray(getattr(pc_tgt, "pc", pc_tgt), dtype=np.float64)
    kp = coarse.ref
    center = (float(coarse.tgt_x), float(coarse.tgt_y))
    half = cfg.window_size // 2
    params = TransformParams()

    def result(p, iters, ok, ssim_now, ssim0, status, resid=None):
        return FineMatch(kp, center[0] + p.a0, center[1] + p.b0, p, iters, ok,
                         ssim_now, ssim0, status, resid)

    try:
        g = window(ref, kp.x, kp.y, half)
        i0 = window(tgt, coarse.tgt_x, coarse.tgt_y, half)
    except WindowError:
        return result(params, 0, False, float("nan"), float("nan"), "window")

    ssim0 = ssim_patch(g, i0)
    if cfg.radiometric_init:
        r0, r1 = _regression_init(g, i0)
        params = replace(params, r0=r0, r1=r1)

    ssim_now = ssim0
    i_warp = i0
    ws = None
    shift_ok = False
    status = "max_iters"
    resid = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        try:
            b, l = linearize(g, tgt, params, center)
            if ws is None or cfg.ms_refresh is MsRefresh.EACH:
                ws = structure_weights(g, i_warp, cfg).ravel()
            dx, resid, _ = wlad_solve(b, l, ws, cfg.irls_iters, cfg.irls_tol, cfg.residual_scale)
        except DivergenceError:
            status = "diverged"
            break
        except (RankError, np.linalg.LinAlgError):
            status = "rank"
            break
        except FloatingPointError:
            status = "numeric"
            break

        small = max(abs(dx[2]), abs(dx[5])) < cfg.shift_tol
        step = 1.0
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            cand = TransformParams.from_vector(params.vector() + step * dx)
            try:
                cand_warp = warp_window(tgt, cand, center, cfg.window_size)
            except DivergenceError:
                cand_warp = None
            if cand_warp is not None and cand.r1 > 0:
                s = ssim_patch(g, cand_warp)
                if small or s >= ssim_now - 1e-12:
                    accepted = (cand, cand_warp, s)
                    break
            step *= 0.5
        if accepted is None:
            status = "stalled"
            break
        params, i_warp, ssim_now = accepted
        if small:
            shift_ok = True
            status = "ok"
            break

    converged = (shift_ok and params.plausible()
                 and ssim_now >= cfg.ssim_gate and ssim_now >= ssim0 - SSIM_SLACK)
    if shift_ok and not converged:
        status = "gate"
    return result(params, it, converged, ssim_now, ssim0, status, resid)
