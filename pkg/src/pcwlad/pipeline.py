"""End-to-end matching pipeline, synthetic pair generation and ablation sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .coarse import CoarseMatch, Metric, TemplateSpec, WindowError, coarse_match
from .evaluation import (
    EstimationError,
    EvalReport,
    KnownTransform,
    Model,
    convergence_rate,
    ransac_model,
    score_matches,
)
from .features import Keypoint, detect_fast
from .fine import FineConfig, FineMatch, MsRefresh, refine
from .phasecong import NoiseMode, PcParams, build_filter_bank, compute_pc
from .raster import AffinePair, warp_affine

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline as one flat record."""

    # phase congruency
    n_scales: int = 4
    n_orientations: int = 6
    min_wavelength: float = 3.0
    scale_mult: float = 2.1
    sigma_on_f: float = 0.55
    k_noise: float = 2.0
    noise_mode: str = "off"
    epsilon: float = 1e-4
    # detection
    feature_count: int = 1000
    fast_threshold: float = 0.05
    grid: int = 8
    # coarse matching
    metric: str = "ssim"
    template_size: int = 101
    search_radius: int = 10
    min_score: float = 0.15
    # fine matching
    window_size: int = 81
    ms_patch: int = 5
    max_iters: int = 20
    shift_tol: float = 0.05
    ssim_gate: float = 0.4
    irls_iters: int = 10
    ms_refresh: str = "each"
    # outlier removal
    ransac_threshold: float = 2.0
    ransac_trials: int = 10_000
    # run
    seed: int = 42
    threads: int = 1
    skip_fine: bool = False

    def __post_init__(self):
        # building the sub-configs validates every field
        self.pc_params()
        self.template_spec()
        self.fine_config()
        if self.feature_count < 1:
            raise ValueError("feature_count must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def pc_params(self) -> PcParams:
        return PcParams(self.n_scales, self.n_orientations, self.min_wavelength, self.scale_mult,
                        self.sigma_on_f, self.k_noise, NoiseMode(self.noise_mode), self.epsilon)

    def template_spec(self) -> TemplateSpec:
        return TemplateSpec(self.template_size, self.search_radius, Metric(self.metric))

    def fine_config(self) -> FineConfig:
        return FineConfig(window_size=self.window_size, ms_patch=self.ms_patch,
                          max_iters=self.max_iters, shift_tol=self.shift_tol,
                          ssim_gate=self.ssim_gate, irls_iters=self.irls_iters,
                          ms_refresh=MsRefresh(self.ms_refresh))

    @property
    def margin(self) -> int:
        return max(self.template_size // 2 + self.search_radius,
                   self.window_size // 2 + self.search_radius + 2) + 2

    # key=value serialisation

    def dumps(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def loads(cls, text: str, **overrides) -> "PipelineConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        vals = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in kinds:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            vals[key] = _parse(kinds[key], val)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**vals)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(kind, val: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        low = val.lower()
        if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {val!r}")
        return low in ("true", "1", "yes", "on")
    if kind == "int":
        return int(val)
    if kind == "float":
        return float(val)
    return val


def worker_count(cfg: PipelineConfig) -> int:
    n = cfg.threads
    env = os.environ.get("PCWLAD_THREADS")
    if env:
        n = min(n, max(1, int(env)))
    return n


def _pmap(fn, items, workers: int):
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# Pipeline


@dataclass
class PipelineResult:
    config: PipelineConfig
    keypoints: list[Keypoint]
    coarse: list[CoarseMatch]
    fine: list[FineMatch]
    inliers: np.ndarray
    timings: dict = field(default_factory=dict)
    pc_ref: np.ndarray | None = field(default=None, repr=False)
    pc_tgt: np.ndarray | None = field(default=None, repr=False)

    @property
    def converged(self) -> list[FineMatch]:
        return [f for f in self.fine if f.converged]

    @property
    def final(self) -> list[FineMatch]:
        conv = self.converged
        return [f for f, keep in zip(conv, self.inliers) if keep]

    def evaluate(self, truth=None) -> dict:
        """Coarse, fine and final reports plus the convergence rate.

        Without ``truth`` the correct-match test uses an affine model fitted
        by RANSAC to the final matches, as is customary for real data.
        """
        if truth is None:
            final = self.final
            if len(final) < 3:
                raise EstimationError("too few final matches to estimate a reference transform")
            model, _ = ransac_model(_src(final), _dst(final), Model.AFFINE,
                                    self.config.ransac_threshold, self.config.ransac_trials,
                                    self.config.seed)
            truth = KnownTransform(model)
        out = {}
        out["coarse"] = score_matches(_src(self.coarse), _dst(self.coarse), truth) if self.coarse else None
        conv = self.converged
        out["fine"] = score_matches(_src(conv), _dst(conv), truth) if conv else None
        final = self.final
        out["final"] = score_matches(_src(final), _dst(final), truth) if final else None
        c_ncm = out["coarse"].ncm if out["coarse"] else 0
        f_ncm = out["fine"].ncm if out["fine"] else 0
        out["convergence_rate"] = convergence_rate(c_ncm, f_ncm)
        return out

    def summary(self, truth=None) -> dict:
        s = {
            "schema": 1,
            "keypoints": len(self.keypoints),
            "coarse_matches": len(self.coarse),
            "fine_attempted": len(self.fine),
            "fine_converged": len(self.converged),
            "final_matches": int(np.sum(self.inliers)),
            "timings_s": {k: round(v, 4) for k, v in self.timings.items()},
        }
        try:
            ev = self.evaluate(truth)
        except EstimationError as exc:
            s["evaluation_error"] = str(exc)
            return s
        s["truth"] = "known" if truth is not None else "ransac-affine"
        for k in ("coarse", "fine", "final"):
            s[k] = ev[k].summary() if ev[k] is not None else None
        s["convergence_rate"] = ev["convergence_rate"]
        return s


def _src(matches) -> np.ndarray:
    return np.array([[m.ref.x, m.ref.y] for m in matches], dtype=float).reshape(-1, 2)


def _dst(matches) -> np.ndarray:
    return np.array([[m.tgt_x, m.tgt_y] for m in matches], dtype=float).reshape(-1, 2)


def phase_maps(ref, tgt, p: PcParams):
    bank = build_filter_bank(ref.shape[1], ref.shape[0], p)
    pr = compute_pc(ref, p, bank).pc
    tbank = bank if tgt.shape == ref.shape else None
    pt = compute_pc(tgt, p, tbank).pc
    return pr, pt


def match_stage(pc_ref, pc_tgt, keypoints, cfg: PipelineConfig, predict=None):
    """Coarse and fine matching of ``keypoints``; returns ``(coarse, fine, timings)``."""
    spec = cfg.template_spec()
    fcfg = cfg.fine_config()
    workers = worker_count(cfg)
    timings = {}

    def do_coarse(kp):
        pred = None if predict is None else predict(kp)
        try:
            return coarse_match(pc_ref, pc_tgt, kp, spec, pred)
        except WindowError:
            return None

    t0 = time.perf_counter()
    coarse = [c for c in _pmap(do_coarse, keypoints, workers) if c is not None]
    if spec.metric in (Metric.SSIM, Metric.NCC):
        coarse = [c for c in coarse if c.score >= cfg.min_score]
    timings["coarse"] = time.perf_counter() - t0

    fine: list[FineMatch] = []
    if not cfg.skip_fine:
        t0 = time.perf_counter()
        fine = _pmap(lambda c: refine(c, pc_ref, pc_tgt, fcfg), coarse, workers)
        timings["fine"] = time.perf_counter() - t0
    return coarse, fine, timings


def run_pipeline(ref, tgt, cfg: PipelineConfig = None, predict=None) -> PipelineResult:
    """Detect on the reference, coarse-match, refine, then remove outliers.

    ``predict`` optionally maps a keypoint to a predicted integer target
    position (a prior alignment); by default the keypoint position is used.
    """
    cfg = cfg or PipelineConfig()
    ref = np.asarray(ref, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    timings = {}

    t0 = time.perf_counter()
    pc_ref, pc_tgt = phase_maps(ref, tgt, cfg.pc_params())
    timings["phase_congruency"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    kps = detect_fast(pc_ref, cfg.feature_count, cfg.fast_threshold, cfg.grid, margin=cfg.margin)
    timings["detect"] = time.perf_counter() - t0

    coarse, fine, t = match_stage(pc_ref, pc_tgt, kps, cfg, predict)
    timings.update(t)

    t0 = time.perf_counter()
    conv = [f for f in fine if f.converged]
    inliers = np.zeros(len(conv), dtype=bool)
    if len(conv) >= 3:
        try:
            _, inliers = ransac_model(_src(conv), _dst(conv), Model.AFFINE,
                                      cfg.ransac_threshold, cfg.ransac_trials, cfg.seed)
        except EstimationError as exc:
            log.warning("outlier removal failed: %s", exc)
    timings["ransac"] = time.perf_counter() - t0
    return PipelineResult(cfg, kps, coarse, fine, inliers, timings, pc_ref, pc_tgt)


# --------------------------------------------------------------------------
# CSV emission


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, bool)) else v for v in r])
    return buf.getvalue()


def coarse_csv(matches) -> str:
    return _csv_text(("ref_x", "ref_y", "tgt_x", "tgt_y", "metric", "score"),
                     ((m.ref.x, m.ref.y, m.tgt_x, m.tgt_y, m.metric.value, float(m.score))
                      for m in matches))


FINE_HEADER = ("ref_x", "ref_y", "tgt_x", "tgt_y", "r0", "r1", "a1", "a2", "b1", "b2",
               "iterations", "converged", "final_ssim")


def fine_csv(matches) -> str:
    def row(m):
        p = m.params
        return (float(m.ref.x), float(m.ref.y), float(m.tgt_x), float(m.tgt_y), p.r0, p.r1,
                p.a1, p.a2, p.b1, p.b2, m.iterations, bool(m.converged), float(m.final_ssim))
    return _csv_text(FINE_HEADER, (row(m) for m in matches))


def keypoints_csv(kps) -> str:
    return _csv_text(("x", "y", "score"), ((k.x, k.y, float(k.score)) for k in kps))


def residual_csv(report: EvalReport) -> str:
    return _csv_text(("rx", "ry"), ((float(a), float(b)) for a, b in report.residuals))


def read_matches_csv(path):
    """``(src, dst)`` arrays from any CSV carrying ref/tgt coordinate columns."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.zeros((0, 2)), np.zeros((0, 2))
    try:
        src = np.array([[float(r["ref_x"]), float(r["ref_y"])] for r in rows])
        dst = np.array([[float(r["tgt_x"]), float(r["tgt_y"])] for r in rows])
    except KeyError as exc:
        raise ValueError(f"{path}: missing column {exc}") from exc
    return src, dst


def write_outputs(result: PipelineResult, out_dir, truth=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "keypoints.csv").write_text(keypoints_csv(result.keypoints))
    (out / "coarse.csv").write_text(coarse_csv(result.coarse))
    (out / "fine.csv").write_text(fine_csv(result.fine))
    (out / "inliers.csv").write_text(fine_csv(result.final))
    summary = result.summary(truth)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.txt").write_text(result.config.dumps())
    return summary


# --------------------------------------------------------------------------
# Synthetic pairs


@dataclass(frozen=True)
class Radiometric:
    gamma: float = 1.0
    gain: float = 1.0
    offset: float = 0.0
    invert: bool = False

    def apply(self, v):
        v = np.clip(v, 0.0, 1.0)
        if self.invert:
            v = 1.0 - v
        return self.gain * v**self.gamma + self.offset


def synthesize_pair(img, transform: AffinePair = AffinePair(), radiometric: Radiometric = Radiometric(),
                    noise_sigma: float = 0.0, seed: int = 42):
    """Target image whose content at ``transform(p)`` shows reference pixel ``p``.

    Returns ``(target, valid_mask, truth_dict)``.
    """
    if abs(transform.det) < 1e-12:
        raise ValueError("transform is not invertible")
    warped, valid = warp_affine(img, transform.inverse())
    out = radiometric.apply(warped)
    if noise_sigma > 0:
        out = out + np.random.default_rng(seed).normal(0.0, noise_sigma, out.shape)
    truth = {
        "schema": 1,
        "transform": dataclasses.asdict(transform),
        "radiometric": dataclasses.asdict(radiometric),
        "noise_sigma": noise_sigma,
        "seed": seed,
    }
    return out, valid, truth


def truth_from_dict(d) -> KnownTransform:
    return KnownTransform(AffinePair(**{k: float(v) for k, v in d["transform"].items()}))


# --------------------------------------------------------------------------
# Ablation


ABLATION_HEADER = ("metric", "size", "noise_mode", "CMR", "RMSE", "convergence_rate")


def run_ablation(ref, tgt, truth, metrics, sizes, noise_modes, cfg: PipelineConfig = None,
                 fine: bool = True) -> list[dict]:
    """Full-factorial sweep over metric, window size and PC noise mode.

    Keypoints are detected once, on the noise-free reference PC map, with a
    margin large enough for the largest size, so every cell matches the same
    points. The coarse score gate is disabled so every metric is judged on
    the same matches. ``CMR`` is the coarse correct-match rate at template size
    ``size``; ``RMSE`` and ``convergence_rate`` come from fine matching with
    window size ``size``.
    """
    if not metrics or not sizes or not noise_modes:
        raise ValueError("metrics, sizes and noise modes must be non-empty")
    cfg = cfg or PipelineConfig()
    ref = np.asarray(ref, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    big = max(sizes)
    det_cfg = cfg.replace(template_size=big, window_size=big)
    maps = {nm: phase_maps(ref, tgt, cfg.replace(noise_mode=NoiseMode(nm).value).pc_params())
            for nm in noise_modes}
    off_ref = maps.get(NoiseMode.OFF.value, (None,))[0]
    if off_ref is None:
        off_ref = phase_maps(ref, ref, cfg.replace(noise_mode="off").pc_params())[0]
    kps = detect_fast(off_ref, cfg.feature_count, cfg.fast_threshold, cfg.grid, margin=det_cfg.margin)

    rows = []
    for nm in noise_modes:
        pr, pt = maps[nm]
        for metric in metrics:
            for size in sizes:
                cell = cfg.replace(metric=Metric(metric).value, template_size=size,
                                   window_size=max(size, 9), noise_mode=NoiseMode(nm).value,
                                   skip_fine=not fine, min_score=-1.0)
                coarse, fres, _ = match_stage(pr, pt, kps, cell)
                c_rep = score_matches(_src(coarse), _dst(coarse), truth) if coarse else None
                conv = [f for f in fres if f.converged]
                f_rep = score_matches(_src(conv), _dst(conv), truth) if conv else None
                rate = float("nan")
                if fine:
                    rate = convergence_rate(c_rep.ncm if c_rep else 0, f_rep.ncm if f_rep else 0)
                rows.append({
                    "metric": Metric(metric).value,
                    "size": int(size),
                    "noise_mode": NoiseMode(nm).value,
                    "CMR": c_rep.cmr if c_rep else 0.0,
                    "RMSE": f_rep.rmse if f_rep else float("nan"),
                    "convergence_rate": rate,
                })
    return rows


def ablation_csv(rows) -> str:
    return _csv_text(ABLATION_HEADER, ([r[k] for k in ABLATION_HEADER] for r in rows))
