"""Acceptance criteria, each run at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the terminal summary.
Full-size runs use the 512x512 astronaut image bundled with scikit-image.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import ACCEPTANCE, smooth_texture
from pcwlad import cli
from pcwlad.coarse import ssim_patch
from pcwlad.evaluation import (
    GroundTruthPoints,
    KnownTransform,
    Model,
    epipolar_residual,
    ransac_model,
    score_matches,
)
from pcwlad.fine import TransformParams, linearize, mutual_structure, wlad_solve
from pcwlad.phasecong import PcParams, compute_pc, rayleigh_stats
from pcwlad.pipeline import PipelineConfig, Radiometric, run_ablation, run_pipeline, synthesize_pair
from pcwlad.raster import AffinePair

SHIFT = AffinePair.shift(0.3, -0.7)
VISIBLE = Radiometric(gamma=1.4, gain=0.8, offset=0.05, invert=False)
CROSS_MODAL = Radiometric(gamma=1.4, gain=0.8, offset=0.05, invert=True)


def record(n, ok, detail):
    ACCEPTANCE.append((f"criterion {n}", bool(ok), detail))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def pair_visible(astronaut):
    tgt, _, _ = synthesize_pair(astronaut, SHIFT, VISIBLE, noise_sigma=0.01, seed=42)
    return astronaut, tgt


@pytest.fixture(scope="module")
def pair_cross_modal(astronaut):
    tgt, _, _ = synthesize_pair(astronaut, SHIFT, CROSS_MODAL, noise_sigma=0.01, seed=42)
    return astronaut, tgt


def _final_report(res):
    return res.evaluate(KnownTransform(SHIFT))


def test_criterion_01_subpixel_recovery(pair_visible):
    ref, tgt = pair_visible
    assert ref.shape == (512, 512)
    t0 = time.perf_counter()
    res = run_pipeline(ref, tgt, PipelineConfig(threads=1))
    elapsed = time.perf_counter() - t0
    ev = _final_report(res)
    fin = ev["final"]
    ok = fin.rmse < 0.5 and fin.cmr > 0.95 and elapsed <= 120 and len(res.keypoints) == 1000
    record(1, ok, f"final RMSE {fin.rmse:.3f} px (<0.5), CMR {fin.cmr:.3f} (>0.95) on {fin.total} "
                  f"matches; coarse CMR {ev['coarse'].cmr:.3f}; {elapsed:.1f} s (<=120)")


def test_criterion_02_cross_modal_proxy(pair_cross_modal):
    ref, tgt = pair_cross_modal
    res = run_pipeline(ref, tgt, PipelineConfig())
    ev = _final_report(res)
    fin = ev["final"]
    record(2, fin.cmr > 0.85 and fin.rmse < 0.8,
           f"final CMR {fin.cmr:.3f} (>0.85), RMSE {fin.rmse:.3f} px (<0.8); "
           f"convergence rate {ev['convergence_rate']:.3f}")


def test_criterion_03_metric_ablation(astronaut):
    # seeded noisy fixture: cross-modal proxy with stronger noise
    tgt, _, _ = synthesize_pair(astronaut, SHIFT, CROSS_MODAL, noise_sigma=0.05, seed=42)
    rows = run_ablation(astronaut, tgt, KnownTransform(SHIFT), ["ssd", "lad", "ncc", "ssim"],
                        [21, 101], ["off"], PipelineConfig(), fine=False)
    cmr = {(r["metric"], r["size"]): r["CMR"] for r in rows}
    ssim_beats_ncc = cmr[("ssim", 21)] >= cmr[("ncc", 21)]
    bigger_better = all(cmr[(m, 101)] >= cmr[(m, 21)] for m in ("ssd", "lad", "ncc", "ssim"))
    table = ", ".join(f"{m}@{s}={v:.3f}" for (m, s), v in sorted(cmr.items()))
    record(3, ssim_beats_ncc and bigger_better,
           f"SSIM>=NCC at 21: {ssim_beats_ncc}; CMR(101)>=CMR(21) for all: {bigger_better}; {table}")


def test_criterion_04_noise_mode_trend(pair_cross_modal):
    ref, tgt = pair_cross_modal
    rows = run_ablation(ref, tgt, KnownTransform(SHIFT), ["ssim"], [41, 61, 81],
                        ["off", "rayleigh"], PipelineConfig(), fine=False)
    cmr = {(r["noise_mode"], r["size"]): r["CMR"] for r in rows}
    ok = all(cmr[("off", s)] >= cmr[("rayleigh", s)] for s in (41, 61, 81))
    detail = "; ".join(f"{s}: off {cmr[('off', s)]:.3f} vs rayleigh {cmr[('rayleigh', s)]:.3f}"
                       for s in (41, 61, 81))
    record(4, ok, detail)


def test_criterion_05_wlad_vs_lp():
    rng = np.random.default_rng(42)
    n, m = 100, 8
    b = np.column_stack([np.ones(n), rng.normal(size=(n, m - 1))])
    x_true = rng.uniform(-2, 2, m)
    l = b @ x_true + rng.normal(0, 0.01, n)
    idx = rng.choice(n, 10, replace=False)
    l[idx] += 5.0 * rng.choice([-1, 1], 10)
    w = np.ones(n)

    x, _, _ = wlad_solve(b, l, w, max_iters=100, tol=1e-10)
    lp = linprog(np.concatenate([np.zeros(m), w, w]),
                 A_eq=np.hstack([b, -np.eye(n), np.eye(n)]), b_eq=l,
                 bounds=[(None, None)] * m + [(0, None)] * (2 * n), method="highs")
    x_lp = lp.x[:m]
    x_ls = np.linalg.lstsq(b, l, rcond=None)[0]
    gap = np.abs(x - x_lp).max()
    err, err_ls = np.linalg.norm(x - x_true), np.linalg.norm(x_ls - x_true)
    record(5, gap < 1e-2 and err < err_ls,
           f"max |IRLS - LP| {gap:.2e} (<1e-2); param error {err:.3e} vs least squares {err_ls:.3e}")


def _two_regressions(g, i):
    total = 0.0
    for y, x in ((i, g), (g, i)):
        a = np.column_stack([x, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        total += np.mean((y - a @ coef) ** 2)
    return total


def test_criterion_06_algebraic_identities():
    rng = np.random.default_rng(6)
    ms_gap = 0.0
    for _ in range(1000):
        k = rng.integers(4, 50)
        g = rng.random(k)
        i = rng.uniform(-1, 1) * g + rng.normal(0, rng.uniform(0, 1), k)
        ms_gap = max(ms_gap, abs(mutual_structure(g, i) - _two_regressions(g, i)))

    target = math.sqrt((4 - math.pi) / math.pi)
    ray_gap = max(abs(sd / mu - target) / target for mu, sd in map(rayleigh_stats, rng.uniform(1e-3, 1e3, 200)))

    ssim_gap = max(abs(ssim_patch(p, p) - 1.0) for p in rng.random((50, 121)))

    pc_lo, pc_hi = 1.0, 0.0
    for _ in range(100):
        h, w = rng.integers(32, 72, 2)
        pc = compute_pc(rng.random((h, w)) * rng.uniform(0.01, 100)).pc
        pc_lo, pc_hi = min(pc_lo, pc.min()), max(pc_hi, pc.max())

    ok = ms_gap < 1e-9 and ray_gap < 4 * np.finfo(float).eps and ssim_gap < 1e-12 \
        and pc_lo >= 0 and pc_hi <= 1
    record(6, ok, f"MS gap {ms_gap:.1e} (<1e-9); Rayleigh ratio rel gap {ray_gap:.1e}; "
                  f"SSIM(G,G) gap {ssim_gap:.1e}; PC range [{pc_lo:.3f}, {pc_hi:.3f}]")


def test_criterion_07_jacobian():
    tex = smooth_texture((96, 96), seed=7, sigma=2.5)
    params = TransformParams(0.05, 0.9, 0.23, 1.02, 0.03, -0.41, -0.02, 0.97)
    center, delta = (48.0, 47.0), 1e-4
    g = np.zeros((21, 21))
    b, _ = linearize(g, tex, params, center)
    errs = []
    for k in range(8):
        vp, vm = params.vector(), params.vector()
        vp[k] += delta
        vm[k] -= delta
        _, lp = linearize(g, tex, TransformParams.from_vector(vp), center)
        _, lm = linearize(g, tex, TransformParams.from_vector(vm), center)
        fd = -(lp - lm) / (2 * delta)
        errs.append(np.linalg.norm(b[:, k] - fd) / np.linalg.norm(fd))
    record(7, max(errs) < 1e-2, "relative errors " + " ".join(f"{e:.1e}" for e in errs) + " (<1e-2)")


def test_criterion_08_epipolar():
    rng = np.random.default_rng(8)
    pts = np.column_stack([rng.uniform(-5, 5, 60), rng.uniform(-5, 5, 60), rng.uniform(8, 30, 60)])

    def proj(p):
        return np.column_stack([500 * p[:, 0] / p[:, 2] + 256, 500 * p[:, 1] / p[:, 2] + 256])

    src, dst = proj(pts), proj(pts - [1.0, 0.0, 0.0])
    h, mask = ransac_model(src, dst, Model.FUNDAMENTAL, 2.0)
    lines = np.column_stack([src, np.ones(len(src))]) @ h.T
    tilt = np.abs(lines[:, 0] / np.hypot(lines[:, 0], lines[:, 1])).max()
    res, _ = epipolar_residual(h, src[mask], dst[mask])
    worst = np.hypot(res[:, 0], res[:, 1]).max()

    rep = score_matches(np.zeros((4, 2)), [[0, 0], [1, 0], [0, 1], [3, 0]], GroundTruthPoints(np.zeros((4, 2))))
    ok = mask.all() and tilt < 1e-6 and worst < 1e-6 and round(rep.rmse, 4) == 0.8165
    record(8, ok, f"line tilt {tilt:.1e}, max inlier residual {worst:.1e} (<1e-6); "
                  f"4-residual RMSE {rep.rmse:.4f}")


def test_criterion_09_determinism(pair_visible, tmp_path):
    from PIL import Image

    ref, tgt = pair_visible
    for name, img in (("ref", ref), ("tgt", tgt)):
        q = np.round(np.clip(img[128:384, 128:384], 0, 1) * 65535).astype(np.uint16)
        Image.fromarray(q).save(tmp_path / f"{name}.png")
    outs = []
    for run in ("a", "b"):
        rc = cli.main(["match", "--ref", str(tmp_path / "ref.png"), "--tgt", str(tmp_path / "tgt.png"),
                       "--out", str(tmp_path / run), "--feature-count", "200", "--seed", "42"])
        assert rc == 0
        outs.append({f: (tmp_path / run / f).read_bytes()
                     for f in ("keypoints.csv", "coarse.csv", "fine.csv", "inliers.csv")})
    same = outs[0] == outs[1]
    rows = len(outs[0]["fine.csv"].splitlines()) - 1
    record(9, same and rows > 50, f"byte-identical CSVs across two runs: {same} ({rows} fine rows)")


@pytest.mark.skip(reason="needs the published Landsat pairs (network access); not part of the desk suite")
def test_criterion_10_published_landsat():
    pass


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
