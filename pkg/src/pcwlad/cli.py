"""Command-line driver: ``pcwlad pc|match|synth|ablate|eval``.

Exit codes: 0 success, 1 I/O failure, 2 empty or degenerate result,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .evaluation import (
    EstimationError,
    Fundamental,
    KnownTransform,
    Model,
    ransac_model,
    score_matches,
)
from .phasecong import compute_pc
from .pipeline import (
    PipelineConfig,
    Radiometric,
    _parse,
    ablation_csv,
    residual_csv,
    run_ablation,
    run_pipeline,
    synthesize_pair,
    truth_from_dict,
    write_outputs,
    read_matches_csv,
)
from .raster import AffinePair, RasterFormatError, load_gray, save_pcw1, save_png16

log = logging.getLogger("pcwlad")

EXIT_OK = 0
EXIT_IO = 1
EXIT_EMPTY = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class EmptyResult(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int | None = None, name: str = "value") -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{name}: expected comma-separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"{name}: expected {n} numbers, got {len(vals)}")
    return vals


def _list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# every PipelineConfig field becomes --field-name; defaults stay None so a
# config file value is only overridden by flags that were actually given
def _add_config_flags(p: argparse.ArgumentParser, only=None):
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--config", help="key=value file; explicit flags override it")
    for f in fields(PipelineConfig):
        if only is not None and f.name not in only:
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = {"int": int, "float": float, "str": str, "bool": _bool}[f.type]
        g.add_argument(flag, dest=f.name, type=kind, default=None, metavar=f.type.upper())


def _bool(text: str) -> bool:
    try:
        return _parse("bool", text.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _config(args) -> PipelineConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)}
    text = ""
    if args.config:
        text = Path(args.config).read_text()
    try:
        return PipelineConfig.loads(text, **overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


PC_FIELDS = ("n_scales", "n_orientations", "min_wavelength", "scale_mult", "sigma_on_f",
             "k_noise", "noise_mode", "epsilon")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcwlad", description="Sub-pixel multimodal image matching.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("pc", help="phase congruency map of one image")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True, help="output stem; writes STEM.pcw and STEM.png")
    _add_config_flags(sp, PC_FIELDS)

    sp = sub.add_parser("match", help="match a reference/target pair")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--tgt", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--truth", help="truth JSON written by 'synth'")
    _add_config_flags(sp)

    sp = sub.add_parser("synth", help="synthesise a target image with known geometry")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True, help="output stem; writes STEM.png and STEM.truth.json")
    geo = sp.add_mutually_exclusive_group()
    geo.add_argument("--shift", type=lambda s: _floats(s, 2, "--shift"), metavar="X,Y")
    geo.add_argument("--affine", type=lambda s: _floats(s, 6, "--affine"),
                     metavar="A0,A1,A2,B0,B1,B2",
                     help="forward map x'=a0+a1*x+a2*y, y'=b0+b1*x+b2*y")
    sp.add_argument("--radiometric", type=lambda s: _floats(s, 4, "--radiometric"),
                    metavar="GAMMA,GAIN,OFFSET,INVERT", default=[1.0, 1.0, 0.0, 0.0])
    sp.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    sp.add_argument("--seed", type=int, default=42)

    sp = sub.add_parser("ablate", help="metric x size x noise-mode sweep")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--tgt", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--metrics", type=_list, default=["ssd", "lad", "ncc", "ssim"])
    sp.add_argument("--sizes", type=_list, default=["21", "41", "61", "81", "101"])
    sp.add_argument("--noise-modes", type=_list, default=["off", "rayleigh"])
    sp.add_argument("--coarse-only", action="store_true")
    sp.add_argument("--out", required=True, help="CSV path")
    _add_config_flags(sp)

    sp = sub.add_parser("eval", help="score a matches CSV")
    sp.add_argument("--matches", required=True)
    sp.add_argument("--truth", required=True,
                    help="truth JSON path, or 'affine'/'fundamental' to fit a model by RANSAC")
    sp.add_argument("--out", required=True, help="output stem; writes STEM.json and STEM.residuals.csv")
    sp.add_argument("--ransac-threshold", type=float, default=2.0)
    sp.add_argument("--seed", type=int, default=42)
    return p


# --------------------------------------------------------------------------
# commands


def cmd_pc(args) -> int:
    cfg = _config(args)
    img = load_gray(args.input)
    pc = compute_pc(img, cfg.pc_params()).pc
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_pcw1(pc, stem.with_suffix(".pcw"))
    save_png16(pc, stem.with_suffix(".png"), normalize=False)
    log.info("PC range [%.4f, %.4f]", pc.min(), pc.max())
    return EXIT_OK


def _load_truth(path) -> KnownTransform:
    try:
        return truth_from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: not a truth file ({exc})") from exc


def cmd_match(args) -> int:
    cfg = _config(args)
    ref = load_gray(args.ref)
    tgt = load_gray(args.tgt)
    if ref.shape != tgt.shape:
        raise UsageError(f"image sizes differ: {ref.shape} vs {tgt.shape}")
    truth = _load_truth(args.truth) if args.truth else None
    res = run_pipeline(ref, tgt, cfg)
    summary = write_outputs(res, args.out, truth)
    if not res.keypoints:
        raise EmptyResult("no keypoints detected")
    if not res.coarse:
        raise EmptyResult("no coarse matches")
    log.info("%d keypoints, %d coarse, %d converged, %d final", summary["keypoints"],
             summary["coarse_matches"], summary["fine_converged"], summary["final_matches"])
    return EXIT_OK


def cmd_synth(args) -> int:
    img = load_gray(args.input)
    if args.affine is not None:
        t = AffinePair(*args.affine)
    elif args.shift is not None:
        t = AffinePair.shift(*args.shift)
    else:
        t = AffinePair()
    gamma, gain, offset, invert = args.radiometric
    if gamma <= 0:
        raise UsageError("--radiometric: gamma must be positive")
    try:
        target, _, truth = synthesize_pair(img, t, Radiometric(gamma, gain, offset, bool(invert)),
                                           args.noise, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_png16(np.clip(target, 0.0, 1.0), stem.with_suffix(".png"), normalize=False)
    truth["input"] = str(args.input)
    Path(f"{stem}.truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if not args.metrics:
        raise UsageError("--metrics must name at least one metric")
    if not args.sizes or not args.noise_modes:
        raise UsageError("--sizes and --noise-modes must be non-empty")
    try:
        sizes = [int(s) for s in args.sizes]
    except ValueError as exc:
        raise UsageError(f"--sizes: {exc}") from exc
    cfg = _config(args)
    truth = _load_truth(args.truth)
    ref = load_gray(args.ref)
    tgt = load_gray(args.tgt)
    try:
        rows = run_ablation(ref, tgt, truth, args.metrics, sizes, args.noise_modes, cfg,
                            fine=not args.coarse_only)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(ablation_csv(rows))
    return EXIT_OK


def cmd_eval(args) -> int:
    src, dst = read_matches_csv(args.matches)
    if len(src) == 0:
        raise EmptyResult("matches file is empty")
    kind = args.truth.lower()
    if kind in ("affine", "fundamental"):
        model = Model(kind)
        params, _ = ransac_model(src, dst, model, args.ransac_threshold, seed=args.seed)
        truth = KnownTransform(params) if model is Model.AFFINE else Fundamental(params)
    else:
        truth = _load_truth(args.truth)
    report = score_matches(src, dst, truth)
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{stem}.json").write_text(report.to_json() + "\n")
    Path(f"{stem}.residuals.csv").write_text(residual_csv(report))
    print(report.to_json())
    return EXIT_OK


COMMANDS = {"pc": cmd_pc, "match": cmd_match, "synth": cmd_synth, "ablate": cmd_ablate,
            "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"pcwlad {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptyResult, EstimationError) as exc:
        print(f"pcwlad {args.command}: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (OSError, RasterFormatError) as exc:
        print(f"pcwlad {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
