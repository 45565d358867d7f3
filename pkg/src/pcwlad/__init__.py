"""Sub-pixel multimodal image matching on phase congruency maps.

Pipeline: phase congruency maps, FAST keypoints, SSIM template matching at
integer pixels, then mutual-structure weighted least absolute deviation
refinement of an affine geometric plus linear radiometric model.
"""

from .coarse import CoarseMatch, Metric, TemplateSpec, coarse_match, score_surface, ssim_patch
from .evaluation import (
    EstimationError,
    EvalReport,
    Fundamental,
    GroundTruthPoints,
    KnownTransform,
    Model,
    convergence_rate,
    epipolar_residual,
    fit_fundamental,
    ransac_model,
    score_matches,
)
from .features import Keypoint, detect_fast
from .fine import FineConfig, FineMatch, TransformParams, mutual_structure, refine, wlad_solve
from .phasecong import NoiseMode, PcMap, PcParams, build_filter_bank, compute_pc
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    Radiometric,
    run_ablation,
    run_pipeline,
    synthesize_pair,
)
from .raster import AffinePair, bicubic, load_gray, warp_affine

__version__ = "0.1.0"
