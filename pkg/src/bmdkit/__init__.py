"""bmdkit: BM-product tensor decompositions for video background modeling."""

__version__ = "0.1.0"

from .als_color import ChannelCoupling, als4_init, bmd_als4, build_r, separate4
from .als_engine import Regularization, SolveOptions, SolveReport, bmd_als, objective_psi, separate
from .bm_algebra import Bmd4Factors, BmdFactors, bm_rank_upper_bound, bmp, bmp4, bmp_outer
from .errors import BmdError
from .generative_model import ObjectSpec, synth_video, synthetic_background, two_object_scenario
from .init_factorizations import dmd_fit, dmd_to_bmd, matrix_to_bmd, slicewise_svd_init, sssvd_background
from .metrics import compression_ratio, evaluate_background

__all__ = [
    "BmdFactors",
    "Bmd4Factors",
    "BmdError",
    "bmp",
    "bmp4",
    "bmp_outer",
    "bm_rank_upper_bound",
    "matrix_to_bmd",
    "slicewise_svd_init",
    "sssvd_background",
    "dmd_fit",
    "dmd_to_bmd",
    "Regularization",
    "SolveOptions",
    "SolveReport",
    "bmd_als",
    "objective_psi",
    "separate",
    "ChannelCoupling",
    "build_r",
    "als4_init",
    "bmd_als4",
    "separate4",
    "ObjectSpec",
    "synth_video",
    "synthetic_background",
    "two_object_scenario",
    "compression_ratio",
    "evaluate_background",
]
