"""Training-free refinement of dual-branch semantic segmentation scores."""

from .attention_fusion import AttentionMap, FusedScores, ScoreMap, run_caf
from .config import PipelineConfig, parse_config
from .diffusion import DiffusionParams, diffuse, refine_bidirectional
from .metrics import ConfusionMatrix, accumulate, merge, miou
from .pipeline import PipelineResult, run_batch, run_pipeline
from .superpixels import (
    EdgeWeightField,
    SuperpixelMap,
    build_edge_weights,
    segment_felzenszwalb,
)
from .tensorio import FeatureBundle, load_bundle, read_tensor, write_bundle, write_tensor
from .transition import TransitionMatrix, build_transition, mean_features
from .tv_fusion import (
    ProbabilityField,
    SolverParams,
    argmax_labels,
    collapse_kl_targets,
    kl_simplex_prox,
    scores_to_probs,
    solve_pdhg,
    tv_energy,
)

__version__ = "0.1.0"
