"""Streaming CP decomposition with concept drift detection."""

from .als import AlsOptions, DegenerateComponentError, SingularSolveError, cp_als
from .baseline import BaselineConfig, fixed_rank_stream
from .harness import ConfigError, ExperimentConfig, MethodSpec, emit_report, run_experiment
from .matching import MatchOptions, MatchResult, best_assignment, find_concept_overlap, similarity_matrix
from .rank import RankEstimate, core_consistency, estimate_rank
from .seekdestroy import (
    DriftReport,
    StreamOptions,
    StreamState,
    init_state,
    load_checkpoint,
    process_batch,
    reconstruct_stream,
    run_stream,
    save_checkpoint,
)
from .streamgen import GroundTruth, StreamSpec, generate_stream, load_stream, save_stream
from .tensor import (
    DenseTensor3,
    FactorModel,
    TensorError,
    khatri_rao,
    matricize,
    reconstruct,
    relative_error,
)

__version__ = "0.1.0"
