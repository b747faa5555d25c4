"""Hierarchical contrastive data valuation.

Point-level data values from a bounded characteristic function (learner
utility plus a label-aware dispersion bonus), estimated with Monte-Carlo
Shapley games played over a balanced cluster hierarchy and kept fresh under
streaming ingestion.
"""

from .core import (
    EMPTY_SET,
    LabeledDataset,
    PointSet,
    RngStream,
    ValueVector,
    content_token,
    dataset_from_arrays,
    load_dataset,
    read_matrix_binary,
    union,
    write_dataset_csv,
    write_matrix_binary,
)
from .encoder import (
    EmbeddingMatrix,
    EncoderConfig,
    fd_gradient,
    identity_embeddings,
    load_embeddings,
    save_embeddings,
    smoothness_penalty,
    train_linear_encoder,
)
from .evaluation import (
    ConcentrationReport,
    ErrorBudgetReport,
    RegretReport,
    StabilityReport,
    concentration_check,
    efficiency_check,
    flip_labels,
    hierarchical_error_budget,
    make_synthetic,
    stability_report,
    surrogate_regret,
    synthetic_rows,
    topk_select,
)
from .hcdv import HcdvConfig, HcdvReport, evaluation_counter, last_run_report, propagation_weights, run_hcdv
from .hierarchy import HierarchyTree, TreeNode, balanced_split, build_tree, capacity_window
from .shapley import (
    CoalitionGame,
    EXACT_PLAYER_LIMIT,
    ShapleyEstimate,
    exact_shapley,
    flat_mcds,
    group_shapley,
    independent_player_estimate,
    leave_one_out,
    monte_carlo_shapley,
    random_values,
)
from .streaming import StepMetrics, StreamState, full_recompute, ingest_batch, init_stream
from .utility import CharacteristicFn, DispersionResult, coalition_utility, normalized_dispersion

__version__ = "0.1.0"

__all__ = [
    "CharacteristicFn",
    "CoalitionGame",
    "ConcentrationReport",
    "DispersionResult",
    "EMPTY_SET",
    "EXACT_PLAYER_LIMIT",
    "EmbeddingMatrix",
    "EncoderConfig",
    "ErrorBudgetReport",
    "HcdvConfig",
    "HcdvReport",
    "HierarchyTree",
    "LabeledDataset",
    "PointSet",
    "RegretReport",
    "RngStream",
    "ShapleyEstimate",
    "StabilityReport",
    "StepMetrics",
    "StreamState",
    "TreeNode",
    "ValueVector",
    "balanced_split",
    "build_tree",
    "capacity_window",
    "coalition_utility",
    "concentration_check",
    "content_token",
    "dataset_from_arrays",
    "efficiency_check",
    "evaluation_counter",
    "exact_shapley",
    "fd_gradient",
    "flat_mcds",
    "flip_labels",
    "full_recompute",
    "group_shapley",
    "hierarchical_error_budget",
    "identity_embeddings",
    "independent_player_estimate",
    "ingest_batch",
    "init_stream",
    "last_run_report",
    "leave_one_out",
    "load_dataset",
    "load_embeddings",
    "make_synthetic",
    "monte_carlo_shapley",
    "normalized_dispersion",
    "propagation_weights",
    "random_values",
    "read_matrix_binary",
    "run_hcdv",
    "save_embeddings",
    "smoothness_penalty",
    "stability_report",
    "surrogate_regret",
    "synthetic_rows",
    "topk_select",
    "train_linear_encoder",
    "union",
    "write_dataset_csv",
    "write_matrix_binary",
]
