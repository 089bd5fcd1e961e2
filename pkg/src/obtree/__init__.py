"""Oblique decision trees trained end to end with annealed soft routing.

Training relaxes the hard routing of a binary tree into sigmoid gates whose
steepness grows every epoch, alternates gradient steps on the oblique split
coefficients with closed-form leaf updates, grows the topology greedily
one trained stump at a time, and finally finetunes the whole tree. All
predictions route deterministically.
"""

__version__ = "0.1.0"

from .adam import AdamState, adam_init, adam_step
from .alternating import LeafCounts, fit_alternating, hard_leaf_update, leaf_counts
from .em import (
    EpochStats,
    TrainConfig,
    e_step,
    fit_em,
    laplacian_matrix,
    log_likelihood,
    m_step_leaves,
    split_gradient,
    split_objective,
)
from .errors import DataFormatError, NumericError, TreeStructureError
from .growth import (
    GrowthConfig,
    GrowthTraceRow,
    StumpFit,
    best_axis_split,
    best_axis_stump_loglik,
    entropy_nats,
    finetune,
    fit_stump,
    grow_axis_tree,
    grow_greedy,
    information_gain,
    partition,
    realized_gain,
    weighted_leaf_entropy,
)
from .inference import (
    HARD,
    accuracy,
    path_probabilities,
    path_probabilities_batch,
    predict_class,
    predict_classes,
    predict_proba,
    predict_proba_batch,
    route_batch,
    route_deterministic,
    sigmoid_steep,
)
from .model_io import ModelMeta, load_model, save_model
from .tree import (
    Leaf,
    PathSets,
    SampleSet,
    Split,
    Tree,
    axis_aligned_coef,
    compute_path_sets,
    new_stump,
    oblique_feature,
    replace_leaf_with_stump,
)

__all__ = [name for name in dir() if not name.startswith("_")]
