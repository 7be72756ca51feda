"""Data-free transformer re-basin and task-vector transport.

Permutes the hidden units of one transformer checkpoint onto another's basin
by structured matching - spectrally paired attention heads, within-head unit
assignment, residual-aware propagation - then carries fine-tuning deltas
(task vectors) from the old base to the new one without any data.
"""

from .checkpoint import (
    ArchSpec,
    TaskVector,
    WeightSet,
    read_checkpoint,
    read_permutation_assignment,
    read_task_vector,
    write_checkpoint,
    write_permutation_assignment,
    write_task_vector,
)
from .coupling import (
    CouplingGraph,
    apply_assignment,
    build_coupling_graph,
    inverse_assignment,
)
from .attention import (
    align_heads,
    inter_head_distance_matrix,
    spectral_head_distance,
    split_heads,
    verify_attention_equivariance,
)
from .lap import solve_max, solve_min
from .linalg import frobenius_inner, permute_cols, permute_rows, singular_values, vector_pnorm
from .matching import MatchOptions, MatchResult, matching_objective, recovery_fraction, weight_match
from .model import (
    EvalBatch,
    LmcCurve,
    batch_loss,
    forward,
    init_random,
    lmc_curve,
    loss_and_grads,
    make_blob_batch,
    make_random_batch,
    read_eval_batch,
    train_toy,
    verify_equivalence,
    write_eval_batch,
)
from .perms import BlockPermutation, PermutationAssignment, compose, identity, inverse
from .transport import ScalingSpec, compute_task_vector, merge_task_vectors, transport

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "BlockPermutation",
    "CouplingGraph",
    "EvalBatch",
    "LmcCurve",
    "MatchOptions",
    "MatchResult",
    "PermutationAssignment",
    "ScalingSpec",
    "TaskVector",
    "WeightSet",
    "align_heads",
    "apply_assignment",
    "batch_loss",
    "build_coupling_graph",
    "compose",
    "compute_task_vector",
    "forward",
    "frobenius_inner",
    "identity",
    "init_random",
    "inter_head_distance_matrix",
    "inverse",
    "inverse_assignment",
    "lmc_curve",
    "loss_and_grads",
    "make_blob_batch",
    "make_random_batch",
    "matching_objective",
    "merge_task_vectors",
    "permute_cols",
    "permute_rows",
    "read_checkpoint",
    "read_eval_batch",
    "read_permutation_assignment",
    "read_task_vector",
    "recovery_fraction",
    "singular_values",
    "solve_max",
    "solve_min",
    "spectral_head_distance",
    "split_heads",
    "train_toy",
    "transport",
    "vector_pnorm",
    "verify_attention_equivariance",
    "verify_equivalence",
    "weight_match",
    "write_checkpoint",
    "write_eval_batch",
    "write_permutation_assignment",
    "write_task_vector",
]
