"""Transductive learning over spectral graph products."""

from .errors import ConvergenceError, DataError, TopGraphError
from .graphio import (SparseGraph, TupleSet, knn_sparsify, load_edge_list, load_tuples,
                      symmetric_normalize)
from .spectral import EigenSystem, select_rank_by_energy, top_eigensystem
from .sgp import KappaSpec, KappaTensor, build_kappa_tensor, kappa_eval, materialize_sgp_dense
from .model import Model, recover_full, score_tuple, seminorm_exact, seminorm_tucker
from .train import TrainConfig, full_loss, sample_negative, sgd_step, train
from .adapt import (AdaptConfig, adapt_kappa, kappa_gradient, project_constraints,
                    project_monotone, project_simplex)
from .evaluation import Split, auc, average_precision, hits_at_k, make_split, rank_completions

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DataError", "TopGraphError",
    "SparseGraph", "TupleSet", "knn_sparsify", "load_edge_list", "load_tuples",
    "symmetric_normalize",
    "EigenSystem", "select_rank_by_energy", "top_eigensystem",
    "KappaSpec", "KappaTensor", "build_kappa_tensor", "kappa_eval", "materialize_sgp_dense",
    "Model", "recover_full", "score_tuple", "seminorm_exact", "seminorm_tucker",
    "TrainConfig", "full_loss", "sample_negative", "sgd_step", "train",
    "AdaptConfig", "adapt_kappa", "kappa_gradient", "project_constraints", "project_monotone",
    "project_simplex",
    "Split", "auc", "average_precision", "hits_at_k", "make_split", "rank_completions",
]
