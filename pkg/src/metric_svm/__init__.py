"""Metric-learning flavoured SVM and MKL classifiers.

The package exposes SVM, SVM_m (band-constrained SVM), eps-SVM, SVM-FDA and
FDA single-kernel learners, the MKL_gamma / MKL_m / eps-MKL multiple kernel
learners, and a cross-validation harness used to compare them.
"""

from metric_svm.data import (
    Dataset,
    FoldAssignment,
    Standardizer,
    apply_standardizer,
    fetch_dataset,
    fit_standardizer,
    load_dataset,
    make_folds,
)
from metric_svm.kernel import (
    GramMatrix,
    KernelBank,
    KernelSpec,
    build_gram,
    combine_grams,
    eval_kernel,
    normalize_gram,
    paper20_bank,
)
from metric_svm.qp import DualSolution, SvmMParams, check_kkt, oracle_solve, solve_dual
from metric_svm.models import (
    DistanceReport,
    ScatterStats,
    TrainedModel,
    compute_scatter,
    decision_value,
    distance_report,
    l_mu_norm,
    predict,
    train_fda,
    train_svm_family,
    train_svm_fda,
)
from metric_svm.mkl import MklParams, MklSolution, mkl_gradient, simplex_step, train_mkl

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FoldAssignment",
    "Standardizer",
    "apply_standardizer",
    "fetch_dataset",
    "fit_standardizer",
    "load_dataset",
    "make_folds",
    "GramMatrix",
    "KernelBank",
    "KernelSpec",
    "build_gram",
    "combine_grams",
    "eval_kernel",
    "normalize_gram",
    "paper20_bank",
    "DistanceReport",
    "ScatterStats",
    "TrainedModel",
    "compute_scatter",
    "decision_value",
    "distance_report",
    "l_mu_norm",
    "predict",
    "train_fda",
    "train_svm_family",
    "train_svm_fda",
    "DualSolution",
    "SvmMParams",
    "check_kkt",
    "oracle_solve",
    "solve_dual",
    "MklParams",
    "MklSolution",
    "mkl_gradient",
    "simplex_step",
    "train_mkl",
]
