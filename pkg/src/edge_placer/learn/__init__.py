"""Surrogate classifiers that predict stage-1 server choices per user."""

from .bundle import Surrogate
from .doe import DoeDesign, DoeReport, DoeRun, MainEffect, run_doe
from .kernels import KernelKind, KernelSpec, gram, kernel_eval
from .mlp import MlpClassifier, train_mlp
from .selection import (
    CvReport,
    EvalReport,
    GridReport,
    MlpConfig,
    SvmConfig,
    TrainSettings,
    default_mlp_grid,
    default_svm_grid,
    evaluate_models,
    fit_surrogate,
    grid_search,
    kfold_cv,
    kfold_indices,
    majority_baseline,
)
from .svm import BinarySVC, OneVsOneSVC, predict_ovo, train_svm_binary
