"""Cross-validation, per-user grid search and model evaluation.

Every user gets its own classifier. Features are shared across users (full
instance scope) unless the per-user scope is requested, in which case each
user sees only its own distances and request.

For SVM grids the kernel matrix of each fold is computed once per distinct
kernel and reused for every user and every C value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import clone

from ..dataset import Scaler, user_features
from ..model import DimensionError
from ..world import make_rng
from .kernels import KernelKind, KernelSpec, gram
from .mlp import MlpClassifier
from .svm import OneVsOneSVC

log = logging.getLogger(__name__)

FULL, USER = "full", "user"


@dataclass(frozen=True)
class SvmConfig:
    kernel: KernelSpec
    C: float

    def label(self) -> str:
        return f"svm:{self.kernel.kind.value}:gamma={self.kernel.gamma:g}:C={self.C:g}"

    def estimator(self, settings: "TrainSettings") -> OneVsOneSVC:
        k = self.kernel
        return OneVsOneSVC(self.C, k.kind.value, k.gamma, k.degree, k.coef0, settings.svm_tol, settings.svm_max_passes)


@dataclass(frozen=True)
class MlpConfig:
    hidden_layer_sizes: Tuple[int, ...]
    alpha: float

    def label(self) -> str:
        return f"mlp:{'-'.join(map(str, self.hidden_layer_sizes))}:alpha={self.alpha:g}"

    def estimator(self, settings: "TrainSettings") -> MlpClassifier:
        return MlpClassifier(
            hidden_layer_sizes=tuple(self.hidden_layer_sizes),
            alpha=self.alpha,
            learning_rate=settings.mlp_learning_rate,
            momentum=settings.mlp_momentum,
            batch_size=settings.mlp_batch_size,
            max_epochs=settings.mlp_max_epochs,
            patience=settings.mlp_patience,
            validation_fraction=settings.mlp_validation_fraction,
            random_state=settings.seed,
        )


ModelConfig = Union[SvmConfig, MlpConfig]


@dataclass(frozen=True)
class TrainSettings:
    feature_scope: str = FULL
    standardize_svm: bool = False
    standardize_mlp: bool = True
    svm_tol: float = 1e-3
    svm_max_passes: int = 1000
    mlp_learning_rate: float = 0.01
    mlp_momentum: float = 0.9
    mlp_batch_size: int = 64
    mlp_max_epochs: int = 100
    mlp_patience: int = 10
    mlp_validation_fraction: float = 0.1
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.feature_scope not in (FULL, USER):
            raise ValueError(f"feature scope must be {FULL!r} or {USER!r}")

    def standardize(self, config: ModelConfig) -> bool:
        return self.standardize_svm if isinstance(config, SvmConfig) else self.standardize_mlp


def default_svm_grid(
    kernels=("linear", "poly", "rbf", "sigmoid"),
    gammas=(0.0001, 0.1),
    Cs=(1, 10, 100, 400, 800, 1000),
    degree: int = 3,
    coef0: float = 0.0,
) -> List[SvmConfig]:
    return [SvmConfig(KernelSpec(k, g, degree, coef0), float(c)) for k in kernels for g in gammas for c in Cs]


def default_mlp_grid(
    hidden=((256, 128, 64, 32, 16, 8, 6), (128, 64, 32, 16, 8, 4)),
    alphas=(0.001, 0.00001),
) -> List[MlpConfig]:
    return [MlpConfig(tuple(h), float(a)) for h in hidden for a in alphas]


def view(X: np.ndarray, user: int, n_servers: int, scope: str) -> np.ndarray:
    return user_features(X, user, n_servers) if scope == USER else X


def n_servers_of(X: np.ndarray, n_users: int) -> int:
    if X.shape[1] % n_users:
        raise DimensionError(f"{X.shape[1]} features do not split over {n_users} users")
    return X.shape[1] // n_users - 1


# -- cross-validation ---------------------------------------------------------


@dataclass
class CvReport:
    fold_scores: List[float]
    k: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_scores))


def kfold_indices(n: int, k: int = 5, seed: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle cut into ``k`` near-equal folds; ``(train, validation)`` pairs."""
    if k < 2:
        raise ValueError("k-fold needs k >= 2")
    if n < k:
        raise ValueError(f"cannot cut {n} rows into {k} folds")
    perm = make_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for f in range(k):
        val = np.sort(folds[f])
        train = np.sort(np.concatenate([folds[g] for g in range(k) if g != f]))
        out.append((train, val))
    return out


def kfold_cv(X, y, k: int = 5, model=None, seed: int = 0, standardize: bool = True,
             settings: Optional["TrainSettings"] = None) -> CvReport:
    """Mean held-out accuracy of ``model`` (an estimator or a grid config).

    The scaler is re-fit inside each fold on that fold's training part.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    settings = settings or TrainSettings()
    if model is None:
        model = SvmConfig(KernelSpec(), 1.0)
    est = model.estimator(settings) if isinstance(model, (SvmConfig, MlpConfig)) else model
    scores = []
    for tr, va in kfold_indices(len(y), k, seed):
        sc = Scaler(standardize=standardize).fit(X[tr])
        m = clone(est).fit(sc.transform(X[tr]), y[tr])
        scores.append(float((m.predict(sc.transform(X[va])) == y[va]).mean()))
    return CvReport(scores, k)


# -- grid search --------------------------------------------------------------


@dataclass
class UserChoice:
    user: int
    config: ModelConfig
    cv_accuracy: float
    test_accuracy: float


@dataclass
class GridReport:
    rows: List[UserChoice]
    cv_table: np.ndarray  # users x configs mean CV accuracy
    grid: List[ModelConfig]
    surrogate: Optional["Surrogate"] = None

    @property
    def test_accuracies(self) -> np.ndarray:
        return np.array([r.test_accuracy for r in self.rows])


def _svm_cv_table(X, Y, grid, settings, S):
    """users x configs mean CV accuracy, sharing kernel matrices."""
    U = Y.shape[1]
    table = np.zeros((U, len(grid)))
    by_kernel: Dict[KernelSpec, List[int]] = {}
    for c, cfg in enumerate(grid):
        by_kernel.setdefault(cfg.kernel.effective(), []).append(c)
    folds = kfold_indices(len(Y), settings.cv_folds, settings.seed)
    users_views = [None] if settings.feature_scope == FULL else list(range(U))
    for tr, va in folds:
        for u_view in users_views:
            Xv = X if u_view is None else user_features(X, u_view, S)
            sc = Scaler(standardize=settings.standardize_svm).fit(Xv[tr])
            A, B = sc.transform(Xv[tr]), sc.transform(Xv[va])
            for spec, cols in by_kernel.items():
                K = gram(spec, A, A)
                Kv = gram(spec, B, A)
                users = range(U) if u_view is None else [u_view]
                done: Dict[float, np.ndarray] = {}
                for c in cols:
                    C = grid[c].C
                    if C not in done:
                        acc = np.empty(U)
                        for u in users:
                            m = grid[c].estimator(settings).fit_gram(K, Y[tr, u], A)
                            acc[u] = (m.predict_from_kernel(Kv[:, m.support_]) == Y[va, u]).mean()
                        done[C] = acc
                    for u in users:
                        table[u, c] += done[C][u] / len(folds)
    return table


def _generic_cv_table(X, Y, grid, settings, S):
    U = Y.shape[1]
    table = np.zeros((U, len(grid)))
    for c, cfg in enumerate(grid):
        for u in range(U):
            Xu = view(X, u, S, settings.feature_scope)
            table[u, c] = kfold_cv(Xu, Y[:, u], settings.cv_folds, cfg, settings.seed,
                                   settings.standardize(cfg), settings).mean
    return table


def grid_search(
    X_train, Y_train, X_test, Y_test, grid: Sequence[ModelConfig], settings: TrainSettings = TrainSettings()
) -> GridReport:
    """Pick each user's best config by k-fold CV, refit on all training rows, score on test."""
    if not grid:
        raise ValueError("empty grid")
    X_train = np.asarray(X_train, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    Y_train = np.asarray(Y_train)
    Y_test = np.asarray(Y_test)
    U = Y_train.shape[1]
    S = n_servers_of(X_train, U)
    grid = list(grid)
    if all(isinstance(g, SvmConfig) for g in grid):
        table = _svm_cv_table(X_train, Y_train, grid, settings, S)
    else:
        table = _generic_cv_table(X_train, Y_train, grid, settings, S)
    # argmax keeps the first maximum, i.e. grid order breaks ties
    winners = [grid[int(np.argmax(table[u]))] for u in range(U)]
    surrogate = fit_surrogate(X_train, Y_train, winners, settings)
    pred = surrogate.predict(X_test)
    rows = [
        UserChoice(u, winners[u], float(table[u].max()), float((pred[:, u] == Y_test[:, u]).mean()))
        for u in range(U)
    ]
    return GridReport(rows, table, grid, surrogate)


def fit_surrogate(X, Y, configs: Sequence[ModelConfig], settings: TrainSettings, kind: str = "") -> "Surrogate":
    """Train one classifier per user, sharing scalers and kernel matrices where possible."""
    from .bundle import Surrogate

    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y)
    U = Y.shape[1]
    S = n_servers_of(X, U)
    kinds = {type(c) for c in configs}
    standardize = {settings.standardize(c) for c in configs}
    if len(standardize) != 1:
        raise ValueError("per-user configs must agree on feature scaling")
    std = standardize.pop()
    scope = settings.feature_scope
    scalers = []
    models = [None] * U
    if scope == FULL:
        sc = Scaler(standardize=std).fit(X)
        scalers = [sc]
        Xs = sc.transform(X)
        kcache: Dict[KernelSpec, np.ndarray] = {}
        for u, cfg in enumerate(configs):
            if isinstance(cfg, SvmConfig):
                spec = cfg.kernel.effective()
                if spec not in kcache:
                    kcache[spec] = gram(spec, Xs, Xs)
                models[u] = cfg.estimator(settings).fit_gram(kcache[spec], Y[:, u], Xs)
            else:
                models[u] = cfg.estimator(settings).fit(Xs, Y[:, u])
    else:
        for u, cfg in enumerate(configs):
            Xu = user_features(X, u, S)
            sc = Scaler(standardize=std).fit(Xu)
            scalers.append(sc)
            models[u] = cfg.estimator(settings).fit(sc.transform(Xu), Y[:, u])
    if not kind:
        kind = "svm" if kinds == {SvmConfig} else "mlp" if kinds == {MlpConfig} else "mixed"
    return Surrogate(kind=kind, n_users=U, n_servers=S, feature_scope=scope, scalers=scalers,
                     models=models, configs=list(configs))


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalReport:
    per_user: np.ndarray

    @property
    def min(self) -> float:
        return float(self.per_user.min())

    @property
    def mean(self) -> float:
        # clipped so rounding never puts the mean outside [min, max]
        return float(np.clip(self.per_user.mean(), self.min, self.max))

    @property
    def max(self) -> float:
        return float(self.per_user.max())


def accuracy_table(pred: np.ndarray, Y: np.ndarray) -> EvalReport:
    pred = np.asarray(pred)
    Y = np.asarray(Y)
    if Y.shape[0] == 0:
        raise ValueError("empty test set")
    if pred.shape != Y.shape:
        raise DimensionError(f"predictions {pred.shape} do not match labels {Y.shape}")
    return EvalReport((pred == Y).mean(axis=0))


def evaluate_models(models, X_test, Y_test) -> EvalReport:
    """Per-user accuracy of a surrogate (or a list of per-user predictors on shared features)."""
    X_test = np.asarray(X_test, dtype=float)
    Y_test = np.asarray(Y_test)
    if Y_test.shape[0] == 0:
        raise ValueError("empty test set")
    if hasattr(models, "predict") and not isinstance(models, (list, tuple)):
        pred = models.predict(X_test)
    else:
        pred = np.stack([m.predict(X_test) for m in models], axis=1)
    return accuracy_table(pred, Y_test)


def majority_baseline(Y_train, Y_test) -> EvalReport:
    """Per-user accuracy of always predicting the most frequent training label."""
    Y_train = np.asarray(Y_train)
    pred = np.empty_like(np.asarray(Y_test))
    for u in range(Y_train.shape[1]):
        vals, counts = np.unique(Y_train[:, u], return_counts=True)
        pred[:, u] = vals[np.argmax(counts)]
    return accuracy_table(pred, Y_test)
