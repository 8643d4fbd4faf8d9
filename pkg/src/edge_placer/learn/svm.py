"""Soft-margin SVM trained by sequential minimal optimization.

The dual ``min 1/2 a'Qa - e'a  s.t.  0 <= a <= C, y'a = 0`` with
``Q_ij = y_i y_j K(x_i, x_j)`` is solved on a precomputed kernel matrix.
Each step picks the maximal-violating pair (second-order choice of the
partner) and solves the two-variable subproblem in closed form; training stops
when the largest KKT violation drops below ``tol`` or after ``max_passes * n``
steps. Multiclass problems use one-vs-one voting.
"""

from __future__ import annotations

import logging
import math
from itertools import combinations

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .kernels import KernelSpec, gram

log = logging.getLogger(__name__)

_TAU = 1e-12


@njit(cache=True)
def smo(K, idx, y, C, tol, max_iter):
    """Solve the dual restricted to rows ``idx`` of the kernel matrix ``K``.

    Returns ``(alpha, rho, iterations)``; the decision function is
    ``sum(alpha * y * k(x_i, x)) - rho``.
    """
    n = idx.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.empty(n)
    for t in range(n):
        QD[t] = K[idx[t], idx[t]]
    it = 0
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            else:
                if alpha[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
        if i < 0:
            break
        ki = idx[i]
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if y[t] > 0:
                if alpha[t] > 0:
                    diff = gmax + G[t]
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                else:
                    continue
            else:
                if alpha[t] < C:
                    diff = gmax - G[t]
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                else:
                    continue
            if diff > 0:
                quad = QD[i] + QD[t] - 2.0 * K[ki, idx[t]]
                if quad <= 0:
                    quad = _TAU
                obj = -(diff * diff) / quad
                if obj <= best:
                    best = obj
                    j = t
        if gmax + gmax2 < tol or j < 0:
            break
        kj = idx[j]
        kij = K[ki, kj]
        ai, aj = alpha[i], alpha[j]
        quad = QD[i] + QD[j] - 2.0 * kij
        if quad <= 0:
            quad = _TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] = ai + delta
            alpha[j] = aj + delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            alpha[i] = ai - delta
            alpha[j] = aj + delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = (alpha[i] - ai) * y[i]
        daj = (alpha[j] - aj) * y[j]
        for t in range(n):
            kt = idx[t]
            G[t] += y[t] * (K[ki, kt] * dai + K[kj, kt] * daj)
        it += 1

    # offset: average over free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    nfree = 0
    sfree = 0.0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    if nfree > 0:
        rho = sfree / nfree
    else:
        rho = (ub + lb) / 2.0
    return alpha, rho, it


def _kernel_from_params(est) -> KernelSpec:
    return KernelSpec(est.kernel, est.gamma, est.degree, est.coef0)


def _fit_pair(K, rows, y_pm, C, tol, max_passes):
    max_iter = max(1, int(max_passes)) * max(1, len(rows))
    alpha, rho, it = smo(K, rows.astype(np.int64), y_pm.astype(float), float(C), float(tol), max_iter)
    if it >= max_iter:
        log.debug("SMO stopped at its pass budget (%d steps)", it)
    sv = alpha > 0
    return rows[sv], (alpha * y_pm)[sv], -float(rho), it


class BinarySVC(ClassifierMixin, BaseEstimator):
    """Two-class SVM; ``classes_[1]`` is the positive side of the decision."""

    def __init__(self, C=1.0, kernel="rbf", gamma=0.1, degree=3, coef0=0.0, tol=1e-3, max_passes=1000):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.degree = degree
        self.coef0 = coef0
        self.tol = tol
        self.max_passes = max_passes

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary SVM needs exactly two classes, got {len(self.classes_)}")
        spec = _kernel_from_params(self)
        y_pm = np.where(y == self.classes_[1], 1.0, -1.0)
        K = gram(spec, X, X)
        rows, coef, b, it = _fit_pair(K, np.arange(len(y)), y_pm, self.C, self.tol, self.max_passes)
        self.support_ = rows
        self.support_vectors_ = X[rows]
        self.dual_coef_ = coef
        self.intercept_ = b
        self.n_iter_ = it
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X)
        K = gram(_kernel_from_params(self), X, self.support_vectors_)
        return K @ self.dual_coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, self.classes_[1], self.classes_[0])


def train_svm_binary(X, y, C=1.0, kernel: KernelSpec = KernelSpec(), tol=1e-3, max_passes=1000) -> BinarySVC:
    """Fit a binary SVM on labels in {-1, +1}."""
    y = np.asarray(y)
    if not np.isin(y, (-1, 1)).all():
        raise ValueError("labels must be -1 or +1")
    return BinarySVC(C, kernel.kind.value, kernel.gamma, kernel.degree, kernel.coef0, tol, max_passes).fit(X, y)


class OneVsOneSVC(ClassifierMixin, BaseEstimator):
    """Multiclass SVM: one binary machine per class pair, prediction by vote.

    For the pair ``(a, b)`` with ``a < b`` a positive decision votes ``a``.
    Vote ties go to the lowest class. Training data with a single class
    yields a constant predictor.
    """

    def __init__(self, C=1.0, kernel="rbf", gamma=0.1, degree=3, coef0=0.0, tol=1e-3, max_passes=1000):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.degree = degree
        self.coef0 = coef0
        self.tol = tol
        self.max_passes = max_passes

    @property
    def kernel_spec(self) -> KernelSpec:
        return _kernel_from_params(self)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        return self.fit_gram(gram(self.kernel_spec, X, X), y, X)

    def fit_gram(self, K, y, X):
        """Fit from a precomputed training kernel matrix ``K = k(X, X)``."""
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        yi = np.searchsorted(self.classes_, y)
        pairs, rows_per_pair, coefs, intercepts, iters = [], [], [], [], []
        for a, b in combinations(range(len(self.classes_)), 2):
            rows = np.flatnonzero((yi == a) | (yi == b))
            y_pm = np.where(yi[rows] == a, 1.0, -1.0)
            r, c, bias, it = _fit_pair(K, rows, y_pm, self.C, self.tol, self.max_passes)
            pairs.append((a, b))
            rows_per_pair.append(r)
            coefs.append(c)
            intercepts.append(bias)
            iters.append(it)
        support = np.unique(np.concatenate(rows_per_pair)) if pairs else np.empty(0, dtype=np.int64)
        self.support_ = support.astype(np.int64)
        self.support_vectors_ = np.asarray(X, dtype=float)[self.support_]
        self.pairs_ = pairs
        self.pair_support_ = [np.searchsorted(self.support_, r) for r in rows_per_pair]
        self.pair_coef_ = coefs
        self.intercept_ = np.asarray(intercepts, dtype=float)
        self.n_iter_ = iters
        return self

    def decision_from_kernel(self, Kt):
        """Pairwise decisions given ``Kt = k(X, support_vectors_)``."""
        out = np.empty((Kt.shape[0], len(self.pairs_)))
        for p in range(len(self.pairs_)):
            out[:, p] = Kt[:, self.pair_support_[p]] @ self.pair_coef_[p] + self.intercept_[p]
        return out

    def decision_function(self, X):
        check_is_fitted(self, "pairs_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.decision_from_kernel(gram(self.kernel_spec, X, self.support_vectors_))

    def votes_from_decision(self, dec):
        votes = np.zeros((dec.shape[0], len(self.classes_)), dtype=np.int64)
        rows = np.arange(dec.shape[0])
        for p, (a, b) in enumerate(self.pairs_):
            np.add.at(votes, (rows, np.where(dec[:, p] > 0, a, b)), 1)
        return votes

    def votes(self, X):
        return self.votes_from_decision(self.decision_function(X))

    def predict_from_kernel(self, Kt):
        if len(self.classes_) == 1:
            return np.full(Kt.shape[0], self.classes_[0])
        votes = self.votes_from_decision(self.decision_from_kernel(Kt))
        return self.classes_[np.argmax(votes, axis=1)]

    def predict(self, X):
        check_is_fitted(self, "pairs_")
        X = check_array(X)
        if len(self.classes_) == 1:
            return np.full(X.shape[0], self.classes_[0])
        return self.classes_[np.argmax(self.votes(X), axis=1)]

    # -- serialization -------------------------------------------------------

    def to_dict(self, include_vectors: bool = True) -> dict:
        check_is_fitted(self, "pairs_")
        d = {
            "kind": "svm-ovo",
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_features": self.n_features_in_,
            "pairs": [
                {
                    "a": a,
                    "b": b,
                    "support": self.pair_support_[p].tolist(),
                    "coef": self.pair_coef_[p].tolist(),
                    "intercept": float(self.intercept_[p]),
                }
                for p, (a, b) in enumerate(self.pairs_)
            ],
        }
        if include_vectors:
            d["support_vectors"] = self.support_vectors_.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, support_vectors=None) -> "OneVsOneSVC":
        m = cls(**d["params"])
        m.classes_ = np.asarray(d["classes"])
        m.n_features_in_ = int(d["n_features"])
        sv = d["support_vectors"] if support_vectors is None else support_vectors
        m.support_vectors_ = np.asarray(sv, dtype=float).reshape(-1, m.n_features_in_)
        m.support_ = np.arange(len(m.support_vectors_))
        m.pairs_ = [(int(p["a"]), int(p["b"])) for p in d["pairs"]]
        m.pair_support_ = [np.asarray(p["support"], dtype=np.int64) for p in d["pairs"]]
        m.pair_coef_ = [np.asarray(p["coef"], dtype=float) for p in d["pairs"]]
        m.intercept_ = np.asarray([p["intercept"] for p in d["pairs"]], dtype=float)
        m.n_iter_ = []
        return m


def predict_ovo(model: OneVsOneSVC, x):
    """Class of a single feature vector."""
    return model.predict(np.asarray(x, dtype=float).reshape(1, -1))[0]
