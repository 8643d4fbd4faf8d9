"""Full-factorial design over SVM hyperparameters with main-effects analysis.

Each run fixes (kernel, gamma, C) for all users. Its response in a spatial
mode is the minimum test accuracy over the per-user classifiers, so the
analysis favours settings that no user does badly under.

One shared setting is selected for all modes: for every factor, the level
with the highest main effect averaged over modes, ties going to the level
listed first in the design. Per-mode best runs are reported alongside so the
choice can be audited.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Tuple

import numpy as np

from ..dataset import Scaler, user_features
from ..model import DimensionError
from .kernels import KernelKind, KernelSpec, gram
from .selection import FULL, SvmConfig, TrainSettings, fit_surrogate, n_servers_of

log = logging.getLogger(__name__)

FACTORS = ("kernel", "gamma", "C")


@dataclass(frozen=True)
class DoeRun:
    id: int
    kernel: KernelKind
    gamma: float
    C: float

    def level(self, factor: str):
        return {"kernel": self.kernel, "gamma": self.gamma, "C": self.C}[factor]

    def config(self, degree: int = 3, coef0: float = 0.0) -> SvmConfig:
        return SvmConfig(KernelSpec(self.kernel, self.gamma, degree, coef0), self.C)


@dataclass(frozen=True)
class DoeDesign:
    kernels: Tuple[str, ...] = ("rbf", "poly", "sigmoid", "linear")
    gammas: Tuple[float, ...] = (0.0001, 0.1)
    Cs: Tuple[float, ...] = (1.0, 10.0)
    degree: int = 3
    coef0: float = 0.0

    def levels(self, factor: str) -> tuple:
        if factor == "kernel":
            return tuple(KernelKind(k) for k in self.kernels)
        return tuple(float(v) for v in (self.gammas if factor == "gamma" else self.Cs))

    def runs(self) -> List[DoeRun]:
        out = []
        for k in self.levels("kernel"):
            for g in self.levels("gamma"):
                for c in self.levels("C"):
                    out.append(DoeRun(len(out) + 1, k, g, c))
        return out


@dataclass
class MainEffect:
    factor: str
    level: object
    by_mode: Dict[str, float]
    pooled: float


@dataclass
class DoeReport:
    design: DoeDesign
    runs: List[DoeRun]
    modes: List[str]
    per_user: np.ndarray  # runs x modes x users test accuracy
    main_effects: List[MainEffect]
    selected: DoeRun
    per_mode_best: Dict[str, DoeRun]
    surrogates: Dict[str, object] = field(default_factory=dict)

    @property
    def responses(self) -> np.ndarray:
        """runs x modes minimum accuracy over users."""
        return self.per_user.min(axis=2)

    @property
    def averages(self) -> np.ndarray:
        return self.per_user.mean(axis=2)

    def influence(self, mode: str = None) -> Dict[str, float]:
        """Range of main effects per factor (largest = most influential)."""
        out = {}
        for f in FACTORS:
            vals = [e.pooled if mode is None else e.by_mode[mode] for e in self.main_effects if e.factor == f]
            out[f] = max(vals) - min(vals)
        return out

    def ranking(self, mode: str = None) -> List[str]:
        inf = self.influence(mode)
        return sorted(FACTORS, key=lambda f: -inf[f])


def main_effects(design: DoeDesign, runs: List[DoeRun], responses: np.ndarray, modes: List[str]) -> List[MainEffect]:
    out = []
    for f in FACTORS:
        for level in design.levels(f):
            rows = [r for r, run in enumerate(runs) if run.level(f) == level]
            by_mode = {m: float(responses[rows, j].mean()) for j, m in enumerate(modes)}
            out.append(MainEffect(f, level, by_mode, float(np.mean(list(by_mode.values())))))
    return out


def select_setting(design: DoeDesign, runs: List[DoeRun], effects: List[MainEffect]) -> DoeRun:
    chosen = {}
    for f in FACTORS:
        best = None
        for e in effects:
            if e.factor == f and (best is None or e.pooled > best.pooled):
                best = e
        chosen[f] = best.level
    for run in runs:
        if all(run.level(f) == chosen[f] for f in FACTORS):
            return run
    raise AssertionError("full factorial design lacks the selected combination")


def _per_user_accuracy(Xtr, Ytr, Xte, Yte, runs, design, settings):
    U = Ytr.shape[1]
    S = n_servers_of(Xtr, U)
    acc = np.zeros((len(runs), U))
    views = [None] if settings.feature_scope == FULL else list(range(U))
    for v in views:
        A0 = Xtr if v is None else user_features(Xtr, v, S)
        B0 = Xte if v is None else user_features(Xte, v, S)
        sc = Scaler(standardize=settings.standardize_svm).fit(A0)
        A, B = sc.transform(A0), sc.transform(B0)
        users = range(U) if v is None else [v]
        by_spec: Dict[KernelSpec, List[int]] = {}
        for r, run in enumerate(runs):
            by_spec.setdefault(run.config(design.degree, design.coef0).kernel.effective(), []).append(r)
        for spec, rows in by_spec.items():
            K = gram(spec, A, A)
            Kt = gram(spec, B, A)
            by_c: Dict[float, np.ndarray] = {}
            for r in rows:
                cfg = runs[r].config(design.degree, design.coef0)
                if cfg.C not in by_c:
                    res = np.zeros(U)
                    for u in users:
                        m = cfg.estimator(settings).fit_gram(K, Ytr[:, u], A)
                        res[u] = (m.predict_from_kernel(Kt[:, m.support_]) == Yte[:, u]).mean()
                    by_c[cfg.C] = res
                for u in users:
                    acc[r, u] = by_c[cfg.C][u]
            log.info("doe kernel %s done", spec.kind.value)
    return acc


def run_doe(
    data: Mapping[str, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    design: DoeDesign = DoeDesign(),
    settings: TrainSettings = TrainSettings(),
    fit_selected: bool = True,
) -> DoeReport:
    """``data`` maps a mode name to ``(X_train, Y_train, X_test, Y_test)``."""
    modes = list(data)
    shapes = {(d[0].shape[1], d[1].shape[1]) for d in data.values()}
    if len(shapes) != 1:
        raise DimensionError(f"datasets disagree on dimensions: {sorted(shapes)}")
    runs = design.runs()
    per_user = np.stack(
        [_per_user_accuracy(*map(np.asarray, data[m]), runs, design, settings) for m in modes], axis=1
    )
    responses = per_user.min(axis=2)
    effects = main_effects(design, runs, responses, modes)
    selected = select_setting(design, runs, effects)
    best = {m: runs[int(np.argmax(responses[:, j]))] for j, m in enumerate(modes)}
    report = DoeReport(design, runs, modes, per_user, effects, selected, best)
    if fit_selected:
        cfg = selected.config(design.degree, design.coef0)
        for m in modes:
            Xtr, Ytr = data[m][0], data[m][1]
            sur = fit_surrogate(Xtr, Ytr, [cfg] * Ytr.shape[1], settings, kind="svm-doe")
            sur.info.update({"mode": m, "doe_run": selected.id})
            report.surrogates[m] = sur
    return report
