"""Trained surrogate: one classifier per user plus the feature scaler.

Bundles are stored as JSON. Support vectors of all SVM users are pooled and
deduplicated, so a bundle holds every training row at most once and inference
evaluates each kernel against the pool a single time per instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..dataset import Scaler, featurize, user_features
from ..model import DimensionError
from ..world import Instance
from .kernels import KernelSpec, gram
from .mlp import MlpClassifier
from .svm import OneVsOneSVC

BUNDLE_VERSION = 1


def config_to_dict(cfg) -> dict:
    from .selection import SvmConfig

    if isinstance(cfg, SvmConfig):
        return {"model": "svm", "kernel": cfg.kernel.to_dict(), "C": cfg.C}
    return {"model": "mlp", "hidden_layer_sizes": list(cfg.hidden_layer_sizes), "alpha": cfg.alpha}


def config_from_dict(d: dict):
    from .selection import MlpConfig, SvmConfig

    if d["model"] == "svm":
        return SvmConfig(KernelSpec.from_dict(d["kernel"]), float(d["C"]))
    return MlpConfig(tuple(d["hidden_layer_sizes"]), float(d["alpha"]))


@dataclass
class Surrogate:
    kind: str
    n_users: int
    n_servers: int
    feature_scope: str
    scalers: List[Scaler]
    models: list
    configs: list
    info: Dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.models) != self.n_users:
            raise DimensionError(f"{len(self.models)} models for {self.n_users} users")
        self._pool = None
        self._stack = None
        self._stack_users = None

    @property
    def n_features(self) -> int:
        return self.n_users * (self.n_servers + 1)

    def _pooled(self):
        """Unique support rows over all full-scope SVM users and per-user maps into them."""
        if self._pool is None:
            svms = [m for m in self.models if isinstance(m, OneVsOneSVC)]
            if self.feature_scope != "full" or not svms:
                self._pool = (None, {})
            else:
                stacked = np.concatenate([m.support_vectors_ for m in svms])
                pool, inverse = np.unique(stacked, axis=0, return_inverse=True)
                maps, start = {}, 0
                for u, m in enumerate(self.models):
                    if isinstance(m, OneVsOneSVC):
                        n = len(m.support_vectors_)
                        maps[u] = inverse.ravel()[start : start + n]
                        start += n
                self._pool = (pool, maps)
        return self._pool

    def _stacked_users(self) -> List[int]:
        """Pooled users whose votes can be counted jointly (two or more classes in 0..S)."""
        if self._stack_users is None:
            _, maps = self._pooled()
            width = self.n_servers + 1
            self._stack_users = [
                u for u in maps
                if len(self.models[u].classes_) > 1 and np.isin(self.models[u].classes_, np.arange(width)).all()
            ]
        return self._stack_users

    def _stacked(self):
        """Pairwise machines of the stacked users as dense matrices, one set per kernel.

        For each kernel: ``coef`` (pool x pairs), ``intercept`` (pairs), and per
        pair the vote slots ``user * (S + 1) + class`` for a positive and for a
        non-positive decision.
        """
        if self._stack is None:
            pool, maps = self._pooled()
            width = self.n_servers + 1
            groups: Dict[KernelSpec, List[int]] = {}
            for u in self._stacked_users():
                groups.setdefault(self.models[u].kernel_spec.effective(), []).append(u)
            stack = {}
            for spec, users in groups.items():
                cols, icpt, pos, neg = [], [], [], []
                for u in users:
                    m = self.models[u]
                    cls = np.asarray(m.classes_, dtype=np.int64)
                    for p, (a, b) in enumerate(m.pairs_):
                        col = np.zeros(len(pool))
                        np.add.at(col, maps[u][m.pair_support_[p]], m.pair_coef_[p])
                        cols.append(col)
                        icpt.append(m.intercept_[p])
                        pos.append(u * width + cls[a])
                        neg.append(u * width + cls[b])
                stack[spec] = (np.column_stack(cols), np.asarray(icpt),
                               np.asarray(pos, dtype=np.int64), np.asarray(neg, dtype=np.int64))
            self._stack = stack
        return self._stack

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {X.shape[1]}")
        n = X.shape[0]
        out = np.empty((n, self.n_users), dtype=np.int64)
        if self.feature_scope != "full":
            for u, m in enumerate(self.models):
                Xu = self.scalers[u].transform(user_features(X, u, self.n_servers))
                out[:, u] = m.predict(Xu)
            return out
        Xs = self.scalers[0].transform(X)
        pool, maps = self._pooled()
        stacked = self._stacked_users()
        if stacked:
            # one matrix product per kernel, then a joint vote count over those users
            width = self.n_servers + 1
            votes = np.zeros((n, self.n_users * width), dtype=np.int64)
            rows = np.arange(n)[:, None]
            for spec, (coef, icpt, pos, neg) in self._stacked().items():
                dec = gram(spec, Xs, pool) @ coef + icpt
                np.add.at(votes, (rows, np.where(dec > 0, pos, neg)), 1)
            # argmax keeps the first maximum, so vote ties go to the lowest class
            best = votes.reshape(n, self.n_users, width).argmax(axis=2)
            out[:, stacked] = best[:, stacked]
        for u in set(range(self.n_users)) - set(stacked):
            m = self.models[u]
            if u in maps:
                out[:, u] = m.predict_from_kernel(gram(m.kernel_spec.effective(), Xs, pool)[:, maps[u]])
            else:
                out[:, u] = m.predict(Xs)
        return out

    def predict_instance(self, instance: Instance) -> np.ndarray:
        x = featurize(instance, self.n_users, self.n_servers)
        return self.predict(x[None, :])[0]

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        pool, maps = self._pooled()
        models = []
        for u, m in enumerate(self.models):
            if u in maps:
                d = m.to_dict(include_vectors=False)
                d["pool_rows"] = maps[u].tolist()
            else:
                d = m.to_dict()
            models.append(d)
        return {
            "version": BUNDLE_VERSION,
            "kind": self.kind,
            "n_users": self.n_users,
            "n_servers": self.n_servers,
            "feature_scope": self.feature_scope,
            "scalers": [s.to_dict() for s in self.scalers],
            "configs": [config_to_dict(c) for c in self.configs],
            "info": self.info,
            "support_pool": None if pool is None else pool.tolist(),
            "models": models,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Surrogate":
        if d.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {d.get('version')!r}")
        pool = None if d["support_pool"] is None else np.asarray(d["support_pool"], dtype=float)
        models = []
        for md in d["models"]:
            if md["kind"] == "mlp":
                models.append(MlpClassifier.from_dict(md))
            elif "pool_rows" in md:
                rows = np.asarray(md["pool_rows"], dtype=np.int64)
                sv = pool[rows] if len(rows) else np.empty((0, md["n_features"]))
                models.append(OneVsOneSVC.from_dict(md, sv))
            else:
                models.append(OneVsOneSVC.from_dict(md))
        return cls(
            kind=d["kind"],
            n_users=int(d["n_users"]),
            n_servers=int(d["n_servers"]),
            feature_scope=d["feature_scope"],
            scalers=[Scaler.from_dict(s) for s in d["scalers"]],
            models=models,
            configs=[config_from_dict(c) for c in d["configs"]],
            info=d.get("info", {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path) -> "Surrogate":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
