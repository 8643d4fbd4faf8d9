"""Supervised-learning records built from solved instances.

A record pairs the feature vector of one instance (every user's stage-1
distance to every server, followed by its request size) with the solver's
stage-1 choices, one class label per user. All records of a dataset share one
server layout drawn from the master seed, so class ``k`` always names the same
physical server.

On disk a dataset is ``<name>.jsonl`` (one record per line) next to
``<name>.meta.json``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .model import DimensionError, check_feasible
from .solver import SolveOptions, Status, solve_exact
from .world import (
    SCHEMA_VERSION,
    ConfigError,
    GridConfig,
    Instance,
    ModelConstants,
    Position,
    SpatialMode,
    make_rng,
    sample_instance,
    sample_server_layout,
)

log = logging.getLogger(__name__)

SCALE_EPS = 1e-12
_MODE_WORD = {SpatialMode.NORMAL: 1, SpatialMode.SPECIAL: 2}
_LAYOUT_WORD = 0


def feature_length(n_users: int, n_servers: int) -> int:
    return n_users * (n_servers + 1)


def featurize(instance: Instance, n_users: Optional[int] = None, n_servers: Optional[int] = None) -> np.ndarray:
    """``[d_0,0..d_0,S-1, R_0, d_1,0.., R_1, ...]`` at stage-1 positions.

    Only stage-1 data enters: scenarios never influence the vector.
    """
    if n_users is not None and instance.n_users != n_users:
        raise DimensionError(f"instance has {instance.n_users} users, expected {n_users}")
    if n_servers is not None and instance.n_servers != n_servers:
        raise DimensionError(f"instance has {instance.n_servers} servers, expected {n_servers}")
    block = np.concatenate(
        [instance.stage1_distance.astype(float), instance.requests[:, None].astype(float)], axis=1
    )
    return block.reshape(-1)


def user_features(X: np.ndarray, user: int, n_servers: int) -> np.ndarray:
    """Slice the per-user block (S distances + request) out of full feature rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = n_servers + 1
    if X.shape[1] % w or user >= X.shape[1] // w:
        raise DimensionError(f"feature width {X.shape[1]} has no block for user {user}")
    return X[:, user * w : (user + 1) * w]


# -- records and metadata -----------------------------------------------------


@dataclass
class Record:
    index: int
    mode: SpatialMode  # source mode; mixed datasets hold normal and special records
    instance_seed: int
    features: np.ndarray
    labels: np.ndarray
    objective: float
    gap: float
    status: str = Status.OPTIMAL.value
    users: Tuple[Tuple[int, int, int], ...] = ()  # (x, y, request) per user

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "mode": self.mode.value,
            "seed": self.instance_seed,
            "features": [_compact(v) for v in self.features],
            "labels": [int(v) for v in self.labels],
            "objective": self.objective,
            "gap": self.gap,
            "status": self.status,
            "users": [list(u) for u in self.users],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Record":
        return cls(
            index=int(d["index"]),
            mode=SpatialMode.parse(d["mode"]),
            instance_seed=int(d["seed"]),
            features=np.asarray(d["features"], dtype=float),
            labels=np.asarray(d["labels"], dtype=np.int64),
            objective=float(d["objective"]),
            gap=float(d["gap"]),
            status=str(d["status"]),
            users=tuple(tuple(int(v) for v in u) for u in d["users"]),
        )

    def __eq__(self, other):
        if not isinstance(other, Record):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _compact(v):
    v = float(v)
    return int(v) if v.is_integer() else v


@dataclass
class DatasetMeta:
    mode: SpatialMode
    n_records: int
    master_seed: int
    server_layout: Tuple[Position, ...]
    n_users: int = 20
    n_servers: int = 5
    n_scenarios: int = 25
    grid: GridConfig = field(default_factory=GridConfig)
    constants: ModelConstants = field(default_factory=ModelConstants)
    energy_budget: float = 396.0
    capacity: float = 24.0
    request_range: Tuple[int, int] = (1, 10)
    cluster_center: Optional[Tuple[int, int]] = None
    cluster_side: int = 6
    solver: SolveOptions = field(default_factory=SolveOptions)
    max_gap: float = 0.0
    n_optimal: int = 0

    @property
    def n_features(self) -> int:
        return feature_length(self.n_users, self.n_servers)

    @property
    def n_classes(self) -> int:
        return self.n_servers + 1

    def sampling_key(self) -> dict:
        """Everything an instance draw depends on, apart from mode and seed."""
        d = self.to_dict()
        for k in ("mode", "n_records", "max_gap", "n_optimal"):
            d.pop(k)
        return d

    def instance(self, record: Record) -> Instance:
        """Rebuild the instance a record was solved from."""
        return sample_instance(
            record.mode,
            self.n_users,
            self.n_servers,
            self.n_scenarios,
            grid=self.grid,
            constants=self.constants,
            seed=record.instance_seed,
            server_layout=self.server_layout,
            cluster_center=self.cluster_center,
            cluster_side=self.cluster_side,
            request_range=self.request_range,
            energy_budget=self.energy_budget,
            capacity=self.capacity,
        )

    def to_dict(self) -> dict:
        c = self.constants
        return {
            "version": SCHEMA_VERSION,
            "mode": self.mode.value,
            "n_records": self.n_records,
            "master_seed": self.master_seed,
            "server_layout": [[p.x, p.y] for p in self.server_layout],
            "n_users": self.n_users,
            "n_servers": self.n_servers,
            "n_scenarios": self.n_scenarios,
            "grid": {"width": self.grid.width, "height": self.grid.height},
            "constants": {
                "sigma": c.sigma,
                "gamma": c.gamma,
                "rho": c.rho if isinstance(c.rho, (int, float)) else [list(r) for r in c.rho],
                "scenario_prob": None if c.scenario_prob is None else list(c.scenario_prob),
            },
            "energy_budget": self.energy_budget,
            "capacity": self.capacity,
            "request_range": list(self.request_range),
            "cluster_center": None if self.cluster_center is None else list(self.cluster_center),
            "cluster_side": self.cluster_side,
            "solver": asdict(self.solver),
            "max_gap": self.max_gap,
            "n_optimal": self.n_optimal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMeta":
        if d.get("version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported dataset schema version {d.get('version')!r}")
        c = d["constants"]
        rho = c["rho"]
        if not isinstance(rho, (int, float)):
            rho = tuple(tuple(float(v) for v in row) for row in rho)
        prob = c.get("scenario_prob")
        return cls(
            mode=SpatialMode.parse(d["mode"]),
            n_records=int(d["n_records"]),
            master_seed=int(d["master_seed"]),
            server_layout=tuple(Position(int(x), int(y)) for x, y in d["server_layout"]),
            n_users=int(d["n_users"]),
            n_servers=int(d["n_servers"]),
            n_scenarios=int(d["n_scenarios"]),
            grid=GridConfig(**d["grid"]),
            constants=ModelConstants(
                sigma=c["sigma"],
                gamma=c["gamma"],
                rho=rho,
                scenario_prob=None if prob is None else tuple(prob),
            ),
            energy_budget=d["energy_budget"],
            capacity=d["capacity"],
            request_range=tuple(d["request_range"]),
            cluster_center=None if d["cluster_center"] is None else tuple(d["cluster_center"]),
            cluster_side=int(d["cluster_side"]),
            solver=SolveOptions(**d["solver"]),
            max_gap=float(d["max_gap"]),
            n_optimal=int(d["n_optimal"]),
        )


@dataclass
class Dataset:
    meta: DatasetMeta
    records: List[Record]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def X(self) -> np.ndarray:
        if not self.records:
            return np.empty((0, self.meta.n_features))
        return np.stack([r.features for r in self.records])

    @property
    def Y(self) -> np.ndarray:
        """n x U label matrix in the choice encoding (0 = unassigned)."""
        if not self.records:
            return np.empty((0, self.meta.n_users), dtype=np.int64)
        return np.stack([r.labels for r in self.records])

    def subset(self, rows: Sequence[int]) -> "Dataset":
        return Dataset(self.meta, [self.records[i] for i in rows])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.meta.to_dict() == other.meta.to_dict() and self.records == other.records


def record_seed(master_seed: int, mode: SpatialMode, index: int) -> int:
    ss = np.random.SeedSequence([master_seed, _MODE_WORD[mode], index])
    return int(ss.generate_state(1, np.uint64)[0])


def dataset_layout(master_seed: int, n_servers: int, grid: GridConfig) -> Tuple[Position, ...]:
    """Server layout shared by every dataset drawn from ``master_seed``."""
    return sample_server_layout(n_servers, grid, make_rng(master_seed, _LAYOUT_WORD))


def solve_record(meta: DatasetMeta, mode: SpatialMode, index: int) -> Record:
    seed = record_seed(meta.master_seed, mode, index)
    stub = Record(index, mode, seed, np.empty(0), np.empty(0), 0.0, 0.0)
    inst = meta.instance(stub)
    res = solve_exact(inst, meta.solver)
    return Record(
        index=index,
        mode=mode,
        instance_seed=seed,
        features=featurize(inst),
        labels=res.x1.copy(),
        objective=res.objective,
        gap=res.gap,
        status=res.status.value,
        users=tuple((u.pos.x, u.pos.y, u.request) for u in inst.users),
    )


def _solve_job(args):
    meta_dict, mode, index = args
    return solve_record(DatasetMeta.from_dict(meta_dict), SpatialMode(mode), index).to_dict()


def generate_dataset(
    mode,
    n: int,
    master_seed: int,
    solver: SolveOptions = SolveOptions(),
    *,
    n_users: int = 20,
    n_servers: int = 5,
    n_scenarios: int = 25,
    grid: GridConfig = GridConfig(),
    constants: ModelConstants = ModelConstants(),
    energy_budget: float = 396.0,
    capacity: float = 24.0,
    request_range: Tuple[int, int] = (1, 10),
    cluster_center: Optional[Tuple[int, int]] = None,
    cluster_side: int = 6,
    workers: int = 1,
    reuse: Iterable[Dataset] = (),
) -> Dataset:
    """Sample and solve ``n`` instances.

    Record ``i`` of mode ``m`` is drawn from a seed derived from
    ``(master_seed, m, i)``. A mixed dataset is the first ``n - n//2`` normal
    records followed by the first ``n//2`` special records, so records already
    solved in a compatible pure dataset can be passed via ``reuse``.
    """
    mode = SpatialMode.parse(mode)
    if n < 1:
        raise ConfigError("a dataset needs at least one record")
    meta = DatasetMeta(
        mode=mode,
        n_records=n,
        master_seed=master_seed,
        server_layout=dataset_layout(master_seed, n_servers, grid),
        n_users=n_users,
        n_servers=n_servers,
        n_scenarios=n_scenarios,
        grid=grid,
        constants=constants,
        energy_budget=energy_budget,
        capacity=capacity,
        request_range=tuple(request_range),
        cluster_center=None if cluster_center is None else tuple(cluster_center),
        cluster_side=cluster_side,
        solver=solver,
    )
    if mode is SpatialMode.MIXED:
        jobs = [(SpatialMode.NORMAL, i) for i in range(n - n // 2)]
        jobs += [(SpatialMode.SPECIAL, i) for i in range(n // 2)]
    else:
        jobs = [(mode, i) for i in range(n)]

    cache: Dict[Tuple[SpatialMode, int], Record] = {}
    key = meta.sampling_key()
    for ds in reuse:
        if ds.meta.sampling_key() == key:
            for r in ds.records:
                cache[(r.mode, r.index)] = r
    todo = [j for j in jobs if j not in cache]
    log.info("dataset %s: %d records, %d to solve", mode.value, n, len(todo))

    if todo:
        if workers > 1:
            payload = [(meta.to_dict(), m.value, i) for m, i in todo]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                done = [Record.from_dict(d) for d in pool.map(_solve_job, payload, chunksize=4)]
        else:
            done = []
            for step, (m, i) in enumerate(todo, 1):
                done.append(solve_record(meta, m, i))
                if step % 50 == 0:
                    log.info("solved %d/%d", step, len(todo))
        cache.update(((r.mode, r.index), r) for r in done)

    records = [cache[j] for j in jobs]
    meta.max_gap = max(r.gap for r in records)
    meta.n_optimal = sum(r.status == Status.OPTIMAL.value for r in records)
    return Dataset(meta, records)


def check_labels(dataset: Dataset) -> List[Tuple[int, list]]:
    """Re-check each record's labels against its rebuilt instance.

    Returns ``(row, violations)`` for every record whose stage-1 labels break
    an energy budget; an empty list means all labels are feasible.
    """
    bad = []
    for row, rec in enumerate(dataset.records):
        report = check_feasible(dataset.meta.instance(rec), rec.labels)
        if not report.feasible:
            bad.append((row, list(report)))
    return bad


# -- persistence --------------------------------------------------------------


def dataset_paths(path) -> Tuple[Path, Path]:
    """``(records, meta)`` file paths for a dataset name or either file path."""
    p = Path(path)
    name = p.name
    for suffix in (".meta.json", ".jsonl"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return p.with_name(name + ".jsonl"), p.with_name(name + ".meta.json")


def save_dataset(dataset: Dataset, path) -> Tuple[Path, Path]:
    rec_path, meta_path = dataset_paths(path)
    rec_path.parent.mkdir(parents=True, exist_ok=True)
    with open(rec_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in dataset.records:
            fh.write(json.dumps(r.to_dict(), separators=(",", ":")))
            fh.write("\n")
    with open(meta_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(dataset.meta.to_dict(), fh, indent=1)
        fh.write("\n")
    return rec_path, meta_path


def load_dataset(path) -> Dataset:
    rec_path, meta_path = dataset_paths(path)
    with open(meta_path, encoding="utf-8") as fh:
        meta = DatasetMeta.from_dict(json.load(fh))
    records = []
    with open(rec_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(Record.from_dict(json.loads(line)))
    for r in records:
        if r.features.shape != (meta.n_features,) or r.labels.shape != (meta.n_users,):
            raise DimensionError(f"record {r.index} does not match the dataset dimensions")
    return Dataset(meta, records)


def feature_names(n_users: int, n_servers: int) -> List[str]:
    names = []
    for i in range(n_users):
        names += [f"u{i}_d{j}" for j in range(n_servers)]
        names.append(f"u{i}_req")
    return names


def write_csv(dataset: Dataset, path) -> None:
    """Flat table: provenance columns, features, then one label column per user."""
    m = dataset.meta
    header = ["index", "mode", "seed"] + feature_names(m.n_users, m.n_servers)
    header += [f"y{i}" for i in range(m.n_users)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in dataset.records:
            w.writerow(
                [r.index, r.mode.value, r.instance_seed]
                + [_compact(v) for v in r.features]
                + [int(v) for v in r.labels]
            )


def write_locations_csv(dataset: Dataset, path) -> None:
    """User and server coordinates for external scatter plots.

    Server rows use ``record = -1``; user rows carry their request and the
    label (0 = unassigned, k = server k-1).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "mode", "kind", "id", "x", "y", "request", "label"])
        for j, p in enumerate(dataset.meta.server_layout):
            w.writerow([-1, dataset.meta.mode.value, "server", j, p.x, p.y, "", ""])
        for row, r in enumerate(dataset.records):
            for i, (x, y, req) in enumerate(r.users):
                w.writerow([row, r.mode.value, "user", i, x, y, req, int(r.labels[i])])


# -- splitting and scaling ----------------------------------------------------


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    ratio: float
    seed: int


def split(dataset, ratio: float = 0.8, seed: int = 0) -> Split:
    """Seeded shuffle; the first ``ceil(ratio * n)`` rows go to training."""
    n = dataset if isinstance(dataset, int) else len(dataset)
    if not 0 < ratio < 1:
        raise ValueError("split ratio must lie strictly between 0 and 1")
    n_train = math.ceil(ratio * n)
    if n_train == 0 or n_train == n:
        raise ValueError(f"ratio {ratio} leaves an empty side for {n} rows")
    perm = make_rng(seed).permutation(n)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:]), ratio, seed)


class Scaler(TransformerMixin, BaseEstimator):
    """Per-feature standardization fit on training rows only.

    With ``standardize=False`` the transform is the identity, which keeps
    raw distances and request sizes (useful with kernels tuned on raw scales).
    """

    def __init__(self, standardize: bool = True, epsilon: float = SCALE_EPS):
        self.standardize = standardize
        self.epsilon = epsilon

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[0] < 2:
            raise ValueError("scaler needs at least 2 training rows")
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            self.scale_ = np.maximum(X.std(axis=0), self.epsilon)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        # lighter than check_array: this sits on the per-instance inference path
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {X.shape}")
        if not np.isfinite(X).all():
            raise ValueError("input contains NaN or infinity")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def to_dict(self) -> dict:
        check_is_fitted(self, "mean_")
        return {
            "standardize": self.standardize,
            "epsilon": self.epsilon,
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        s = cls(standardize=d["standardize"], epsilon=d["epsilon"])
        s.mean_ = np.asarray(d["mean"], dtype=float)
        s.scale_ = np.asarray(d["scale"], dtype=float)
        s.n_features_in_ = len(s.mean_)
        return s


def fit_scaler(rows, standardize: bool = True) -> Scaler:
    return Scaler(standardize=standardize).fit(rows)


def apply_scaler(scaler: Scaler, rows) -> np.ndarray:
    return scaler.transform(rows)
