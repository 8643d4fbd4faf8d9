"""JSON configuration for the command-line tools.

Parsing is strict: unknown keys, wrong types and non-positive constants are
rejected with :class:`~edge_placer.world.ConfigError`. Every key is optional;
defaults give the standard setting (20x20 grid, 20 users, 5 servers,
25 scenarios, sigma = E = 396, gamma = 100, Q = 24, rho = 10).
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

from .learn.doe import DoeDesign
from .learn.kernels import KernelSpec
from .learn.selection import MlpConfig, SvmConfig, TrainSettings
from .solver import SolveOptions
from .world import ConfigError, GridConfig, ModelConstants, SpatialMode


# deterministic label budget; worst observed reference-size instance takes about 10 s
LABEL_NODE_LIMIT = 50_000_000


@dataclass
class GridSection:
    width: int = 20
    height: int = 20


@dataclass
class ConstantsSection:
    sigma: float = 396.0
    gamma: float = 100.0
    rho: Union[float, List[List[float]]] = 10.0
    energy_budget: float = 396.0
    capacity: float = 24.0
    scenario_prob: Optional[List[float]] = None


@dataclass
class ClusterSection:
    center: Optional[List[int]] = None
    side: int = 6


@dataclass
class SolverSection:
    time_limit: Optional[float] = None
    gap_tolerance: float = 0.0
    node_limit: Optional[int] = None

    def options(self) -> SolveOptions:
        return SolveOptions(self.time_limit, self.gap_tolerance, self.node_limit)


@dataclass
class SvmGridSection:
    kernels: List[str] = field(default_factory=lambda: ["linear", "poly", "rbf", "sigmoid"])
    gammas: List[float] = field(default_factory=lambda: [0.0001, 0.1])
    Cs: List[float] = field(default_factory=lambda: [1.0, 10.0, 100.0, 400.0, 800.0, 1000.0])


@dataclass
class MlpGridSection:
    hidden_layer_sizes: List[List[int]] = field(
        default_factory=lambda: [[256, 128, 64, 32, 16, 8, 6], [128, 64, 32, 16, 8, 4]]
    )
    alphas: List[float] = field(default_factory=lambda: [0.001, 0.00001])


@dataclass
class DoeSection:
    kernels: List[str] = field(default_factory=lambda: ["rbf", "poly", "sigmoid", "linear"])
    gammas: List[float] = field(default_factory=lambda: [0.0001, 0.1])
    Cs: List[float] = field(default_factory=lambda: [1.0, 10.0])


@dataclass
class LearnSection:
    split_ratio: float = 0.8
    split_seed: int = 0
    feature_scope: str = "full"
    standardize_svm: bool = False
    standardize_mlp: bool = True
    poly_degree: int = 3
    coef0: float = 0.0
    cv_folds: int = 5
    seed: int = 0
    svm_tol: float = 1e-3
    svm_max_passes: int = 1000
    mlp_learning_rate: float = 0.01
    mlp_momentum: float = 0.9
    mlp_batch_size: int = 64
    mlp_max_epochs: int = 100
    mlp_patience: int = 10
    mlp_validation_fraction: float = 0.1
    svm_grid: SvmGridSection = field(default_factory=SvmGridSection)
    mlp_grid: MlpGridSection = field(default_factory=MlpGridSection)
    doe: DoeSection = field(default_factory=DoeSection)


@dataclass
class BenchSection:
    ladder: List[List[int]] = field(default_factory=lambda: [[10, 3, 15], [20, 5, 25], [30, 7, 35]])
    instances: int = 5
    seed: int = 7
    time_limit: float = 300.0
    repetitions: int = 1000
    cadences: List[float] = field(default_factory=lambda: [5.0, 8.0, 10.0, 15.0])
    shift_hours: float = 8.0


@dataclass
class PathsSection:
    data_dir: str = "data"
    out_dir: str = "out"


@dataclass
class Config:
    grid: GridSection = field(default_factory=GridSection)
    n_users: int = 20
    n_servers: int = 5
    n_scenarios: int = 25
    request_range: List[int] = field(default_factory=lambda: [1, 10])
    constants: ConstantsSection = field(default_factory=ConstantsSection)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    mode: str = "normal"
    n_records: int = 1800
    master_seed: int = 1
    workers: int = 1
    solver: SolverSection = field(default_factory=SolverSection)
    label_solver: SolverSection = field(
        default_factory=lambda: SolverSection(time_limit=None, gap_tolerance=0.01, node_limit=LABEL_NODE_LIMIT)
    )
    learn: LearnSection = field(default_factory=LearnSection)
    bench: BenchSection = field(default_factory=BenchSection)
    paths: PathsSection = field(default_factory=PathsSection)

    # -- derived objects -----------------------------------------------------

    def grid_config(self) -> GridConfig:
        return GridConfig(self.grid.width, self.grid.height)

    def model_constants(self) -> ModelConstants:
        c = self.constants
        rho = c.rho if isinstance(c.rho, (int, float)) else tuple(tuple(r) for r in c.rho)
        prob = None if c.scenario_prob is None else tuple(c.scenario_prob)
        return ModelConstants(sigma=c.sigma, gamma=c.gamma, rho=rho, scenario_prob=prob)

    def spatial_mode(self) -> SpatialMode:
        return SpatialMode.parse(self.mode)

    def train_settings(self) -> TrainSettings:
        l = self.learn
        return TrainSettings(
            feature_scope=l.feature_scope,
            standardize_svm=l.standardize_svm,
            standardize_mlp=l.standardize_mlp,
            svm_tol=l.svm_tol,
            svm_max_passes=l.svm_max_passes,
            mlp_learning_rate=l.mlp_learning_rate,
            mlp_momentum=l.mlp_momentum,
            mlp_batch_size=l.mlp_batch_size,
            mlp_max_epochs=l.mlp_max_epochs,
            mlp_patience=l.mlp_patience,
            mlp_validation_fraction=l.mlp_validation_fraction,
            cv_folds=l.cv_folds,
            seed=l.seed,
        )

    def svm_grid(self) -> List[SvmConfig]:
        g = self.learn.svm_grid
        return [
            SvmConfig(KernelSpec(k, gm, self.learn.poly_degree, self.learn.coef0), float(c))
            for k in g.kernels
            for gm in g.gammas
            for c in g.Cs
        ]

    def mlp_grid(self) -> List[MlpConfig]:
        g = self.learn.mlp_grid
        return [MlpConfig(tuple(h), float(a)) for h in g.hidden_layer_sizes for a in g.alphas]

    def doe_design(self) -> DoeDesign:
        d = self.learn.doe
        return DoeDesign(tuple(d.kernels), tuple(float(g) for g in d.gammas), tuple(float(c) for c in d.Cs),
                         self.learn.poly_degree, self.learn.coef0)

    def validate(self) -> "Config":
        c = self.constants
        for name in ("sigma", "gamma", "energy_budget", "capacity"):
            if not getattr(c, name) > 0:
                raise ConfigError(f"constants.{name} must be positive")
        for name in ("n_users", "n_servers", "n_scenarios", "n_records", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if len(self.request_range) != 2 or not 1 <= self.request_range[0] <= self.request_range[1]:
            raise ConfigError("request_range must be [lo, hi] with 1 <= lo <= hi")
        if not 0 < self.learn.split_ratio < 1:
            raise ConfigError("learn.split_ratio must lie strictly between 0 and 1")
        if self.learn.feature_scope not in ("full", "user"):
            raise ConfigError("learn.feature_scope must be 'full' or 'user'")
        if self.cluster.center is not None and len(self.cluster.center) != 2:
            raise ConfigError("cluster.center must be [x, y]")
        try:
            self.grid_config()
            self.model_constants().rho_matrix(self.n_servers)
            self.model_constants().probabilities(self.n_scenarios)
            self.spatial_mode()
            self.solver.options()
            self.label_solver.options()
            self.svm_grid()
            self.doe_design().runs()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- strict parsing -----------------------------------------------------------


def _check(value, tp, where):
    origin = typing.get_origin(tp)
    if origin is Union:
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _check(value, a, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[-1] if errors else f"{where}: invalid value")
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        (inner,) = typing.get_args(tp)
        return [_check(v, inner, f"{where}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    raise ConfigError(f"{where}: unsupported type")


def _build(cls, data, where="config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _check(v, hints[k], f"{where}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def parse_config(data: dict) -> Config:
    return _build(Config, data).validate()


def load_config(path: Optional[str]) -> Config:
    if path is None:
        return Config().validate()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data)
