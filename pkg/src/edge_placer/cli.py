"""``edge-placer`` command-line interface.

Subcommands: gen, solve, train, eval, bench, predict. Every subcommand takes
``--config path`` (JSON, see :mod:`edge_placer.config`). Exit codes: 0 ok,
2 configuration error, 3 I/O or parse error, 4 dimension mismatch.
Set ``EDGE_PLACER_LOG`` (e.g. ``DEBUG``) for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import dataset as ds
from .config import Config, load_config
from .learn.bundle import Surrogate
from .learn.doe import FACTORS, run_doe
from .learn.selection import (
    MlpConfig,
    SvmConfig,
    accuracy_table,
    grid_search,
    majority_baseline,
)
from .model import DimensionError, check_feasible, evaluate, export_mps, repair_greedy
from .reports import (
    BenchRow,
    DoeRow,
    EffectRow,
    EvalRow,
    GridRow,
    ProjectionRow,
    SettingRow,
    SummaryRow,
    write_rows,
)
from .solver import SolveOptions, Status, solve_exact
from .world import ConfigError, Instance, SpatialMode, sample_instance

log = logging.getLogger("edge_placer")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIMENSION = 4

MODES = ("normal", "special", "mixed")


def _pct(v: float) -> float:
    return 100.0 * float(v)


def _dataset_path(cfg: Config, name: str) -> Path:
    return Path(cfg.paths.data_dir) / name


def _out_dir(cfg: Config, args) -> Path:
    out = Path(getattr(args, "out", None) or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path) -> ds.Dataset:
    rec, meta = ds.dataset_paths(path)
    if not rec.exists() or not meta.exists():
        raise FileNotFoundError(f"dataset {path} not found (need {rec.name} and {meta.name})")
    return ds.load_dataset(path)


def _split_data(data: ds.Dataset, cfg: Config):
    sp = ds.split(data, cfg.learn.split_ratio, cfg.learn.split_seed)
    X, Y = data.X, data.Y
    return sp, X[sp.train], Y[sp.train], X[sp.test], Y[sp.test]


def _dataset_info(data: ds.Dataset, cfg: Config) -> dict:
    m = data.meta
    return {
        "mode": m.mode.value,
        "master_seed": m.master_seed,
        "n_records": m.n_records,
        "split_ratio": cfg.learn.split_ratio,
        "split_seed": cfg.learn.split_seed,
    }


# -- gen ----------------------------------------------------------------------


def cmd_gen(cfg: Config, args) -> int:
    mode = SpatialMode.parse(args.mode or cfg.mode)
    n = args.n or cfg.n_records
    seed = cfg.master_seed if args.seed is None else args.seed
    name = args.name or mode.value
    reuse = []
    if mode is SpatialMode.MIXED:
        for pure in ("normal", "special"):
            p = _dataset_path(cfg, pure)
            if ds.dataset_paths(p)[1].exists():
                reuse.append(ds.load_dataset(p))
    data = ds.generate_dataset(
        mode,
        n,
        seed,
        cfg.label_solver.options(),
        n_users=cfg.n_users,
        n_servers=cfg.n_servers,
        n_scenarios=cfg.n_scenarios,
        grid=cfg.grid_config(),
        constants=cfg.model_constants(),
        energy_budget=cfg.constants.energy_budget,
        capacity=cfg.constants.capacity,
        request_range=tuple(cfg.request_range),
        cluster_center=None if cfg.cluster.center is None else tuple(cfg.cluster.center),
        cluster_side=cfg.cluster.side,
        workers=args.workers or cfg.workers,
        reuse=reuse,
    )
    base = _dataset_path(cfg, name)
    rec, meta = ds.save_dataset(data, base)
    ds.write_csv(data, base.with_name(name + ".csv"))
    ds.write_locations_csv(data, base.with_name(name + ".locations.csv"))
    Y = data.Y
    share0 = float((Y == 0).mean())
    print(f"{len(data)} records -> {rec}")
    print(f"labels: {share0:.1%} unassigned, max gap {data.meta.max_gap:.4g}, "
          f"{data.meta.n_optimal}/{len(data)} solved to optimality")
    return EXIT_OK


# -- solve --------------------------------------------------------------------


def _read_instance(path) -> Instance:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        return Instance.from_json(text)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        # ConfigError is a ValueError: a bad instance file is a parse failure, not a config one
        raise OSError(f"{path}: cannot parse instance ({exc})") from None


def _sample_from_config(cfg: Config, seed: int) -> Instance:
    mode = cfg.spatial_mode()
    if mode is SpatialMode.MIXED:
        mode = SpatialMode.NORMAL
    return sample_instance(
        mode,
        cfg.n_users,
        cfg.n_servers,
        cfg.n_scenarios,
        grid=cfg.grid_config(),
        constants=cfg.model_constants(),
        seed=seed,
        cluster_center=None if cfg.cluster.center is None else tuple(cfg.cluster.center),
        cluster_side=cfg.cluster.side,
        request_range=tuple(cfg.request_range),
        energy_budget=cfg.constants.energy_budget,
        capacity=cfg.constants.capacity,
    )


def cmd_solve(cfg: Config, args) -> int:
    if args.instance:
        inst = _read_instance(args.instance)
    else:
        inst = _sample_from_config(cfg, args.seed)
        if args.save_instance:
            Path(args.save_instance).write_text(inst.to_json() + "\n", encoding="utf-8")
    sec = cfg.solver
    opts = SolveOptions(
        time_limit=args.time_limit if args.time_limit is not None else sec.time_limit,
        gap_tolerance=args.gap if args.gap is not None else sec.gap_tolerance,
        node_limit=sec.node_limit,
    )
    if args.export_mps:
        Path(args.export_mps).write_text(export_mps(inst), encoding="utf-8")
    res = solve_exact(inst, opts)
    parts = evaluate(inst, res.x1, res.x2)
    print(f"status          {res.status.value}")
    print(f"objective       {res.objective:.6f}")
    print(f"  stage-1 QoS   {parts.stage1_qos:.6f}")
    print(f"  E[stage-2 QoS] {parts.expected_stage2_qos:.6f}")
    print(f"  E[migration]  {parts.expected_migration_cost:.6f}")
    print(f"best bound      {res.best_bound:.6f}")
    print(f"gap             {res.gap:.3e}")
    print(f"nodes           {res.nodes_explored}")
    print(f"wall time       {res.wall_time:.3f} s")
    print(f"stage-1 choices {' '.join(map(str, res.x1))}")
    if args.out:
        Path(args.out).write_text(res.to_json(timing=False) + "\n", encoding="utf-8")
    return EXIT_OK


# -- train --------------------------------------------------------------------


def _grid_rows(report) -> List[GridRow]:
    rows = []
    for r in report.rows:
        cfg = r.config
        row = GridRow(r.user + 1, _pct(r.test_accuracy), _pct(r.cv_accuracy), "svm" if isinstance(cfg, SvmConfig) else "mlp")
        if isinstance(cfg, SvmConfig):
            row.kernel = cfg.kernel.kind.value.upper()
            row.gamma = cfg.kernel.gamma
            row.C = cfg.C
        else:
            row.hidden_layer_sizes = "(" + ", ".join(map(str, cfg.hidden_layer_sizes)) + ")"
            row.alpha = cfg.alpha
        rows.append(row)
    return rows


def _train_grid(cfg: Config, args, model: str) -> int:
    path = args.dataset[0] if args.dataset else _dataset_path(cfg, cfg.mode)
    data = _load_dataset(path)
    sp, Xtr, Ytr, Xte, Yte = _split_data(data, cfg)
    grid = cfg.svm_grid() if model == "svm-grid" else cfg.mlp_grid()
    settings = cfg.train_settings()
    report = grid_search(Xtr, Ytr, Xte, Yte, grid, settings)
    sur = report.surrogate
    sur.kind = model
    sur.info.update(_dataset_info(data, cfg))
    out = _out_dir(cfg, args)
    mode = data.meta.mode.value
    write_rows(out / f"{model}-{mode}.csv", _grid_rows(report), GridRow)
    sur.save(out / f"{model}-{mode}.bundle.json")
    acc = report.test_accuracies
    print(f"{model} on {mode}: min {_pct(acc.min()):.1f}%  avg {_pct(acc.mean()):.1f}%")
    return EXIT_OK


def _train_doe(cfg: Config, args) -> int:
    paths = args.dataset or [str(_dataset_path(cfg, m)) for m in MODES]
    loaded = {}
    for p in paths:
        d = _load_dataset(p)
        loaded[d.meta.mode.value] = d
    missing = [m for m in MODES if m not in loaded]
    if missing:
        raise FileNotFoundError(f"svm-doe needs normal, special and mixed datasets; missing {missing}")
    data = {m: _split_data(loaded[m], cfg)[1:] for m in MODES}
    design = cfg.doe_design()
    settings = cfg.train_settings()
    rep = run_doe(data, design, settings)
    out = _out_dir(cfg, args)

    resp, avg = rep.responses, rep.averages
    rows = []
    for r, run in enumerate(rep.runs):
        row = DoeRow(run.id, run.kernel.value.upper(), run.gamma, run.C)
        for j, m in enumerate(rep.modes):
            setattr(row, f"min_{m}", _pct(resp[r, j]))
            setattr(row, f"avg_{m}", _pct(avg[r, j]))
        rows.append(row)
    write_rows(out / "doe-runs.csv", rows, DoeRow)

    eff_rows = []
    for e in rep.main_effects:
        level = e.level.value.upper() if hasattr(e.level, "value") else repr(float(e.level))
        row = EffectRow(e.factor, level, pooled=_pct(e.pooled), selected=rep.selected.level(e.factor) == e.level)
        for m, v in e.by_mode.items():
            setattr(row, m, _pct(v))
        eff_rows.append(row)
    write_rows(out / "doe-effects.csv", eff_rows, EffectRow)

    sel = rep.selected
    r_sel = rep.runs.index(sel)
    kernel = sel.kernel.value.upper()
    set_rows = []
    U = rep.per_user.shape[2]
    for u in range(U):
        row = SettingRow(str(u + 1), kernel, sel.gamma, sel.C)
        for j, m in enumerate(rep.modes):
            setattr(row, m, _pct(rep.per_user[r_sel, j, u]))
        set_rows.append(row)
    for label, fn in (("min", np.min), ("avg", np.mean)):
        row = SettingRow(label, kernel, sel.gamma, sel.C)
        for j, m in enumerate(rep.modes):
            setattr(row, m, _pct(fn(rep.per_user[r_sel, j])))
        set_rows.append(row)
    write_rows(out / "doe-setting.csv", set_rows, SettingRow)

    summary = {
        "selected": {"run": sel.id, "kernel": sel.kernel.value, "gamma": sel.gamma, "C": sel.C,
                     "degree": design.degree, "coef0": design.coef0},
        "per_mode_best": {m: {"run": r.id, "kernel": r.kernel.value, "gamma": r.gamma, "C": r.C}
                          for m, r in rep.per_mode_best.items()},
        "influence_ranking": {m: rep.ranking(m) for m in rep.modes},
        "pooled_ranking": rep.ranking(),
    }
    (out / "doe-selected.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    for m, sur in rep.surrogates.items():
        sur.info.update(_dataset_info(loaded[m], cfg))
        sur.save(out / f"svm-doe-{m}.bundle.json")
    print(f"selected run {sel.id}: kernel {kernel}, gamma {sel.gamma:g}, C {sel.C:g}")
    for j, m in enumerate(rep.modes):
        print(f"  {m:8s} min {_pct(resp[r_sel, j]):.1f}%  avg {_pct(avg[r_sel, j]):.1f}%  "
              f"ranking {' > '.join(rep.ranking(m))}")
    return EXIT_OK


def cmd_train(cfg: Config, args) -> int:
    if args.model == "svm-doe":
        return _train_doe(cfg, args)
    return _train_grid(cfg, args, args.model)


# -- eval ---------------------------------------------------------------------


def cmd_eval(cfg: Config, args) -> int:
    eval_rows, summary = [], []
    for bpath in args.bundle:
        sur = Surrogate.load(bpath)
        for dpath in args.dataset:
            data = _load_dataset(dpath)
            m = data.meta
            if (m.n_users, m.n_servers) != (sur.n_users, sur.n_servers):
                raise DimensionError(
                    f"bundle {bpath} is {sur.n_users}x{sur.n_servers}, dataset {dpath} is {m.n_users}x{m.n_servers}"
                )
            ratio = sur.info.get("split_ratio", cfg.learn.split_ratio)
            seed = sur.info.get("split_seed", cfg.learn.split_seed)
            sp = ds.split(data, ratio, seed)
            X, Y = data.X, data.Y
            subsets = {"test": sp.test, "train": sp.train, "all": np.arange(len(data))}
            rows = subsets[args.subset]
            rep = accuracy_table(sur.predict(X[rows]), Y[rows])
            base = majority_baseline(Y[sp.train], Y[rows])
            model = sur.kind
            for u, a in enumerate(rep.per_user):
                eval_rows.append(EvalRow(model, m.mode.value, args.subset, str(u + 1), _pct(a)))
            eval_rows.append(EvalRow(model, m.mode.value, args.subset, "min", _pct(rep.min)))
            eval_rows.append(EvalRow(model, m.mode.value, args.subset, "avg", _pct(rep.mean)))
            summary.append(SummaryRow(model, m.mode.value, args.subset, _pct(rep.min), _pct(rep.mean), _pct(base.mean)))
            print(f"{model:10s} {m.mode.value:8s} {args.subset}: min {_pct(rep.min):.1f}%  "
                  f"avg {_pct(rep.mean):.1f}%  (majority baseline {_pct(base.mean):.1f}%)")
            if args.subset == "test":
                train_acc = accuracy_table(sur.predict(X[sp.train]), Y[sp.train]).mean
                if train_acc < rep.mean:
                    log.warning("training accuracy %.3f below test accuracy %.3f for %s on %s",
                                train_acc, rep.mean, bpath, dpath)
    out = _out_dir(cfg, args)
    write_rows(out / f"{args.name}.csv", eval_rows, EvalRow)
    write_rows(out / f"{args.name}-summary.csv", summary, SummaryRow)
    return EXIT_OK


# -- bench --------------------------------------------------------------------


def _bench_instances(cfg: Config, shape, count: int, seed: int) -> List[Instance]:
    U, S, K = shape
    mode = cfg.spatial_mode()
    if mode is SpatialMode.MIXED:
        mode = SpatialMode.NORMAL
    return [
        sample_instance(mode, U, S, K, grid=cfg.grid_config(), constants=cfg.model_constants(),
                        seed=seed + i, request_range=tuple(cfg.request_range),
                        energy_budget=cfg.constants.energy_budget, capacity=cfg.constants.capacity)
        for i in range(count)
    ]


def inference_latency(sur: Surrogate, instances: List[Instance], repetitions: int) -> float:
    """Mean seconds per instance for featurize + scale + classify."""
    sur.predict_instance(instances[0])  # warm caches
    start = time.perf_counter()
    for r in range(repetitions):
        sur.predict_instance(instances[r % len(instances)])
    return (time.perf_counter() - start) / repetitions


def cmd_bench(cfg: Config, args) -> int:
    b = cfg.bench
    sur = Surrogate.load(args.bundle) if args.bundle else None
    if args.bundle is None and not args.no_bundle:
        raise FileNotFoundError("bench needs --bundle (or --no-bundle for solver timings only)")
    ladder = [tuple(r) for r in b.ladder]
    time_limit = args.time_limit or b.time_limit
    rows, projection = [], []
    for shape in ladder:
        insts = _bench_instances(cfg, shape, b.instances, b.seed)
        times, hit = [], False
        for inst in insts:
            res = solve_exact(inst, SolveOptions(time_limit=time_limit))
            hit |= res.status is not Status.OPTIMAL
            times.append(min(res.wall_time, time_limit) if res.status is not Status.OPTIMAL else res.wall_time)
        solver_t = float(np.mean(times))
        row = BenchRow(*shape, len(insts), ">limit" if hit else "optimal", solver_t)
        if sur is not None and (sur.n_users, sur.n_servers) == shape[:2]:
            row.inference_seconds = inference_latency(sur, insts, b.repetitions)
            row.speedup = solver_t / row.inference_seconds
            for cad in b.cadences:
                runs = int(b.shift_hours * 60 // cad)
                projection.append(ProjectionRow(cad, runs, runs * solver_t, runs * row.inference_seconds))
        rows.append(row)
        extra = "" if row.inference_seconds is None else \
            f"  inference {row.inference_seconds * 1e3:.3f} ms  speedup {row.speedup:.0f}x"
        print(f"{shape[0]}x{shape[1]}x{shape[2]}: solver {row.solver_status} {solver_t:.3f} s{extra}")
    out = _out_dir(cfg, args)
    write_rows(out / "bench.csv", rows, BenchRow)
    if projection:
        write_rows(out / "bench-projection.csv", projection, ProjectionRow)
    return EXIT_OK


# -- predict ------------------------------------------------------------------


def cmd_predict(cfg: Config, args) -> int:
    sur = Surrogate.load(args.bundle)
    inst = _read_instance(args.instance)
    choices = sur.predict_instance(inst)
    report = check_feasible(inst, choices)
    doc = {
        "choices": [int(c) for c in choices],
        "feasible": report.feasible,
        "violations": [
            {"constraint": v.constraint, "server": v.server, "excess_energy": v.magnitude} for v in report
        ],
    }
    if args.repair == "greedy":
        fixed = repair_greedy(inst, choices)
        doc["repaired_choices"] = [int(c) for c in fixed]
        doc["repaired_feasible"] = check_feasible(inst, fixed).feasible
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    if not report.feasible:
        log.warning("predicted assignment violates %d energy budget(s)", len(report))
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")

    p = argparse.ArgumentParser(
        prog="edge-placer",
        description="Two-stage edge placement: exact solver and learned surrogates.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate and solve a dataset")
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--n", type=int, help="record count")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--name", help="dataset file stem (default: the mode)")
    g.add_argument("--workers", type=int)

    s = sub.add_parser("solve", parents=[common], help="solve one instance exactly")
    s.add_argument("instance", nargs="?", help="instance JSON (default: sample one from the config)")
    s.add_argument("--seed", type=int, default=0, help="sampling seed when no instance file is given")
    s.add_argument("--save-instance", help="write the sampled instance here")
    s.add_argument("--time-limit", type=float)
    s.add_argument("--gap", type=float, help="relative gap tolerance")
    s.add_argument("--out", help="write the result JSON here")
    s.add_argument("--export-mps", help="write the deterministic equivalent as MPS")

    t = sub.add_parser("train", parents=[common], help="train surrogate models")
    t.add_argument("--model", required=True, choices=("svm-grid", "mlp-grid", "svm-doe"))
    t.add_argument("--dataset", nargs="+", help="dataset path(s); svm-doe needs all three modes")
    t.add_argument("--out", help="output directory")

    e = sub.add_parser("eval", parents=[common], help="score bundles on datasets")
    e.add_argument("--bundle", nargs="+", required=True)
    e.add_argument("--dataset", nargs="+", required=True)
    e.add_argument("--subset", choices=("test", "train", "all"), default="test")
    e.add_argument("--name", default="eval", help="report file stem")
    e.add_argument("--out", help="output directory")

    b = sub.add_parser("bench", parents=[common], help="time the solver against the surrogate")
    b.add_argument("--bundle")
    b.add_argument("--no-bundle", action="store_true")
    b.add_argument("--time-limit", type=float)
    b.add_argument("--out", help="output directory")

    q = sub.add_parser("predict", parents=[common], help="predict stage-1 choices for an instance")
    q.add_argument("--bundle", required=True)
    q.add_argument("instance")
    q.add_argument("--repair", choices=("none", "greedy"), default="none")
    q.add_argument("--out")
    return p


COMMANDS = {
    "gen": cmd_gen,
    "solve": cmd_solve,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "predict": cmd_predict,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("EDGE_PLACER_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
