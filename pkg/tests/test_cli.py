import json
import os
import subprocess
import sys

import numpy as np
import pytest

from edge_placer import reports
from edge_placer.cli import EXIT_CONFIG, EXIT_DIMENSION, EXIT_IO, EXIT_OK, main
from edge_placer.config import Config, load_config, parse_config
from edge_placer.dataset import Scaler, load_dataset
from edge_placer.learn import KernelSpec, OneVsOneSVC, Surrogate, SvmConfig
from edge_placer.model import check_feasible
from edge_placer.world import ConfigError, Instance

from conftest import make_instance

SMALL = {
    "grid": {"width": 10, "height": 10},
    "n_users": 4,
    "n_servers": 2,
    "n_scenarios": 3,
    "n_records": 30,
    "cluster": {"side": 4},
    "learn": {
        "cv_folds": 3,
        "svm_grid": {"kernels": ["linear", "rbf"], "gammas": [0.1], "Cs": [1.0, 10.0]},
        "mlp_grid": {"hidden_layer_sizes": [[8]], "alphas": [0.001]},
        "mlp_max_epochs": 5,
    },
    "bench": {"ladder": [[4, 2, 3]], "instances": 2, "repetitions": 20, "time_limit": 30.0},
}


def write_config(path, **overrides):
    doc = json.loads(json.dumps(SMALL))
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small config plus generated datasets for all three modes."""
    root = tmp_path_factory.mktemp("ws")
    cfg = write_config(root / "cfg.json", paths={"data_dir": str(root / "data"), "out_dir": str(root / "out")})
    for mode in ("normal", "special", "mixed"):
        assert main(["gen", "--config", cfg, "--mode", mode]) == EXIT_OK
    return root, cfg


# -- config ----------------------------------------------------------------------


def test_default_config_matches_reference_setting():
    c = load_config(None)
    assert (c.n_users, c.n_servers, c.n_scenarios) == (20, 5, 25)
    assert (c.constants.sigma, c.constants.gamma, c.constants.energy_budget, c.constants.capacity) == (396, 100, 396, 24)
    assert c.constants.rho == 10


@pytest.mark.parametrize(
    "doc",
    [
        {"n_userz": 3},
        {"constants": {"sigma": 0}},
        {"constants": {"gamma": -1}},
        {"n_users": "4"},
        {"n_users": True},
        {"learn": {"feature_scope": "weird"}},
        {"learn": {"svm_grid": {"kernels": ["cubic"]}}},
        {"solver": {"gap_tolerance": -0.1}},
        {"mode": "sideways"},
        {"request_range": [5, 1]},
    ],
)
def test_config_rejects(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_config_round_trip():
    c = parse_config(SMALL)
    assert parse_config(c.to_dict()) == c


# -- exit codes --------------------------------------------------------------------


def test_exit_code_for_bad_config(tmp_path, capsys):
    (tmp_path / "bad.json").write_text('{"nope": 1}')
    assert main(["solve", "--config", str(tmp_path / "bad.json")]) == EXIT_CONFIG
    (tmp_path / "broken.json").write_text("{")
    assert main(["solve", "--config", str(tmp_path / "broken.json")]) == EXIT_CONFIG


def test_exit_code_for_missing_files(tmp_path, capsys):
    assert main(["solve", str(tmp_path / "missing.json")]) == EXIT_IO
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == EXIT_IO
    (tmp_path / "garbage.json").write_text('{"users": 3}')
    assert main(["solve", str(tmp_path / "garbage.json")]) == EXIT_IO
    cfg = write_config(tmp_path / "c.json", paths={"data_dir": str(tmp_path / "nodata"), "out_dir": str(tmp_path)})
    assert main(["train", "--config", cfg, "--model", "svm-doe"]) == EXIT_IO
    assert main(["bench", "--config", cfg]) == EXIT_IO


def test_exit_code_for_dimension_mismatch(workspace, tmp_path, capsys):
    root, cfg = workspace
    out = tmp_path / "o"
    assert main(["train", "--config", cfg, "--model", "svm-grid", "--out", str(out)]) == EXIT_OK
    bundle = str(out / "svm-grid-normal.bundle.json")
    other = write_config(tmp_path / "c5.json", n_users=5, paths={"data_dir": str(tmp_path / "d5"), "out_dir": str(out)})
    assert main(["gen", "--config", other, "--n", "10"]) == EXIT_OK
    assert main(["eval", "--config", cfg, "--bundle", bundle, "--dataset", str(tmp_path / "d5" / "normal")]) == EXIT_DIMENSION
    assert main(["solve", "--config", other, "--save-instance", str(tmp_path / "i5.json")]) == EXIT_OK
    assert main(["predict", "--bundle", bundle, str(tmp_path / "i5.json")]) == EXIT_DIMENSION


# -- solve ---------------------------------------------------------------------------


def test_solve_toy_instance(tmp_path, capsys):
    inst = make_instance([(0, 0, 6)], [(3, 0)], [[(0, 0)]])
    (tmp_path / "toy.json").write_text(inst.to_json())
    assert main(["solve", str(tmp_path / "toy.json"), "--out", str(tmp_path / "r.json")]) == EXIT_OK
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["objective"] == pytest.approx(400.0)
    assert doc["status"] == "optimal"
    assert "objective       400.000000" in capsys.readouterr().out


def test_solve_all_infeasible_instance(tmp_path, capsys):
    inst = make_instance([(0, 0, 25), (3, 3, 30)], [(1, 1)], [[(0, 0), (1, 1)]])
    (tmp_path / "big.json").write_text(inst.to_json())
    assert main(["solve", str(tmp_path / "big.json"), "--out", str(tmp_path / "r.json")]) == EXIT_OK
    assert json.loads((tmp_path / "r.json").read_text())["objective"] == 0


def test_solve_outputs_are_byte_stable(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    for tag in ("a", "b"):
        assert main(["solve", "--config", cfg, "--seed", "3", "--out", str(tmp_path / f"{tag}.json"),
                     "--export-mps", str(tmp_path / f"{tag}.mps"),
                     "--save-instance", str(tmp_path / f"{tag}.inst.json")]) == EXIT_OK
    for ext in (".json", ".mps", ".inst.json"):
        assert (tmp_path / f"a{ext}").read_bytes() == (tmp_path / f"b{ext}").read_bytes()
    Instance.from_json((tmp_path / "a.inst.json").read_text())


# -- gen -----------------------------------------------------------------------------


def test_gen_outputs(workspace):
    root, _ = workspace
    data = root / "data"
    assert len((data / "normal.jsonl").read_text().splitlines()) == 30
    assert len((data / "mixed.jsonl").read_text().splitlines()) == 30
    for name in ("normal.meta.json", "normal.csv", "normal.locations.csv"):
        assert (data / name).exists()
    mixed = load_dataset(data / "mixed")
    normal = load_dataset(data / "normal")
    assert mixed.records[:15] == normal.records[:15]


def test_gen_is_byte_deterministic(workspace, tmp_path, capsys):
    root, _ = workspace
    cfg = write_config(tmp_path / "c.json", paths={"data_dir": str(tmp_path / "data"), "out_dir": str(tmp_path)})
    assert main(["gen", "--config", cfg, "--mode", "normal"]) == EXIT_OK
    for name in ("normal.jsonl", "normal.meta.json", "normal.csv", "normal.locations.csv"):
        assert (tmp_path / "data" / name).read_bytes() == (root / "data" / name).read_bytes()


# -- train / eval / predict / bench ----------------------------------------------------


@pytest.fixture(scope="module")
def trained(workspace):
    root, cfg = workspace
    out = root / "out"
    for model in ("svm-grid", "mlp-grid", "svm-doe"):
        assert main(["train", "--config", cfg, "--model", model]) == EXIT_OK
    return out


def test_train_reports(trained):
    rows = reports.read_rows(trained / "svm-grid-normal.csv", reports.GridRow)
    assert len(rows) == 4 and [r.user for r in rows] == [1, 2, 3, 4]
    assert len(reports.read_rows(trained / "mlp-grid-normal.csv", reports.GridRow)) == 4
    runs = reports.read_rows(trained / "doe-runs.csv", reports.DoeRow)
    assert [r.id for r in runs] == list(range(1, 17))
    assert len(reports.read_rows(trained / "doe-effects.csv", reports.EffectRow)) == 8
    setting = reports.read_rows(trained / "doe-setting.csv", reports.SettingRow)
    assert [r.user for r in setting] == ["1", "2", "3", "4", "min", "avg"]
    sel = json.loads((trained / "doe-selected.json").read_text())
    assert set(sel["per_mode_best"]) == {"normal", "special", "mixed"}
    for m in ("normal", "special", "mixed"):
        assert (trained / f"svm-doe-{m}.bundle.json").exists()


def test_train_is_byte_deterministic(workspace, trained, tmp_path, capsys):
    _, cfg = workspace
    for model in ("svm-grid", "mlp-grid", "svm-doe"):
        assert main(["train", "--config", cfg, "--model", model, "--out", str(tmp_path)]) == EXIT_OK
    for f in trained.iterdir():
        if f.suffix in (".csv", ".json") and f.name.startswith(("svm-", "mlp-", "doe-")):
            assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_eval_summary_consistent(workspace, trained, capsys):
    root, cfg = workspace
    bundle = str(trained / "svm-doe-normal.bundle.json")
    assert main(["eval", "--config", cfg, "--bundle", bundle, "--dataset", str(root / "data" / "normal")]) == EXIT_OK
    rows = reports.read_rows(trained / "eval.csv", reports.EvalRow)
    per_user = [r.accuracy for r in rows if r.user.isdigit()]
    by_name = {r.user: r.accuracy for r in rows}
    assert len(per_user) == 4
    assert by_name["min"] == pytest.approx(min(per_user))
    assert by_name["avg"] == pytest.approx(np.mean(per_user))
    (summary,) = reports.read_rows(trained / "eval-summary.csv", reports.SummaryRow)
    assert summary.min_accuracy == pytest.approx(min(per_user))


def test_predict_shape_and_flag(workspace, trained, tmp_path, capsys):
    _, cfg = workspace
    assert main(["solve", "--config", cfg, "--seed", "11", "--save-instance", str(tmp_path / "i.json")]) == EXIT_OK
    capsys.readouterr()
    assert main(["predict", "--bundle", str(trained / "svm-doe-normal.bundle.json"), str(tmp_path / "i.json"),
                 "--out", str(tmp_path / "p.json")]) == EXIT_OK
    doc = json.loads((tmp_path / "p.json").read_text())
    assert len(doc["choices"]) == 4 and set(doc["choices"]) <= {0, 1, 2}
    inst = Instance.from_json((tmp_path / "i.json").read_text())
    assert doc["feasible"] == check_feasible(inst, doc["choices"]).feasible


def _constant_bundle(path, n_users, n_servers, choice):
    d = n_users * (n_servers + 1)
    X = np.arange(2.0 * d).reshape(2, d)
    models = [OneVsOneSVC().fit(X, [choice, choice]) for _ in range(n_users)]
    cfg = SvmConfig(KernelSpec("linear"), 1.0)
    Surrogate("svm", n_users, n_servers, "full", [Scaler(standardize=False).fit(X)], models, [cfg] * n_users).save(path)


def test_predict_reports_overload(tmp_path, capsys):
    _constant_bundle(tmp_path / "b.json", 2, 1, 1)
    inst = make_instance([(0, 0, 15), (1, 1, 15)], [(2, 2)], [[(0, 0), (0, 0)]])
    (tmp_path / "i.json").write_text(inst.to_json())
    args = ["predict", "--bundle", str(tmp_path / "b.json"), str(tmp_path / "i.json"), "--out", str(tmp_path / "p.json")]
    assert main(args) == EXIT_OK
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["choices"] == [1, 1] and doc["feasible"] is False and doc["violations"]
    assert main(args + ["--repair", "greedy"]) == EXIT_OK
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["repaired_feasible"] is True and doc["repaired_choices"].count(1) == 1


def test_bench(workspace, trained, tmp_path, capsys):
    _, cfg = workspace
    bundle = str(trained / "svm-doe-normal.bundle.json")
    assert main(["bench", "--config", cfg, "--bundle", bundle, "--out", str(tmp_path)]) == EXIT_OK
    (row,) = reports.read_rows(tmp_path / "bench.csv", reports.BenchRow)
    assert row.solver_status == "optimal"
    assert row.speedup == pytest.approx(row.solver_seconds / row.inference_seconds)
    proj = reports.read_rows(tmp_path / "bench-projection.csv", reports.ProjectionRow)
    assert [p.runs_per_shift for p in proj] == [96, 60, 48, 32]


# -- report CSV round trip -------------------------------------------------------------


def test_report_rows_round_trip(tmp_path):
    samples = [
        reports.GridRow(1, 90.0, 88.5, "svm", kernel="POLY", gamma=0.0001, C=10.0),
        reports.EvalRow("svm-doe", "normal", "test", "min", 87.5),
        reports.SummaryRow("svm-doe", "normal", "test", 80.0, 85.0, 60.0),
        reports.BenchRow(10, 3, 15, 5, "optimal", 0.25),
        reports.ProjectionRow(5.0, 96, 24.0, 0.1),
    ]
    for row in samples:
        path = tmp_path / f"{type(row).__name__}.csv"
        reports.write_rows(path, [row, row])
        assert reports.read_rows(path, type(row)) == [row, row]


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "edge_placer.cli", "solve", str(tmp_path / "nope.json")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_IO and "I/O error" in proc.stderr
