import json
from pathlib import Path

import numpy as np
import pytest
import tomli_w

import stochirl
from stochirl.cli import main
from stochirl.config import DEFAULTS, load_config, load_toml, parse_config
from stochirl.errors import ConfigError

SEC5 = Path(stochirl.__file__).parent / "configs" / "paper_sec5.toml"


def _write(tmp_path, data, name="cfg.toml"):
    path = tmp_path / name
    with open(path, "wb") as fh:
        tomli_w.dump(data, fh)
    return str(path)


def _base():
    return load_toml(SEC5)


def _run(tmp_path, argv):
    out = tmp_path / "out"
    code = main(argv + ["--out", str(out), "--quiet"])
    return code, out


# -- configuration ---------------------------------------------------------

def test_bundled_config_parses():
    cfg = load_config(SEC5)
    assert cfg.seed == 2024
    assert cfg.system.n == 2 and cfg.system.m == 1
    assert cfg.sim.paths_M == 400
    assert cfg.noise.frequencies.shape == (1, 10)
    assert cfg.raw["exploration"]["frequencies"] == cfg.noise.frequencies.tolist()


def test_defaults_fill_optional_fields():
    data = _base()
    del data["learner"]["eps1"]
    del data["output"]
    cfg = parse_config(data)
    assert cfg.learner["eps1"] == DEFAULTS["learner"]["eps1"]
    assert cfg.output["directory"] == "out"


@pytest.mark.parametrize(
    "edit, field",
    [
        (lambda d: d["learner"].update(Q0=[[1.0, 0.0], [0.0, -1.0]]), "learner.Q0"),
        (lambda d: d["learner"].update(R=[[1.0, 0.0], [0.0, 1.0]]), "learner.R"),
        (lambda d: d["system"].update(C=[[1.0]]), "system.C"),
        (lambda d: d["sim"].update(x0=[1.0, 2.0, 3.0]), "sim.x0"),
        (lambda d: d["learner"].update(stop_mode="never"), "learner.stop_mode"),
        (lambda d: d["sim"].update(paths_M=0), "sim.paths_M"),
        (lambda d: d["sim"].update(bogus=1), "sim.bogus"),
        (lambda d: d["expert"].pop("Q_T"), "expert.Q_T"),
        (lambda d: d["expert"].update(Q_T=[[1.0, 2.0], [0.0, 1.0]]), "expert.Q_T"),
    ],
)
def test_validation_names_the_field(edit, field):
    data = _base()
    edit(data)
    with pytest.raises(ConfigError) as err:
        parse_config(data)
    assert err.value.field == field
    assert str(err.value).startswith(field + ":")


def test_seed_and_out_overrides():
    cfg = load_config(SEC5, seed=7, out="elsewhere")
    assert cfg.seed == 7 and cfg.sim.seed == 7
    assert cfg.output["directory"] == "elsewhere"
    assert cfg.noise.frequencies.tolist() != load_config(SEC5).noise.frequencies.tolist()


# -- command line ----------------------------------------------------------

@pytest.fixture(scope="module")
def bench_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "a"
    assert main(["run", str(SEC5), "--out", str(out), "--quiet"]) == 0
    return out


def test_run_outputs(bench_run):
    report = json.loads((bench_run / "report.json").read_text())
    assert report["status"] == "ok"
    assert report["model_free"]["gain_error_vs_true"] < 0.05
    for path in report["artifacts"]:
        assert Path(path).exists(), path
    for name in ("history_model_free.csv", "history_model_based.csv", "expert_demo.csv",
                 "manifest.toml", "data/meta.toml"):
        assert (bench_run / name).exists(), name
    manifest = load_toml(bench_run / "manifest.toml")
    assert manifest["manifest_version"] == 1
    assert manifest["config"]["learner"]["q_mode"] == "projected"
    assert manifest["config"]["model_based"]["eps1"] == 1e-6


def test_same_seed_gives_identical_csvs(bench_run, tmp_path):
    code, out = _run(tmp_path, ["run", str(SEC5)])
    assert code == 0
    files = sorted(p.relative_to(bench_run) for p in bench_run.rglob("*.csv"))
    assert len(files) >= 7
    for rel in files:
        assert (bench_run / rel).read_bytes() == (out / rel).read_bytes(), rel


def test_other_seed_changes_data(bench_run, tmp_path):
    code, out = _run(tmp_path, ["run", str(SEC5), "--seed", "3"])
    assert code == 0
    assert (out / "data" / "i_xx.csv").read_bytes() != (bench_run / "data" / "i_xx.csv").read_bytes()


def test_no_exploration_exit_code(tmp_path):
    data = _base()
    data["exploration"]["amplitude"] = 0.0
    data["sim"]["paths_M"] = 20
    code, out = _run(tmp_path, ["run", _write(tmp_path, data)])
    assert code == 3
    rec = json.loads((out / "error.json").read_text())
    assert rec["exit_code"] == 3


def test_non_pd_weight_exit_code(tmp_path, capsys):
    data = _base()
    data["learner"]["Q0"] = [[0.2, 0.0], [0.0, -0.2]]
    code, _ = _run(tmp_path, ["run", _write(tmp_path, data)])
    assert code == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["field"] == "learner.Q0"


def test_mismatched_dimensions_exit_code(tmp_path):
    data = _base()
    data["system"]["D"] = [[0.2, 0.1], [0.1, 0.2]]
    code, _ = _run(tmp_path, ["compare", _write(tmp_path, data)])
    assert code == 2


def test_missing_file_exit_code(tmp_path):
    code, _ = _run(tmp_path, ["run", str(tmp_path / "absent.toml")])
    assert code == 2


def test_iteration_budget_exit_code(tmp_path):
    data = _base()
    data["learner"]["max_iter"] = 3
    data["model_based"]["enabled"] = False
    code, out = _run(tmp_path, ["run", _write(tmp_path, data)])
    assert code == 4
    assert json.loads((out / "report.json").read_text())["status"] == "not_converged"


def test_compare_gap(tmp_path):
    code, out = _run(tmp_path, ["compare", str(SEC5)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["comparison"]["exit_gain_gap"] < 0.05
    header = (out / "paired_history.csv").read_text().splitlines()[0]
    assert header.startswith("i,gain_gap,q_gap,p_gap")


def test_compare_exact_deterministic(tmp_path):
    data = _base()
    data["system"]["C"] = [[0.0, 0.0], [0.0, 0.0]]
    data["system"]["D"] = [[0.0], [0.0]]
    data["sim"]["paths_M"] = 2
    code, out = _run(tmp_path, ["compare", _write(tmp_path, data), "--exact-functionals"])
    assert code == 0
    rows = np.loadtxt(out / "paired_history.csv", delimiter=",", skiprows=1, ndmin=2)
    assert rows.shape[0] > 10
    assert rows[:, 1].max() < 1e-6 and rows[:, 2].max() < 1e-6 and rows[:, 3].max() < 1e-6


def test_dump_paths(tmp_path):
    data = _base()
    data["sim"]["paths_M"] = 2
    data["output"]["dump_every"] = 1000
    code, out = _run(tmp_path, ["dump-paths", _write(tmp_path, data)])
    assert code == 0
    lines = (out / "paths.csv").read_text().splitlines()
    assert lines[0] == "path_id,t,x_1,x_2,u_1"
    assert len(lines) == 1 + 2 * 11
