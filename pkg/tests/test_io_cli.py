import json
from pathlib import Path

import numpy as np
import pytest

from sdecov import io
from sdecov.cli import run
from sdecov.errors import IngestionError, ParameterError
from sdecov.presets import nse_like_panel

DOCS = Path(__file__).resolve().parents[1] / "docs" / "config.schema.json"


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SDECOV_OUTPUT_DIR", raising=False)
    return tmp_path


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------- ingestion


def test_ckls_style_panel(tmp_path):
    panel = nse_like_panel(0)
    f = io.write_panel_csv(panel, tmp_path / "nse.csv")
    back = io.ingest_panel(f)
    assert back.n == 15 and back.spec.p == 3
    assert all(len(p.states) == 467 for p in back.paths)
    for a, b in zip(panel.paths, back.paths):
        assert a.states.tobytes() == b.states.tobytes()


def test_minimal_panel(tmp_path):
    f = _write(tmp_path / "m.csv", "subject,time,x\nA,0.0,1.0\nA,0.5,1.2\n")
    panel = io.ingest_panel(f)
    assert panel.n == 1 and panel.paths[0].grid.n_steps == 1
    assert panel.paths[0].grid.t_end == 0.5 and panel.subjects == ("A",)


@pytest.mark.parametrize("body, row, fragment", [
    ("s,time,x\n1,0,1\n", 1, "header"),
    ("subject,time,x,z2\n1,0,1,0\n", 1, "z1"),
    ("subject,time,x\n1,0,1\n1,1,\n1,2,3\n", 3, "missing"),
    ("subject,time,x\n1,0,1\n1,1\n", 3, "fields"),
    ("subject,time,x\n1,0,1\n1,1,abc\n", 3, "not a number"),
    ("subject,time,x\n1,0,1\n1,1,nan\n", 3, "not finite"),
    ("subject,time,x\n1,0,1\n1,1,1\n2,0,1\n2,1,1\n1,2,1\n", 6, "contiguous"),
    ("subject,time,x\n1,0,1\n1,1,1\n2,0,1\n", 4, "single"),
    ("subject,time,x\n1,0,1\n1,1,1\n1,1,2\n", 4, "increase"),
    ("subject,time,x\n1,0,1\n1,1,1\n1,2.5,2\n", 4, "nonuniform"),
])
def test_ingest_errors_name_rows(tmp_path, body, row, fragment):
    f = _write(tmp_path / "bad.csv", body)
    with pytest.raises(IngestionError, match=fragment) as e:
        io.ingest_panel(f)
    assert f"row {row}" in str(e.value)


def test_spacing_tolerance(tmp_path):
    ok = _write(tmp_path / "ok.csv", "subject,time,x\n1,0,1\n1,1,1\n1,2.000000000001,2\n")
    assert io.ingest_panel(ok).n == 1


def test_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        io.ingest_panel(tmp_path / "nope.csv")


# ---------------------------------------------------------------- config


def test_shipped_schema_matches_code():
    assert json.loads(DOCS.read_text()) == json.loads(json.dumps(io.CONFIG_SCHEMA))


def test_schema_violation_names_field():
    with pytest.raises(ParameterError, match="bootstrap/B"):
        io.validate_config({"bootstrap": {"B": 0}})
    with pytest.raises(ParameterError, match="unknown"):
        io.validate_config({"unknown": 1})


def test_json_round_trip(tmp_path):
    obj = {"a": np.float64(0.1), "b": np.arange(3), "c": float("nan"), "d": np.bool_(True)}
    back = io.read_json(io.write_json(tmp_path / "o.json", obj))
    assert back == {"a": 0.1, "b": [0, 1, 2], "c": None, "d": True}


# ---------------------------------------------------------------- cli


def test_simulate_ingest_round_trip(work, capsys):
    assert run(["simulate", "--preset", "product", "--n", "4", "--seed", "7", "--out-dir", "o"]) == 0
    assert run(["simulate", "--config", "o/model.json", "--seed", "7", "--out", "panel2.csv",
                "--out-dir", "o"]) == 0
    assert run(["ingest", "o/panel2.csv", "--out-dir", "o"]) == 0
    assert (work / "o/panel2.csv").read_bytes() == (work / "o/ingested.csv").read_bytes()
    assert (work / "o/panel.csv").read_bytes() == (work / "o/panel2.csv").read_bytes()


def test_fit_writes_estimates_and_manifest(work, capsys):
    run(["simulate", "--preset", "product", "--n", "4", "--seed", "1", "--out-dir", "o"])
    capsys.readouterr()
    assert run(["fit", "--data", "panel.csv", "--config", "o/model.json", "--tol", "1e-5",
                "--out-dir", "o"]) == 0
    summary = json.loads(capsys.readouterr().out)
    est = json.loads((work / "o/estimates.json").read_text())
    assert est["converged"] and summary["converged"]
    man = json.loads((work / "o/fit.manifest.json").read_text())
    for key in ("config_sha256", "seeds", "versions", "runtime_seconds", "outputs", "inputs"):
        assert key in man
    assert man["outputs"]["estimates.json"] == io.file_hash(work / "o/estimates.json")


def test_env_output_dir(work, monkeypatch):
    monkeypatch.setenv("SDECOV_OUTPUT_DIR", str(work / "envout"))
    assert run(["simulate", "--preset", "product", "--n", "2", "--seed", "1"]) == 0
    assert (work / "envout/panel.csv").exists()


@pytest.mark.parametrize("argv", [
    ["fit", "--data", "nope.csv"],
    ["fit", "--bogus"],
    ["frobnicate"],
    ["simulate", "--preset", "product", "--out", "../escape.csv"],
    ["simulate", "--preset", "product", "--out", "/tmp/abs.csv"],
])
def test_user_errors_exit_1(work, argv, capsys):
    assert run(argv + ["--out-dir", "o"] if argv[0] != "frobnicate" else argv) == 1
    assert "error" in capsys.readouterr().err
    assert not (work / "escape.csv").exists()


def test_schema_violation_exit_1(work, capsys):
    _write("cfg.json", json.dumps({"gibbs": {"iters": -5}}))
    run(["simulate", "--preset", "product", "--n", "2", "--seed", "1", "--out-dir", "o"])
    capsys.readouterr()
    assert run(["gibbs", "--data", "panel.csv", "--config", "cfg.json", "--out-dir", "o"]) == 1
    assert "gibbs/iters" in capsys.readouterr().err


def test_malformed_json_exit_1(work, capsys):
    _write("cfg.json", "{not json")
    assert run(["simulate", "--config", "cfg.json", "--out-dir", "o"]) == 1


def test_numerical_failure_exit_2(work, capsys):
    run(["simulate", "--preset", "product", "--n", "2", "--seed", "1", "--out-dir", "o"])
    assert run(["abc", "--data", "panel.csv", "--epsilon", "1e-9", "--n-accept", "1",
                "--max-trials", "1000", "--out-dir", "o"]) == 2
    assert "numerical" in capsys.readouterr().err


def test_gibbs_outputs(work, capsys):
    run(["simulate", "--preset", "product", "--n", "3", "--seed", "2", "--out-dir", "o"])
    assert run(["gibbs", "--data", "panel.csv", "--iters", "200", "--thin", "2", "--seed", "3",
                "--out-dir", "o"]) == 0
    for f in ("gibbs_chain.csv", "running_means.csv", "acf.csv", "gibbs_summary.json"):
        assert (work / "o" / f).exists()
    lines = (work / "o/gibbs_chain.csv").read_text().splitlines()
    assert len(lines) == 101


def test_re_loglik(work, capsys):
    run(["simulate", "--preset", "product", "--n", "3", "--seed", "2", "--out-dir", "o"])
    io.write_json(work / "o/re.json", {"mu": [0.0, 0.0], "Sigma": [[1.0, 0.0], [0.0, 1.0]],
                                        "beta": [0.5, 0.1]})
    capsys.readouterr()
    assert run(["re-loglik", "--data", "panel.csv", "--params", "re.json", "--out-dir", "o"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert np.isfinite(out["loglik"])


def test_verify_consistency(work, capsys):
    assert run(["verify", "--experiment", "consistency", "--reps", "20", "--n-list", "5", "40",
                "--seed", "1", "--out-dir", "o"]) == 0
    rep = json.loads((work / "o/consistency_report.json").read_text())
    assert [r["n"] for r in rep["rows"]] == [5, 40]
    assert rep["rows"][1]["mae"] < rep["rows"][0]["mae"]
    est = (work / "o/estimates.csv").read_text().splitlines()
    assert est[0] == "n,replicate,xi0,xi1" and len(est) == 41


def test_verify_normality_writes_qq(work, capsys):
    assert run(["verify", "--experiment", "mle-normality", "--reps", "5", "--n", "10",
                "--seed", "1", "--out-dir", "o"]) == 0
    qq = (work / "o/qq_xi0.csv").read_text().splitlines()
    assert qq[0] == "theoretical_quantile,empirical_quantile" and len(qq) == 6


def test_replay_with_other_worker_count(work, capsys):
    run(["simulate", "--preset", "product", "--n", "4", "--seed", "5", "--out-dir", "o"])
    assert run(["bootstrap", "--data", "panel.csv", "--B", "6", "--workers", "2", "--seed", "3",
                "--out-dir", "o"]) == 0
    capsys.readouterr()
    assert run(["replay", "o/bootstrap.manifest.json", "--out-dir", "r", "--workers", "1"]) == 0
    assert json.loads(capsys.readouterr().out) == {"identical": True, "mismatched": []}
    assert (work / "o/replicates.csv").read_bytes() == (work / "r/replicates.csv").read_bytes()


def test_replay_detects_changed_input(work, capsys):
    run(["simulate", "--preset", "product", "--n", "2", "--seed", "5", "--out-dir", "o"])
    run(["fit", "--data", "panel.csv", "--out-dir", "o"])
    with (work / "o/panel.csv").open("a") as fh:
        fh.write("\n")
    assert run(["replay", "o/fit.manifest.json", "--out-dir", "r"]) == 1
