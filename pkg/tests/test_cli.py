import datetime as dt
import filecmp
import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd
import pytest

from conftest import VARIABLES, day_range, write_meta, write_wide
from manifold_id.cli import main
from manifold_id.hidalgo import McmcTraces
from manifold_id.posterior import remap_observation_chains


def run_cli(args, capsys=None):
    code = main([str(a) for a in args])
    err = capsys.readouterr().err if capsys else ""
    return code, err


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


def panel_fixture(tmp_path, n=8, T=454, pops=None):
    """Half the countries follow smooth one-parameter curves, half are white noise."""
    rng = np.random.default_rng(0)
    ids = [f"K{i:02d}" for i in range(n)]
    days = day_range(dt.date(2020, 3, 1), T)
    t = np.arange(T)
    half = n // 2
    for v in VARIABLES:
        smooth = np.sin(t / 40.0 + rng.uniform(0, 6, (half, 1))) * rng.uniform(0.5, 1.5, (half, 1))
        vals = np.vstack([smooth + rng.normal(0, 0.01, (half, T)), rng.normal(0, 1, (n - half, T))])
        vals[rng.random((n, T)) < 0.02] = np.nan
        write_wide(tmp_path / f"{v}.csv", days, ids, vals)
    pops = pops if pops is not None else rng.integers(2_000_000, 90_000_000, n)
    write_meta(tmp_path / "meta.csv", ids, pops,
               {"lat": rng.uniform(-50, 60, n).round(3), "lon": rng.uniform(-170, 170, n).round(3),
                "age65": rng.uniform(2, 20, n).round(2)})
    return write_config(tmp_path / "cfg.json", {
        "out": str(tmp_path / "run"),
        "inputs": {"variables": {v: f"{v}.csv" for v in VARIABLES}, "metadata": "meta.csv"},
    })


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_preprocess_full_window_shape(tmp_path):
    cfg = panel_fixture(tmp_path)
    assert run_cli(["preprocess", "--config", cfg])[0] == 0
    out = tmp_path / "run" / "preprocess"
    m = pd.read_csv(out / "matrix.csv", index_col=0)
    assert m.shape[1] == 1362
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["D"] == 1362 and prov["dropped"] == []
    assert [s["step"] for s in prov["steps"]][-1] == "zscore"
    for v in VARIABLES:
        assert (out / f"panel_{v}.csv").is_file()


def test_preprocess_all_filtered_exit_2(tmp_path, capsys):
    cfg = panel_fixture(tmp_path, n=4, T=30, pops=[10, 20, 30, 40])
    code, err = run_cli(["preprocess", "--config", cfg], capsys)
    assert code == 2
    payload = json.loads(err)
    assert payload["error"] == "AllFiltered" and payload["exit_code"] == 2


def test_preprocess_deterministic(tmp_path):
    cfg = panel_fixture(tmp_path, T=60)
    run_cli(["preprocess", "--config", cfg, "--out", tmp_path / "a"])
    run_cli(["preprocess", "--config", cfg, "--out", tmp_path / "b"])
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_preprocess_parse_error_has_location(tmp_path, capsys):
    cfg = panel_fixture(tmp_path, T=20)
    bad = tmp_path / "new_cases_pmp.csv"
    lines = bad.read_text().splitlines()
    lines[5] = lines[5].replace(",", ",oops", 1)
    bad.write_text("\n".join(lines) + "\n")
    code, err = run_cli(["preprocess", "--config", cfg], capsys)
    payload = json.loads(err)
    assert code == 2 and payload["error"] == "ParseError" and payload["line"] == 6


def test_stage_flag(tmp_path):
    cfg = panel_fixture(tmp_path, T=455)
    assert run_cli(["preprocess", "--config", cfg, "--stage", "4"])[0] == 0
    prov = json.loads((tmp_path / "run" / "preprocess" / "provenance.json").read_text())
    assert prov["stage"] == "4" and prov["D"] == 3 * 112
    assert prov["dates"] == ["2021-02-07", "2021-05-29"]
    assert prov["steps"][-1] == {"step": "zscore", "scope": "stage 4"}


@pytest.fixture
def synth_cfg(tmp_path):
    return write_config(tmp_path / "cfg.json", {
        "out": str(tmp_path / "run"),
        "synth": {"specs": [{"kind": "isotropic_gaussian", "d_true": 2, "n": 30, "embed_D": 6},
                            {"kind": "isotropic_gaussian", "d_true": 5, "n": 30, "embed_D": 6}],
                  "separation": 20.0},
    })


def test_fit_default_config_echo(tmp_path, synth_cfg):
    run_cli(["synth", "--config", synth_cfg])
    run_cli(["preprocess", "--config", synth_cfg])
    assert run_cli(["fit", "--config", synth_cfg])[0] == 0
    echo = json.loads((tmp_path / "run" / "fit" / "config.json").read_text())["config"]
    assert (echo["L"], echo["alpha"], echo["nsim"], echo["burnin"]) == (6, 0.05, 25000, 1000)


def test_fit_smoke_and_determinism(tmp_path, synth_cfg):
    for sub in ("a", "b"):
        out = tmp_path / sub
        for cmd in ("synth", "preprocess", "fit"):
            assert run_cli([cmd, "--config", synth_cfg, "--out", out, "--nsim", 10, "--seed", 7])[0] == 0
    tr = McmcTraces.load(tmp_path / "a" / "fit")
    assert tr.labels.shape == (10, 60)
    assert tree_bytes(tmp_path / "a" / "fit") == tree_bytes(tmp_path / "b" / "fit")
    run_cli(["fit", "--config", synth_cfg, "--out", tmp_path / "b", "--nsim", 10, "--seed", 8])
    assert tree_bytes(tmp_path / "a" / "fit") != tree_bytes(tmp_path / "b" / "fit")


def test_flags_override_config(tmp_path, synth_cfg):
    cfg = json.loads(synth_cfg.read_text())
    cfg["hidalgo"] = {"nsim": 50, "zeta": 0.6, "q": 2}
    write_config(synth_cfg, cfg)
    run_cli(["synth", "--config", synth_cfg])
    run_cli(["preprocess", "--config", synth_cfg])
    run_cli(["fit", "--config", synth_cfg, "--nsim", 12, "--burnin", 3, "--L", 4, "--alpha", 0.5,
             "--zeta", 0.9])
    echo = json.loads((tmp_path / "run" / "fit" / "config.json").read_text())["config"]
    assert (echo["nsim"], echo["burnin"], echo["L"], echo["alpha"], echo["zeta"], echo["q"]) == \
        (12, 3, 4, 0.5, 0.9, 2)


def test_postprocess_two_manifolds_k2(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {
        "out": str(tmp_path / "run"),
        "hidalgo": {"normaliser": "cluster_size", "q": 5, "zeta": 0.58, "nsim": 2000, "burnin": 500},
    })
    for cmd in ("synth", "preprocess", "fit", "postprocess"):
        assert run_cli([cmd, "--config", cfg])[0] == 0
    part = json.loads((tmp_path / "run" / "postprocess" / "partition.json").read_text())
    assert part["K"] == 2
    truth = pd.read_csv(tmp_path / "run" / "synth" / "truth.csv", dtype={"id": str})
    got = np.array([part["labels"][i] for i in truth["id"]])
    agree = max(np.mean(got == truth["label"]), np.mean(got == 3 - truth["label"]))
    assert agree >= 0.9


def test_postprocess_single_iteration_and_purity(tmp_path, synth_cfg):
    for cmd in ("synth", "preprocess", "fit", "postprocess"):
        run_cli([cmd, "--config", synth_cfg, "--nsim", 1, "--burnin", 5])
    run = tmp_path / "run"
    tr = McmcTraces.load(run / "fit")
    med = pd.read_csv(run / "postprocess" / "medians.csv", dtype={"id": str}, float_precision="round_trip")
    assert np.array_equal(med["median_id"].to_numpy(), remap_observation_chains(tr).chains[0])
    before = tree_bytes(run / "postprocess")
    for p in (run / "postprocess").iterdir():
        p.unlink()
    run_cli(["postprocess", "--config", synth_cfg, "--nsim", 1, "--burnin", 5])
    assert tree_bytes(run / "postprocess") == before


def clique_run(tmp_path, values):
    run = tmp_path / "run"
    (run / "postprocess").mkdir(parents=True)
    ids = [f"u{i}" for i in range(len(values))]
    pd.DataFrame({"id": ids, "median_id": values, "cluster": 1}).to_csv(
        run / "postprocess" / "medians.csv", index=False)
    half = len(ids) // 2
    edges = [(a, b) for grp in (ids[:half], ids[half:]) for a in grp for b in grp if a != b]
    adj = tmp_path / "adj.csv"
    adj.write_text("from,to\n" + "".join(f"{a},{b}\n" for a, b in edges))
    return write_config(tmp_path / "cfg.json", {"out": str(run), "inputs": {"adjacency": "adj.csv"}})


def test_spatial_cliques(tmp_path):
    vals = np.r_[np.full(10, 3.0), np.full(10, 9.0)] + np.random.default_rng(1).normal(0, 0.2, 20)
    cfg = clique_run(tmp_path, vals)
    assert run_cli(["spatial", "--config", cfg, "--seed", 4])[0] == 0
    first = (tmp_path / "run" / "spatial" / "moran.json").read_text()
    moran = json.loads(first)["moran"]
    assert moran["p_value"] <= 0.01 and moran["weights"]["kind"] == "adjacency"
    run_cli(["spatial", "--config", cfg, "--seed", 4])
    assert (tmp_path / "run" / "spatial" / "moran.json").read_text() == first


def test_spatial_constant_ids(tmp_path, capsys):
    cfg = clique_run(tmp_path, np.full(8, 5.0))
    code, err = run_cli(["spatial", "--config", cfg], capsys)
    payload = json.loads(err)
    assert code == 2 and payload["error"] == "ZeroVariance"


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("full")
    cfg = panel_fixture(root, n=24, T=80)
    data = json.loads(cfg.read_text())
    data["hidalgo"] = {"nsim": 300, "burnin": 100, "normaliser": "cluster_size", "q": 3, "zeta": 0.6}
    data["spatial"] = {"ks_covariates": ["age65"], "n_perm": 99, "k": 3}
    write_config(cfg, data)
    assert main(["all", "--config", str(cfg)]) == 0
    return root / "run", cfg


def test_report_schema_and_shapes(full_run):
    run, _ = full_run
    report = json.loads((run / "report" / "report.json").read_text())
    schema = json.loads((run / "report" / "report.schema.json").read_text())
    jsonschema.validate(report, schema)
    traj = pd.read_csv(run / "report" / "trajectories.csv")
    T = report["trajectories"]["T"]
    assert T == 80
    counts = traj.groupby(["variable", "cluster"]).size()
    assert (counts == T).all() and len(counts) == 3 * report["K"]
    assert report["moran"]["weights"]["kind"] == "knn"
    qq = pd.read_csv(run / "report" / "ratio_qq.csv")
    assert len(qq) == report["n"]


def test_report_idempotent(full_run):
    run, cfg = full_run
    before = tree_bytes(run / "report")
    assert main(["report", "--config", str(cfg)]) == 0
    assert tree_bytes(run / "report") == before


def test_missing_artifact(tmp_path, capsys):
    code, err = run_cli(["report", "--out", tmp_path / "empty"], capsys)
    payload = json.loads(err)
    assert code == 2 and payload["error"] == "MissingArtifact" and payload["stage"] == "preprocess"


def test_usage_and_config_errors(tmp_path, capsys):
    assert run_cli(["nope"], capsys)[0] == 1
    assert run_cli(["fit", "--nsim", "many"], capsys)[0] == 1
    bad = write_config(tmp_path / "bad.json", {"hidalgo": {"zeta": 1.5}})
    code, err = run_cli(["fit", "--config", bad], capsys)
    assert code == 1 and json.loads(err)["error"] == "ConfigInvalid"
    bad = write_config(tmp_path / "bad2.json", {"unknown": 1})
    assert run_cli(["fit", "--config", bad], capsys)[0] == 1
    assert run_cli(["fit", "--config", tmp_path / "missing.json"], capsys)[0] == 1


def test_threads_env(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("MANIFOLD_ID_THREADS", "zero")
    assert run_cli(["synth", "--out", tmp_path / "r"], capsys)[0] == 1
    monkeypatch.setenv("MANIFOLD_ID_THREADS", "1")
    assert run_cli(["synth", "--out", tmp_path / "r"], capsys)[0] == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "manifold_id", "synth", "--out", str(tmp_path / "s")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "s" / "synth" / "matrix.csv").is_file()
    proc = subprocess.run([sys.executable, "-m", "manifold_id", "fit", "--L", "0"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 1
