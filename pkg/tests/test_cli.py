import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from causalme.cli import evaluate, main
from causalme.fixtures import get_fixture
from causalme.graphs import (Cpdag, cpdag_of, leaf_augmented_cpdag,
                             model_to_json)
from causalme.pipelines import fa_dpc_oracle, oica_rgd_oracle
from causalme.simulate import read_dataset_csv


def run(*argv):
    return main([str(a) for a in argv])


def write_model(path, name):
    path.write_text(json.dumps(model_to_json(get_fixture(name))))
    return path


@pytest.fixture(scope="module")
def bench_a_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "bench-a"
    assert run("simulate", "--fixture", "bench-a", "--n-samples", 100_000,
               "--seed", 0, "--out", out) == 0
    return out


def test_console_script_help():
    proc = subprocess.run(["causalme", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout and "discover" in proc.stdout


def test_simulate_fixture_writes_run_dir(tmp_path):
    out = tmp_path / "run"
    assert run("simulate", "--fixture", "chain2", "--n-samples", 400,
               "--seed", 7, "--out", out) == 0
    assert {p.name for p in out.iterdir()} == {
        "data.csv", "model.json", "manifest.json", "run.log"}
    data = read_dataset_csv(out / "data.csv")
    assert data.values.shape == (400, 2)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["tool"] == "causalme"
    assert manifest["command"] == "simulate"
    assert manifest["params"]["n_samples"] == 400
    assert manifest["params"]["seed"] == 7
    assert manifest["params"]["fixture"] == "chain2"
    assert "out" not in manifest["params"]
    assert "numpy" in manifest["versions"]
    model = json.loads((out / "model.json").read_text())
    assert [(e["from"], e["to"]) for e in model["edges"]] == [(0, 1)]


def test_simulate_reruns_are_byte_identical(tmp_path):
    args = ("simulate", "--fixture", "collider3", "--n-samples", 250,
            "--seed", 3)
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for name in ("data.csv", "model.json", "manifest.json", "run.log"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_simulate_rejects_zero_or_two_sources(tmp_path):
    model = write_model(tmp_path / "m.json", "chain2")
    assert run("simulate", "--n-samples", 10, "--out", tmp_path / "x") == 2
    assert run("simulate", "--fixture", "chain2", "--model", model,
               "--n-samples", 10, "--out", tmp_path / "y") == 2


def test_simulate_include_latent_writes_second_csv(tmp_path):
    out = tmp_path / "run"
    assert run("simulate", "--fixture", "chain2", "--n-samples", 50,
               "--include-latent", "--out", out) == 0
    observed = read_dataset_csv(out / "data.csv")
    latent = read_dataset_csv(out / "latent.csv")
    assert observed.values.shape == latent.values.shape == (50, 2)
    assert latent.labels == observed.labels
    # the chain head carries measurement noise, so the columns must differ
    assert np.any(observed.values[:, 0] != latent.values[:, 0])


def test_discover_oracle_fa_equvar(tmp_path):
    model_path = write_model(tmp_path / "m.json", "bench-a")
    out = tmp_path / "run"
    assert run("discover", "--method", "fa-equvar", "--oracle",
               "--model", model_path, "--out", out) == 0
    result = json.loads((out / "result.json").read_text())
    assert result["method"] == "fa-equvar"
    assert result["leaf_set"] == [4, 5, 6, 7]
    truth = leaf_augmented_cpdag(get_fixture("bench-a").sem.dag)
    assert Cpdag.from_json(result["cpdag"]) == truth
    assert (out / "result.dot").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["input_hashes"]) == {"model"}


def test_discover_fa_equvar_from_csv(bench_a_run, tmp_path):
    out = tmp_path / "run"
    assert run("discover", "--method", "fa-equvar",
               "--data", bench_a_run / "data.csv", "--leaf-count", 4,
               "--out", out) == 0
    result = json.loads((out / "result.json").read_text())
    truth = leaf_augmented_cpdag(get_fixture("bench-a").sem.dag)
    assert Cpdag.from_json(result["cpdag"]) == truth
    log = (out / "run.log").read_text()
    assert "loaded 100000 rows x 8 columns" in log


def test_discover_auto_leaf_from_csv(bench_a_run, tmp_path):
    out = tmp_path / "run"
    assert run("discover", "--method", "fa-equvar",
               "--data", bench_a_run / "data.csv", "--auto-leaf",
               "--out", out) == 0
    result = json.loads((out / "result.json").read_text())
    assert result["leaf_set"] == [4, 5, 6, 7]
    assert result["diagnostics"]["auto_leaf_count"] is True
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["params"]["auto_leaf"] is True
    assert manifest["params"]["leaf_count"] is None


def test_discover_oica_oracle_writes_weighted_graph(tmp_path):
    model_path = write_model(tmp_path / "m.json", "bench-c")
    out = tmp_path / "run"
    assert run("discover", "--method", "oica-rgd", "--oracle",
               "--model", model_path, "--out", out) == 0
    result = json.loads((out / "result.json").read_text())
    model = get_fixture("bench-c")
    assert [(u, v) for u, v, _ in result["graph"]["edges"]] == \
        sorted(model.sem.dag.edges)
    for u, v, w in result["graph"]["edges"]:
        assert w == pytest.approx(model.sem.B[v, u])
    dot = (out / "result.dot").read_text()
    assert "->" in dot


def test_discover_ambiguity_exits_3_with_error_json(tmp_path):
    # equal unique variances everywhere: no leaf cut exists
    obj = model_to_json(get_fixture("bench-b"))
    for spec in obj["noise"]:
        spec["variance"] = 0.7
    obj["me_variance"] = [1.0, 0.3, 0.3, 0.3]
    obj["noise"][0]["variance"] = 1.0
    model_path = tmp_path / "tied.json"
    model_path.write_text(json.dumps(obj))
    out = tmp_path / "run"
    assert run("discover", "--method", "fa-equvar", "--oracle",
               "--model", model_path, "--out", out) == 3
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "AmbiguityError"
    assert err["exit_code"] == 3
    assert err["candidates"] == [0, 1, 2, 3]
    assert not (out / "result.json").exists()


def test_discover_oica_needs_leaf_count(bench_a_run, tmp_path):
    assert run("discover", "--method", "oica-rgd",
               "--data", bench_a_run / "data.csv",
               "--out", tmp_path / "run") == 2


def test_discover_oracle_needs_model(tmp_path):
    assert run("discover", "--method", "fa-dpc", "--oracle",
               "--out", tmp_path / "run") == 2


def test_eval_perfect_result(tmp_path):
    model_path = write_model(tmp_path / "m.json", "bench-a")
    res_dir = tmp_path / "res"
    run("discover", "--method", "fa-equvar", "--oracle",
        "--model", model_path, "--out", res_dir)
    out = tmp_path / "eval"
    assert run("eval", "--truth", model_path,
               "--result", res_dir / "result.json", "--out", out) == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["shd"] == 0
    assert report["edge_precision"] == 1.0
    assert report["edge_recall"] == 1.0
    assert report["leaf_accuracy"] == 1.0


def test_eval_counts_the_known_extra_edge(tmp_path):
    model_path = write_model(tmp_path / "m.json", "bench-c")
    res = fa_dpc_oracle(get_fixture("bench-c")).to_json()
    res_path = tmp_path / "result.json"
    res_path.write_text(json.dumps(res))
    out = tmp_path / "eval"
    assert run("eval", "--truth", model_path, "--result", res_path,
               "--out", out) == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["shd"] == 1
    assert report["edge_precision"] == pytest.approx(7 / 8)
    assert report["edge_recall"] == 1.0
    assert report["leaf_accuracy"] is None


def test_eval_unresolved_decomposition_scores_empty_graph(tmp_path):
    model_path = write_model(tmp_path / "m.json", "bench-b")
    res = oica_rgd_oracle(get_fixture("bench-b")).to_json()
    res_path = tmp_path / "result.json"
    res_path.write_text(json.dumps(res))
    out = tmp_path / "eval"
    assert run("eval", "--truth", model_path, "--result", res_path,
               "--out", out) == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["shd"] == 3
    assert report["edge_recall"] == 0.0
    assert report["edge_precision"] == 1.0  # nothing asserted, nothing wrong
    assert report["groups_exact"] is True
    assert report["group_jaccard"] == [1.0]
    assert report["coef_max_abs_error"] is None


def test_evaluate_rejects_node_count_mismatch():
    res = fa_dpc_oracle(get_fixture("bench-c")).to_json()
    from causalme.errors import ConfigError
    with pytest.raises(ConfigError):
        evaluate(get_fixture("bench-a"), res)


def test_curves_threshold_table(tmp_path):
    out = tmp_path / "run"
    assert run("curves", "--kind", "leaf-threshold", "--n-min", 2,
               "--n-max", 6, "--out", out) == 0
    with open(out / "curves.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "min_leaf_fraction", "max_factors"]
    table = {int(r[0]): (float(r[1]), float(r[2])) for r in rows[1:]}
    assert table[3] == (pytest.approx(2 / 3), 1.0)
    assert table[4][0] == pytest.approx(0.5930703308172536)
    assert table[4][1] == pytest.approx(1.6277186767309857)
    assert table[6] == (0.5, 3.0)


def test_curves_attenuation_table(tmp_path):
    out = tmp_path / "run"
    assert run("curves", "--kind", "attenuation", "--gamma", "0,1",
               "--rho", "0.5", "--out", out) == 0
    with open(out / "curves.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["gamma", "rho_tilde", "rho12", "rho13_2"]
    vals = [[float(x) for x in r] for r in rows[1:]]
    assert vals[0] == [0.0, 0.5, 0.5, 0.0]
    assert vals[1][2] == pytest.approx(0.5 / np.sqrt(2))
    assert vals[1][3] == pytest.approx(0.25 / 1.75)


def test_curves_plot_renders_png(tmp_path):
    out = tmp_path / "run"
    assert run("curves", "--kind", "attenuation", "--plot", "--out", out) == 0
    png = out / "curves.png"
    assert png.exists()
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_curves_rejects_degenerate_range(tmp_path):
    assert run("curves", "--kind", "leaf-threshold", "--n-min", 1,
               "--out", tmp_path / "run") == 2


def test_assumptions_reports_applicable_methods(tmp_path):
    model_path = write_model(tmp_path / "a.json", "bench-a")
    out = tmp_path / "run"
    assert run("assumptions", "--model", model_path, "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["applicable_methods"] == ["fa-equvar", "fa-dpc", "oica-rgd"]
    assert "caveat" not in report  # bench noise is uniform, not Gaussian

    model_path_d = write_model(tmp_path / "d.json", "bench-d")
    out_d = tmp_path / "run-d"
    assert run("assumptions", "--model", model_path_d, "--out", out_d) == 0
    report_d = json.loads((out_d / "report.json").read_text())
    assert report_d["applicable_methods"] == ["oica-rgd"]


def test_assumptions_gaussian_caveat(tmp_path):
    obj = model_to_json(get_fixture("collider3"))
    for spec in obj["noise"]:
        spec["dist"] = "gaussian"
    model_path = tmp_path / "g.json"
    model_path.write_text(json.dumps(obj))
    out = tmp_path / "run"
    assert run("assumptions", "--model", model_path, "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert "oica-rgd" in report["applicable_methods"]
    assert "all-Gaussian" in report["caveat"]
