import json
import os

import numpy as np
import pytest

from giph.cli import main
from giph.evaluation import read_csv


def tiny_params(tmp_path, graph_count=8, network_count=1, m=3):
    params = {
        "graphs": {"count": graph_count, "M": [4, 5], "alpha": [1.0], "p_c": [0.5],
                   "C_bar": [10.0], "B_bar": [5.0], "eps_C": [0.5], "eps_B": [0.5],
                   "hw_tags": [[[1, 0.2]]]},
        "networks": {"count": network_count, "m": [m], "SP_bar": [2.0],
                     "BW_bar": [10.0], "DL_bar": [0.2], "eps_SP": [0.5],
                     "eps_BW": [0.5], "hw_tags": [[[1, 0.7]]]},
    }
    path = tmp_path / "params.json"
    path.write_text(json.dumps(params))
    return str(path)


def run(argv):
    return main([str(a) for a in argv])


def test_generate_writes_split_dataset(tmp_path):
    params = tiny_params(tmp_path, graph_count=7)
    out = tmp_path / "data"
    assert run(["generate", "--params", params, "--out", out, "--seed", 1]) == 0
    train = json.loads((out / "train_graphs.json").read_text())
    test = json.loads((out / "test_graphs.json").read_text())
    assert len(train["graphs"]) == 4 and len(test["graphs"]) == 3
    nets = json.loads((out / "train_networks.json").read_text())
    nets_t = json.loads((out / "test_networks.json").read_text())
    assert len(nets["networks"]) == 1 == len(nets_t["networks"])
    # Single-network datasets share the network across splits.
    assert nets == nets_t


def test_generate_equal_split_300(tmp_path):
    params = tiny_params(tmp_path, graph_count=300)
    out = tmp_path / "data300"
    assert run(["generate", "--params", params, "--out", out, "--seed", 0]) == 0
    train = json.loads((out / "train_graphs.json").read_text())
    test = json.loads((out / "test_graphs.json").read_text())
    assert len(train["graphs"]) == 150 and len(test["graphs"]) == 150


def test_generate_deterministic(tmp_path):
    params = tiny_params(tmp_path)
    out1, out2 = tmp_path / "d1", tmp_path / "d2"
    run(["generate", "--params", params, "--out", out1, "--seed", 5])
    run(["generate", "--params", params, "--out", out2, "--seed", 5])
    for name in ("train_graphs.json", "test_graphs.json",
                 "train_networks.json", "test_networks.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_generate_bad_params_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"graphs": {"count": 2}, "networks": {"count": 1}}))
    code = run(["generate", "--params", bad, "--out", tmp_path / "x"])
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("error:") and "graphs.M" in err and err.count("\n") == 1


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """A tiny dataset and a 4-episode training run shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    params = tiny_params(root)
    data = root / "data"
    run(["generate", "--params", params, "--out", data, "--seed", 2])
    code = run(["train", "--dataset", data, "--logdir", root / "runs",
                "--episodes", 4, "--eval-every", 2, "--eval-cases", 2,
                "--seed", 3, "--run-name", "smoke"])
    assert code == 0
    return root, data, root / "runs" / "smoke"


def test_train_run_folder_contents(trained_run):
    _, _, run_dir = trained_run
    names = set(os.listdir(run_dir))
    assert {"args.json", "train_log.csv", "eval.csv", "dataset_path.txt",
            "policy_2", "policy_4", "embedding_4", "optimizer_4"} <= names
    rows = read_csv(run_dir / "train_log.csv")
    assert len(rows) == 4
    assert rows[1]["eval_slr"] != "" and rows[0]["eval_slr"] == ""


def test_cmd_test_shared_initial_placements(trained_run):
    root, data, run_dir = trained_run
    code = run(["test", "--run-folder", run_dir, "--num-cases", 2, "--seed", 7,
                "--policies", "giph,random,random-task-eft,heft", "--tag", "t1"])
    assert code == 0
    rows = read_csv(run_dir / "test_t1" / "results.csv")
    assert len(rows) == 8   # 2 cases x 4 policies
    by_case = {}
    for r in rows:
        by_case.setdefault(r["case_id"], set()).add(r["initial_placement"])
    assert all(len(v) == 1 for v in by_case.values())
    assert {r["policy"] for r in rows} == {"giph", "random", "random-task-eft", "heft"}
    curves = read_csv(run_dir / "test_t1" / "search_curve.csv")
    assert curves, "search efficiency curve rows missing"
    timings = read_csv(run_dir / "test_t1" / "timings.csv")
    assert len(timings) == 8
    assert "wall_ms" not in rows[0]


def test_cmd_test_single_case_single_row_per_policy(trained_run):
    _, _, run_dir = trained_run
    run(["test", "--run-folder", run_dir, "--num-cases", 1, "--seed", 9,
         "--policies", "giph,heft", "--tag", "t2"])
    rows = read_csv(run_dir / "test_t2" / "results.csv")
    assert len(rows) == 2
    assert {r["policy"] for r in rows} == {"giph", "heft"}


def test_cmd_test_results_deterministic(trained_run):
    _, _, run_dir = trained_run
    run(["test", "--run-folder", run_dir, "--num-cases", 2, "--seed", 7,
         "--policies", "giph,random", "--tag", "d1"])
    run(["test", "--run-folder", run_dir, "--num-cases", 2, "--seed", 7,
         "--policies", "giph,random", "--tag", "d2"])
    a = (run_dir / "test_d1" / "results.csv").read_bytes()
    b = (run_dir / "test_d2" / "results.csv").read_bytes()
    assert a == b


def test_cmd_baseline(trained_run, tmp_path):
    root, data, _ = trained_run
    out = tmp_path / "base"
    code = run(["baseline", "--name", "heft", "--dataset", data,
                "--num-cases", 2, "--seed", 1, "--out", out])
    assert code == 0
    rows = read_csv(out / "results.csv")
    assert len(rows) == 2 and all(r["policy"] == "heft" for r in rows)


def test_cmd_adapt_stages(trained_run, tmp_path):
    root, data, run_dir = trained_run
    churn = {"stages": 2, "n_remove": 1, "capacity_factor": 0.5, "n_graphs": 2,
             "network": {"m": 4, "SP_bar": 2.0, "BW_bar": 10.0, "DL_bar": 0.2,
                         "eps_SP": 0.5, "eps_BW": 0.5, "hw_tags": [[1, 0.7]]}}
    cfg = tmp_path / "churn.json"
    cfg.write_text(json.dumps(churn))
    code = run(["adapt", "--run-folder", run_dir, "--churn-config", cfg,
                "--seed", 4, "--policies", "giph,random", "--tag", "a1"])
    assert code == 0
    rows = read_csv(run_dir / "adapt_a1" / "results.csv")
    stages = {r["stage"] for r in rows}
    assert stages == {"0", "1", "2"}
    assert len(rows) == 3 * 2 * 2   # stages x cases x policies


def test_cmd_report(trained_run, tmp_path):
    _, _, run_dir = trained_run
    out = tmp_path / "report"
    code = run(["report", "--results", run_dir / "test_t1" / "results.csv",
                "--out", out])
    assert code == 0
    assert (out / "summary_by_policy.csv").exists()
    assert (out / "summary_by_depth.csv").exists()
    assert (out / "summary.json").exists()
    assert (out / "summary.txt").exists()
    assert (out / "quality_by_depth.png").stat().st_size > 0
    assert (out / "search_efficiency.png").stat().st_size > 0
    assert (out / "search_efficiency.csv").exists()

    by_policy = read_csv(out / "summary_by_policy.csv")
    assert {r["policy"] for r in by_policy} == {"giph", "random",
                                                "random-task-eft", "heft"}
    # Round-trips its own output.
    assert all(float(r["std"]) >= 0.0 for r in by_policy)


def test_report_single_row_stats(tmp_path):
    from giph.evaluation import write_csv, RESULT_FIELDS
    from giph.report import summarize_by_policy

    row = {"case_id": 0, "instance_id": "g0-n0", "policy": "heft", "stage": "",
           "steps": 1, "depth": 3, "initial_placement": "0", "best_objective": 5.0,
           "best_slr": 1.25}
    path = tmp_path / "r.csv"
    write_csv([row], RESULT_FIELDS, path)
    summary = summarize_by_policy(read_csv(path))
    assert summary == [{"stage": "", "policy": "heft", "cases": 1,
                        "mean": 1.25, "std": 0.0}]


def test_report_depth_buckets_match_independent_grouping(trained_run, tmp_path):
    _, _, run_dir = trained_run
    from giph.report import summarize_by_depth

    rows = read_csv(run_dir / "test_t1" / "results.csv")
    summary = summarize_by_depth(rows)
    # Independent recomputation with plain dict arithmetic.
    expect = {}
    for r in rows:
        key = (int(r["depth"]), r["policy"])
        expect.setdefault(key, []).append(float(r["best_slr"]))
    assert len(summary) == len(expect)
    for entry in summary:
        vals = expect[(entry["depth"], entry["policy"])]
        assert entry["mean"] == pytest.approx(float(np.mean(vals)))
        assert entry["cases"] == len(vals)


def test_missing_run_folder_one_line_error(capsys, tmp_path):
    code = run(["test", "--run-folder", tmp_path / "nope", "--num-cases", 1])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.strip().count("\n") == 0


def test_resume_continues_from_checkpoint(trained_run):
    root, data, run_dir = trained_run
    code = run(["train", "--dataset", data, "--logdir", root / "runs",
                "--episodes", 6, "--eval-every", 100, "--eval-cases", 1,
                "--seed", 3, "--resume", run_dir])
    assert code == 0
    assert (run_dir / "policy_6").exists()
