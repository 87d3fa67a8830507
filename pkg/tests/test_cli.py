import csv
import json
import os
import shutil

import numpy as np
import pytest

from smoothsvm.cli import main
from smoothsvm.offline import InferenceConfig
from smoothsvm.online import deserialize_state, state_from_json
from smoothsvm.simgen import ScenarioConfig, compute_metrics, oracle_beta_star, run_replication, sample_scenario

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
PINNED = ["--lam", "0.05", "--delta", "0.1", "--h", "0.5"]


def write_csv(path, X, y):
    with open(path, "w") as fh:
        fh.write(",".join(["y"] + [f"x{j}" for j in range(1, X.shape[1] + 1)]) + "\n")
        for label, row in zip(y, X):
            fh.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")
    return str(path)


def scenario_csv(path, p, n, seed):
    data = sample_scenario(ScenarioConfig(case=1, cov_type="III", p=p, n=n, seed=seed))
    return write_csv(path, data.X, data.y)


def read_table(path):
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def columns(rows, *names):
    return {k: np.array([float(r[k]) for r in rows]) for k in names}


@pytest.fixture
def fixture_csv(tmp_path):
    path = tmp_path / "fixture.csv"
    shutil.copy(os.path.join(DATA, "fixture.csv"), path)
    return str(path)


# ---------------------------------------------------------------- offline


def test_offline_matches_golden_files(fixture_csv, tmp_path):
    out = str(tmp_path / "res")
    assert main(["offline", "--input", fixture_csv, "--out", out, *PINNED]) == 0
    with open(out + ".csv", "rb") as a, open(os.path.join(DATA, "golden_offline.csv"), "rb") as b:
        assert a.read() == b.read()
    with open(out + ".json") as a, open(os.path.join(DATA, "golden_offline.json")) as b:
        got, want = json.load(a), json.load(b)
    for doc in (got, want):
        doc["metadata"].pop("wall_time")
    assert got == want


def test_offline_leaves_input_untouched_and_no_temp_files(fixture_csv, tmp_path):
    with open(fixture_csv, "rb") as fh:
        before = fh.read()
    assert main(["offline", "--input", fixture_csv, "--out", str(tmp_path / "res"), *PINNED]) == 0
    with open(fixture_csv, "rb") as fh:
        assert fh.read() == before
    assert sorted(os.listdir(tmp_path)) == ["fixture.csv", "res.csv", "res.json"]


def test_offline_output_embeds_configuration(fixture_csv, tmp_path):
    out = str(tmp_path / "res")
    main(["offline", "--input", fixture_csv, "--out", out, *PINNED, "--seed", "11"])
    with open(out + ".json") as fh:
        doc = json.load(fh)
    assert doc["config"]["lam"] == 0.05 and doc["config"]["seed"] == 11
    assert doc["metadata"]["cv_seed"] == 11 and doc["metadata"]["wall_time"] > 0
    with open(out + ".csv") as fh:
        assert json.loads(fh.readline()[len("# config "):]) == doc["config"]


def test_missing_input_is_io_error_without_output(tmp_path, capsys):
    code = main(["offline", "--input", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "res")])
    assert code == 4
    assert os.listdir(tmp_path) == []
    assert "[io]" in capsys.readouterr().err


def test_missing_output_directory_is_io_error(fixture_csv, tmp_path):
    assert main(["offline", "--input", fixture_csv, "--out", str(tmp_path / "no" / "res")]) == 4


def test_level_sets_normal_quantile(fixture_csv, tmp_path):
    out = str(tmp_path / "res")
    assert main(["offline", "--input", fixture_csv, "--out", out, *PINNED, "--level", "0.9"]) == 0
    c = columns(read_table(out + ".csv"), "estimate", "se", "ci_lower", "ci_upper")
    assert np.allclose(c["ci_upper"] - c["estimate"], 1.6449 * c["se"], rtol=1e-4)
    assert np.allclose(c["estimate"] - c["ci_lower"], 1.6449 * c["se"], rtol=1e-4)
    # same point estimates as the 95% run, only the width changes
    golden = columns(read_table(os.path.join(DATA, "golden_offline.csv")), "estimate", "se")
    assert np.array_equal(c["estimate"], golden["estimate"]) and np.array_equal(c["se"], golden["se"])


def test_parse_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("y,a\n1,2\n0,3\n")
    assert main(["offline", "--input", str(path), "--out", str(tmp_path / "res")]) == 3
    err = capsys.readouterr().err
    assert "[ingest]" in err and "line 3" in err
    assert not (tmp_path / "res.json").exists()


def test_clime_failure_exit_code(tmp_path, capsys):
    rng = np.random.default_rng(0)
    path = write_csv(tmp_path / "wide.csv", rng.standard_normal((6, 12)), [1, -1] * 3)
    assert main(["offline", "--input", path, "--out", str(tmp_path / "res"), "--lam", "0.1", "--delta", "0"]) == 6
    assert "[clime]" in capsys.readouterr().err


def test_sparse_input_matches_dense(tmp_path):
    rng = np.random.default_rng(3)
    X = np.where(rng.random((80, 5)) < 0.6, 0.0, rng.standard_normal((80, 5)))
    y = np.where(X.sum(axis=1) + rng.normal(0, 1, 80) > 0, 1, -1)
    dense = write_csv(tmp_path / "d.csv", X, y)
    with open(tmp_path / "d.svm", "w") as fh:
        for label, row in zip(y, X):
            fh.write(" ".join([str(label)] + [f"{j + 1}:{float(row[j])!r}" for j in np.flatnonzero(row)]) + "\n")
    args = ["--lam", "0.05", "--delta", "0.2"]
    assert main(["offline", "--input", dense, "--out", str(tmp_path / "a"), *args]) == 0
    assert main(["offline", "--input", str(tmp_path / "d.svm"), "--format", "sparse-libsvm", "--p", "5",
                 "--out", str(tmp_path / "b"), *args]) == 0
    a = columns(read_table(tmp_path / "a.csv"), "estimate", "se")
    b = columns(read_table(tmp_path / "b.csv"), "estimate", "se")
    assert np.allclose(a["estimate"], b["estimate"], atol=1e-10) and np.allclose(a["se"], b["se"], atol=1e-10)


# ---------------------------------------------------------------- config


def test_config_file_with_flag_precedence(fixture_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# pinned tuning\nlam = 0.05\ndelta = 0.3\nh = 0.5\nlevel = 0.9\n")
    out = str(tmp_path / "res")
    assert main(["offline", "--config", str(cfg), "--input", fixture_csv, "--out", out, "--delta", "0.1"]) == 0
    with open(out + ".json") as fh:
        meta = json.load(fh)["metadata"]
    assert meta["lam"] == 0.05 and meta["h"] == 0.5 and meta["level"] == 0.9
    assert meta["delta"] == 0.1


@pytest.mark.parametrize("text", ["lam = 0.05\nfoo = 1\n", "lam 0.05\n"])
def test_config_file_errors(fixture_csv, tmp_path, text):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    assert main(["offline", "--config", str(cfg), "--input", fixture_csv, "--out", str(tmp_path / "r")]) == 2


def test_usage_errors(fixture_csv, tmp_path, monkeypatch):
    assert main(["offline", "--input", fixture_csv]) == 2
    assert main(["bogus"]) == 2
    monkeypatch.setenv("SMOOTHSVM_WORKERS", "many")
    assert main(["offline", "--input", fixture_csv, "--out", str(tmp_path / "r"), *PINNED]) == 2


# ---------------------------------------------------------------- online


def online(path, tmp_path, *extra, name="run"):
    state, traj = str(tmp_path / f"{name}.state"), str(tmp_path / f"{name}.traj.csv")
    code = main(["online", "--input", path, "--state", state, "--trajectory", traj, *extra])
    return code, state, traj


def test_online_single_batch_equals_offline(fixture_csv, tmp_path):
    code, _, traj = online(fixture_csv, tmp_path, "--out", str(tmp_path / "on"), *PINNED)
    assert code == 0
    main(["offline", "--input", fixture_csv, "--out", str(tmp_path / "off"), *PINNED])
    names = ("estimate", "se", "ci_lower", "ci_upper", "lasso_beta")
    on, off = columns(read_table(tmp_path / "on.csv"), *names), columns(read_table(tmp_path / "off.csv"), *names)
    for k in names:
        assert np.max(np.abs(on[k] - off[k])) <= 1e-10
    rows = read_table(traj)
    assert {r["b"] for r in rows} == {"1"} and len(rows) == 7
    assert all(r["N_b"] == "120" for r in rows)


def test_online_resume_reproduces_uninterrupted_run(tmp_path):
    path = scenario_csv(tmp_path / "stream.csv", p=6, n=400, seed=2)
    code, state_full, traj_full = online(path, tmp_path, "--batches", "20", name="full")
    assert code == 0
    code, state_part, traj_part = online(path, tmp_path, "--batches", "20", "--max-batches", "10", name="part")
    assert code == 0 and deserialize_state(open(state_part, "rb").read()).b == 10
    code, _, _ = online(path, tmp_path, "--batches", "20", "--resume", state_part, name="part")
    assert code == 0
    with open(traj_full, "rb") as a, open(traj_part, "rb") as b:
        assert a.read() == b.read()
    with open(state_full, "rb") as a, open(state_part, "rb") as b:
        assert a.read() == b.read()


def test_resume_drops_rows_written_past_the_state(tmp_path):
    path = scenario_csv(tmp_path / "stream.csv", p=6, n=200, seed=4)
    online(path, tmp_path, "--batches", "4", *PINNED, name="full")
    online(path, tmp_path, "--batches", "4", "--max-batches", "2", *PINNED, name="part")
    snapshot = str(tmp_path / "after2.state")
    shutil.copy(tmp_path / "part.state", snapshot)
    # a crash after the trajectory write but before the state write
    online(path, tmp_path, "--batches", "4", "--resume", snapshot, "--max-batches", "1", *PINNED, name="part")
    online(path, tmp_path, "--batches", "4", "--resume", snapshot, *PINNED, name="part")
    with open(tmp_path / "full.traj.csv", "rb") as a, open(tmp_path / "part.traj.csv", "rb") as b:
        assert a.read() == b.read()


def test_batch_files_equal_single_file_partition(tmp_path):
    data = sample_scenario(ScenarioConfig(case=1, cov_type="III", p=6, n=150, seed=9))
    whole = write_csv(tmp_path / "all.csv", data.X, data.y)
    parts = [write_csv(tmp_path / f"b{k}.csv", data.X[idx], data.y[idx])
             for k, idx in enumerate(np.array_split(np.arange(150), 3))]
    online(whole, tmp_path, "--batches", "3", *PINNED, name="one")
    main(["online", "--input", *parts, "--state", str(tmp_path / "many.state"),
          "--trajectory", str(tmp_path / "many.traj.csv"), *PINNED])
    with open(tmp_path / "one.state", "rb") as a, open(tmp_path / "many.state", "rb") as b:
        assert a.read() == b.read()


def test_trajectory_intervals_narrow(tmp_path):
    path = scenario_csv(tmp_path / "stream.csv", p=10, n=1000, seed=0)
    code, _, traj = online(path, tmp_path, "--batches", "10")
    assert code == 0
    rows = read_table(traj)
    width = np.zeros((10, 11))
    for r in rows:
        width[int(r["b"]) - 1, int(r["coordinate"])] = float(r["ci_upper"]) - float(r["ci_lower"])
    narrowing = np.all(np.diff(width, axis=0) <= 0, axis=0)
    assert narrowing.mean() >= 0.8


def test_online_dimension_mismatch(tmp_path, capsys):
    rng = np.random.default_rng(1)
    a = write_csv(tmp_path / "a.csv", rng.standard_normal((40, 5)), [1, -1] * 20)
    b = write_csv(tmp_path / "b.csv", rng.standard_normal((40, 4)), [1, -1] * 20)
    code = main(["online", "--input", a, b, "--state", str(tmp_path / "s"), "--trajectory", str(tmp_path / "t")])
    assert code == 8
    assert not (tmp_path / "s").exists()
    # and a state from a wider stream
    online(a, tmp_path, *PINNED, name="wide")
    code, _, _ = online(b, tmp_path, "--resume", str(tmp_path / "wide.state"), *PINNED, name="narrow")
    assert code == 8


def test_corrupt_state_exit_code(fixture_csv, tmp_path, capsys):
    _, state, _ = online(fixture_csv, tmp_path, *PINNED)
    blob = bytearray(open(state, "rb").read())
    blob[60] ^= 0xFF
    bad = tmp_path / "bad.state"
    bad.write_bytes(bytes(blob))
    assert main(["state-inspect", str(bad)]) == 7
    code, _, _ = online(fixture_csv, tmp_path, "--resume", str(bad), *PINNED, name="again")
    assert code == 7
    assert "checksum" in capsys.readouterr().err


def test_state_inspect(fixture_csv, tmp_path, capsys):
    _, state, _ = online(fixture_csv, tmp_path, "--batches", "2", *PINNED)
    capsys.readouterr()
    export = str(tmp_path / "state.json")
    assert main(["state-inspect", state, "--json", export]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["p"] == 6 and summary["batches"] == 2 and summary["N"] == 120
    assert summary["lam_history"] == [0.05, 0.05] and summary["checksum"] == "ok"
    with open(export) as fh:
        restored = state_from_json(fh.read())
    original = deserialize_state(open(state, "rb").read())
    assert np.array_equal(restored.S1, original.S1) and np.array_equal(restored.H, original.H)


# ---------------------------------------------------------------- simulate


SIM = ["--p", "6", "--B", "2", "--nb", "60", "--reps", "2", "--seed", "5"]


def metric_table(path):
    return {(r["method"], r["metric"]): float(r["value"]) for r in read_table(path)}


def test_simulate_matches_scripted_metrics(tmp_path):
    out = str(tmp_path / "metrics.csv")
    assert main(["simulate", *SIM, "--out", out, "--per-rep", str(tmp_path / "rep.csv")]) == 0
    table = metric_table(out)
    cfg = ScenarioConfig(case=1, cov_type="III", p=6, B=2, n_b=60, seed=5)
    star = oracle_beta_star(cfg)
    for method in ("offline", "online"):
        results = [run_replication(cfg.with_seed(5 + r), method, InferenceConfig())[0] for r in range(2)]
        report = compute_metrics(results, star, cfg.s)
        for name in ("abias_non", "abias_zero", "abias_all", "cov_non", "cov_zero", "cov_all", "len_all"):
            assert table[(method, name)] == report.mean(name)
    rows = read_table(tmp_path / "rep.csv")
    assert {r["seed"] for r in rows} == {"5", "6"}
    assert {r["scenario"] for r in rows} == {"case1-III-p=6-B=2,n_b=60"}


def test_simulate_workers_do_not_change_results(tmp_path):
    one, two = str(tmp_path / "w1.csv"), str(tmp_path / "w2.csv")
    assert main(["simulate", *SIM, "--out", one, "--workers", "1"]) == 0
    assert main(["simulate", *SIM, "--out", two, "--workers", "3"]) == 0
    a, b = metric_table(one), metric_table(two)
    drop = {k for k in a if k[1] == "time"}
    assert {k: v for k, v in a.items() if k not in drop} == {k: v for k, v in b.items() if k not in drop}


def test_simulate_usage_errors(tmp_path):
    out = str(tmp_path / "m.csv")
    assert main(["simulate", "--p", "6", "--n", "100", "--out", out]) == 2
    assert main(["simulate", "--p", "6", "--B", "2", "--nb", "50", "--n", "99", "--out", out]) == 2
    assert main(["simulate", *SIM[:-4], "--reps", "0", "--out", out]) == 2
