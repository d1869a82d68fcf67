import json
import subprocess
import sys

import pytest

from stratnet.cli import main, run
from stratnet.model import LatentParams, ModelSpec, spec_to_dict


def write_config(path, spec=None, run_=None):
    cfg = {"model": spec_to_dict(spec or ModelSpec(T=1, kappa=1.0, s_kind="lagged_link_and_common_max",
                                                   v_params=LatentParams((1.0, 1.0), (), -0.5),
                                                   v0_params=LatentParams((0.3, 0.3), (), -0.5)))}
    if run_:
        cfg["run"] = run_
    path.write_text(json.dumps(cfg))
    return path


def read(d, name):
    return (d / name).read_bytes()


def test_simulate_twice_identical(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    for k in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--n", "100", "--seed", "7", "--out", str(tmp_path / k)]) == 0
    for name in ("edges.csv", "nodes.csv", "summary.txt", "manifest.txt", "config.json"):
        assert read(tmp_path / "a", name) == read(tmp_path / "b", name)
    assert read(tmp_path / "a", "edges.csv").startswith(b"period,i,j\n")


def test_thread_count_does_not_change_artifacts(tmp_path):
    cfg = write_config(tmp_path / "c.json", run_={"reps": 500, "n": 60})
    for k, th in (("t1", "1"), ("t8", "8")):
        assert main(["clt", "--config", str(cfg), "--threads", th, "--stat", "degree", "--out", str(tmp_path / k)]) == 0
    for name in ("clt_degree_draws.csv", "clt_degree_qq.csv", "summary.txt", "manifest.txt"):
        assert read(tmp_path / "t1", name) == read(tmp_path / "t8", name)


def test_manifest_lists_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["moments", "--n", "30", "--stat", "degree", "--stat", "triangle:t=0", "--out", str(out)]) == 0
    man = (out / "manifest.txt").read_text()
    assert "config_sha256 = " in man and "artifact.stats.csv = sha256:" in man and "seed = 0" in man
    header = (out / "stats.csv").read_text().splitlines()[0]
    assert header == "id,degree[0],triangle:t=0[0]"


def test_stabilize_verifies_all_nodes(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "s"
    assert run(cfg, ["--n", "200", "--K", "1", "--stat", "degree", "--check", "--out", str(out)], "stabilize") == 0
    rows = (out / "stabilization.csv").read_text().splitlines()[1:]
    assert len(rows) == 200 and all(r.endswith(",true") for r in rows)
    assert "failures = 0" in (out / "summary.txt").read_text()


def test_missing_key_named(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    d = spec_to_dict(ModelSpec())
    del d["kappa"]
    cfg.write_text(json.dumps({"model": d}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "kappa" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["simulate", "--set", "model.kappa=null"],
    ["simulate", "--set", "run.bogus=1"],
    ["simulate", "--stat", "nonsense"],
    ["frobnicate"],
    ["simulate", "--n", "ten"],
])
def test_config_errors_exit_1(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "o")]) == 1


def test_unreadable_config_exit_1(tmp_path):
    bad = tmp_path / "x.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 1


def test_runtime_error_exit_2(tmp_path):
    # a pair whose link removes its own reason to exist has no stable state
    spec = ModelSpec(T=0, kappa=3.0, s_kind="lagged_link",
                     v_params=LatentParams((0.0,)), v0_params=LatentParams((-2.0,), (), 0.0))
    cfg = write_config(tmp_path / "c.json", spec)
    assert main(["simulate", "--config", str(cfg), "--n", "100", "--out", str(tmp_path / "o")]) == 2


def test_failed_check_exit_3(tmp_path):
    cfg = write_config(tmp_path / "c.json", run_={"mu0": [100.0], "networks": 10, "n": 40})
    assert main(["infer", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert main(["infer", "--config", str(cfg), "--check", "--out", str(tmp_path / "o")]) == 3


@pytest.mark.parametrize("cmd,extra", [
    ("branching", ["--reps", "600"]),
    ("sparsity", ["--reps", "2", "--set", 'run.n_grid=[100,200,400]']),
    ("vardecomp", ["--n", "40", "--reps", "2000", "--stat", "constant"]),
])
def test_other_commands_run(tmp_path, cmd, extra):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / cmd
    assert main([cmd, "--config", str(cfg), "--out", str(out)] + extra) == 0
    assert (out / "summary.txt").exists() and (out / "manifest.txt").exists()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "stratnet", "simulate", "--n", "20", "--out", str(tmp_path / "m")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "nodes = 20" in res.stdout
