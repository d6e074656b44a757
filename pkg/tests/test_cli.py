import json

import numpy as np
import pytest

from matmech import bench
from matmech.bench import BenchRow
from matmech.cli import main

TWO_WAY_SPEC = {
    "domain": [2, 5, 50, 100],
    "terms": [
        {"weight": 1.0, "blocks": b} for b in [
            ["identity", "identity", "total", "total"],
            ["identity", "total", "identity", "total"],
            ["identity", "total", "total", "identity"],
            ["total", "identity", "identity", "total"],
            ["total", "identity", "total", "identity"],
            ["total", "total", "identity", "identity"],
        ]
    ],
}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_compile_two_way_marginals(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json", TWO_WAY_SPEC)
    out = tmp_path / "compiled.json"
    assert main(["compile", "--workload", spec, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "N = 50000" in text
    assert "k = 6" in text
    assert "m = 6060" in text
    assert out.exists()


def test_compile_single_total(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [7], "terms": [{"weight": 1.0,
                                                 "blocks": ["total"]}]})
    assert main(["compile", "--workload", spec, "--out",
                 str(tmp_path / "o.json")]) == 0
    text = capsys.readouterr().out
    assert "m = 1" in text
    assert "k = 1" in text


def test_compile_canonical_and_idempotent(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [8, 4],
                       "terms": [{"blocks": ["prefix", {"width": 2}]}],
                       "marginals": {"weights": [0, 1, 0, 0.5]}})
    out1, out2 = tmp_path / "c1.json", tmp_path / "c2.json"
    assert main(["compile", "--workload", spec, "--out", str(out1)]) == 0
    assert main(["compile", "--workload", str(out1), "--out", str(out2)]) == 0
    capsys.readouterr()
    assert out1.read_bytes() == out2.read_bytes()
    obj = json.loads(out1.read_text())
    assert len(obj["terms"]) == 3  # marginals expanded into explicit terms
    assert "marginals" not in obj


def test_compile_malformed_block_names_term(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [4], "terms": [{"weight": 1, "blocks": ["total"]},
                                                {"weight": 1, "blocks": ["boom"]}]})
    rc = main(["compile", "--workload", spec, "--out", str(tmp_path / "o.json")])
    assert rc == 2
    assert "term 1" in capsys.readouterr().err


def test_optimize_marginal_operator(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json", TWO_WAY_SPEC)
    out = tmp_path / "strategy.json"
    rc = main(["optimize", "--workload", spec, "--operators", "marginal",
               "--seed", "0", "--out", str(out)])
    assert rc == 0
    obj = json.loads(out.read_text())
    assert obj["provenance"]["operator"] == "marginal"
    assert obj["unit_error"] == pytest.approx(62886.0, rel=0.01)
    assert "marginal" in obj["variant"]


def test_optimize_deterministic_bytes(tmp_path):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [16], "terms": [{"weight": 1.0,
                                                  "blocks": ["allrange"]}]})
    out1, out2 = tmp_path / "s1.json", tmp_path / "s2.json"
    for out in (out1, out2):
        rc = main(["optimize", "--workload", spec, "--operators", "kron",
                   "--restarts", "5", "--seed", "3", "--out", str(out)])
        assert rc == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_optimize_opt0_size_guard(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [200, 200],
                       "terms": [{"weight": 1.0,
                                  "blocks": ["identity", "identity"]}]})
    rc = main(["optimize", "--workload", spec, "--operators", "opt0",
               "--out", str(tmp_path / "s.json")])
    assert rc == 2
    assert "entries" in capsys.readouterr().err


def test_analyze_allrange_baselines(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [64], "terms": [{"weight": 1.0,
                                                  "blocks": ["allrange"]}]})
    rc = main(["analyze", "--workload", spec, "--noise", "laplace",
               "--epsilon", "1.0", "--format", "csv"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    rows = {r.split(",")[0]: r.split(",") for r in lines[1:] if "," in r}
    assert float(rows["identity"][3]) == pytest.approx(6.63, rel=0.005)
    assert float(rows["svdb"][3]) == pytest.approx(3.22, rel=0.01)
    rc = main(["analyze", "--workload", spec, "--noise", "gaussian",
               "--epsilon", "1.0", "--delta", "1e-6", "--format", "csv"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    rows = {r.split(",")[0]: r.split(",") for r in lines[1:] if "," in r}
    assert float(rows["svdb"][3]) == pytest.approx(9.62, rel=0.01)


def test_analyze_ratio_one_for_identity_copy(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [8], "terms": [{"weight": 1.0,
                                                 "blocks": ["identity"]}]})
    strat = {"norm": "L1", "variant": {"kron": [np.eye(8).tolist()]},
             "unit_error": None, "provenance": {}}
    spath = write_json(tmp_path / "s.json", strat)
    rc = main(["analyze", "--workload", spec, "--strategy", spath,
               "--format", "csv"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    row = [r for r in lines if r.startswith(spath)][0].split(",")
    assert float(row[4]) == pytest.approx(1.0, abs=1e-12)


def test_analyze_unsupported_strategy_not_fatal(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [4], "terms": [{"weight": 1.0,
                                                 "blocks": ["identity"]}]})
    strat = {"norm": "L1", "variant": {"kron": [[[1.0, 1.0, 1.0, 1.0]]]},
             "unit_error": None, "provenance": {}}
    spath = write_json(tmp_path / "s.json", strat)
    rc = main(["analyze", "--workload", spec, "--strategy", spath,
               "--format", "csv"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "unsupported" in out


def run_toy_pipeline(tmp_path, rows, seed="7", extra=()):
    domain = write_json(tmp_path / "d.json",
                        {"attributes": [{"name": "a", "values": [0, 1]},
                                        {"name": "b", "values": [0, 1]}]})
    spec = write_json(tmp_path / "w.json",
                      {"domain": [2, 2],
                       "terms": [{"weight": 1.0, "blocks": ["prefix", "identity"]}]})
    strat = {"norm": "L1",
             "variant": {"kron": [np.tril(np.ones((2, 2))).tolist(),
                                  np.eye(2).tolist()]},
             "unit_error": None, "provenance": {}}
    spath = write_json(tmp_path / "s.json", strat)
    data = tmp_path / "data.csv"
    data.write_text("a,b\n" + "".join(f"{a},{b}\n" for a, b in rows))
    out = tmp_path / "answers.csv"
    rc = main(["run", "--dataset", str(data), "--domain", domain,
               "--workload", spec, "--strategy", spath, "--seed", seed,
               "--out", str(out), *extra])
    return rc, out


def test_run_zero_noise_matches_hand_computation(tmp_path):
    # counts: x = [1, 2, 1, 0]; W = (P2 x I2) -> rows [x00, x01,
    # x00+x10, x01+x11] = [1, 2, 2, 2]
    rc, out = run_toy_pipeline(tmp_path, [(0, 0), (0, 1), (0, 1), (1, 0)],
                               extra=("--zero-noise",))
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    answers = [float(l.split(",")[2]) for l in lines[1:]]
    assert answers == pytest.approx([1.0, 2.0, 2.0, 2.0], abs=1e-8)
    with open(str(out) + ".meta.json") as f:
        meta = json.load(f)
    assert meta["seed"] == 7
    assert meta["notes"]["zero_noise"] is True


def test_run_empty_dataset_zero_noise(tmp_path):
    rc, out = run_toy_pipeline(tmp_path, [], extra=("--zero-noise",))
    assert rc == 0
    answers = [float(l.split(",")[2])
               for l in out.read_text().strip().splitlines()[1:]]
    assert answers == [0.0, 0.0, 0.0, 0.0]


def test_run_seeded_replay_identical(tmp_path):
    rc1, out1 = run_toy_pipeline(tmp_path, [(0, 0), (1, 1)], seed="5")
    first = out1.read_bytes()
    rc2, out2 = run_toy_pipeline(tmp_path, [(0, 0), (1, 1)], seed="5")
    assert rc1 == rc2 == 0
    assert first == out2.read_bytes()


def test_run_ingestion_error_names_row(tmp_path, capsys):
    rc, _ = run_toy_pipeline(tmp_path, [(0, 0), (2, 1)])
    assert rc == 2
    assert "row 2" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as e:
        main(["optimize"])  # missing required flags
    assert e.value.code == 1


def test_union_strategy_file_round_trip(tmp_path, capsys):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [16, 16],
                       "terms": [{"weight": 1.0, "blocks": ["prefix", "total"]},
                                 {"weight": 1.0, "blocks": ["total", "prefix"]}]})
    spath = tmp_path / "s.json"
    rc = main(["optimize", "--workload", spec, "--operators", "plus",
               "--restarts", "3", "--seed", "1", "--out", str(spath)])
    assert rc == 0
    capsys.readouterr()
    obj = json.loads(spath.read_text())
    assert obj["provenance"]["operator"] == "plus"
    assert obj["provenance"]["groups"] == [[0], [1]]
    # the analyzed Q of a union strategy is the budget-split bound
    rc = main(["analyze", "--workload", spec, "--strategy", str(spath),
               "--format", "csv"])
    assert rc == 0
    out = capsys.readouterr().out
    row = [r for r in out.splitlines() if r.startswith(str(spath))][0]
    assert "*" in row.split(",")[1]
    # and the full pipeline runs with it
    values = list(range(16))
    domain = write_json(tmp_path / "d.json",
                        {"attributes": [{"name": "a", "values": values},
                                        {"name": "b", "values": values}]})
    data = tmp_path / "data.csv"
    data.write_text("a,b\n0,3\n2,2\n")
    rc = main(["run", "--dataset", str(data), "--domain", domain,
               "--workload", spec, "--strategy", str(spath), "--zero-noise",
               "--out", str(tmp_path / "ans.csv")])
    assert rc == 0
    lines = (tmp_path / "ans.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 32  # 16 prefix-row answers per term
    meta = json.loads((tmp_path / "ans.csv.meta.json").read_text())
    assert "consistency" in meta["notes"]


def test_run_with_marginal_strategy(tmp_path):
    spec = write_json(tmp_path / "w.json",
                      {"domain": [2, 2],
                       "marginals": {"weights": [0.0, 1.0, 1.0, 0.0]}})
    theta = [0.0, 0.25, 0.25, 0.5]
    spath = write_json(tmp_path / "s.json",
                       {"norm": "L1",
                        "variant": {"marginal": {"type": "marginal",
                                                 "domain": [2, 2],
                                                 "theta": theta}},
                        "unit_error": None, "provenance": {}})
    domain = write_json(tmp_path / "d.json",
                        {"attributes": [{"name": "a", "values": [0, 1]},
                                        {"name": "b", "values": [0, 1]}]})
    data = tmp_path / "data.csv"
    data.write_text("a,b\n0,0\n0,1\n1,1\n1,1\n")
    out = tmp_path / "ans.csv"
    rc = main(["run", "--dataset", str(data), "--domain", domain,
               "--workload", spec, "--strategy", spath, "--zero-noise",
               "--out", str(out)])
    assert rc == 0
    answers = [float(l.split(",")[2])
               for l in out.read_text().strip().splitlines()[1:]]
    # x = [1, 1, 0, 2]; mask 1 keeps the second attribute: [x00+x10, x01+x11];
    # mask 2 keeps the first: [x00+x01, x10+x11]
    assert answers == pytest.approx([1.0, 3.0, 2.0, 2.0], abs=1e-8)


def test_optimization_failure_exit_code(tmp_path, monkeypatch, capsys):
    from matmech import cli
    from matmech.errors import OptimizationError

    def boom(*args, **kwargs):
        raise OptimizationError("nope")

    monkeypatch.setattr(cli, "opt_kron", boom)
    spec = write_json(tmp_path / "w.json",
                      {"domain": [4], "terms": [{"weight": 1.0,
                                                 "blocks": ["identity"]}]})
    rc = main(["optimize", "--workload", spec, "--operators", "kron",
               "--out", str(tmp_path / "s.json")])
    assert rc == 3
    assert "nope" in capsys.readouterr().err


def test_bench_exit_codes(monkeypatch, capsys):
    rows_ok = [BenchRow("x", 1.0, 1.0, "rel", True)]
    rows_bad = [BenchRow("x", 2.0, 1.0, "rel", False)]
    monkeypatch.setitem(bench.SUITES, "marginals", lambda seed: rows_ok)
    assert main(["bench", "--suite", "marginals"]) == 0
    monkeypatch.setitem(bench.SUITES, "marginals", lambda seed: rows_bad)
    assert main(["bench", "--suite", "marginals"]) == 4
    out = capsys.readouterr().out
    assert "FAIL" in out
