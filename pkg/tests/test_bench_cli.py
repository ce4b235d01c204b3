import json
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

from hdgann import InvalidArgumentError, QueryParams, gen_poisson, read_dataset, run_bench
from hdgann.bench import BenchReport, aggregate, cell_counts, uniformity_pvalue
from hdgann.cli import main
from conftest import poisson_index


def test_gen_poisson_single_point():
    for d in range(1, 7):
        data = gen_poisson(1, d, side=2.0, seed=d)
        assert data.coords.shape == (1, d)
        assert np.all((0 <= data.coords) & (data.coords <= 2.0))


def test_gen_poisson_deterministic():
    assert np.array_equal(gen_poisson(100, 3, seed=4).coords, gen_poisson(100, 3, seed=4).coords)
    assert not np.array_equal(gen_poisson(100, 3, seed=4).coords, gen_poisson(100, 3, seed=5).coords)


def test_gen_poisson_rejects():
    for kwargs in ({"n": 0, "d": 2}, {"n": 5, "d": 0}, {"n": 5, "d": 7}, {"n": 5, "d": 2, "side": 0.0}):
        with pytest.raises(InvalidArgumentError):
            gen_poisson(**kwargs)


def test_chi_square_uniformity():
    data = gen_poisson(10_000, 2, seed=1)
    counts = cell_counts(data.coords, 10)
    assert counts.sum() == 10_000 and len(counts) == 100
    assert uniformity_pvalue(data.coords, 10) > 0.01


def test_chi_square_calibration():
    # a single test rejects a correct generator 1% of the time; over many
    # seeds the rejection rate must match that and p-values must be uniform
    pvalues = [uniformity_pvalue(gen_poisson(10_000, 2, seed=s).coords, 10) for s in range(200)]
    rejections = sum(p < 0.01 for p in pvalues)
    assert rejections <= stats.binom.ppf(0.999, 200, 0.01)
    assert stats.kstest(pvalues, "uniform").pvalue > 0.001


def test_chi_square_detects_clustering():
    rng = np.random.default_rng(0)
    skewed = rng.uniform(size=(10_000, 2)) ** 2
    assert uniformity_pvalue(skewed, 10) < 0.01


def test_report_self_consistent(tmp_path):
    H = poisson_index(1024, 2)
    params = QueryParams(k=10, c=2.0, delta=0.8)
    report = run_bench(H, 60, params, seed=3)
    path = tmp_path / "r.jsonl"
    report.write(path)
    back = BenchReport.read(path)
    assert back.records == report.records
    extra = {key: back.aggregate[key] for key in
             ("n", "d", "build_seed", "query_seed", "epsilon", "layer_max_degrees")}
    assert aggregate(back.records, params, extra) == back.aggregate
    assert [r["query_id"] for r in back.records] == list(range(60))
    dist_rows = [r for r in back.records if r["guarantee_path"] == "distance"]
    assert all(r["distance_ok"] for r in dist_rows)
    if dist_rows:
        assert back.aggregate["distance_criterion_pass_rate"] == 1.0


def test_workers_do_not_change_records():
    H = poisson_index(1024, 2)
    params = QueryParams(k=5, c=1.5)
    assert run_bench(H, 40, params, seed=1).records == run_bench(H, 40, params, seed=1, workers=4).records


def test_timing_only_on_request():
    H = poisson_index(256, 2)
    params = QueryParams(k=5)
    assert "latency_s" not in run_bench(H, 3, params).records[0]
    assert run_bench(H, 3, params, timing=True).records[0]["latency_s"] >= 0


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "p.txt"
    index = tmp_path / "p.idx"
    assert main(["gen", "--n", "512", "--d", "2", "--seed", "7", "--output", str(data)]) == 0
    assert main(["build", "--input", str(data), "--output", str(index), "--seed", "2"]) == 0
    return tmp_path


def test_gen_build_validate(workspace, capsys):
    assert read_dataset(workspace / "p.txt").n == 512
    assert main(["validate", "--index", str(workspace / "p.idx")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_validate_failure_exit_code(workspace, capsys):
    from hdgann import load_index, save_index
    H = load_index(workspace / "p.idx")
    H.nodes[5].radius = 0.0
    save_index(H, workspace / "bad.idx")
    assert main(["validate", "--index", str(workspace / "bad.idx")]) == 1
    assert "FAIL sphere_enclosure" in capsys.readouterr().out


def test_query_command(workspace, capsys):
    rc = main(["query", "--index", str(workspace / "p.idx"), "--q", "0.5,0.5", "--k", "4", "--c", "2",
               "--delta", "0.8"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["ids"]) == 4 and out["guarantee_path"] in ("recall", "distance")
    assert out["stats"]["backend_calls"] >= 1


def test_usage_errors(workspace):
    idx = str(workspace / "p.idx")
    base = ["query", "--index", idx, "--c", "2", "--delta", "0.8"]
    assert main(base + ["--q", "0.5,0.5", "--k", "513"]) == 2
    assert main(base + ["--q", "0.5,0.5,0.5", "--k", "3"]) == 2
    assert main(base + ["--q", "a,b", "--k", "3"]) == 2
    assert main(["query", "--index", idx, "--q", "0.5,0.5", "--k", "3", "--c", "0.5", "--delta", "0.8"]) == 2
    assert main(["gen", "--n", "5", "--d", "9", "--output", str(workspace / "x.txt")]) == 2
    with pytest.raises(SystemExit) as err:
        main(["build", "--input", str(workspace / "p.txt")])
    assert err.value.code == 2


def test_file_errors(workspace):
    assert main(["validate", "--index", str(workspace / "missing.idx")]) == 1
    (workspace / "junk.idx").write_bytes(b"nope")
    assert main(["validate", "--index", str(workspace / "junk.idx")]) == 1
    (workspace / "bad.txt").write_text("2 3\n1 2\n")
    assert main(["build", "--input", str(workspace / "bad.txt"), "--output", str(workspace / "o.idx")]) == 1


def test_bench_command(workspace):
    report = workspace / "r.jsonl"
    rc = main(["bench", "--index", str(workspace / "p.idx"), "--queries", "50", "--k", "5", "--c", "2",
               "--delta", "0.8", "--backend", "exact", "--report", str(report)])
    assert rc == 0
    back = BenchReport.read(report)
    assert len(back.records) == 50
    assert back.aggregate["build_seed"] == 2 and back.aggregate["query_seed"] == 0
    assert back.aggregate["distance_criterion_pass_rate"] in (1.0, None)


def test_console_script(workspace):
    out = subprocess.run([sys.executable, "-m", "hdgann.cli", "validate", "--index", str(workspace / "p.idx")],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "PASS root" in out.stdout
    out = subprocess.run([sys.executable, "-m", "hdgann.cli", "bench"], capture_output=True, text=True)
    assert out.returncode == 2
