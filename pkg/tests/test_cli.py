import csv
import json

import pytest

from fractal_penergy.core.errors import InfiniteDisparityError
from fractal_penergy.main import create_parser, main
from fractal_penergy.services.homogeneity_service import HomogeneityService

QUIET = ["--log-level", "WARNING"]


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def read_csv(path):
    with path.open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        create_parser().parse_args(["--version"])
    assert exc.value.code == 0
    assert "penergy" in capsys.readouterr().out


def test_check_interval(cli_env, capsys):
    assert main(["check", "--scheme", "interval2", "--depth", "3", "--seed", "7", *QUIET]) == 0
    report = read_json(cli_env / "out" / "check.json")
    assert (report["depth"], report["seed"]) == (3, 7)
    assert len(report["scheme_hash"]) > 0
    assert report["passed"]
    assert report["mstar"] == 1
    assert report["degree_bound"] == 2
    assert (report["covering_nt"], report["covering_ne"]) == (3, 1)
    assert report["compliance_note"] is None
    assert "PASSED" in capsys.readouterr().out


def test_check_edge_mode_carries_note(cli_env):
    main(["check", "--scheme", "square2", "--mode", "edge", "--depth", "3", *QUIET])
    report = read_json(cli_env / "out" / "check.json")
    assert report["adjacency_mode"] == "edge"
    assert report["degree_bound"] == 4
    assert report["compliance_note"]


def test_malformed_scheme_file(cli_env, capsys):
    path = cli_env / "broken.txt"
    path.write_text("L=3 mode=closure\n111\n", encoding="utf-8")
    assert main(["check", "--scheme", str(path), *QUIET]) == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_scheme(cli_env):
    assert main(["check", "--scheme", "menger-sponge", *QUIET]) == 2


def test_bad_weights_file(cli_env):
    weights = cli_env / "weights.txt"
    weights.write_text("0.5 0.4\n", encoding="utf-8")
    assert main(["check", "--scheme", "interval2", "--weights", str(weights), *QUIET]) == 2


def test_empty_m_range(cli_env):
    assert main(["sigma-scan", "--scheme", "interval2", "--m-range", "5:2", *QUIET]) == 2


def test_dimar_rejects_nonpositive_tolerance(cli_env):
    assert main(["dimar", "--scheme", "interval2", "--tol-p", "0", *QUIET]) == 2


def test_dimar_without_crossing(cli_env, capsys):
    argv = ["dimar", "--scheme", "interval2", "--p-lo", "1.1", "--p-hi", "3",
            "--m-range", "2:4", "--ring-levels", "3", *QUIET]
    assert main(argv) == 1
    report = read_json(cli_env / "out" / "dimar.json")
    assert not report["found"]
    assert report["scheme_hash"] and report["seed"] == 0
    assert report["depth"] == 7
    assert report["p_star"] is None
    assert "crossing outside" in capsys.readouterr().out


def test_conductance_ring_is_cached(cli_env):
    argv = ["conductance", "--scheme", "interval2", "--p", "2", "--m", "2", "--word", "0.1.1", *QUIET]
    assert main(argv) == 0
    first = read_json(cli_env / "out" / "conductance.json")
    assert first["value"] == pytest.approx(0.4, rel=1e-9)
    assert not first["cached"]
    assert main(argv) == 0
    second = read_json(cli_env / "out" / "conductance.json")
    assert second["cached"]
    assert second["value"] == first["value"]


def test_conductance_effective_and_usage(cli_env):
    argv = ["conductance", "--scheme", "interval2", "--p", "2", "--m", "1",
            "--a1", "0.0", "--a2", "1.1", "--no-cache", *QUIET]
    assert main(argv) == 0
    assert read_json(cli_env / "out" / "conductance.json")["value"] == pytest.approx(0.2)
    assert main(["conductance", "--scheme", "interval2", "--p", "2", "--m", "1", *QUIET]) == 2
    assert main(["conductance", "--scheme", "interval2", "--p", "2", "--m", "1",
                 "--word", "0.5", *QUIET]) == 2


def test_disparity_command(cli_env):
    argv = ["disparity", "--scheme", "interval2", "--p", "2", "--m", "1", "--restarts", "2", *QUIET]
    assert main(argv) == 0
    report = read_json(cli_env / "out" / "disparity.json")
    assert report["value"] == pytest.approx(1.5, rel=1e-8)
    assert report["attaining_set"] == ["0", "1"]
    assert report["certified_lower"]
    assert report["depth"] == 2
    assert report["seed"] == 0
    assert report["scheme_hash"]


SCAN = ["sigma-scan", "--scheme", "interval2", "--m-range", "2:4", "--disparity-m", "1:3",
        "--ring-levels", "3", *QUIET]


def test_sigma_scan_outputs(cli_env):
    assert main([*SCAN, "--p-grid", "2"]) == 0
    rows = read_csv(cli_env / "out" / "sigma_scan.csv")
    assert len(rows) == 6
    assert list(rows[0]) == [
        "scheme_hash", "depth", "seed", "scheme", "p", "source", "m", "value", "sigma_hat", "residual", "sigma_tail"
    ]
    assert {r["scheme"] for r in rows} == {"interval2"}
    assert all(float(r["residual"]) >= 0 for r in rows)
    assert {r["source"] for r in rows} == {"conductance", "disparity"}
    assert len(read_csv(cli_env / "out" / "homogeneity.csv")) == 3
    summary = read_json(cli_env / "out" / "sigma_scan.json")
    assert summary["failures"] == []
    assert len(summary["comparisons"]) == 1
    assert len(summary["homogeneity"]) == 1
    assert summary["homogeneity"][0]["m_values"] == [1, 2, 3]


def test_sigma_scan_can_skip_product_check(cli_env):
    assert main([*SCAN, "--p-grid", "2", "--homogeneity-m", "0"]) == 0
    assert not (cli_env / "out" / "homogeneity.csv").exists()
    assert read_json(cli_env / "out" / "sigma_scan.json")["homogeneity"] == []


def test_sigma_scan_records_failed_points(cli_env, monkeypatch, capsys):
    fit = HomogeneityService.fit_sigma_disparity

    def failing(self, p, m_range, n):
        if p == 3.0:
            raise InfiniteDisparityError("star splits into two components")
        return fit(self, p, m_range, n)

    monkeypatch.setattr(HomogeneityService, "fit_sigma_disparity", failing)
    assert main([*SCAN, "--p-grid", "2,3", "--homogeneity-m", "0"]) == 1
    rows = read_csv(cli_env / "out" / "sigma_scan.csv")
    assert {float(r["p"]) for r in rows} == {2.0}
    failures = read_json(cli_env / "out" / "sigma_scan.json")["failures"]
    assert failures == [
        {"p": 3.0, "error": "star splits into two components",
         "error_type": "InfiniteDisparityError", "residual": None}
    ]
    assert "InfiniteDisparityError" in capsys.readouterr().out


def test_bench_small(cli_env):
    argv = ["bench", "--sizes", "4,16", "--p-grid", "2,3", "--problems", "3",
            "--oracle-level", "2", *QUIET]
    assert main(argv) == 0
    summary = read_json(cli_env / "out" / "bench.json")
    assert summary["path_ok"] and summary["oracle_ok"]
    assert len(read_csv(cli_env / "out" / "bench_path.csv")) == 4


def test_construct_outputs_are_deterministic(cli_env):
    base = ["construct", "--scheme", "interval2", "--p", "2", "--sigma", "2", "--kmax", "2", *QUIET]
    assert main([*base, "--out", str(cli_env / "a")]) == 0
    assert main([*base, "--out", str(cli_env / "b")]) == 0
    for name in ("scaled_energy.csv", "plateau.csv", "lp_norm.csv", "construction.json"):
        assert (cli_env / "a" / name).read_bytes() == (cli_env / "b" / name).read_bytes()
    plateau = read_csv(cli_env / "a" / "plateau.csv")
    assert [r["k"] for r in plateau] == ["1", "2"]
    assert float(plateau[1]["plateau"]) == pytest.approx(1.5)
    report = read_json(cli_env / "a" / "construction.json")
    assert report["label"].endswith("inapplicable (σ>1)")
    assert report["seed"] == 0 and report["scheme_hash"]
    assert not report["truncated"]


def test_construct_rejects_bad_sigma(cli_env):
    argv = ["construct", "--scheme", "interval2", "--p", "2", "--sigma", "steep", "--kmax", "1", *QUIET]
    assert main(argv) == 2
    assert main(["construct", "--scheme", "interval2", "--p", "1", "--sigma", "1", *QUIET]) == 2


def test_cache_compact(cli_env, capsys):
    argv = ["disparity", "--scheme", "interval2", "--p", "2", "--m", "1", "--restarts", "1", *QUIET]
    assert main(argv) == 0
    assert main(argv) == 0
    capsys.readouterr()
    assert main(["cache", "compact", *QUIET]) == 0
    out = capsys.readouterr().out
    assert "1 lines dropped" in out
    lines = (cli_env / "cache" / "results.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1
