import json
import math
from pathlib import Path

import pytest

from mottlab.artifacts import read_csv
from mottlab.cli import build_parser, main

X = math.exp(-1.0)
LATTICE_D_Y = (1.0 + X) / (1.0 - X) ** 2

MOTT_FLAGS = [
    "--u-kind", "mott",
    "--mark-law", "power_uniform",
    "--gap-c", "3",
    "--n-sites", "128",
]


def _only_run(out: Path, command: str) -> Path:
    runs = sorted((out / command).iterdir())
    assert len(runs) == 1
    return runs[0]


def _lattice_config(tmp_path: Path) -> Path:
    path = tmp_path / "lattice.json"
    path.write_text(
        json.dumps(
            {
                "gap_law": "deterministic",
                "gap_d": 1.0,
                "u_kind": "zero",
                "lam": 0.0,
                "n_sites": 128,
                "eps_tail": 1e-12,
                "lambda_grid": [0.0, 0.1, 0.2],
                "write_vectors": True,
            }
        ),
        encoding="utf-8",
    )
    return path


def test_parser_lists_every_command() -> None:
    parser = build_parser()
    for command in ("gen-env", "simulate", "solve", "sweep", "einstein", "classify", "arrhenius"):
        args = parser.parse_args([command, "--seed", "3"])
        assert args.seed == 3
        assert args.command == command


def test_solve_lattice(tmp_path: Path) -> None:
    out = tmp_path / "runs"
    assert main(["solve", "--config", str(_lattice_config(tmp_path)), "--out", str(out)]) == 0
    run = _only_run(out, "solve")
    record = json.loads((run / "solve.json").read_text(encoding="utf-8"))
    assert abs(record["v_Y"]) <= 1e-12
    assert record["D_Y"] == pytest.approx(LATTICE_D_Y, abs=1e-6)
    assert record["rn_norm_p2"] == pytest.approx(1.0, abs=1e-9)
    header, rows = read_csv(run / "vectors.csv")
    assert header == ["site", "x", "pi", "g", "exit_rate", "drift"]
    assert len(rows) == 128
    assert b"\r\n" not in (run / "vectors.csv").read_bytes()


def test_rerun_needs_force_and_is_identical(tmp_path: Path) -> None:
    out = tmp_path / "runs"
    argv = ["solve", "--config", str(_lattice_config(tmp_path)), "--out", str(out)]
    assert main(argv) == 0
    run = _only_run(out, "solve")
    first = (run / "manifest.json").read_bytes()
    assert main(argv) == 2
    assert main(argv + ["--force"]) == 0
    assert (run / "manifest.json").read_bytes() == first


def test_unknown_config_key_fails(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"temperature": 1.0}), encoding="utf-8")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_classify_prints_verdict(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["classify", "--lam", "0.5", "--gap-c", "0.3", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "sub_ballistic"
    verdict = json.loads((_only_run(tmp_path, "classify") / "classify.json").read_text(encoding="utf-8"))
    assert verdict["mgf_ballistic"] == "inf"


def test_gen_env_writes_window(tmp_path: Path) -> None:
    assert main(["gen-env", "--env-range", "-5", "5", "--seed", "4", "--out", str(tmp_path)]) == 0
    run = _only_run(tmp_path, "gen-env")
    header, rows = read_csv(run / "env.csv")
    assert header == ["index", "x", "E"]
    assert [int(r[0]) for r in rows] == list(range(-5, 6))
    assert float(rows[5][1]) == 0.0
    descriptor = json.loads((run / "env.json").read_text(encoding="utf-8"))
    assert descriptor["range"] == [-5, 5]
    row_header, row_rows = read_csv(run / "row_0.csv")
    assert row_header == ["source", "target", "dx", "rate", "prob"]
    assert sum(float(r[4]) for r in row_rows) == pytest.approx(1.0, abs=1e-12)
    assert descriptor["row_0"]["radius"] >= 1


def test_simulate_writes_endpoints_and_paths(tmp_path: Path) -> None:
    argv = [
        "simulate", "--horizons", "100", "--n-walkers", "8", "--kind", "discrete",
        "--write-paths", "--out", str(tmp_path),
    ]
    assert main(argv) == 0
    run = _only_run(tmp_path, "simulate")
    header, rows = read_csv(run / "endpoints.csv")
    assert header[:3] == ["env_seed", "walk_seed", "lambda"]
    assert len(rows) == 8
    assert (run / "path_0_7.csv").exists()
    summary = json.loads((run / "simulate.json").read_text(encoding="utf-8"))
    assert summary["results"][0]["velocity"]["n_samples"] == 8


def test_simulate_on_periodic_chain(tmp_path: Path) -> None:
    argv = [
        "simulate", "--periodic", "--n-sites", "256", "--horizons", "200",
        "--n-walkers", "8", "--lam", "0", "--out", str(tmp_path),
    ]
    assert main(argv) == 0
    summary = json.loads((_only_run(tmp_path, "simulate") / "simulate.json").read_text(encoding="utf-8"))
    assert summary["mode"] == "periodic"
    assert "msd_diffusion" in summary["results"][0]


def test_sweep_writes_table(tmp_path: Path) -> None:
    argv = [
        "sweep", "--c-grid", "0.6", "0.8", "--horizons", "100", "200",
        "--n-walkers", "8", "--out", str(tmp_path),
    ]
    assert main(argv) == 0
    run = _only_run(tmp_path, "sweep")
    header, rows = read_csv(run / "sweep.csv")
    assert header == ["c", "verdict", "horizon", "value", "stderr"]
    assert len(rows) == 4
    assert {r[1] for r in rows} == {"sub_ballistic", "ballistic"}


def test_einstein_is_identical_across_jobs(tmp_path: Path) -> None:
    base = ["einstein", *MOTT_FLAGS, "--n-environments", "2", "--lambda-grid", "0", "0.1", "0.2", "--out", str(tmp_path)]
    assert main(base + ["--jobs", "1"]) == 0
    run = _only_run(tmp_path, "einstein")
    first = {p.name: p.read_bytes() for p in run.iterdir()}
    assert main(base + ["--jobs", "2", "--force"]) == 0
    second = {p.name: p.read_bytes() for p in run.iterdir()}
    assert first == second
    report = json.loads(first["einstein.json"])
    assert report["passed"] is True


def test_arrhenius_command(tmp_path: Path) -> None:
    argv = ["arrhenius", *MOTT_FLAGS, "--beta-grid", "1", "2", "--n-environments", "1", "--out", str(tmp_path)]
    assert main(argv) == 0
    header, rows = read_csv(_only_run(tmp_path, "arrhenius") / "arrhenius.csv")
    assert header == ["beta", "D", "D_stderr", "logD", "logD_stderr", "residual"]
    assert float(rows[1][1]) < float(rows[0][1])
    # one environment per temperature leaves no spread to estimate
    assert math.isnan(float(rows[0][2]))
    assert all(0.0 <= float(row[5]) <= 1e-8 for row in rows)
