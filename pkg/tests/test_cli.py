import json

import pytest

from perfhom.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    cache_hit,
    canonical_hash,
    load_config,
    main,
)


def _write(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_load_config_json_and_yaml(tmp_path):
    p = _write(tmp_path, "c.json", {"p": 1.5})
    assert load_config(p) == {"p": 1.5}
    y = tmp_path / "c.yaml"
    y.write_text("p: 1.5\nlaw:\n  kind: constant\n  gamma0: 1.0\n")
    cfg = load_config(y)
    assert cfg["law"]["kind"] == "constant"
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    from perfhom.errors import PerfhomError

    with pytest.raises(PerfhomError):
        load_config(bad)


def test_canonical_hash_order_insensitive():
    h1 = canonical_hash("cell", {"a": 1, "b": [1, 2]})
    h2 = canonical_hash("cell", {"b": [1, 2], "a": 1})
    assert h1 == h2
    assert len(h1) == 12
    assert canonical_hash("cell", {"a": 1}) != canonical_hash("lcurve", {"a": 1})


def test_missing_config_exits_1(tmp_path):
    assert main(["field", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_invalid_config_exits_1(tmp_path):
    cfg = _write(tmp_path, "c.json", {"eps": 0.25})  # law missing
    assert main(["field", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_field_command(tmp_path):
    cfg = _write(
        tmp_path,
        "field.json",
        {"law": {"kind": "constant", "gamma0": 2.0}, "eps": 0.25, "seed": 3, "p": 1.5},
    )
    out = tmp_path / "out"
    assert main(["field", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    runs = list(out.iterdir())
    assert len(runs) == 1
    run_dir = runs[0]
    assert (run_dir / "field.csv").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "field"
    assert manifest["outputs"] == ["field.csv"]
    assert cache_hit(run_dir)


def test_reruns_cached_and_byte_identical(tmp_path):
    cfg = _write(
        tmp_path,
        "cell.json",
        {
            "p": 1.5,
            "alpha": 40.0,
            "eps_list": [0.25, 0.125],
            "seeds": [0, 1, 2],
            "law": {"kind": "uniform", "lo": 0.5, "hi": 1.5},
            "cells_per_eps": 4,
            "tol_rel": 1e-5,
        },
    )
    out = tmp_path / "out"
    assert main(["cell", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    run_dir = next(out.iterdir())
    first = (run_dir / "fractions.csv").read_bytes()
    # second run is served from the cache
    assert main(["cell", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert (run_dir / "fractions.csv").read_bytes() == first
    # --no-cache recomputes but must still produce identical bytes
    assert main(["cell", "--config", str(cfg), "--out", str(out), "--no-cache"]) == EXIT_OK
    assert (run_dir / "fractions.csv").read_bytes() == first


def test_solve_cell_command(tmp_path):
    cfg = _write(
        tmp_path,
        "solve.json",
        {
            "p": 1.5,
            "problem": "cell",
            "alpha": -1.0,
            "eps": 0.25,
            "law": {"kind": "constant", "gamma0": 1.0},
            "cells_per_eps": 4,
            "tol_rel": 1e-6,
        },
    )
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    run_dir = next(out.iterdir())
    for name in ("solution.phgf", "solution.csv", "report.csv"):
        assert (run_dir / name).exists()
    header = (run_dir / "report.csv").read_text().splitlines()[0]
    assert header.startswith("iterations,energy")


def test_solve_unknown_problem_exits_1(tmp_path):
    cfg = _write(
        tmp_path,
        "solve.json",
        {"p": 1.5, "problem": "bogus", "law": {"kind": "constant", "gamma0": 1.0}},
    )
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_alpha0_synthetic(tmp_path):
    cfg = _write(
        tmp_path,
        "a0.json",
        {
            "bracket": [0.0, 10.0],
            "theta_l": 0.02,
            "tol_alpha": 0.01,
            "synthetic": {"kind": "ramp", "offset": 2.0},
        },
    )
    out = tmp_path / "out"
    assert main(["alpha0", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    run_dir = next(out.iterdir())
    lines = (run_dir / "alpha0.csv").read_text().strip().splitlines()
    alpha0 = float(lines[1].split(",")[0])
    # ramp max(0, a - 2) crosses theta_l = 0.02 at 2.02
    assert alpha0 == pytest.approx(2.02, abs=0.01)


def test_alpha0_bad_bracket_exits_1(tmp_path):
    cfg = _write(
        tmp_path,
        "a0.json",
        {"bracket": [5.0, 10.0], "synthetic": {"kind": "ramp", "offset": 2.0}},
    )
    # an invalid bracket is a domain error, not a solver failure
    rc = main(["alpha0", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_lcurve_command_with_plot(tmp_path):
    cfg = _write(
        tmp_path,
        "lc.json",
        {
            "p": 1.5,
            "alphas": [-1.0, 40.0],
            "eps_list": [0.25, 0.125],
            "seeds": [0, 1, 2],
            "law": {"kind": "constant", "gamma0": 1.0},
            "cells_per_eps": 4,
            "tol_rel": 1e-4,
        },
    )
    out = tmp_path / "out"
    assert main(["lcurve", "--config", str(cfg), "--out", str(out), "--plot"]) == EXIT_OK
    run_dir = next(out.iterdir())
    assert (run_dir / "lcurve.csv").exists()
    assert (run_dir / "lcurve.svg").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert "lcurve.svg" in manifest["outputs"]


def test_converge_command(tmp_path):
    cfg = _write(
        tmp_path,
        "cv.json",
        {
            "p": 1.5,
            "alpha0": 31.5,
            "eps_list": [0.25, 0.16666666666666666],
            "seeds": [0],
            "law": {"kind": "constant", "gamma0": 31.5},
            "grid_sizes": {"0.25": 16, "0.16666666666666666": 96},
            "tol_rel": 1e-6,
        },
    )
    out = tmp_path / "out"
    assert main(["converge", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    run_dir = next(out.iterdir())
    assert (run_dir / "report.csv").exists()
    trends = (run_dir / "trends.csv").read_text().splitlines()
    assert trends[0].startswith("eps,mean_lp_error")
    assert len(trends) == 3
