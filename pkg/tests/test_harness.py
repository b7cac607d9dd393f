import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

import amv
from amv import cli
from amv.errors import InvalidInputError, UnsupportedError
from amv.geometry import hypercube, interval, sample, sphere2
from amv.harness import (
    EIG_COLUMNS,
    ExperimentConfig,
    ResultTable,
    diagnostics_rows,
    min_ball_fraction,
    n_for_radius,
    named_function,
    relative_error,
    run,
    run_convergence,
    run_diagnostics,
    run_l2limit,
    run_oracle_torus,
    run_scaling,
    run_sinc_scan,
    run_spectrum,
    space_from_config,
)
from amv.io import save_samples
from amv.operator import build


def cfg(command, **kw):
    return ExperimentConfig(command=command, **kw)


# -- configuration -------------------------------------------------------------


def test_space_from_config():
    assert space_from_config("interval").kind.value == "Interval"
    assert space_from_config({"kind": "torus", "m": 2, "metric": "euclid"}).kind.value == "FlatTorusEuclid"
    assert space_from_config({"kind": "hypercube", "m": 3, "side": 2.0}).total_measure == 8.0
    with pytest.raises(InvalidInputError):
        space_from_config("klein-bottle")


@pytest.mark.parametrize(
    "kw",
    [
        dict(command="nope"),
        dict(command="converge", r=[0.1, 0.2]),
        dict(command="l2limit", r=[0.1, 0.1]),
        dict(command="spectrum", r=-0.1),
        dict(command="spectrum", space="sphere", r=4.0),
        dict(command="spectrum", space={"kind": "torus"}, r=1.0),
        dict(command="spectrum", volume_mode="exact"),
        dict(command="spectrum", k=-1),
    ],
)
def test_invalid_configs(kw):
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**kw)


def test_config_dict_roundtrip(tmp_path):
    c = cfg("converge", space={"kind": "torus", "m": 2}, r=[0.2, 0.1], n=400, volume_mode="analytic")
    again = ExperimentConfig.from_dict(json.loads(json.dumps(c.to_dict())))
    assert again.to_dict() == c.to_dict()
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_dict({"command": "spectrum", "bogus": 1})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_json(p)


def test_n_policy_gives_thirty_points_per_ball():
    for space, r, strat in [(interval(), 0.05, "grid"), (sphere2(), 0.25, "fibonacci"), (hypercube(2), 0.1, "grid")]:
        n = n_for_radius(space, r, strat)
        assert n * min_ball_fraction(space, r) >= 30
        counts = build(sample(space, n, strat), r).idx.counts()
        assert counts.min() >= 0.8 * 30
        assert counts.mean() >= 0.9 * 30


# -- spectrum ------------------------------------------------------------------


def test_spectrum_interval():
    t = run_spectrum(cfg("spectrum", n=2000, r=0.05, k=5))
    assert t.columns[: len(EIG_COLUMNS)] == EIG_COLUMNS
    lam = t.column("lambda_computed")
    assert lam[0] == 0.0
    # the open lattice ball spans 2r - h, so expect roughly -h/r = -1%
    assert lam[1] == pytest.approx(math.pi**2 / 6, rel=0.02)
    assert t.metadata["connected"] and t.metadata["target_constant"] == pytest.approx(1 / 6)
    assert all(t.column("isolated"))
    assert t.metadata["config"]["n"] == 2000


def test_spectrum_torus_multiplicity_four():
    t = run_spectrum(cfg("spectrum", space={"kind": "torus", "m": 2}, n=64**2, r=0.1, k=9, volume_mode="analytic"))
    lam = np.array(t.column("lambda_computed"))
    assert lam[0] == 0.0
    assert np.allclose(lam[1:5], lam[1], rtol=1e-9)
    assert lam[5] > lam[4] * (1 + 1e-6)


def test_spectrum_disconnected():
    t = run_spectrum(cfg("spectrum", n=200, r=1e-6, k=2))
    lam = t.column("lambda_computed")
    assert lam[0] == 0.0 and lam[1] == 0.0
    assert "disconnected" in t.metadata["warning"]
    assert not t.metadata["connected"]


def test_relative_error_recomputable():
    t = run_spectrum(cfg("spectrum", space="sphere", strategy="fibonacci", n=1000, r=0.4, k=4))
    for row in t.records():
        assert row["relative_error"] == abs(row["lambda_computed"] - row["reference_value"]) / max(
            row["reference_value"], 1e-30
        )
    assert relative_error(0.0, 0.0) == 0.0


def test_spectrum_custom_cloud(tmp_path, rng):
    s = sample(interval(), 300, "iid", 1)
    path = tmp_path / "cloud.csv"
    save_samples(s, path)
    t = run_spectrum(ExperimentConfig(command="spectrum", space=None, cloud=str(path), r=0.1, k=2))
    assert t.column("n") == [300] * 3
    assert all(math.isnan(v) for v in t.column("reference_value"))
    with pytest.raises(UnsupportedError):
        run_convergence(ExperimentConfig(command="converge", space=None, cloud=str(path), r=[0.2, 0.1]))


# -- convergence ---------------------------------------------------------------


def test_convergence_interval():
    t = run_convergence(cfg("converge", r=[0.08, 0.04], n=2000, k=3))
    rows = t.records()
    assert [row["r"] for row in rows] == [0.08] * 4 + [0.04] * 4
    assert [row["k"] for row in rows] == [0, 1, 2, 3] * 2
    assert rows[0]["lambda_computed"] == 0.0 and rows[0]["reference_value"] == 0.0
    assert rows[0]["relative_error"] == 0.0
    assert rows[1]["error_ratio"] is None
    assert rows[5]["error_ratio"] == pytest.approx(rows[5]["relative_error"] / rows[1]["relative_error"])
    for row in rows[1:4] + rows[5:]:
        assert row["relative_error"] < 0.05


def test_convergence_sphere():
    t = run_convergence(cfg("converge", space="sphere", strategy="fibonacci", r=[0.3, 0.2], n=2500, k=3))
    for row in t.records():
        if row["k"]:
            assert row["reference_value"] == 0.25
            assert row["relative_error"] < 0.1


# -- l2 limit ------------------------------------------------------------------


def test_l2limit_interval_cosine():
    t = run_l2limit(cfg("l2limit", r=[0.16, 0.08, 0.04], n=4000, test_function="neumann_cos"))
    err = t.column("error_l2")
    assert err[0] > err[1] > err[2]


def test_l2limit_torus_mode():
    # while h/r stays small the O(r^2) truncation error dominates the lattice defect
    t = run_l2limit(cfg("l2limit", space="torus", r=[0.4, 0.2, 0.1], n=4000))
    assert t.metadata["test_function"] == "torus_mode"
    err = t.column("error_l2")
    assert err[0] > err[1] > err[2]
    assert err[2] < 0.02


def test_l2limit_linear_grows():
    t = run_l2limit(cfg("l2limit", r=[0.16, 0.08, 0.04], n=4000, test_function="linear"))
    ratio = t.column("ratio")
    assert ratio[0] is None
    assert all(x >= 1.25 for x in ratio[1:])


def test_test_function_domain_errors():
    s = sample(sphere2(), 50, "fibonacci")
    with pytest.raises(InvalidInputError):
        named_function("neumann_cos", s)
    with pytest.raises(InvalidInputError):
        named_function("torus_mode", s)
    f, lap = named_function("sphere_harmonic", s)
    assert np.allclose(lap, -2 * f)
    f, lap = named_function("neumann_cos", sample(interval(2.0), 20), 3)
    assert np.allclose(lap, -(1.5 * math.pi) ** 2 * f)
    with pytest.raises(InvalidInputError):
        cfg("l2limit", frequency=0)
    with pytest.raises(InvalidInputError):
        run_l2limit(cfg("l2limit", space="sphere", strategy="fibonacci", r=[0.3], n=200, test_function="linear"))


# -- torus oracle --------------------------------------------------------------


def test_oracle_torus_requirements():
    with pytest.raises(InvalidInputError):
        run_oracle_torus(cfg("oracle-torus", space="interval", n=100, r=0.1, volume_mode="analytic"))
    with pytest.raises(InvalidInputError):
        run_oracle_torus(cfg("oracle-torus", space="torus", n=100, r=0.1))
    with pytest.raises(InvalidInputError):
        run_oracle_torus(cfg("oracle-torus", space="torus", strategy="iid", n=100, r=0.1, volume_mode="analytic"))


def test_oracle_torus_k0_exact():
    t = run_oracle_torus(cfg("oracle-torus", space="torus", n=128, r=0.125, k=0, volume_mode="analytic"))
    assert t.records()[0]["lambda_computed"] == 0.0 and t.records()[0]["reference_value"] == 0.0
    assert t.metadata["max_relative_mismatch"] == 0.0


def test_oracle_torus_reports_pattern():
    t = run_oracle_torus(cfg("oracle-torus", space="torus", n=512, r=0.125, k=9, volume_mode="analytic"))
    assert t.metadata["multiplicities_reference"] == [2, 2, 2, 2, 1]
    assert t.metadata["multiplicities_match"]
    assert t.column("mode")[1] in ("-1", "1")


# -- scaling -------------------------------------------------------------------


def test_scaling_interval():
    t = run_scaling(cfg("scaling", space="interval", side=0.5, r=0.05, n=1000))
    row = t.records()[0]
    assert row["relative_error"] < 1e-10
    assert t.metadata["scale_factor"] == 4.0


def test_scaling_square():
    t = run_scaling(cfg("scaling", space={"kind": "hypercube", "m": 2}, side=0.25, r=0.025, n=40**2))
    assert t.records()[0]["relative_error"] < 1e-10


def test_scaling_trivial_and_errors():
    t = run_scaling(cfg("scaling", space="interval", side=1.0, r=0.1, n=300))
    assert t.records()[0]["relative_error"] == 0.0
    with pytest.raises(InvalidInputError):
        run_scaling(cfg("scaling", space="interval", side=0.5, r=0.05, n=[100, 200]))
    with pytest.raises(InvalidInputError):
        run_scaling(cfg("scaling", space="sphere", side=0.5, r=0.05, n=100))


# -- diagnostics ---------------------------------------------------------------


@pytest.mark.parametrize(
    "space,strategy,mode",
    [
        ("interval", "grid", "empirical"),
        ({"kind": "torus", "m": 2}, "grid", "analytic"),
        ({"kind": "torus", "m": 2, "metric": "euclid"}, "iid", "empirical"),
        ({"kind": "hypercube", "m": 2}, "iid", "empirical"),
        ("sphere", "fibonacci", "empirical"),
    ],
)
def test_diagnostics_all_backends(space, strategy, mode):
    t = run_diagnostics(cfg("diagnostics", space=space, strategy=strategy, volume_mode=mode, r=0.1, n=1600))
    rec = {row["quantity"]: row for row in t.records()}
    assert rec["spectral_radius"]["holds"]
    assert rec["essential_threshold"]["holds"]
    if "doubling_ratio" in rec:
        assert rec["doubling_ratio"]["holds"]


def test_torus_grid_has_constant_volumes():
    # translation invariance makes every empirical ball volume equal, so A* 1 = A 1 = 1
    t = run_diagnostics(cfg("diagnostics", space={"kind": "torus", "m": 2}, r=0.1, n=1600))
    rec = {row["quantity"]: row["value"] for row in t.records()}
    assert rec["volume_min"] == rec["volume_max"]
    assert rec["condition_Ir"] == pytest.approx(1.0, abs=1e-14)


def test_diagnostics_interval_doubling():
    op = build(sample(interval(), 2000), 0.1)
    rows = {q: (v, b, h) for q, v, b, h in diagnostics_rows(op)}
    assert rows["doubling_ratio"][0] <= 4.0


# -- tables and determinism ----------------------------------------------------


def test_table_write(tmp_path):
    out = tmp_path / "t.csv"
    t = run(cfg("spectrum", n=300, r=0.1, k=2, output_path=str(out)))
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(t.columns)
    assert len(lines) == 4
    meta = json.loads((tmp_path / "t.csv.meta.json").read_text())
    assert meta["schema"] == "amv-table/1" and meta["version"] == amv.__version__
    assert meta["config"]["r"] == 0.1 and not meta["truncated"]
    with pytest.raises(KeyError):
        ResultTable("spectrum", ("a",)).add(b=1)


def test_sinc_scan_command():
    t = run_sinc_scan(cfg("sinc-scan", space={"kind": "torus", "m": 2}, r=[0.5, 1.0], pmax=8))
    assert t.metadata["minimum"] == pytest.approx(1.0)
    assert len(t.rows) == 2


def test_byte_determinism(tmp_path):
    for command, extra in [("spectrum", ["--space", "sphere", "--strategy", "fibonacci", "--n", "800", "--r", "0.3"]),
                           ("converge", ["--space", "torus", "--strategy", "iid", "--n", "500", "--r", "0.3,0.2"])]:
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert cli.main([command, *extra, "--k", "4", "--seed", "7", "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


# -- command line --------------------------------------------------------------


def test_cli_flags_and_stdout(capsys):
    assert cli.main(["spectrum", "--space", "interval", "--n", "200", "--r", "0.1", "--k", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("r,n,k,lambda_computed")
    assert len(out) == 4


def test_cli_config_file(tmp_path):
    conf = tmp_path / "cfg.json"
    conf.write_text(json.dumps({"space": {"kind": "torus", "m": 2}, "n": 1024, "r": 0.125, "k": 4,
                                "volumes": "analytic", "out": str(tmp_path / "o.csv")}))
    assert cli.main(["oracle-torus", "--config", str(conf)]) == 0
    meta = json.loads((tmp_path / "o.csv.meta.json").read_text())
    assert meta["config"]["space"]["kind"] == "FlatTorusLinf"
    # explicit flags override the file
    assert cli.main(["spectrum", "--config", str(conf), "--k", "1"]) == 0
    assert len((tmp_path / "o.csv").read_text().splitlines()) == 3


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["converge", "--r", "0.1,0.2"]) == 2
    assert cli.main(["spectrum", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["converge", "--n", "200", "--r", "0.2,0.1,0.05", "--budget", "0",
                     "--out", str(tmp_path / "b.csv")]) == 4
    meta = json.loads((tmp_path / "b.csv.meta.json").read_text())
    assert meta["truncated"]
    monkeypatch.setenv("AMV_THREADS", "zero")
    assert cli.main(["spectrum", "--n", "50", "--r", "0.1"]) == 2
    monkeypatch.setenv("AMV_THREADS", "1")
    assert cli.main(["spectrum", "--n", "50", "--r", "0.1", "--k", "1"]) == 0
    assert "amv" in capsys.readouterr().err


def test_cli_numeric_failure_exit_code(monkeypatch):
    from amv import harness
    from amv.errors import NumericFailure

    def boom(cfg):
        raise NumericFailure("forced")

    monkeypatch.setitem(harness.RUNNERS, "spectrum", boom)
    assert cli.main(["spectrum", "--n", "50", "--r", "0.1"]) == 3


def test_console_script_module():
    env = dict(os.environ, AMV_THREADS="1")
    out = subprocess.run([sys.executable, "-m", "amv.cli", "sinc-scan", "--r", "0.5,1.0", "--pmax", "4"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.splitlines()[0] == "label,value,multiplicity"
