"""Command-line front end: tasks, manifests, exit codes, reproducibility."""

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from neurofpt import analytic as A
from neurofpt import models as M
from neurofpt import numeric as N
from neurofpt.cli import main

RUNNER = CliRunner()


def _cfg(tmp_path, name="cfg.json", **doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _base_ou(tmp_path, **extra):
    doc = {
        "model": {"kind": "ou", "mu": 0.0, "sigma2": 1.0, "theta": 1.0},
        "boundary": {"kind": "constant", "S": 1.0},
        "ic": {"x0": 0.0, "t0": 0.0},
    }
    doc.update(extra)
    return _cfg(tmp_path, **doc)


def test_fpt_pdf_task_matches_library(tmp_path):
    out = tmp_path / "run"
    cfg = _base_ou(tmp_path, task="fpt-pdf",
                   task_options={"t_max": 10.0, "h": 0.045},
                   out=str(out))
    res = RUNNER.invoke(main, ["fpt-pdf", "--config", cfg])
    assert res.exit_code == 0, res.output
    gd = N.GridDensity.from_csv(out / "fpt_pdf.csv")
    ref = N.volterra_fpt_pdf(M.OU(0.0, 1.0, 1.0), M.ConstantBoundary(1.0),
                             10.0, 0.045, M.InitialCondition(0.0))
    assert np.allclose(gd.values, ref.values, rtol=1e-12)
    assert (out / "fpt_pdf.gp").exists()


def test_fpt_moments_task(tmp_path):
    out = tmp_path / "m"
    cfg = _base_ou(tmp_path, task="fpt-moments", out=str(out))
    res = RUNNER.invoke(main, ["fpt-moments", "--config", cfg])
    assert res.exit_code == 0, res.output
    doc = json.loads((out / "fpt_moments.json").read_text())
    assert doc["mean"] == pytest.approx(4.0377283, rel=1e-6)


def test_simulate_task_is_byte_reproducible(tmp_path):
    cfg = _base_ou(tmp_path, task="simulate",
                   task_options={"dt": 0.02, "t_max": 30.0, "n_paths": 500})
    outs = []
    for name in ("s1", "s2"):
        res = RUNNER.invoke(main, ["simulate", "--config", cfg, "--seed", "42",
                                   "--out", str(tmp_path / name)])
        assert res.exit_code == 0, res.output
        outs.append((tmp_path / name / "fpt_sample.csv").read_bytes())
    assert outs[0] == outs[1]
    # and the manifests carry identical content hashes
    h1 = json.loads((tmp_path / "s1" / "run_manifest.json").read_text())
    h2 = json.loads((tmp_path / "s2" / "run_manifest.json").read_text())
    assert h1["outputs"] == h2["outputs"]


def test_manifest_lists_all_outputs_with_hashes(tmp_path):
    out = tmp_path / "run"
    cfg = _base_ou(tmp_path, task="fpt-pdf",
                   task_options={"t_max": 5.0, "h": 0.05}, out=str(out))
    res = RUNNER.invoke(main, ["fpt-pdf", "--config", cfg])
    assert res.exit_code == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    files = {p.name for p in out.iterdir()} - {"run_manifest.json"}
    assert set(manifest["outputs"]) == files
    for name, digest in manifest["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_no_writes_outside_output_directory(tmp_path):
    before = {p for p in tmp_path.rglob("*")}
    out = tmp_path / "only-here"
    cfg = _base_ou(tmp_path, task="fpt-pdf",
                   task_options={"t_max": 5.0, "h": 0.05}, out=str(out))
    before = {p for p in tmp_path.rglob("*")}
    res = RUNNER.invoke(main, ["fpt-pdf", "--config", cfg])
    assert res.exit_code == 0
    created = {p for p in tmp_path.rglob("*")} - before
    assert all(str(p).startswith(str(out)) for p in created)


def test_config_error_exit_code(tmp_path):
    res = RUNNER.invoke(main, ["fpt-pdf", "--set", "model.kind=unknown",
                               "--out", str(tmp_path / "x")])
    assert res.exit_code == 2
    assert json.loads(res.output)["error"] == "config"


def test_numeric_error_exit_code_and_cleanup(tmp_path):
    out = tmp_path / "bad"
    cfg = _base_ou(tmp_path, task="fpt-pdf",
                   task_options={"t_max": 5.0, "h": 0.05},
                   ic={"x0": 2.0},  # starts above the boundary
                   out=str(out))
    res = RUNNER.invoke(main, ["fpt-pdf", "--config", cfg])
    assert res.exit_code == 3
    assert json.loads(res.output)["error"] == "numeric"
    # partial outputs removed
    assert not any(out.iterdir()) if out.exists() else True


def test_estimate_task_validity_gate(tmp_path):
    from neurofpt.estimate import ISISample
    from neurofpt.simulate import SimConfig, simulate_fpt
    ou = M.OU(mu=2.0, sigma2=0.5, theta=1.0)
    samp = simulate_fpt(ou, M.ConstantBoundary(1.0), M.InitialCondition(0.0),
                        SimConfig(dt=0.005, t_max=30.0, n_paths=800, seed=6))
    isi_path = tmp_path / "isi.csv"
    ISISample(samp.times).to_csv(str(isi_path))
    out = tmp_path / "est"
    cfg = _cfg(tmp_path, task="estimate", out=str(out),
               task_options={"estimator": "moment-ou",
                             "isi_csv": str(isi_path),
                             "theta": 1.0, "S": 1.0,
                             "require_valid": True})
    res = RUNNER.invoke(main, ["estimate", "--config", cfg])
    assert res.exit_code == 0, res.output
    doc = json.loads((out / "estimate.json").read_text())
    assert all(v["passed"] for v in doc["validity"].values())
    assert doc["estimates"]["mu"] == pytest.approx(2.0, rel=0.15)


def test_estimate_task_validity_exit_code(tmp_path):
    from neurofpt.estimate import ISISample
    rng = np.random.default_rng(0)
    # heavy-tailed intervals from a subthreshold-like law
    ISISample(rng.lognormal(1.0, 1.2, size=400)).to_csv(
        str(tmp_path / "isi.csv"))
    cfg = _cfg(tmp_path, task="estimate", out=str(tmp_path / "est"),
               task_options={"estimator": "moment-ou",
                             "isi_csv": str(tmp_path / "isi.csv"),
                             "theta": 1.0, "S": 1.0,
                             "require_valid": True})
    res = RUNNER.invoke(main, ["estimate", "--config", cfg])
    assert res.exit_code == 4
    assert json.loads(res.output)["error"] == "validity"


def test_inverse_task_roundtrip(tmp_path):
    h = 0.02
    w = M.Wiener(mu=1.0, sigma2=1.0)
    tg = h * np.arange(1, 151)
    gd = N.GridDensity(0.0, h, A.wiener_fpt_pdf(w, 1.0,
                                                M.InitialCondition(0.0), tg))
    dens_path = tmp_path / "dens.csv"
    gd.to_csv(str(dens_path))
    out = tmp_path / "inv"
    cfg = _cfg(tmp_path, task="inverse", out=str(out),
               model={"kind": "wiener", "mu": 1.0, "sigma2": 1.0},
               task_options={"density_csv": str(dens_path)})
    res = RUNNER.invoke(main, ["inverse", "--config", cfg])
    assert res.exit_code == 0, res.output
    rows = [line.split(",") for line in
            (out / "boundary.csv").read_text().splitlines()
            if line and not line.startswith("#") and not line[0].isalpha()]
    levels = np.array([float(r[1]) for r in rows])
    assert np.all(np.abs(levels[5:] - 1.0) < 0.02)


def test_counting_task(tmp_path):
    out = tmp_path / "cnt"
    cfg = _cfg(tmp_path, task="counting", out=str(out),
               model={"kind": "wiener", "mu": 1.0, "sigma2": 1.0},
               boundary={"kind": "constant", "S": 1.0},
               task_options={"t_max": 10.0, "k_max": 6, "t": 4.0,
                             "refractory": {"kind": "constant", "r": 0.5}})
    res = RUNNER.invoke(main, ["counting", "--config", cfg])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["summary"]["mass"] == pytest.approx(1.0, abs=2e-3)


def test_simulate_paths_and_return_modes(tmp_path):
    cfg = _base_ou(tmp_path, task="simulate",
                   task_options={"mode": "paths", "dt": 0.05, "t_max": 1.0,
                                 "n_paths": 5, "record_every": 4})
    res = RUNNER.invoke(main, ["simulate", "--config", cfg,
                               "--out", str(tmp_path / "p")])
    assert res.exit_code == 0
    assert (tmp_path / "p" / "trajectories.csv").exists()
    cfg2 = _cfg(tmp_path, name="c2.json", task="simulate",
                model={"kind": "wiener", "mu": 1.0, "sigma2": 1.0},
                boundary={"kind": "constant", "S": 1.0},
                task_options={"mode": "return", "dt": 0.02, "t_end": 5.0,
                              "t_max": 5.0, "n_paths": 200,
                              "refractory": {"kind": "constant", "r": 0.3}})
    res = RUNNER.invoke(main, ["simulate", "--config", cfg2,
                               "--out", str(tmp_path / "r")])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "r" / "spike_times.csv").exists()
    assert (tmp_path / "r" / "counts.csv").exists()


# ---------------------------------------------------------------------------
# compare task
# ---------------------------------------------------------------------------

def test_compare_wiener_closed_vs_volterra(tmp_path):
    cfg = _cfg(tmp_path, task="compare", out=str(tmp_path / "cmp"),
               model={"kind": "wiener", "mu": 1.0, "sigma2": 1.0},
               boundary={"kind": "constant", "S": 1.0},
               task_options={"methods": ["closed-form", "volterra"],
                             "t_max": 5.0})
    res = RUNNER.invoke(main, ["compare", "--config", cfg])
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    assert doc["distances"]["closed-form|volterra"]["sup"] < 1e-3
    assert (tmp_path / "cmp" / "comparison_curves.csv").exists()


def test_compare_method_with_itself_zero_distance(tmp_path):
    from neurofpt.compare import compare_methods
    cfg = {"task": "compare",
           "model": {"kind": "wiener", "mu": 1.0, "sigma2": 1.0},
           "boundary": {"kind": "constant", "S": 1.0},
           "ic": {"x0": 0.0},
           "task_options": {"methods": ["closed-form", "volterra"],
                            "t_max": 5.0}}
    rep = compare_methods(cfg)
    # the closed form and the (here exact) integral-equation route coincide
    assert rep["distances"]["closed-form|volterra"]["sup"] < 1e-12


def test_compare_requires_two_methods(tmp_path):
    from neurofpt.compare import compare_methods
    from neurofpt.errors import NoComparableMethods
    cfg = {"task": "compare",
           "model": {"kind": "ou", "mu": 0.0, "sigma2": 1.0, "theta": 1.0},
           "boundary": {"kind": "constant", "S": 1.0},
           "ic": {"x0": 0.0},
           "task_options": {"methods": ["closed-form"], "t_max": 5.0}}
    with pytest.raises(NoComparableMethods):
        compare_methods(cfg)


def test_compare_mean_trajectory_matching_reproduces_config():
    from neurofpt.compare import match_parameters
    # same mean trajectory: theta = tau, mu = mu2, sigma^2 = -sigma2^2 V_I
    fe = M.Feller(tau=6.2, mu2=0.0, sigma2_2=0.4, v_i=-10.0)
    rep = match_parameters(fe, M.ConstantBoundary(10.0),
                           M.InitialCondition(0.0),
                           {"criterion": "mean-trajectory"})
    matched = rep["matched"]
    assert matched == {"kind": "ou", "mu": 0.0, "sigma2": 4.0, "theta": 6.2}


@pytest.mark.slow
def test_compare_fpt_moment_matching_solves_two_equation_system():
    from neurofpt.compare import match_parameters
    fe = M.Feller(tau=6.2, mu2=0.0, sigma2_2=4.0, v_i=-10.0)
    rep = match_parameters(fe, M.ConstantBoundary(5.0),
                           M.InitialCondition(0.0),
                           {"criterion": "fpt-moments"})
    ou = M.OU(**{k: v for k, v in rep["matched"].items() if k != "kind"})
    mom = A.ou_fpt_moments(ou, 5.0, M.InitialCondition(0.0))
    assert mom.mean == pytest.approx(rep["target_mean"], rel=1e-8)
    assert mom.variance == pytest.approx(rep["target_variance"], rel=1e-8)
