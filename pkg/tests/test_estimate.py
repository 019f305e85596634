"""Estimators: ML from traces, moment estimators from ISIs, kernels."""

import io
import math

import numpy as np
import pytest

from neurofpt import estimate as E
from neurofpt import models as M
from neurofpt import simulate as S
from neurofpt.errors import (
    DomainError, NonpositiveState, SparseWindow, ValidityFailure,
)

IC0 = M.InitialCondition(0.0)


def _exact_ou_trace(beta, mu, sigma2, h, n, x0=0.0, seed=0):
    """Exact discrete OU transitions (no Euler error)."""
    rng = np.random.default_rng(seed)
    e = math.exp(-beta * h)
    sd = math.sqrt(sigma2 / (2 * beta) * (1 - e * e))
    eps = rng.standard_normal(n)
    x = np.empty(n + 1)
    x[0] = x0
    for j in range(n):
        x[j + 1] = x[j] * e + (mu / beta) * (1 - e) + sd * eps[j]
    return E.PotentialTrace(values=x, h=h)


def _feller_trace(tau, mu_f, s22, h, n, y0=5.0, seed=0, substeps=10):
    rng = np.random.default_rng(seed)
    hs = h / substeps
    x = np.empty(n + 1)
    x[0] = y0
    y = y0
    for j in range(n):
        eps = rng.standard_normal(substeps)
        for k in range(substeps):
            y += (-y / tau + mu_f) * hs + math.sqrt(max(s22 * y * hs, 0.0)) * eps[k]
            y = max(y, 0.0)
        x[j + 1] = y
    return E.PotentialTrace(values=x, h=h)


# ---------------------------------------------------------------------------
# ML from potential traces
# ---------------------------------------------------------------------------

def test_ml_ou_constant_trace_degenerates_to_zero():
    tr = E.PotentialTrace(values=np.full(100, 3.0), h=0.01)
    res = E.ml_ou_from_potential(tr)
    assert res.estimates == {"beta": 0.0, "mu": 0.0, "sigma2": 0.0}


def test_ml_ou_recovers_simulated_parameters():
    tr = _exact_ou_trace(1.0, 1.0, 1.0, 0.01, 100_000, seed=2)
    res = E.ml_ou_from_potential(tr)
    assert res.estimates["beta"] == pytest.approx(1.0, rel=0.05)
    assert res.estimates["mu"] == pytest.approx(1.0, rel=0.05)
    assert res.estimates["sigma2"] == pytest.approx(1.0, rel=0.05)
    assert res.warnings          # boundary-ignorance caveat travels along


def test_ml_ou_invariant_under_time_origin_shift():
    tr = _exact_ou_trace(0.8, 0.5, 0.7, 0.01, 5_000, seed=5)
    res1 = E.ml_ou_from_potential(tr)
    res2 = E.ml_ou_from_potential(E.PotentialTrace(tr.values.copy(), tr.h))
    assert res1.estimates == res2.estimates


def test_ml_feller_recovers_simulated_parameters():
    # drift parameters of a slow-decay trace carry sampling spread
    # ~ sqrt(2 alpha / T); the median over replications isolates the
    # estimator from single-seed noise
    tau, mu_f, s22 = 6.2, 2.0, 1.0
    mus, scales = [], []
    for seed in (1, 2, 3):
        tr = _feller_trace(tau, mu_f, s22, 0.01, 100_000, seed=seed)
        res = E.ml_feller_from_potential(tr, v_i=0.0)
        mus.append(res.estimates["mu_F"])
        scales.append(res.estimates["sigma2_2"])
    assert np.median(mus) == pytest.approx(mu_f, rel=0.15)
    assert np.median(scales) == pytest.approx(s22, rel=0.05)


def test_ml_feller_zero_noise_gives_zero_scale():
    tau, mu_f = 2.0, 1.0
    h = 0.01
    n = 2_000
    x = np.empty(n + 1)
    x[0] = 0.5
    e = math.exp(-h / tau)
    for j in range(n):
        x[j + 1] = x[j] * e + mu_f * tau * (1 - e)
    res = E.ml_feller_from_potential(E.PotentialTrace(x, h), v_i=0.0)
    assert res.estimates["sigma2_2"] < 1e-6


def test_ml_feller_is_pure_function_of_trace():
    tr = _feller_trace(2.0, 1.0, 0.5, 0.01, 3_000, seed=7)
    r1 = E.ml_feller_from_potential(tr, v_i=0.0)
    r2 = E.ml_feller_from_potential(
        E.PotentialTrace(tr.values.copy(), tr.h), v_i=0.0)
    assert r1.estimates == r2.estimates


def test_ml_feller_rejects_nonpositive_state():
    tr = E.PotentialTrace(values=np.array([1.0, 0.5, -0.2, 0.4]), h=0.01)
    with pytest.raises(NonpositiveState):
        E.ml_feller_from_potential(tr, v_i=0.0)


def test_ml_boundary_censoring_bias_reproduced():
    """Traces stopped at the threshold bias the drift estimate by an
    amount comparable to its spread across replications."""
    beta, mu, sigma2, h = 1.0, 1.2, 1.0, 0.01
    S_th = 1.0
    mus = []
    rng = np.random.default_rng(11)
    for _ in range(60):
        e = math.exp(-beta * h)
        sd = math.sqrt(sigma2 / (2 * beta) * (1 - e * e))
        xs = [0.0]
        while xs[-1] < S_th and len(xs) < 20_000:
            xs.append(xs[-1] * e + (mu / beta) * (1 - e)
                      + sd * rng.standard_normal())
        if len(xs) < 12:
            continue
        res = E.ml_ou_from_potential(E.PotentialTrace(np.array(xs), h))
        mus.append(res.estimates["mu"])
    mus = np.asarray(mus)
    bias = abs(mus.mean() - mu)
    spread = mus.std(ddof=1)
    assert 0.2 * spread < bias < 5.0 * spread


# ---------------------------------------------------------------------------
# moment estimators from ISI samples
# ---------------------------------------------------------------------------

def _suprathreshold_ou_isis(n, seed, mu=2.0, sigma2=0.5, theta=1.0, s=1.0):
    ou = M.OU(mu=mu, sigma2=sigma2, theta=theta)
    cfg = S.SimConfig(dt=0.002, t_max=30.0, n_paths=n, seed=seed)
    return S.simulate_fpt(ou, M.ConstantBoundary(s), IC0, cfg).times


def test_moment_ou_recovers_suprathreshold_parameters():
    times = _suprathreshold_ou_isis(1_000, seed=6)
    res = E.moment_ou_from_isi(E.ISISample(times), theta=1.0, S=1.0)
    assert res.estimates["mu"] == pytest.approx(2.0, rel=0.10)
    assert res.estimates["sigma2"] == pytest.approx(0.5, rel=0.20)
    assert res.all_valid


def test_moment_ou_guard_on_degenerate_sample():
    with pytest.raises(ValidityFailure):
        E.moment_ou_from_isi(E.ISISample(np.full(100, 1e-14)),
                             theta=1.0, S=1.0)


def test_moment_ou_permutation_invariant():
    times = _suprathreshold_ou_isis(200, seed=8)
    r1 = E.moment_ou_from_isi(E.ISISample(times), theta=1.0, S=1.0)
    r2 = E.moment_ou_from_isi(E.ISISample(times[::-1].copy()),
                              theta=1.0, S=1.0)
    # symmetric statistics; only summation-order rounding may differ
    for key in r1.estimates:
        assert r1.estimates[key] == pytest.approx(r2.estimates[key],
                                                  rel=1e-12)


def test_moment_ou_nonzero_start_shift():
    # the shifted problem X - x0 has the same FPT law; estimators built on
    # exact exponential moments must recover the original parameters
    theta, s_level, x0 = 1.0, 1.5, 0.5
    mu, sigma2 = 2.5, 0.4
    ou = M.OU(mu=mu, sigma2=sigma2, theta=theta)
    cfg = S.SimConfig(dt=0.002, t_max=30.0, n_paths=4_000, seed=15)
    times = S.simulate_fpt(ou, M.ConstantBoundary(s_level),
                           M.InitialCondition(x0), cfg).times
    res = E.moment_ou_from_isi(E.ISISample(times), theta=theta, S=s_level,
                               x0=x0)
    assert res.estimates["mu"] == pytest.approx(mu, rel=0.1)


def test_moment_feller_exact_inversion_identity():
    # plugging the exact exponential moments back in recovers the
    # parameters to machine precision, including nonzero start levels
    tau, mu_f, s22, ys, y0 = 1.0, 10.0, 1.0, 5.0, 1.0
    a = mu_f * tau
    z1 = (a - y0) / (a - ys)
    f = lambda x: (x - a) ** 2 - s22 * tau * (x - a / 2.0)
    z2 = f(y0) / f(ys)
    t1 = tau * math.log(z1)
    # two-point sample realizing (z1, z2) exactly
    d = math.sqrt(z2 - z1 ** 2)
    za, zb = z1 - d, z1 + d
    assert za > 1.0
    sample = E.ISISample(np.array([tau * math.log(za), tau * math.log(zb)]))
    res = E.moment_feller_from_isi(sample, tau=tau, S=ys, y0=y0, v_i=0.0)
    assert res.estimates["mu_F"] == pytest.approx(mu_f, rel=1e-9)
    assert res.estimates["sigma2_2"] == pytest.approx(s22, rel=1e-9)


def test_moment_feller_degenerate_sample_zero_variance():
    res = E.moment_feller_from_isi(E.ISISample(np.full(50, 0.7)),
                                   tau=1.0, S=5.0, y0=0.0, v_i=0.0)
    assert res.estimates["sigma2_2"] == pytest.approx(0.0, abs=1e-12)


def test_moment_feller_recovers_from_simulation():
    fe = M.Feller(tau=1.0, mu2=10.0, sigma2_2=1.0, v_i=0.0)
    cfg = S.SimConfig(dt=0.002, t_max=10.0, n_paths=500, seed=77)
    times = S.simulate_fpt(fe, M.ConstantBoundary(5.0),
                           M.InitialCondition(1.0), cfg).times
    res = E.moment_feller_from_isi(E.ISISample(times), tau=1.0, S=5.0,
                                   y0=1.0, v_i=0.0)
    assert res.estimates["mu_F"] == pytest.approx(10.0, rel=0.10)
    assert res.all_valid


def test_moment_estimator_consistency_curve():
    """Median absolute error decreases with the sample size."""
    med_err = []
    for n, base in ((100, 100), (1_000, 200), (10_000, 300)):
        errs = []
        for rep in range(7):
            times = _suprathreshold_ou_isis(n, seed=base + rep)
            res = E.moment_ou_from_isi(E.ISISample(times), theta=1.0, S=1.0)
            errs.append(abs(res.estimates["mu"] - 2.0))
        med_err.append(np.median(errs))
    assert med_err[0] > med_err[1] > med_err[2]


def test_validity_gate_rejects_subthreshold_truth():
    ou = M.OU(mu=0.6, sigma2=1.0, theta=1.0)     # mu*theta < S = 1
    rejected = 0
    reps = 30
    for rep in range(reps):
        cfg = S.SimConfig(dt=0.005, t_max=80.0, n_paths=1_000, seed=500 + rep)
        times = S.simulate_fpt(ou, M.ConstantBoundary(1.0), IC0, cfg).times
        try:
            res = E.moment_ou_from_isi(E.ISISample(times), theta=1.0, S=1.0)
            if not res.all_valid:
                rejected += 1
        except ValidityFailure:
            rejected += 1
    assert rejected >= 0.9 * reps


# ---------------------------------------------------------------------------
# kernel drift / variance estimators
# ---------------------------------------------------------------------------

def test_kernel_estimator_constant_trace():
    tr = E.PotentialTrace(values=np.full(200, 1.0), h=0.01)
    res = E.kernel_drift_variance(tr, a=1.0, bandwidth=0.5)
    assert res.estimates["mu_at_level"] == 0.0
    assert res.estimates["sigma2_at_level"] == 0.0


def test_kernel_estimator_recovers_ou_coefficients():
    tr = _exact_ou_trace(1.0, 0.0, 1.0, 0.01, 100_000, seed=4)
    res = E.kernel_drift_variance(tr, a=0.0, bandwidth=0.2)
    count = res.validity["window_count"]["margin"] + 30
    local_se = math.sqrt(1.0 / (0.01 * count))
    assert abs(res.estimates["mu_at_level"]) < 3 * local_se
    assert res.estimates["sigma2_at_level"] == pytest.approx(1.0, rel=0.10)


def test_kernel_shapes_agree():
    tr = _exact_ou_trace(1.0, 0.5, 1.0, 0.01, 50_000, seed=6)
    r_rect = E.kernel_drift_variance(tr, a=0.5, bandwidth=0.3,
                                     kernel="rectangular")
    r_tri = E.kernel_drift_variance(tr, a=0.5, bandwidth=0.3,
                                    kernel="triangular")
    assert r_rect.estimates["sigma2_at_level"] == pytest.approx(
        r_tri.estimates["sigma2_at_level"], rel=0.05)


def test_kernel_sparse_window():
    tr = E.PotentialTrace(values=np.linspace(0, 1, 50), h=0.01)
    with pytest.raises(SparseWindow):
        E.kernel_drift_variance(tr, a=10.0, bandwidth=0.1)


# ---------------------------------------------------------------------------
# CSV / JSON plumbing
# ---------------------------------------------------------------------------

def test_trace_csv_roundtrip():
    tr = _exact_ou_trace(1.0, 0.5, 1.0, 0.02, 50, seed=9)
    buf = io.StringIO()
    tr.to_csv(buf)
    buf.seek(0)
    back = E.PotentialTrace.from_csv(buf)
    assert back.h == pytest.approx(tr.h)
    assert np.allclose(back.values, tr.values)


def test_isi_csv_roundtrip_and_validation():
    sam = E.ISISample(np.array([0.3, 1.2, 0.8]))
    buf = io.StringIO()
    sam.to_csv(buf)
    buf.seek(0)
    back = E.ISISample.from_csv(buf)
    assert np.allclose(back.durations, sam.durations)
    with pytest.raises(DomainError):
        E.ISISample(np.array([0.3, -1.0]))


def test_estimation_result_json():
    import json
    res = E.EstimationResult(estimates={"mu": 1.0},
                             validity={"c": {"passed": True, "margin": 0.5}})
    doc = json.loads(res.to_json())
    assert doc["estimates"]["mu"] == 1.0
    assert doc["validity"]["c"]["passed"]
