"""Cross-method and cross-model comparison reports.

Evaluates the applicable FPT-density routes (closed form, integral
equation, asymptotic law, simulation) on one shared grid and reports
pairwise sup-norm / Kolmogorov-Smirnov distances and runtimes. For
model-versus-model studies it implements the three parameter-matching
criteria: equal discrete-version parameters, equal mean trajectory, and
numerically matched FPT mean and variance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .analytic import (
    asymptotic_exponential_pdf, feller_fpt_moments, ou_fpt_moments,
    wiener_fpt_moments, wiener_fpt_pdf,
)
from .errors import ConfigError, NoComparableMethods, UnsupportedModel
from .models import (
    ConstantBoundary, Feller, HyperbolicBoundary, InitialCondition, OU,
    Wiener, boundary_to_dict, model_from_dict, model_to_dict,
)
from .numeric import make_psi, volterra_fpt_pdf
from .simulate import SimConfig, simulate_fpt

__all__ = ["ComparisonReport", "compare_methods", "match_parameters"]


@dataclass
class ComparisonReport:
    methods: dict = field(default_factory=dict)    # name -> summary
    distances: dict = field(default_factory=dict)  # "a|b" -> {sup, ks}
    runtimes: dict = field(default_factory=dict)
    regime: dict = field(default_factory=dict)
    matching: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"methods": self.methods, "distances": self.distances,
                "runtimes": self.runtimes, "regime": self.regime,
                "matching": self.matching}


def _closed_form_curve(model, boundary, ic, t):
    if isinstance(model, Wiener) and isinstance(boundary, ConstantBoundary):
        return wiener_fpt_pdf(model, boundary.S, ic, t)
    if isinstance(model, OU) and isinstance(boundary, HyperbolicBoundary):
        psi = make_psi(model, boundary, kernel="symmetry")
        return -2.0 * psi(t, np.full_like(t, ic.x0), np.full_like(t, ic.t0))
    raise UnsupportedModel("no closed form for this model/boundary pair")


def _mean_fpt(model, boundary, ic):
    if not isinstance(boundary, ConstantBoundary):
        raise UnsupportedModel("moments need a constant boundary")
    if isinstance(model, Wiener):
        return wiener_fpt_moments(model, boundary.S, ic).mean
    if isinstance(model, OU):
        return ou_fpt_moments(model, boundary.S, ic).mean
    if isinstance(model, Feller):
        return feller_fpt_moments(model, boundary.S, ic).mean
    raise UnsupportedModel(type(model).__name__)


def compare_methods(cfg: dict, writer=None) -> dict:
    """Run the method comparison described by the config; see module doc."""
    model = model_from_dict(cfg["model"])
    boundary_d = cfg.get("boundary", {"kind": "constant", "S": 1.0})
    from .models import boundary_from_dict
    boundary = boundary_from_dict(boundary_d)
    ic = InitialCondition(**cfg.get("ic", {"x0": 0.0}))
    opts = cfg.get("task_options", {})
    requested = opts.get("methods",
                         ["closed-form", "volterra", "asymptotic", "simulation"])
    t_max = float(opts.get("t_max", 10.0))

    report = ComparisonReport()
    if hasattr(model, "asymptotic_mean"):
        s0 = boundary.value(ic.t0, model)
        report.regime["suprathreshold"] = bool(model.asymptotic_mean > s0)

    # the volterra grid is the shared comparison grid
    t0 = time.time()
    base = volterra_fpt_pdf(model, boundary, t_max, h=opts.get("h", "auto"),
                            ic=ic)
    volterra_time = time.time() - t0
    grid = base.times()
    curves = {}
    if "volterra" in requested:
        curves["volterra"] = base.values
        report.runtimes["volterra"] = volterra_time

    if "closed-form" in requested:
        try:
            t0 = time.time()
            curves["closed-form"] = np.asarray(
                _closed_form_curve(model, boundary, ic, grid))
            report.runtimes["closed-form"] = time.time() - t0
        except UnsupportedModel:
            pass
    if "asymptotic" in requested:
        try:
            t0 = time.time()
            if isinstance(boundary, ConstantBoundary):
                pdf, diag = asymptotic_exponential_pdf(model, boundary.S,
                                                       grid, ic)
                curves["asymptotic"] = pdf
                report.methods["asymptotic"] = {"diagnostic": diag}
                report.runtimes["asymptotic"] = time.time() - t0
        except Exception:
            pass
    if "simulation" in requested:
        t0 = time.time()
        sim_opts = opts.get("sim", {})
        sim_cfg = SimConfig(dt=float(sim_opts.get("dt", 0.01)),
                            t_max=t_max,
                            n_paths=int(sim_opts.get("n_paths", 20000)),
                            seed=int(cfg.get("seed", 0)),
                            correction=sim_opts.get("correction",
                                                    "wiener-bridge"))
        samp = simulate_fpt(model, boundary, ic, sim_cfg)
        hist, edges = np.histogram(samp.times,
                                   bins=np.concatenate(([grid[0] - base.h],
                                                        grid)))
        curves["simulation"] = hist / (samp.n_paths * base.h)
        report.runtimes["simulation"] = time.time() - t0

    if len(curves) < 2:
        raise NoComparableMethods(
            f"only {list(curves)} applicable to this configuration")

    names = sorted(curves)
    for name in names:
        vals = np.asarray(curves[name], float)
        report.methods.setdefault(name, {})
        report.methods[name]["mass"] = float(np.sum(vals) * base.h)
        report.methods[name]["peak_t"] = float(grid[int(np.argmax(vals))])
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            va, vb = np.asarray(curves[a]), np.asarray(curves[b])
            sup = float(np.max(np.abs(va - vb)))
            ks = float(np.max(np.abs((np.cumsum(va) - va / 2)
                                     - (np.cumsum(vb) - vb / 2)) * base.h))
            report.distances[f"{a}|{b}"] = {"sup": sup, "ks": ks}

    if "match" in opts:
        report.matching = match_parameters(model, boundary, ic,
                                           opts["match"])

    if writer is not None:
        lines = ["# neurofpt method comparison curves (t ms, g 1/ms)",
                 "t," + ",".join(names)]
        for row in zip(grid, *[np.asarray(curves[n]) for n in names]):
            lines.append(",".join(repr(float(v)) for v in row))
        writer.write_text("comparison_curves.csv", "\n".join(lines) + "\n")
        writer.write_text("comparison.gp",
                          "set datafile separator ','\n"
                          "set xlabel 't (ms)'\nset ylabel 'g(t) (1/ms)'\n"
                          "plot " + ", ".join(
                              f"'comparison_curves.csv' using 1:{k + 2} "
                              f"with lines title '{n}'"
                              for k, n in enumerate(names)) + "\n")
    return report.to_dict()


# ---------------------------------------------------------------------------
# model-vs-model parameter matching
# ---------------------------------------------------------------------------

def match_parameters(model, boundary, ic, match_opts: dict) -> dict:
    """Derive the parameters of the companion model family under one of
    the three matching criteria.

    criterion:
      'discrete'        -- equal discrete-version parameters: mu = mu2 and
                           sigma^2 = -sigma2^2 V_I (time constants kept).
      'mean-trajectory' -- theta = tau, mu = mu2, sigma = sigma2 sqrt(-V_I).
      'fpt-moments'     -- solve E(T) and Var(T) equality for the companion
                           input parameters numerically.
    """
    criterion = match_opts.get("criterion", "mean-trajectory")
    if isinstance(model, Feller):
        fe = model
        if fe.v_i >= 0:
            raise ConfigError("matching assumes a negative inhibitory reversal")
        if criterion == "discrete":
            theta = float(match_opts.get("theta", fe.tau))
            ou = OU(mu=fe.mu2, sigma2=-fe.sigma2_2 * fe.v_i, theta=theta)
            return {"criterion": criterion, "matched": model_to_dict(ou)}
        if criterion == "mean-trajectory":
            ou = OU(mu=fe.mu2, sigma2=-fe.sigma2_2 * fe.v_i, theta=fe.tau)
            return {"criterion": criterion, "matched": model_to_dict(ou)}
        if criterion == "fpt-moments":
            if not isinstance(boundary, ConstantBoundary):
                raise ConfigError("moment matching needs a constant boundary")
            target = feller_fpt_moments(fe, boundary.S, ic)
            sol = _solve_ou_matching(target.mean, target.variance,
                                     fe.tau, boundary.S, ic)
            return {"criterion": criterion,
                    "target_mean": target.mean,
                    "target_variance": target.variance,
                    "matched": model_to_dict(sol)}
    raise ConfigError("matching is implemented from a Feller source model")


def _solve_ou_matching(mean: float, variance: float, theta: float, S: float,
                       ic: InitialCondition) -> OU:
    """Find (mu, sigma2) of the OU model with the given FPT mean/variance."""

    def equations(p):
        mu, log_s2 = p
        ou = OU(mu=mu, sigma2=math.exp(log_s2), theta=theta)
        mom = ou_fpt_moments(ou, S, ic)
        return [mom.mean / mean - 1.0,
                mom.variance / variance - 1.0]

    # crude initial guess from the exponential-tail picture
    guess = [0.0, math.log(max(variance, 1.0) / max(mean, 1.0) / theta)]
    sol = optimize.root(equations, guess, method="hybr", tol=1e-12)
    if not sol.success:
        raise NoComparableMethods(f"moment matching failed: {sol.message}")
    return OU(mu=float(sol.x[0]), sigma2=float(math.exp(sol.x[1])),
              theta=theta)
