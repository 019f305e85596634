"""Monte Carlo engine: Euler discretization with hidden-crossing bridge
corrections, exact event-driven jump models, jump-diffusion first entrance
times, the Bessel-bridge density estimator and return-process simulation.

Randomness comes from counter-based Philox streams keyed by (seed, stream,
path index), so results are bit-reproducible and independent of how paths
are batched; inner bridge simulations use jumped sub-streams.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .errors import DomainError, UnsupportedModel
from .models import (
    Boundary, ConstantBoundary, DoubleReversal, Feller, InitialCondition,
    InverseGaussianEpochs, JumpDiffusion, ModelSpec, OU, RRW, Stein, Wiener,
    boundary_to_dict, model_to_dict,
)
from .analytic import RefractorySpec
from .special import bessel_ive

__all__ = [
    "SimConfig", "FPTSample", "TrajectoryEnsemble", "ReturnProcessSample",
    "simulate_paths", "simulate_fpt", "simulate_fpt_periodic_ou",
    "wiener_bridge_crossing_prob", "mc_bridge_crossing_prob",
    "approx_bridge_crossing_prob", "bessel_bridge_fpt_estimate",
    "simulate_return_process", "simulate_jump_fet",
]

_CHUNK = 256            # buffered draws (steps) per path per refill


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters.

    correction: 'none', 'wiener-bridge', 'approx-bridge-pdf' or 'mc-bridge'
    (the nested scheme, using n_inner inner bridge paths per step).

    scheme: 'euler' (all models) or 'exact' (Wiener / leaky-Gaussian only),
    which replaces the Euler transition by the exact Gaussian conditional
    step; the Euler transition itself carries an O(dt) weak error that
    dominates hidden-crossing effects once those are corrected.
    """

    dt: float
    t_max: float
    n_paths: int
    seed: int = 0
    correction: str = "wiener-bridge"
    n_inner: int = 64
    scheme: str = "euler"

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0:
            raise DomainError("dt and t_max must be positive")
        if self.n_paths < 1:
            raise DomainError("need at least one path")
        if self.correction not in ("none", "wiener-bridge",
                                   "approx-bridge-pdf", "mc-bridge"):
            raise DomainError(f"unknown correction {self.correction!r}")
        if self.scheme not in ("euler", "exact"):
            raise DomainError(f"unknown scheme {self.scheme!r}")


@dataclass
class FPTSample:
    """Crossing times of the paths that fired before t_max."""

    times: np.ndarray
    censored_count: int
    n_paths: int
    crossing_mode: Optional[np.ndarray] = None   # "diffusion" | "jump"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) + self.censored_count != self.n_paths:
            raise DomainError("crossed + censored must equal n_paths")

    def mean(self) -> float:
        return float(np.mean(self.times))

    def se(self) -> float:
        return float(np.std(self.times, ddof=1) / math.sqrt(len(self.times)))

    def to_csv(self, path_or_buf) -> None:
        buf = io.StringIO()
        buf.write("# neurofpt fpt sample (ms)\n")
        for k, v in self.meta.items():
            buf.write(f"# {k}: {v}\n")
        buf.write(f"# censored: {self.censored_count} of {self.n_paths}\n")
        buf.write("t\n")
        for i, t in enumerate(self.times):
            if self.crossing_mode is not None:
                buf.write(f"{float(t)!r},{self.crossing_mode[i]}\n")
            else:
                buf.write(f"{float(t)!r}\n")
        data = buf.getvalue()
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(data)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(data)


@dataclass
class TrajectoryEnsemble:
    t: np.ndarray
    x: np.ndarray            # shape (n_paths, len(t))
    meta: dict = field(default_factory=dict)

    def to_csv(self, path_or_buf) -> None:
        buf = io.StringIO()
        buf.write("# neurofpt trajectories, long format (mV, ms)\n")
        buf.write("path_id,t,x\n")
        for pid in range(self.x.shape[0]):
            for t, x in zip(self.t, self.x[pid]):
                buf.write(f"{pid},{float(t)!r},{float(x)!r}\n")
        data = buf.getvalue()
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(data)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(data)


@dataclass
class ReturnProcessSample:
    spike_times: list
    counts: np.ndarray
    t_end: float
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# per-path RNG streams
# ---------------------------------------------------------------------------

class _Streams:
    """Per-path Philox streams with chunked (normal, uniform) buffers.

    Each path consumes its own stream in a fixed order, so an ensemble is
    reproducible bit-exactly however the paths are scheduled; stream ids
    separate independent purposes (noise vs jump epochs).
    """

    def __init__(self, seed: int, n_paths: int, stream: int = 0):
        key = np.uint64(stream) << np.uint64(48)
        self.bitgens = [np.random.Philox(key=np.array(
            [np.uint64(seed & (2 ** 64 - 1)), key | np.uint64(p)],
            dtype=np.uint64)) for p in range(n_paths)]
        self.gens = [np.random.Generator(bg) for bg in self.bitgens]
        self.n = n_paths
        self._norm = np.empty((n_paths, _CHUNK))
        self._unif = np.empty((n_paths, _CHUNK))
        self._filled = np.zeros(n_paths, dtype=bool)

    def refill(self, idx: np.ndarray) -> None:
        for i in idx:
            g = self.gens[i]
            self._norm[i] = g.standard_normal(_CHUNK)
            self._unif[i] = g.random(_CHUNK)

    def draws(self, idx: np.ndarray, step: int):
        j = step % _CHUNK
        if j == 0:
            self.refill(idx)
        return self._norm[idx, j], self._unif[idx, j]

    def inner_generator(self, path: int, step: int) -> np.random.Generator:
        return np.random.Generator(self.bitgens[path].jumped(step + 1))


def _drift_fn(model: ModelSpec) -> Callable:
    if isinstance(model, Wiener):
        return lambda x, t: np.full_like(x, model.mu)
    if isinstance(model, OU):
        return lambda x, t: -x / model.theta + model.mu
    if isinstance(model, Feller):
        return lambda x, t: -x / model.tau + model.mu2
    if isinstance(model, DoubleReversal):
        return lambda x, t: -x / model.tau3 + model.mu3
    raise UnsupportedModel(type(model).__name__)


def _sigma2_fn(model: ModelSpec) -> Callable:
    if isinstance(model, (Wiener, OU)):
        s2 = model.sigma2
        return lambda x: np.full_like(x, s2)
    if isinstance(model, Feller):
        return lambda x: model.sigma2_2 * np.clip(x - model.v_i, 0.0, None)
    if isinstance(model, DoubleReversal):
        return lambda x: model.sigma3_2 * np.clip(
            (x - model.v_i) * (model.v_e - x), 0.0, None)
    raise UnsupportedModel(type(model).__name__)


def _clip_state(model: ModelSpec, x: np.ndarray):
    """Full-truncation scheme at reversal levels; returns the clip count."""
    if isinstance(model, Feller):
        mask = x < model.v_i
        x[mask] = model.v_i
        return int(mask.sum())
    if isinstance(model, DoubleReversal):
        mask = (x < model.v_i) | (x > model.v_e)
        np.clip(x, model.v_i, model.v_e, out=x)
        return int(mask.sum())
    return 0


# ---------------------------------------------------------------------------
# bridge crossing probabilities
# ---------------------------------------------------------------------------

def wiener_bridge_crossing_prob(S: float, y, z, h: float, sigma2: float):
    """P(Wiener bridge from y to z over a step of length h exceeds S).

    The canonical constant: exp(-2 (S-y)(S-z) / (h sigma^2)). The printed
    source halves the exponent, which Monte Carlo rules out; see the
    validation test simulating fine-grained bridges.
    """
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    if np.any(y >= S) or np.any(z >= S):
        raise DomainError("bridge endpoints must lie below the level")
    if h <= 0:
        raise DomainError("step must be positive")
    out = np.exp(-2.0 * (S - y) * (S - z) / (h * sigma2))
    return float(out) if out.ndim == 0 else out


def _bridge_drift(model: ModelSpec, x, t, z, t1):
    """Drift of the bridge pinned at (z, t1) for the OU / Feller models."""
    d = t1 - t
    if isinstance(model, OU):
        e = np.exp(-d / model.theta)
        m = x * e + model.mu * model.theta * (1 - e)
        v = model.sigma2 * model.theta / 2.0 * (1 - e * e)
        return -x / model.theta + model.mu + model.sigma2 * (z - m) * e / v
    if isinstance(model, Feller):
        p, q, r, vi = model.p, model.q, model.r, model.v_i
        xs = np.clip(np.asarray(x, float) - vi, 1e-12, None)
        zs = max(z - vi, 1e-12)
        epd = np.exp(p * d)
        denom = epd - 1.0
        root = np.sqrt(xs * zs * epd)
        w = 2.0 * p * root / (r * denom)
        ratio = bessel_ive(q / r, w) / bessel_ive(q / r - 1.0, w)
        return (q + xs * (p - 2.0 * p * epd / denom)
                + 2.0 * p * root / denom * ratio)
    raise UnsupportedModel("bridge SDE implemented for OU and Feller models")


def mc_bridge_crossing_prob(model: ModelSpec, S: float, y: float, z: float,
                            t0: float, t1: float, n_inner: int,
                            rng: np.random.Generator,
                            n_steps: int = 16) -> float:
    """Nested estimate of the bridge crossing probability: simulate n_inner
    bridge paths by Euler on the bridge SDE (stopping one inner step early,
    where the pinning drift degenerates) and return the crossing fraction."""
    from .models import diffusion_coeff
    if y >= S or z >= S:
        raise DomainError("bridge endpoints must lie below the level")
    h = (t1 - t0) / n_steps
    shift = model.v_i if isinstance(model, Feller) else 0.0
    x = np.full(n_inner, y)
    crossed = np.zeros(n_inner, dtype=bool)
    t = t0
    for k in range(n_steps - 1):          # last step left to the pinning
        drift = _bridge_drift(model, x, t, z, t1)
        if isinstance(model, Feller):
            sig = np.sqrt(2.0 * model.r * np.clip(x - shift, 0.0, None))
            x = x + (drift * h + sig * math.sqrt(h) * rng.standard_normal(n_inner))
            x = np.maximum(x, shift)
        else:
            sig = math.sqrt(model.sigma2)
            x = x + drift * h + sig * math.sqrt(h) * rng.standard_normal(n_inner)
        t += h
        crossed |= x >= S
    return float(crossed.mean())


def approx_bridge_crossing_prob(model: ModelSpec, S, y, z, t0: float,
                                t1: float, n_quad: int = 8):
    """Crossing probability from the closed-form bridge FPT approximation:
    the integral over the step of -2 psi(S, s | y, t0) scaled by the pinning
    density ratio. Vectorized over path arrays y, z."""
    from .numeric import make_psi
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    psi = make_psi(model, ConstantBoundary(S))
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    mid = 0.5 * (t0 + t1)
    half = 0.5 * (t1 - t0)
    total = np.zeros_like(y)
    for xi, w in zip(nodes, weights):
        s = mid + half * xi
        num = _transition_pdf_vec(model, z, t1, np.full_like(y, S), s)
        den = _transition_pdf_vec(model, z, t1, y, t0)
        total += w * (-2.0) * psi(s, y, t0) * num / den
    return np.clip(total * half, 0.0, 1.0)


def _transition_pdf_vec(model: ModelSpec, x, t, y, s):
    """f(x, t | y, s) broadcast over path arrays (no validation)."""
    d = np.asarray(t - s, float)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if isinstance(model, Wiener):
        v = model.sigma2 * d
        return np.exp(-((x - y - model.mu * d) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)
    if isinstance(model, OU):
        e = np.exp(-d / model.theta)
        m = y * e + model.mu * model.theta * (1 - e)
        v = model.sigma2 * model.theta / 2.0 * (1 - e * e)
        return np.exp(-((x - m) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)
    if isinstance(model, Feller):
        p, q, r, vi = model.p, model.q, model.r, model.v_i
        nu = q / r - 1.0
        xs = np.clip(x - vi, 1e-300, None)
        ys = np.clip(y - vi, 1e-300, None)
        epd = np.exp(p * d)
        c = p / (r * (epd - 1.0))
        zarg = 2.0 * c * np.sqrt(xs * ys * epd)
        expo = -c * (np.sqrt(xs) - np.sqrt(ys * epd)) ** 2
        return c * np.power(xs / (ys * epd), nu / 2.0) * np.exp(expo) \
            * bessel_ive(nu, zarg)
    raise UnsupportedModel(type(model).__name__)


# ---------------------------------------------------------------------------
# the diffusion FPT engine
# ---------------------------------------------------------------------------

def _exact_step_fn(model: ModelSpec, dt: float) -> Callable:
    """Exact Gaussian conditional transition for the linear models."""
    if isinstance(model, Wiener):
        sd = math.sqrt(model.sigma2 * dt)
        return lambda y, eps: y + model.mu * dt + sd * eps
    if isinstance(model, OU):
        e = math.exp(-dt / model.theta)
        m_inf = model.mu * model.theta
        sd = math.sqrt(model.sigma2 * model.theta / 2.0 * (1 - e * e))
        return lambda y, eps: y * e + m_inf * (1 - e) + sd * eps
    raise UnsupportedModel(
        "the exact transition scheme covers the Wiener and leaky-Gaussian "
        "models")


def _diffusion_fpt(model: ModelSpec, boundary: Boundary, ic: InitialCondition,
                   cfg: SimConfig, drift_extra: Optional[Callable] = None):
    """Lockstep stepping with per-path streams; returns (times, modes, clips)."""
    n = cfg.n_paths
    dt = cfg.dt
    streams = _Streams(cfg.seed, n, stream=0)
    drift = _drift_fn(model)
    sig2 = _sigma2_fn(model)
    exact_step = None
    if cfg.scheme == "exact":
        if drift_extra is not None:
            raise UnsupportedModel("exact stepping with drift modulation "
                                   "is not available")
        exact_step = _exact_step_fn(model, dt)
    x = np.full(n, float(ic.x0))
    times = np.full(n, np.nan)
    idx = np.arange(n)
    n_steps = int(math.ceil(cfg.t_max / dt))
    t = ic.t0
    clips = 0
    for k in range(n_steps):
        if idx.size == 0:
            break
        eps, unif = streams.draws(idx, k)
        y = x[idx]
        s_left = boundary.value(t, model)
        s_right = boundary.value(t + dt, model)
        if exact_step is not None:
            z = exact_step(y, eps)
        else:
            mu_step = drift(y, t)
            if drift_extra is not None:
                mu_step = mu_step + drift_extra(y, t)
            v = sig2(y)
            z = y + mu_step * dt + np.sqrt(v * dt) * eps
        clips += _clip_state(model, z)
        crossed = z >= s_right
        tcross = np.empty(idx.size)
        if np.any(crossed):
            num = np.clip(s_left - y[crossed], 0.0, None)
            den = np.clip(z[crossed] - y[crossed], 1e-300, None)
            frac = np.clip(num / den, 0.0, 1.0)
            tcross[crossed] = t + frac * dt
        hidden = np.zeros(idx.size, dtype=bool)
        if cfg.correction != "none":
            below = ~crossed
            if np.any(below):
                yb = y[below]
                zb = z[below]
                if cfg.correction == "wiener-bridge":
                    p = np.exp(-2.0 * np.clip(s_left - yb, 0.0, None)
                               * np.clip(s_left - zb, 0.0, None)
                               / (dt * np.clip(sig2(yb), 1e-300, None)))
                elif cfg.correction == "approx-bridge-pdf":
                    p = approx_bridge_crossing_prob(model, s_left, yb, zb,
                                                    t, t + dt)
                else:   # mc-bridge
                    p = np.empty(yb.size)
                    sub = np.flatnonzero(below)
                    for m, (yy, zz) in enumerate(zip(yb, zb)):
                        gen = streams.inner_generator(int(idx[sub[m]]), k)
                        p[m] = mc_bridge_crossing_prob(
                            model, s_left, float(yy), float(zz),
                            t, t + dt, cfg.n_inner, gen)
                hit = unif[below] < p
                hidden[below] = hit
        newly = crossed | hidden
        if np.any(newly):
            tc = np.where(crossed, tcross, t + dt / 2.0)
            times[idx[newly]] = tc[newly]
        x[idx] = z
        idx = idx[~newly]
        t += dt
    modes = None
    return times, modes, clips


def simulate_fpt(model: ModelSpec, boundary: Boundary, ic: InitialCondition,
                 cfg: SimConfig) -> FPTSample:
    """First-passage times through the boundary for any model variant.

    Diffusions use Euler steps with the configured hidden-crossing
    correction; the RRW and Stein models are simulated exactly between
    exponential epochs; jump diffusions delegate to simulate_jump_fet.
    """
    if boundary.value(ic.t0, model) <= ic.x0:
        raise DomainError("x0 must start below the boundary")
    if isinstance(model, JumpDiffusion):
        if not isinstance(boundary, ConstantBoundary):
            raise UnsupportedModel("jump FET needs a constant boundary")
        return simulate_jump_fet(model, boundary.S, ic, cfg)
    if isinstance(model, (RRW, Stein)):
        if not isinstance(boundary, ConstantBoundary):
            raise UnsupportedModel("event-driven models need a constant boundary")
        times = _event_driven_fpt(model, boundary.S, ic, cfg)
        modes = None
        clips = 0
    else:
        times, modes, clips = _diffusion_fpt(model, boundary, ic, cfg)
    ok = ~np.isnan(times)
    meta = {"model": model_to_dict(model), "boundary": boundary_to_dict(boundary),
            "dt": cfg.dt, "seed": cfg.seed, "correction": cfg.correction,
            "state_clips": clips}
    return FPTSample(times=times[ok], censored_count=int((~ok).sum()),
                     n_paths=cfg.n_paths, crossing_mode=modes, meta=meta)


def simulate_fpt_periodic_ou(ou: OU, A: float, omega: float, phi: float,
                             S: float, ic: InitialCondition,
                             cfg: SimConfig) -> FPTSample:
    """Direct simulation of the OU model with sinusoidal drift modulation
    through the constant threshold S (companion of the boundary-transform
    route)."""
    extra = lambda x, t: A * np.sin(omega * t + phi)
    times, _, clips = _diffusion_fpt(ou, ConstantBoundary(S), ic, cfg,
                                     drift_extra=extra)
    ok = ~np.isnan(times)
    meta = {"model": model_to_dict(ou), "A": A, "omega": omega, "phi": phi,
            "S": S, "dt": cfg.dt, "seed": cfg.seed,
            "correction": cfg.correction}
    return FPTSample(times=times[ok], censored_count=int((~ok).sum()),
                     n_paths=cfg.n_paths, meta=meta)


# ---------------------------------------------------------------------------
# event-driven models (exact epochs)
# ---------------------------------------------------------------------------

def _event_driven_fpt(model: Union[RRW, Stein], S: float,
                      ic: InitialCondition, cfg: SimConfig) -> np.ndarray:
    n = cfg.n_paths
    streams = _Streams(cfg.seed, n, stream=0)
    lp = model.lambda_plus
    lm = model.lambda_minus
    rate = lp + lm
    p_plus = lp / rate
    if isinstance(model, RRW):
        up, down = model.delta, -model.delta
    else:
        up, down = model.delta_plus, model.delta_minus
    x = np.full(n, float(ic.x0))
    t = np.full(n, float(ic.t0))
    times = np.full(n, np.nan)
    idx = np.arange(n)
    it = 0
    while idx.size:
        eps, unif = streams.draws(idx, it)
        # exponential waiting times from the uniform draw
        wait = -np.log(np.clip(1.0 - _to_uniform(eps), 1e-300, 1.0)) / rate
        t_next = t[idx] + wait
        if isinstance(model, Stein):
            # deterministic decay toward rho may cross S between epochs
            rest = model.rho
            if rest > S:
                xa = x[idx]
                riser = xa < S
                tstar = np.full(idx.size, np.inf)
                with np.errstate(divide="ignore", invalid="ignore"):
                    tt = model.theta * np.log((rest - xa) / (rest - S))
                tstar[riser] = tt[riser]
                hits = tstar < wait
                if np.any(hits):
                    times[idx[hits]] = t[idx[hits]] + tstar[hits]
                    keep = ~hits
                    idx_l = idx[hits]
                    x[idx_l] = S
                    idx = idx[keep]
                    eps, unif, wait, t_next = (eps[keep], unif[keep],
                                               wait[keep], t_next[keep])
            x[idx] = rest + (x[idx] - rest) * np.exp(-wait / model.theta)
        over = t_next > cfg.t_max
        if np.any(over):
            idx = idx[~over]
            eps, unif, t_next = eps[~over], unif[~over], t_next[~over]
        if idx.size == 0:
            break
        jump = np.where(unif < p_plus, up, down)
        x[idx] += jump
        t[idx] = t_next
        hit = x[idx] >= S - 1e-9 * abs(up)
        if np.any(hit):
            times[idx[hit]] = t_next[hit]
            idx = idx[~hit]
        it += 1
    return times


def _to_uniform(normals: np.ndarray) -> np.ndarray:
    """Map buffered normals back to uniforms (event models need two
    uniforms per event)."""
    from .special import norm_cdf
    return norm_cdf(normals)


# ---------------------------------------------------------------------------
# trajectory ensembles
# ---------------------------------------------------------------------------

def simulate_paths(model: ModelSpec, ic: InitialCondition, cfg: SimConfig,
                   record_every: int = 1) -> TrajectoryEnsemble:
    """Free trajectories (no threshold) on the simulation grid.

    Diffusions share per-path Wiener increments across models under the
    same seed: one standard normal per path per step, consumed in a fixed
    order. Event-driven models are sampled exactly at their jump epochs
    and read out on the grid.
    """
    n_steps = int(math.ceil(cfg.t_max / cfg.dt))
    rec = np.arange(0, n_steps + 1, record_every)
    tgrid = ic.t0 + cfg.dt * rec
    if isinstance(model, (RRW, Stein)):
        xs = _event_driven_paths(model, ic, cfg, tgrid)
        return TrajectoryEnsemble(t=tgrid, x=xs,
                                  meta={"model": model_to_dict(model)})
    if isinstance(model, JumpDiffusion):
        raise UnsupportedModel("free jump-diffusion ensembles are not provided; "
                               "use simulate_jump_fet for entrance times")
    n = cfg.n_paths
    streams = _Streams(cfg.seed, n, stream=0)
    drift = _drift_fn(model)
    sig2 = _sigma2_fn(model)
    x = np.full(n, float(ic.x0))
    out = np.empty((n, rec.size))
    out[:, 0] = x
    sqdt = math.sqrt(cfg.dt)
    col = 1
    idx = np.arange(n)
    t = ic.t0
    for k in range(n_steps):
        eps, _ = streams.draws(idx, k)
        x = x + drift(x, t) * cfg.dt + np.sqrt(sig2(x) * cfg.dt) * eps
        _clip_state(model, x)
        t += cfg.dt
        if col < rec.size and (k + 1) == rec[col]:
            out[:, col] = x
            col += 1
    return TrajectoryEnsemble(t=tgrid, x=out,
                              meta={"model": model_to_dict(model),
                                    "dt": cfg.dt, "seed": cfg.seed})


def _event_driven_paths(model: Union[RRW, Stein], ic: InitialCondition,
                        cfg: SimConfig, tgrid: np.ndarray) -> np.ndarray:
    n = cfg.n_paths
    streams = _Streams(cfg.seed, n, stream=0)
    rate = model.lambda_plus + model.lambda_minus
    p_plus = model.lambda_plus / rate
    if isinstance(model, RRW):
        up, down = model.delta, -model.delta
        theta = None
        rest = 0.0
    else:
        up, down = model.delta_plus, model.delta_minus
        theta = model.theta
        rest = model.rho
    out = np.empty((n, tgrid.size))
    for pid in range(n):
        g = streams.gens[pid]
        t, x = float(ic.t0), float(ic.x0)
        col = 0
        while col < tgrid.size:
            wait = g.exponential(1.0 / rate)
            t_next = t + wait
            while col < tgrid.size and tgrid[col] <= t_next:
                if theta is None:
                    out[pid, col] = x
                else:
                    out[pid, col] = rest + (x - rest) * math.exp(
                        -(tgrid[col] - t) / theta)
                col += 1
            if theta is not None:
                x = rest + (x - rest) * math.exp(-wait / theta)
            x += up if g.random() < p_plus else down
            t = t_next
    return out


# ---------------------------------------------------------------------------
# Bessel-bridge density estimator (OU, mu = 0)
# ---------------------------------------------------------------------------

def bessel_bridge_fpt_estimate(ou: OU, S: float, ic: InitialCondition,
                               t: float, n_paths: int, seed: int = 0,
                               n_steps: int = 200):
    """Pointwise FPT density estimate for the driftless OU model.

    g(t) = exp(-(S'^2 - x0'^2 - t)/(2 theta)) g_W(t) E[exp(-(1/2 theta^2)
    int_0^t (r_s - S')^2 ds)] in unit-variance coordinates; r is the
    three-dimensional Bessel bridge from 0 to S' - x0', generated exactly
    as the norm of three pinned Gaussian bridges (no singular-drift Euler
    steps needed). Returns (estimate, standard error).
    """
    if ou.mu != 0.0:
        raise DomainError("the Bessel-bridge representation needs mu = 0")
    if t <= 0:
        raise DomainError("t must be positive")
    sig = math.sqrt(ou.sigma2)
    s_std = S / sig
    x0_std = ic.x0 / sig
    if s_std <= x0_std:
        raise DomainError("require S > x0")
    th = ou.theta
    y_end = s_std - x0_std
    gw = y_end / math.sqrt(2 * math.pi * t ** 3) * math.exp(-y_end ** 2 / (2 * t))
    pref = math.exp(-(s_std ** 2 - x0_std ** 2 - t) / (2 * th))
    rng = np.random.Generator(np.random.Philox(
        key=np.array([np.uint64(seed), np.uint64(0)], dtype=np.uint64)))
    h = t / n_steps
    # three pinned Gaussian bridges; only the first has a nonzero endpoint
    b = np.zeros((3, n_paths))
    targets = np.array([y_end, 0.0, 0.0])
    integral = np.zeros(n_paths)
    r_prev = np.zeros(n_paths)
    for k in range(1, n_steps + 1):
        rem = t - (k - 1) * h
        if k < n_steps:
            mean = b + (targets[:, None] - b) * (h / rem)
            var = h * (rem - h) / rem
            b = mean + math.sqrt(max(var, 0.0)) * rng.standard_normal((3, n_paths))
        else:
            b = np.tile(targets[:, None], (1, n_paths))
        r = np.sqrt((b ** 2).sum(axis=0))
        integral += 0.5 * h * ((r_prev - s_std) ** 2 + (r - s_std) ** 2)
        r_prev = r
    # the integrand path starts at r_0 = 0: the first trapezoid above used
    # r_prev = 0 at k = 1, which is exactly the pinned start
    weights = np.exp(-integral / (2.0 * th * th))
    est = pref * gw * float(weights.mean())
    se = pref * gw * float(weights.std(ddof=1) / math.sqrt(n_paths))
    return est, se


# ---------------------------------------------------------------------------
# return process with refractoriness
# ---------------------------------------------------------------------------

def simulate_return_process(model: ModelSpec, boundary: Boundary,
                            ic: InitialCondition, refractory: RefractorySpec,
                            t_end: float, cfg: SimConfig) -> ReturnProcessSample:
    """Renewal simulation: FPT, refractory hold on the threshold, reset to
    x0, repeat; returns per-run spike times and the counts M_{t_end}."""
    if not isinstance(model, (Wiener, OU, Feller, DoubleReversal)):
        raise UnsupportedModel("return process implemented for diffusions")
    n = cfg.n_paths
    dt = cfg.dt
    streams = _Streams(cfg.seed, n, stream=0)
    ref_gens = _Streams(cfg.seed, n, stream=2).gens
    drift = _drift_fn(model)
    sig2 = _sigma2_fn(model)
    x = np.full(n, float(ic.x0))
    resume_at = np.zeros(n)               # end of the current refractory hold
    spike_times: list[list[float]] = [[] for _ in range(n)]
    n_steps = int(math.ceil(t_end / dt))
    t = ic.t0
    all_idx = np.arange(n)
    for k in range(n_steps):
        eps, unif = streams.draws(all_idx, k)
        active = resume_at <= t
        # paths leaving refractoriness inside this step advance a partial step
        partial = (~active) & (resume_at < t + dt)
        step_len = np.where(active, dt, np.where(partial, t + dt - resume_at, 0.0))
        live = step_len > 0
        if np.any(live):
            y = x[live]
            hl = step_len[live]
            mu_step = drift(y, t)
            z = y + mu_step * hl + np.sqrt(sig2(y) * hl) * eps[live]
            _clip_state(model, z)
            s_left = boundary.value(t, model)
            s_right = boundary.value(t + dt, model)
            crossed = z >= s_right
            p_hidden = np.exp(-2.0 * np.clip(s_left - y, 0.0, None)
                              * np.clip(s_left - z, 0.0, None)
                              / (np.clip(hl, 1e-300, None)
                                 * np.clip(sig2(y), 1e-300, None)))
            hidden = (~crossed) & (unif[live] < p_hidden) \
                if cfg.correction != "none" else np.zeros_like(crossed)
            fired = crossed | hidden
            frac = np.where(crossed,
                            np.clip((s_left - y) / np.clip(z - y, 1e-300, None),
                                    0.0, 1.0),
                            0.5)
            tc = (t + dt - hl) + frac * hl
            live_idx = all_idx[live]
            for j in np.flatnonzero(fired):
                pid = live_idx[j]
                t_spike = float(tc[j])
                spike_times[pid].append(t_spike)
                hold = _refractory_draw(refractory,
                                        float(ref_gens[pid].random()))
                resume_at[pid] = t_spike + hold
                x[pid] = ic.x0
            ok = ~fired
            x[live_idx[ok]] = z[ok]
        t += dt
    counts = np.array([len(s) for s in spike_times])
    meta = {"model": model_to_dict(model), "dt": dt, "seed": cfg.seed,
            "t_end": t_end}
    return ReturnProcessSample(spike_times=[np.asarray(s) for s in spike_times],
                               counts=counts, t_end=t_end, meta=meta)


def _refractory_draw(refractory: RefractorySpec, u: float) -> float:
    from .analytic import (ConstantRefractory, ExponentialRefractory,
                           TabulatedRefractory)
    if isinstance(refractory, ConstantRefractory):
        return refractory.r
    if isinstance(refractory, ExponentialRefractory):
        return -math.log(max(1.0 - u, 1e-300)) / refractory.rate
    if isinstance(refractory, TabulatedRefractory):
        knots = refractory.grid_times()
        cdf = np.cumsum(np.asarray(refractory.values, float)) * refractory.h
        return float(np.interp(u, cdf / cdf[-1], knots))
    raise UnsupportedModel(type(refractory).__name__)


# ---------------------------------------------------------------------------
# jump-diffusion first entrance times
# ---------------------------------------------------------------------------

def simulate_jump_fet(model: JumpDiffusion, S: float, ic: InitialCondition,
                      cfg: SimConfig) -> FPTSample:
    """First entrance times into (S, inf) for a jump diffusion.

    Steps split at the jump epochs (the epoch replaces the right knot of
    the interval), the bridge correction runs on each sub-interval, and
    crossings are tagged 'diffusion' or 'jump'. With both rates zero the
    sample is identical to the pure-diffusion one under the same seed.
    """
    if model.lambda_e == 0.0 and model.lambda_i == 0.0:
        base = simulate_fpt(model.underlying, ConstantBoundary(S), ic, cfg)
        base.crossing_mode = np.array(["diffusion"] * len(base.times))
        base.meta["model"] = model_to_dict(model)
        return base
    under = model.underlying
    n = cfg.n_paths
    dt = cfg.dt
    noise = _Streams(cfg.seed, n, stream=0)
    epoch_streams = _Streams(cfg.seed, n, stream=1)
    drift = _drift_fn(under)
    sig2 = _sigma2_fn(under)
    x = np.full(n, float(ic.x0))
    t = np.full(n, float(ic.t0))
    times = np.full(n, np.nan)
    mode = np.empty(n, dtype=object)
    next_e = np.array([_epoch_draw(model, epoch_streams.gens[p], model.lambda_e)
                       for p in range(n)]) + ic.t0
    next_i = np.array([_epoch_draw(model, epoch_streams.gens[p], model.lambda_i)
                       for p in range(n)]) + ic.t0
    idx = np.arange(n)
    it = 0
    t_final = ic.t0 + cfg.t_max
    while idx.size:
        eps, unif = noise.draws(idx, it)
        tcur = t[idx]
        nxt_jump = np.minimum(next_e[idx], next_i[idx])
        t_step_end = np.minimum(np.minimum(tcur + dt, nxt_jump), t_final)
        hl = t_step_end - tcur
        y = x[idx]
        z = y + drift(y, tcur) * hl + np.sqrt(sig2(y) * np.clip(hl, 0, None)) * eps
        _clip_state(under, z)
        crossed = z >= S
        p_hidden = np.exp(-2.0 * np.clip(S - y, 0.0, None)
                          * np.clip(S - z, 0.0, None)
                          / (np.clip(hl, 1e-300, None)
                             * np.clip(sig2(y), 1e-300, None)))
        hidden = (~crossed) & (unif < p_hidden) \
            if cfg.correction != "none" else np.zeros_like(crossed)
        fired = crossed | hidden
        frac = np.clip(np.where(crossed, (S - y) / np.clip(z - y, 1e-300, None),
                                0.5), 0.0, 1.0)
        tc = tcur + frac * hl
        if np.any(fired):
            pid = idx[fired]
            times[pid] = tc[fired]
            mode[pid] = "diffusion"
        x[idx] = z
        t[idx] = t_step_end
        alive = ~fired
        # apply jumps for paths whose step ended exactly at an epoch
        at_e = alive & (t_step_end >= next_e[idx] - 1e-15) & (t_step_end < t_final)
        at_i = alive & (t_step_end >= next_i[idx] - 1e-15) & (t_step_end < t_final)
        if np.any(at_e):
            pid = idx[at_e]
            x[pid] += model.a
            jump_cross = x[pid] > S
            if np.any(jump_cross):
                hitid = pid[jump_cross]
                times[hitid] = t[hitid]
                mode[hitid] = "jump"
                alive_idx = np.ones(idx.size, dtype=bool)
                # flag below via fired-array handling
                for hid in hitid:
                    alive[np.flatnonzero(idx == hid)] = False
            for p in pid:
                next_e[p] = t[p] + _epoch_draw(model, epoch_streams.gens[p],
                                               model.lambda_e)
        if np.any(at_i):
            pid = idx[at_i]
            x[pid] -= model.a
            _clip_single(under, x, pid)
            for p in pid:
                next_i[p] = t[p] + _epoch_draw(model, epoch_streams.gens[p],
                                               model.lambda_i)
        timed_out = t[idx] >= t_final - 1e-15
        idx = idx[alive & ~timed_out]
        it += 1
    ok = ~np.isnan(times)
    meta = {"model": model_to_dict(model), "S": S, "dt": dt, "seed": cfg.seed,
            "correction": cfg.correction}
    return FPTSample(times=times[ok], censored_count=int((~ok).sum()),
                     n_paths=n, crossing_mode=mode[ok], meta=meta)


def _clip_single(model: ModelSpec, x: np.ndarray, pid: np.ndarray) -> None:
    if isinstance(model, Feller):
        x[pid] = np.maximum(x[pid], model.v_i)


def _epoch_draw(model: JumpDiffusion, gen: np.random.Generator,
                rate: float) -> float:
    if rate <= 0:
        return math.inf
    if isinstance(model.epochs, InverseGaussianEpochs):
        return float(gen.wald(model.epochs.mean, model.epochs.shape))
    return float(gen.exponential(1.0 / rate))
