"""Grid-based machinery: the regularized Volterra FPT solver, Fortet
residual validation, space-time transformations, the inverse FPT problem,
kernel density estimation and counting-process convolutions.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import optimize
from scipy.signal import fftconvolve

from .analytic import (
    ConstantRefractory, RefractorySpec, feller_fpt_moments, ou_fpt_moments,
    wiener_fpt_moments, wiener_fpt_pdf,
)
from .errors import (
    AccuracyWarning, DomainError, GridMismatch, MissingMoment,
    NonPositiveDensity, RegimeViolation, RootNotBracketed, RootNotFound,
    StepTooCoarse, TooFewSamples, UnsupportedModel,
)
from .models import (
    Boundary, ConstantBoundary, Feller, HyperbolicBoundary, InitialCondition,
    LinearBoundary, ModelSpec, OU, PeriodicBoundary, TabulatedBoundary,
    Wiener, absorbed_transition_pdf_wiener, boundary_from_dict,
    boundary_to_dict, model_from_dict, model_to_dict,
)
from .special import bessel_ive, norm_cdf, norm_ppf

__all__ = [
    "GridDensity", "PsiKernel", "make_psi", "volterra_fpt_pdf",
    "fortet_residual", "periodic_drift_to_boundary", "ou_to_wiener_map",
    "SpaceTimeMap", "inverse_fpt_boundary", "kde_from_isi",
    "counting_probabilities", "counting_probability_grids",
    "jump_fet_pdf_approx", "grid_convolve",
]


# ---------------------------------------------------------------------------
# GridDensity
# ---------------------------------------------------------------------------

@dataclass
class GridDensity:
    """Density values on the uniform knots t0 + h, t0 + 2h, ..., t0 + n h."""

    t0: float
    h: float
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.h <= 0:
            raise DomainError("grid step must be positive")
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < -1e-12):
            raise NonPositiveDensity("density values below the solver-noise floor")
        neg = int(np.sum(self.values < 0))
        if neg:
            self.meta.setdefault("clamped", 0)
            self.meta["clamped"] += neg
            self.values = np.clip(self.values, 0.0, None)
        m = self.mass
        if m > 1.0 + 1e-6:
            raise DomainError(f"grid density mass {m} exceeds 1")

    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(1, len(self.values) + 1)

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.h)

    def cdf(self) -> np.ndarray:
        """Trapezoid cumulative (the density is zero at the grid origin)."""
        return (np.cumsum(self.values) - self.values / 2.0) * self.h

    def pdf_at(self, t):
        return np.interp(np.asarray(t, float), self.times(), self.values,
                         left=0.0, right=0.0)

    def cdf_at(self, t):
        return np.interp(np.asarray(t, float), self.times(), self.cdf(),
                         left=0.0, right=float(self.cdf()[-1]) if len(self.values) else 0.0)

    def mean(self) -> float:
        m = self.mass
        if m <= 0:
            raise MissingMoment("empty density")
        return float(np.sum(self.times() * self.values) * self.h / m)

    def to_csv(self, path_or_buf) -> None:
        buf = io.StringIO()
        buf.write("# neurofpt grid density (units mV, ms)\n")
        for key in ("model", "boundary"):
            if key in self.meta:
                buf.write(f"# {key}: {json.dumps(self.meta[key])}\n")
        buf.write(f"# t0: {self.t0!r}, h: {self.h!r}, mass: {self.mass!r}\n")
        buf.write("t,g\n")
        for t, v in zip(self.times(), self.values):
            buf.write(f"{float(t)!r},{float(v)!r}\n")
        data = buf.getvalue()
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(data)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(data)

    @staticmethod
    def from_csv(path_or_buf) -> "GridDensity":
        if hasattr(path_or_buf, "read"):
            lines = path_or_buf.read().splitlines()
        else:
            with open(path_or_buf) as fh:
                lines = fh.read().splitlines()
        meta = {}
        rows = []
        for line in lines:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                for key in ("model", "boundary"):
                    if body.startswith(f"{key}:"):
                        meta[key] = json.loads(body[len(key) + 1:])
                continue
            if line.startswith("t,"):
                continue
            t_str, v_str = line.split(",")
            rows.append((float(t_str), float(v_str)))
        ts = np.array([r[0] for r in rows])
        vs = np.array([r[1] for r in rows])
        if len(ts) < 2:
            raise DomainError("grid density CSV needs at least two rows")
        h = float(ts[1] - ts[0])
        steps = np.diff(ts)
        if not np.allclose(steps, h, rtol=1e-8, atol=1e-12):
            raise GridMismatch("grid density CSV is not uniformly spaced")
        return GridDensity(t0=float(ts[0] - h), h=h, values=vs, meta=meta)


def grid_convolve(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """Discrete approximation of (a * b)(t_i) on the shared left-open grid.

    c[i] = h * sum_{j<i} a[j] b[i-1-j]; c[0] = 0.
    """
    n = len(a)
    if len(b) != n:
        raise GridMismatch("convolution operands must share the grid")
    if n < 2:
        return np.zeros(n)
    full = fftconvolve(a, b)[: n - 1]
    return np.concatenate(([0.0], h * full))


# ---------------------------------------------------------------------------
# psi kernels
# ---------------------------------------------------------------------------

@dataclass
class PsiKernel:
    """Regularized kernel psi(S(t), t | x, tau) of the second-kind equation.

    `k_tag` documents the regularizing k(t) choice; `evaluate` is
    broadcastable over x and tau at fixed t.
    """

    model: ModelSpec
    boundary: Boundary
    k_tag: str
    evaluate: Callable

    def __call__(self, t, x, tau):
        return self.evaluate(t, x, tau)


def make_psi(model: ModelSpec, boundary: Boundary,
             kernel: str = "auto") -> PsiKernel:
    """Build the regularized psi kernel for a model/boundary pair.

    kernel='auto' picks the bounded-kernel k(t) for each model; for the OU
    model with a hyperbolic threshold, 'symmetry' selects the k(t) that
    annihilates the kernel on the boundary (the integral term of the
    equation then vanishes and the density is -2 psi in closed form).
    """
    if isinstance(model, Wiener):
        mu, s2 = model.mu, model.sigma2

        def ev(t, x, tau):
            d = np.asarray(t - tau, float)
            s_t = boundary.value(t, model)
            sp = boundary.slope(t, model)
            v = s2 * d
            f = np.exp(-((s_t - x - mu * d) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)
            return ((sp - mu) / 2.0 - (s_t - x - mu * d) / (2 * d)) * f

        return PsiKernel(model, boundary, "wiener:(mu-S')/2", ev)

    if isinstance(model, OU):
        th, mu, s2 = model.theta, model.mu, model.sigma2
        use_symmetry = (kernel == "symmetry"
                        or (kernel == "auto" and isinstance(boundary, HyperbolicBoundary)))

        def ev(t, x, tau):
            d = np.asarray(t - tau, float)
            e1 = np.exp(-d / th)
            e2 = e1 * e1
            s_t = boundary.value(t, model)
            sp = boundary.slope(t, model)
            m = x * e1 + mu * th * (1 - e1)
            v = s2 * th / 2.0 * (1 - e2)
            f = np.exp(-((s_t - m) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)
            if use_symmetry:
                bracket = (sp - (mu - x / th) * e1
                           - (s_t - m) * e2 / (th * (1 - e2))
                           - boundary.B / th * np.exp(t / th))
            else:
                bracket = ((sp + s_t / th - mu) / 2.0
                           - (s_t - m) / (th * (1 - e2)))
            return bracket * f

        tag = "ou:symmetry" if use_symmetry else "ou:-(S'+S/theta-mu)/2"
        return PsiKernel(model, boundary, tag, ev)

    if isinstance(model, Feller):
        p, q, r, vi = model.p, model.q, model.r, model.v_i
        nu = q / r - 1.0

        def ev(t, x, tau):
            d = np.asarray(t - tau, float)
            s_t = np.asarray(boundary.value(t, model), float) - vi
            sp = boundary.slope(t, model)
            y = np.asarray(x, float) - vi
            epd = np.exp(p * d)
            denom = epd - 1.0                       # negative
            c = p / (r * denom)                     # positive
            root = np.sqrt(np.clip(s_t * y * epd, 0.0, None))
            z = 2.0 * c * root
            # transition density f(S(t), t | x, tau), overflow-stable
            expo = -c * (np.sqrt(np.clip(s_t, 0.0, None)) - np.sqrt(y * epd)) ** 2
            f = c * np.power(s_t / (y * epd), nu / 2.0) * np.exp(expo) \
                * bessel_ive(nu, z)
            ratio = bessel_ive(nu + 1.0, z) / bessel_ive(nu, z)
            bracket = (sp - p * s_t * epd / denom
                       + (p * s_t + q - r / 2.0 - sp) / 2.0
                       + p * root / denom * ratio)
            return bracket * f

        return PsiKernel(model, boundary, "feller:(pS+q-r/2-S')/2", ev)

    raise UnsupportedModel(
        f"no psi kernel for {type(model).__name__}")


# ---------------------------------------------------------------------------
# Volterra solver
# ---------------------------------------------------------------------------

def _pilot_step(model: ModelSpec, boundary: Boundary, ic: InitialCondition,
                t_max: float) -> float:
    """Cheap mean-FPT guess used to seed the pilot grid."""
    try:
        if isinstance(boundary, ConstantBoundary):
            s = boundary.S
            if isinstance(model, Wiener) and model.mu > 0:
                return wiener_fpt_moments(model, s, ic).mean / 50.0
            if isinstance(model, OU):
                return ou_fpt_moments(model, s, ic).mean / 50.0
            if isinstance(model, Feller):
                return feller_fpt_moments(model, s, ic).mean / 50.0
    except Exception:
        pass
    return t_max / 200.0


def volterra_fpt_pdf(model: ModelSpec, boundary: Boundary, t_max: float,
                     h: Union[float, str] = "auto",
                     ic: InitialCondition = InitialCondition(0.0),
                     kernel: str = "auto") -> GridDensity:
    """FPT density through a (possibly moving) threshold by the explicit
    discretized second-kind equation.

    With h='auto' a coarse pilot run locates the density peak and the step
    is chosen so that at least twenty knots precede it. An explicitly
    supplied step that violates the heuristic is kept but flagged (and a
    warning is emitted); in auto mode the violation raises StepTooCoarse.
    """
    if boundary.value(ic.t0, model) <= ic.x0:
        raise DomainError("x0 must start strictly below the boundary")
    psi = make_psi(model, boundary, kernel=kernel)
    auto = isinstance(h, str)
    if auto:
        h_pilot = min(_pilot_step(model, boundary, ic, t_max), t_max / 100.0)
        tp, gp = _volterra_run(psi, ic, t_max, h_pilot)
        peak = tp[int(np.argmax(gp))]
        h_val = max(peak / 25.0, t_max / 20000.0)
        h_val = min(h_val, t_max / 100.0)
    else:
        h_val = float(h)
    t, g = _volterra_run(psi, ic, t_max, h_val)
    argmax = int(np.argmax(g))
    coarse = argmax < 20
    if coarse and auto:
        raise StepTooCoarse(
            f"density peak at knot {argmax} < 20 even under the auto rule")
    if coarse and not auto:
        warnings.warn(f"only {argmax} knots precede the density peak "
                      f"(heuristic wants >= 20)", AccuracyWarning)
    clamped = int(np.sum(g < 0))
    g = np.clip(g, 0.0, None)
    meta = {
        "model": model_to_dict(model),
        "boundary": boundary_to_dict(boundary),
        "kernel": psi.k_tag,
        "clamped": clamped,
        "step": h_val,
        "auto_step": auto,
        "peak_knot": argmax,
        "step_warning": bool(coarse),
    }
    gd = GridDensity(t0=ic.t0, h=h_val, values=g, meta=meta)
    gd.meta["mass"] = gd.mass
    return gd


def _volterra_run(psi: PsiKernel, ic: InitialCondition, t_max: float,
                  h: float):
    n = int(round((t_max - ic.t0) / h))
    if n < 2:
        raise DomainError("grid too short")
    t = ic.t0 + h * np.arange(1, n + 1)
    g = np.zeros(n)
    first = psi(t, np.full(n, ic.x0), np.full(n, ic.t0))
    g[0] = -2.0 * first[0]
    if isinstance(psi.boundary, ConstantBoundary):
        # time-homogeneous problem: the kernel is stationary, so the whole
        # Toeplitz column can be precomputed and the recursion reduces to
        # dot products against a contiguous reversed view
        s = psi.boundary.S
        kcol = psi(t, np.full(n, s), np.full(n, ic.t0))   # kernel at lag t_k - t0
        krev = kcol[::-1].copy()
        for k in range(1, n):
            # sum_{j<k} g[j] K[(k-j) h] with a contiguous reversed view
            g[k] = -2.0 * first[k] + 2.0 * h * np.dot(g[:k], krev[n - k:])
        return t, g
    bvals = psi.boundary.value(t, psi.model)
    for k in range(1, n):
        ker = psi(t[k], bvals[:k], t[:k])
        g[k] = -2.0 * first[k] + 2.0 * h * np.dot(g[:k], ker)
    return t, g


def fortet_residual(model: ModelSpec, boundary: Boundary, g: GridDensity,
                    x_probe: float, t: float,
                    ic: InitialCondition = InitialCondition(0.0)) -> float:
    """A-posteriori residual of the first-kind equation at (x_probe, t).

    residual = f(x, t | x0) - h sum_j g_j f(x, t | S(t_j), t_j) over the
    knots below t; small residuals certify a solved density.
    """
    from .models import transition_pdf
    if x_probe <= boundary.value(t, model):
        raise DomainError("probe point must lie above the boundary")
    lhs = transition_pdf(model, x_probe, t, ic)
    times = g.times()
    mask = times < t
    tj = times[mask]
    sj = np.asarray(boundary.value(tj, model), float)
    vals = np.array([transition_pdf(model, x_probe, t, InitialCondition(s, u))
                     for s, u in zip(np.atleast_1d(sj), tj)])
    approx = float(np.sum(g.values[mask] * vals) * g.h)
    return lhs - approx


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------

def periodic_drift_to_boundary(ou: OU, A: float, omega: float, phi: float,
                               S: float):
    """Map an OU model with sinusoidal drift A sin(omega t + phi) and a
    constant threshold to the same OU with constant drift and the
    equivalent time-dependent threshold (identical FPT law)."""
    if A < 0:
        raise DomainError("amplitude must be nonnegative")
    if A == 0.0:
        return ou, ConstantBoundary(S)
    return ou, PeriodicBoundary(S=S, A=A, omega=omega, phi=phi)


@dataclass(frozen=True)
class SpaceTimeMap:
    """Invertible space-time change sending the OU process to a Wiener one."""

    ou: OU
    k1: float
    k2: float
    k3: float
    z: float
    tau0: float
    tau1: float
    tau2: float

    def __post_init__(self):
        if self.k1 <= 0:
            raise DomainError("k1 must be positive")

    def forward(self, y, tau):
        th = self.ou.theta
        sig = math.sqrt(self.ou.sigma2)
        rt = math.sqrt(self.k1)
        e = np.exp((np.asarray(tau, float) - self.tau0) / th)
        e2 = math.exp((self.tau2 - self.tau0) / th)
        y_new = (rt / sig * e * (np.asarray(y, float) - self.z)
                 + th * rt * (self.z / th - self.ou.mu) / sig * (e - e2)
                 + self.k2)
        t_new = (self.k1 * th / 2.0
                 * (np.exp(2 * (np.asarray(tau, float) - self.tau0) / th)
                    - math.exp(2 * (self.tau1 - self.tau0) / th))
                 + self.k3)
        return y_new, t_new

    def inverse(self, y_new, tau_new):
        th = self.ou.theta
        sig = math.sqrt(self.ou.sigma2)
        rt = math.sqrt(self.k1)
        e2t = (2.0 * (np.asarray(tau_new, float) - self.k3) / (self.k1 * th)
               + math.exp(2 * (self.tau1 - self.tau0) / th))
        tau = self.tau0 + th / 2.0 * np.log(e2t)
        e = np.sqrt(e2t)
        e2 = math.exp((self.tau2 - self.tau0) / th)
        y = ((np.asarray(y_new, float) - self.k2
              - th * rt * (self.z / th - self.ou.mu) / sig * (e - e2))
             * sig / (rt * e) + self.z)
        return y, tau


def ou_to_wiener_map(ou: OU, k1: float = 1.0, k2: float = 0.0, k3: float = 0.0,
                     z: float = 0.0, tau0: float = 0.0, tau1: float = 0.0,
                     tau2: float = 0.0) -> SpaceTimeMap:
    return SpaceTimeMap(ou, k1, k2, k3, z, tau0, tau1, tau2)


# ---------------------------------------------------------------------------
# inverse FPT problem
# ---------------------------------------------------------------------------

def _gauss_tail(z):
    return 1.0 - norm_cdf(z)


def _mean_sd(model, y, s, t):
    """Transition mean and sd of X_t given X_s = y (Wiener or OU)."""
    d = t - s
    if isinstance(model, Wiener):
        return y + model.mu * d, math.sqrt(model.sigma2 * d)
    if isinstance(model, OU):
        e = math.exp(-d / model.theta)
        m = y * e + model.mu * model.theta * (1 - e)
        sd = math.sqrt(model.sigma2 * model.theta / 2.0 * (1 - e * e))
        return m, sd
    raise UnsupportedModel("inverse problem supports Wiener and OU models")


def inverse_fpt_boundary(model: ModelSpec, g: GridDensity,
                         n_knots: Optional[int] = None,
                         ic: InitialCondition = InitialCondition(0.0)
                         ) -> TabulatedBoundary:
    """Reconstruct the threshold S*(t) generating the FPT density g.

    Sequentially solves the discretized integrated first-kind equation
    knot by knot with bracketed bisection. Two numerical refinements over
    the plain Euler sum (both required for the 2% recovery band):

    * the final quadrature cell carries trapezoid weight h/2 (the
      integrand vanishes at s = 0, interior cells keep the full weight);
    * bisection brackets by scanning rings outward from the previous
      knot's level, so the accumulated discretization ripple cannot hand
      the root finder a spurious far-away sign change.

    Knots with zero density at the leading edge are skipped and filled
    from the first solvable level.
    """
    if not isinstance(model, (Wiener, OU)):
        raise UnsupportedModel("inverse problem supports Wiener and OU models")
    if np.any(g.values < 0):
        raise NonPositiveDensity("density must be nonnegative")
    n = len(g.values) if n_knots is None else min(n_knots, len(g.values))
    times = g.times()[:n]
    gv = g.values[:n]
    h = g.h
    if not np.any(gv > 0):
        raise NonPositiveDensity("density is identically zero")
    sigma = math.sqrt(model.sigma2)
    solved_t: list[float] = []
    solved_s: list[float] = []
    solved_g: list[float] = []

    def residual(s_i, i, t_i):
        m0, sd0 = _mean_sd(model, ic.x0, ic.t0, t_i)
        lhs = _gauss_tail((s_i - m0) / sd0)
        # j = i cell: kernel tail at zero is 1/2, trapezoid half-weight
        rhs = 0.25 * gv[i] * h
        if solved_t:
            tj = np.asarray(solved_t)
            sj = np.asarray(solved_s)
            gj = np.asarray(solved_g)
            if isinstance(model, Wiener):
                m = sj + model.mu * (t_i - tj)
                sd = sigma * np.sqrt(t_i - tj)
            else:
                e = np.exp(-(t_i - tj) / model.theta)
                m = sj * e + model.mu * model.theta * (1 - e)
                sd = np.sqrt(model.sigma2 * model.theta / 2.0 * (1 - e * e))
            rhs += float(np.sum(_gauss_tail((s_i - m) / sd) * gj * h))
        return lhs - rhs

    def bracketed_root(i, t_i, prev):
        delta0 = 3.0 * sigma * math.sqrt(h)
        inner = 0.0
        for k in range(8):
            outer = delta0 * 2.0 ** k
            for a, b in ((prev - outer, prev - inner),
                         (prev + inner, prev + outer)):
                if residual(a, i, t_i) * residual(b, i, t_i) <= 0:
                    return optimize.bisect(residual, a, b, args=(i, t_i),
                                           xtol=1e-10 * max(1.0, abs(prev)))
            inner = outer
        # full-width fallback with geometric expansion
        sd_scale = sigma * math.sqrt(t_i - ic.t0)
        lo, hi = ic.x0, ic.x0 + 10.0 * sd_scale
        for _ in range(4):
            if residual(lo, i, t_i) * residual(hi, i, t_i) <= 0:
                return optimize.bisect(residual, lo, hi, args=(i, t_i),
                                       xtol=1e-10 * max(1.0, sd_scale))
            span = hi - lo
            lo -= span
            hi += span
        partial = TabulatedBoundary.from_arrays(solved_t, solved_s) \
            if len(solved_t) >= 2 else None
        raise RootNotFound(f"no bracket at knot {i} (t={t_i})",
                           knot=i, partial=partial)

    for i, t_i in enumerate(times):
        if gv[i] == 0.0 and not solved_t:
            continue    # leading knot with no mass: skipped, interpolated later
        if not solved_t:
            # first solvable knot has the closed-form one-term equation
            m0, sd0 = _mean_sd(model, ic.x0, ic.t0, t_i)
            q = 0.25 * gv[i] * h
            if q >= 1.0:
                raise NonPositiveDensity("leading density mass exceeds 1")
            s_i = m0 + sd0 * norm_ppf(1.0 - q)
        else:
            s_i = bracketed_root(i, t_i, solved_s[-1])
        solved_t.append(float(t_i))
        solved_s.append(float(s_i))
        solved_g.append(float(gv[i]))
    # fill skipped leading knots by extending the first solved level
    first_t = solved_t[0]
    lead_t = [float(t) for t in times if t < first_t]
    full_t = lead_t + solved_t
    full_s = [solved_s[0]] * len(lead_t) + solved_s
    return TabulatedBoundary.from_arrays(full_t, full_s)


# ---------------------------------------------------------------------------
# kernel density estimate from ISI samples
# ---------------------------------------------------------------------------

def kde_from_isi(samples, bandwidth: Union[float, str] = "auto",
                 n_grid: int = 512) -> GridDensity:
    """Gaussian-kernel density of ISI samples, reflected at zero.

    bandwidth 'auto' is Silverman's rule on the positive data.
    """
    durations = np.asarray(
        samples.durations if hasattr(samples, "durations") else samples, float)
    if durations.size < 20:
        raise TooFewSamples("kernel estimate needs at least 20 samples")
    if np.any(durations <= 0):
        raise DomainError("interspike intervals must be positive")
    n = durations.size
    if isinstance(bandwidth, str):
        sd = float(np.std(durations, ddof=1))
        iqr = float(np.subtract(*np.percentile(durations, [75, 25])))
        spread = min(sd, iqr / 1.34) if iqr > 0 else sd
        bw = 0.9 * spread * n ** (-0.2)
        if bw <= 0:
            bw = max(sd, 1e-3 * float(np.mean(durations)))
    else:
        bw = float(bandwidth)
    upper = max(1.2 * float(np.max(durations)), float(np.max(durations)) + 8 * bw)
    h = upper / n_grid
    t = h * np.arange(1, n_grid + 1)
    diff = (t[:, None] - durations[None, :]) / bw
    refl = (t[:, None] + durations[None, :]) / bw
    dens = (np.exp(-0.5 * diff ** 2) + np.exp(-0.5 * refl ** 2)).sum(axis=1)
    dens /= n * bw * math.sqrt(2 * math.pi)
    # the reflected estimate has nonzero density at t = 0, which the
    # left-open grid cannot carry; renormalize on the grid instead
    dens /= dens.sum() * h
    meta = {"bandwidth": bw, "n_samples": int(n), "reflected_at_zero": True,
            "grid_normalized": True}
    return GridDensity(t0=0.0, h=h, values=dens, meta=meta)


# ---------------------------------------------------------------------------
# counting probabilities of the return process
# ---------------------------------------------------------------------------

def _refractory_grid(phi: RefractorySpec, h: float, n: int):
    """(density values, survivor values) on the left-open grid, or None
    density for the exact-shift constant case."""
    t = h * np.arange(1, n + 1)
    surv = np.asarray(phi.survivor(t), float)
    if isinstance(phi, ConstantRefractory):
        return None, surv
    if hasattr(phi, "rate"):
        dens = phi.rate * np.exp(-phi.rate * t)
    else:
        knots = phi.grid_times()
        dens = np.interp(t, knots, np.asarray(phi.values, float),
                         left=float(phi.values[0]), right=0.0)
    return dens, surv


def _shift_grid(a: np.ndarray, shift: float, h: float) -> np.ndarray:
    """Values of t -> a(t - shift) on the same left-open grid (zero before)."""
    if shift == 0.0:
        return a.copy()
    n = len(a)
    t = h * np.arange(1, n + 1)
    return np.interp(t - shift, t, a, left=0.0, right=0.0)


def _conv_trapz(a: np.ndarray, b: np.ndarray, h: float,
                a0: float = 0.0, b0: float = 0.0) -> np.ndarray:
    """Trapezoid convolution on the left-open grid with supplied t=0 values."""
    n = len(a)
    if len(b) != n:
        raise GridMismatch("convolution operands must share the grid")
    full = fftconvolve(a, b)[: n - 1] if n > 1 else np.empty(0)
    c = np.concatenate(([0.0], h * full))
    c += 0.5 * h * (a0 * b + b0 * a)
    return c


def counting_probability_grids(g: GridDensity, phi: RefractorySpec,
                               k_max: int):
    """q_k(t) grids for k = 0..k_max on the grid of g."""
    if k_max < 0:
        raise DomainError("k_max must be nonnegative")
    gv = g.values
    h = g.h
    n = len(gv)
    surv_g = 1.0 - g.cdf()
    dens_phi, surv_phi = _refractory_grid(phi, h, n)

    if dens_phi is None:
        r = phi.r

        def conv_phi(a):
            return _shift_grid(a, r, h)
    else:
        phi0 = float(phi.rate) if hasattr(phi, "rate") else \
            float(np.asarray(phi.values, float)[0])

        def conv_phi(a):
            return _conv_trapz(a, dens_phi, h, a0=0.0, b0=phi0)

    cycle = conv_phi(gv)                       # density of one full T + R cycle
    times = g.times()
    qs = [np.clip(surv_g, 0.0, 1.0)]
    pow_cycle = None                           # (g*phi)^(k)
    pow_prev = None                            # (g*phi)^(k-1)
    for k in range(1, k_max + 1):
        pow_cycle = cycle if k == 1 else _conv_trapz(pow_cycle, cycle, h)
        # k completed cycles then no further crossing
        term1 = _conv_trapz(pow_cycle, surv_g, h, a0=0.0, b0=1.0)
        # k-th crossing happened, still inside its refractory hold:
        # g * (phi*g)^(k-1) * surv_phi == (g*phi)^(k-1) * g * surv_phi
        head = gv if k == 1 else _conv_trapz(pow_prev, gv, h)
        if dens_phi is None:
            # constant hold: the survivor is an indicator, convolve exactly
            # through the cumulative H(t) - H(t - r)
            cum = (np.cumsum(head) - head / 2.0) * h
            term2 = cum - np.interp(times - phi.r, times, cum,
                                    left=0.0, right=float(cum[-1]))
        else:
            term2 = _conv_trapz(head, surv_phi, h, a0=0.0, b0=1.0)
        qs.append(np.clip(term1 + term2, 0.0, 1.0))
        pow_prev = pow_cycle
    return times, np.vstack(qs)


def counting_probabilities(g: GridDensity, phi: RefractorySpec, k_max: int,
                           t: float) -> np.ndarray:
    """P(exactly k threshold attainments up to t), k = 0..k_max."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    if t == 0.0:
        out = np.zeros(k_max + 1)
        out[0] = 1.0
        return out
    times, grids = counting_probability_grids(g, phi, k_max)
    if t > times[-1] + g.h / 2:
        raise GridMismatch("t lies beyond the density grid")
    return np.array([np.interp(t, times, row) for row in grids])


# ---------------------------------------------------------------------------
# jump-diffusion FET approximation (underlying Wiener)
# ---------------------------------------------------------------------------

def jump_fet_pdf_approx(model: Wiener, S: float, ic: InitialCondition,
                        lambda_e: float, lambda_i: float, a: float,
                        t_max: float, h: float, n_z: int = 300) -> GridDensity:
    """Single-jump approximation of the first-entrance-time density.

    Valid for rare jumps of relevant amplitude (warning band
    lambda_e < 0.1/ms); requires lambda_e >= lambda_i. The four terms:
    no-jump diffusion crossing, crossing by an upward jump from the strip
    (S - a, S), and diffusion crossings after one upward / downward jump.
    """
    if not isinstance(model, Wiener):
        raise UnsupportedModel("FET approximation requires a Wiener underlying")
    if lambda_i > lambda_e:
        raise RegimeViolation(
            f"approximation requires lambda_e >= lambda_i "
            f"(got {lambda_e} < {lambda_i})")
    if lambda_e >= 0.1:
        warnings.warn("jump frequency above the documented validity band "
                      "(lambda_e < 0.1/ms)", AccuracyWarning)
    if a < 0:
        raise DomainError("jump amplitude must be nonnegative")
    lam = lambda_e + lambda_i
    n = int(round(t_max / h))
    t = h * np.arange(1, n + 1)
    x0 = ic.x0
    decay = np.exp(-lam * t)
    out = decay * wiener_fpt_pdf(model, S, InitialCondition(x0), t)
    if a > 0 and lam > 0:
        sigma = math.sqrt(model.sigma2)
        # term 2: upward jump straight out of the strip (S-a, S)
        if lambda_e > 0:
            z_lo = max(S - a, x0 - 12 * sigma * math.sqrt(t_max)
                       - abs(model.mu) * t_max)
            strip = np.linspace(z_lo, S, 200, endpoint=False) + \
                (S - z_lo) / 400.0
            fa = np.array([
                absorbed_transition_pdf_wiener(model, strip, ti, x0, 0.0, S)
                for ti in t])
            out += lambda_e * decay * fa.sum(axis=1) * (strip[1] - strip[0])
        lo = x0 - 12 * sigma * math.sqrt(t_max) - abs(model.mu) * t_max - a
        # term 3: one upward jump from below the strip, then crossing
        if lambda_e > 0:
            out += lambda_e * decay * _one_jump_term(model, S, x0, S - a,
                                                     lo, t, h, n_z)
        # term 4: one downward jump anywhere below S, then crossing
        if lambda_i > 0:
            out += lambda_i * decay * _one_jump_term(model, S, x0, S,
                                                     lo, t, h, n_z,
                                                     target=S + a)
    meta = {"model": model_to_dict(model), "lambda_e": lambda_e,
            "lambda_i": lambda_i, "a": a,
            "approximation": "single-jump"}
    gd = GridDensity(t0=0.0, h=h, values=np.clip(out, 0.0, None), meta=meta)
    gd.meta["mass"] = gd.mass
    return gd


def _one_jump_term(model: Wiener, S: float, x0: float, z_hi: float,
                   z_lo: float, t: np.ndarray, h: float, n_z: int,
                   target: Optional[float] = None) -> np.ndarray:
    """int_0^t du int_{z_lo}^{z_hi} f^a(z, u | x0) g(target, t-u | z) dz,
    on the whole output grid, via one FFT convolution in time per level."""
    if target is None:
        target = z_hi
    if z_hi <= z_lo:
        return np.zeros_like(t)
    z = np.linspace(z_lo, z_hi, n_z, endpoint=False)
    z += (z_hi - z_lo) / (2.0 * n_z)
    dz = z[1] - z[0]
    fa = np.array([absorbed_transition_pdf_wiener(model, z, ti, x0, 0.0, S)
                   for ti in t])                       # (n_t, n_z)
    gmat = np.stack([wiener_fpt_pdf(model, target, InitialCondition(zi), t)
                     for zi in z], axis=1)             # (n_t, n_z)
    conv = fftconvolve(fa, gmat, axes=0)[: len(t) - 1]
    out = np.concatenate(([0.0], h * conv.sum(axis=1) * dz))
    return out[: len(t)]
