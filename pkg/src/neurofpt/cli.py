"""Config-driven command-line front end.

One JSON document describes an experiment (model, boundary, initial
condition, task and task options); flat dotted-path flags override file
values. Every run writes its outputs plus a manifest with content hashes
so a rerun can be checked byte for byte. All quantities are mV / ms.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 validity-gate
failure.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analytic import (
    ConstantRefractory, ExponentialRefractory, TabulatedRefractory,
    asymptotic_exponential_pdf, double_reversal_fpt_mean, feller_fpt_moments,
    ou_fpt_moments, wiener_fpt_moments, wiener_fpt_pdf,
)
from .errors import ConfigError, NeuroFptError, ValidityFailure
from .estimate import (
    ISISample, PotentialTrace, kernel_drift_variance, ml_feller_from_potential,
    ml_ou_from_potential, moment_feller_from_isi, moment_ou_from_isi,
)
from .models import (
    ConstantBoundary, DoubleReversal, Feller, InitialCondition, OU, Wiener,
    boundary_from_dict, boundary_to_dict, model_from_dict, model_to_dict,
)
from .numeric import (
    GridDensity, counting_probabilities, inverse_fpt_boundary, kde_from_isi,
    volterra_fpt_pdf,
)
from .simulate import (
    FPTSample, SimConfig, simulate_fpt, simulate_paths,
    simulate_return_process,
)

_TASKS = ("fpt-pdf", "fpt-moments", "simulate", "inverse", "estimate",
          "counting", "compare")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _apply_override(cfg: dict, dotted: str, raw: str) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[keys[-1]] = value


def load_config(path, seed, out, fmt, overrides, task=None) -> dict:
    cfg = {}
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for ov in overrides or ():
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not KEY=VALUE")
        key, _, raw = ov.partition("=")
        _apply_override(cfg, key, raw)
    # explicit flags win over file values
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if fmt is not None:
        cfg["format"] = fmt
    if task is not None:
        cfg["task"] = task
    cfg.setdefault("seed", 0)
    cfg.setdefault("format", "csv")
    cfg.setdefault("out", "neurofpt-out")
    cfg.setdefault("task_options", {})
    if cfg.get("task") not in _TASKS:
        raise ConfigError(f"task must be one of {_TASKS}")
    return cfg


def _build_model(cfg):
    if "model" not in cfg:
        raise ConfigError("config needs a 'model' section")
    try:
        return model_from_dict(cfg["model"])
    except (TypeError, KeyError, NeuroFptError) as exc:
        raise ConfigError(f"bad model section: {exc}") from exc


def _build_boundary(cfg):
    try:
        return boundary_from_dict(cfg.get("boundary", {"kind": "constant", "S": 1.0}))
    except (TypeError, KeyError, NeuroFptError) as exc:
        raise ConfigError(f"bad boundary section: {exc}") from exc


def _build_ic(cfg) -> InitialCondition:
    ic = cfg.get("ic", {})
    return InitialCondition(x0=float(ic.get("x0", 0.0)),
                            t0=float(ic.get("t0", 0.0)))


def _refractory_from_dict(d):
    kind = d.get("kind")
    if kind == "constant":
        return ConstantRefractory(float(d["r"]))
    if kind == "exponential":
        return ExponentialRefractory(float(d["rate"]))
    if kind == "tabulated":
        return TabulatedRefractory(h=float(d["h"]), values=tuple(d["values"]))
    raise ConfigError(f"unknown refractory kind {kind!r}")


class _RunWriter:
    """Collects output files inside the run directory; on failure every
    partial output is removed."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.files: list[Path] = []
        outdir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.outdir / name
        self.files.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def cleanup(self) -> None:
        for p in self.files:
            try:
                p.unlink()
            except OSError:
                pass

    def manifest(self, cfg: dict, extras: dict) -> None:
        entries = {}
        for p in self.files:
            if p.exists():
                entries[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        doc = {
            "package": "neurofpt",
            "version": __version__,
            "config": cfg,
            "outputs": entries,
        }
        doc.update(extras)
        (self.outdir / "run_manifest.json").write_text(json.dumps(doc, indent=2))


def _gnuplot_script(csv_name: str, ylabel: str) -> str:
    return (f"set datafile separator ','\n"
            f"set xlabel 't (ms)'\nset ylabel '{ylabel}'\n"
            f"plot '{csv_name}' using 1:2 with lines title '{csv_name}'\n")


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

def run(cfg: dict) -> dict:
    """Dispatch one experiment; returns a small result summary dict."""
    task = cfg["task"]
    writer = _RunWriter(Path(cfg["out"]))
    t_start = time.time()
    try:
        summary = _TASK_FNS[task](cfg, writer)
    except Exception:
        writer.cleanup()
        raise
    writer.manifest(cfg, {"runtime_s": time.time() - t_start,
                          "summary": summary})
    return summary


def _grid_csv(writer: _RunWriter, name: str, gd: GridDensity) -> None:
    with open(writer.path(name), "w") as fh:
        gd.to_csv(fh)


def _task_fpt_pdf(cfg, writer):
    model = _build_model(cfg)
    boundary = _build_boundary(cfg)
    ic = _build_ic(cfg)
    opts = cfg["task_options"]
    t_max = float(opts.get("t_max", 10.0))
    h = opts.get("h", "auto")
    gd = volterra_fpt_pdf(model, boundary, t_max, h=h, ic=ic)
    _grid_csv(writer, "fpt_pdf.csv", gd)
    writer.write_text("fpt_pdf.gp", _gnuplot_script("fpt_pdf.csv", "g(t) (1/ms)"))
    return {"mass": gd.mass, "step": gd.h, "peak_knot": gd.meta["peak_knot"]}


def _task_fpt_moments(cfg, writer):
    model = _build_model(cfg)
    boundary = _build_boundary(cfg)
    ic = _build_ic(cfg)
    if not isinstance(boundary, ConstantBoundary):
        raise ConfigError("fpt-moments needs a constant boundary")
    s = boundary.S
    if isinstance(model, Wiener):
        mom = wiener_fpt_moments(model, s, ic)
    elif isinstance(model, OU):
        mom = ou_fpt_moments(model, s, ic)
    elif isinstance(model, Feller):
        mom = feller_fpt_moments(model, s, ic)
    elif isinstance(model, DoubleReversal):
        mean = double_reversal_fpt_mean(model, s, ic)
        doc = {"mean": mean, "method": "double-reversal-series"}
        writer.write_text("fpt_moments.json", json.dumps(doc, indent=2))
        return doc
    else:
        raise ConfigError("fpt-moments supports the diffusion models")
    doc = {"mean": mom.mean, "second_moment": mom.second_moment,
           "variance": mom.variance, "method": mom.method_tag,
           "suprathreshold": mom.suprathreshold}
    writer.write_text("fpt_moments.json", json.dumps(doc, indent=2))
    return doc


def _sim_config(cfg) -> SimConfig:
    opts = cfg["task_options"]
    try:
        return SimConfig(dt=float(opts.get("dt", 0.01)),
                         t_max=float(opts.get("t_max", 50.0)),
                         n_paths=int(opts.get("n_paths", 10000)),
                         seed=int(cfg.get("seed", 0)),
                         correction=opts.get("correction", "wiener-bridge"),
                         n_inner=int(opts.get("n_inner", 64)))
    except NeuroFptError as exc:
        raise ConfigError(str(exc)) from exc


def _task_simulate(cfg, writer):
    model = _build_model(cfg)
    boundary = _build_boundary(cfg)
    ic = _build_ic(cfg)
    opts = cfg["task_options"]
    mode = opts.get("mode", "fpt")
    sim_cfg = _sim_config(cfg)
    if mode == "fpt":
        samp = simulate_fpt(model, boundary, ic, sim_cfg)
        with open(writer.path("fpt_sample.csv"), "w") as fh:
            samp.to_csv(fh)
        return {"n_crossed": int(len(samp.times)),
                "censored": samp.censored_count,
                "mean": samp.mean() if len(samp.times) else None}
    if mode == "paths":
        ens = simulate_paths(model, ic, sim_cfg,
                             record_every=int(opts.get("record_every", 1)))
        with open(writer.path("trajectories.csv"), "w") as fh:
            ens.to_csv(fh)
        return {"n_paths": ens.x.shape[0], "n_times": ens.x.shape[1]}
    if mode == "return":
        ref = _refractory_from_dict(opts.get("refractory",
                                             {"kind": "constant", "r": 0.0}))
        rp = simulate_return_process(model, boundary, ic, ref,
                                     float(opts.get("t_end", sim_cfg.t_max)),
                                     sim_cfg)
        lines = ["# neurofpt return-process spike times (ms)", "run_id,t"]
        for rid, st in enumerate(rp.spike_times):
            for t in st:
                lines.append(f"{rid},{float(t)!r}")
        writer.write_text("spike_times.csv", "\n".join(lines) + "\n")
        writer.write_text("counts.csv", "# spikes by t_end\ncount\n"
                          + "\n".join(str(c) for c in rp.counts) + "\n")
        return {"mean_count": float(np.mean(rp.counts))}
    raise ConfigError(f"unknown simulate mode {mode!r}")


def _task_inverse(cfg, writer):
    model = _build_model(cfg)
    ic = _build_ic(cfg)
    opts = cfg["task_options"]
    if "density_csv" in opts:
        gd = GridDensity.from_csv(opts["density_csv"])
    elif "isi_csv" in opts:
        sample = ISISample.from_csv(opts["isi_csv"])
        gd = kde_from_isi(sample, bandwidth=opts.get("bandwidth", "auto"))
    else:
        raise ConfigError("inverse task needs density_csv or isi_csv")
    boundary = inverse_fpt_boundary(model, gd,
                                    n_knots=opts.get("n_knots"), ic=ic)
    lines = ["# neurofpt reconstructed boundary (t ms, S mV); "
             "linear interpolation", "t,S"]
    for t, s in zip(boundary.times, boundary.levels):
        lines.append(f"{float(t)!r},{float(s)!r}")
    writer.write_text("boundary.csv", "\n".join(lines) + "\n")
    return {"n_knots": len(boundary.times),
            "level_range": [min(boundary.levels), max(boundary.levels)]}


def _task_estimate(cfg, writer):
    opts = cfg["task_options"]
    which = opts.get("estimator")
    if which in ("ml-ou", "ml-feller", "kernel"):
        if "trace_csv" not in opts:
            raise ConfigError(f"{which} needs trace_csv")
        trace = PotentialTrace.from_csv(opts["trace_csv"])
        if which == "ml-ou":
            res = ml_ou_from_potential(trace)
        elif which == "ml-feller":
            res = ml_feller_from_potential(trace, v_i=float(opts["v_i"]))
        else:
            res = kernel_drift_variance(
                trace, a=float(opts["level"]),
                bandwidth=float(opts["bandwidth"]),
                lag=int(opts.get("lag", 1)),
                kernel=opts.get("kernel", "rectangular"))
    elif which in ("moment-ou", "moment-feller"):
        if "isi_csv" not in opts:
            raise ConfigError(f"{which} needs isi_csv")
        sample = ISISample.from_csv(opts["isi_csv"])
        if which == "moment-ou":
            res = moment_ou_from_isi(sample, theta=float(opts["theta"]),
                                     S=float(opts["S"]),
                                     x0=float(opts.get("x0", 0.0)))
        else:
            res = moment_feller_from_isi(sample, tau=float(opts["tau"]),
                                         S=float(opts["S"]),
                                         y0=float(opts.get("y0", 0.0)),
                                         v_i=float(opts.get("v_i", 0.0)))
    else:
        raise ConfigError("estimator must be one of ml-ou, ml-feller, "
                          "moment-ou, moment-feller, kernel")
    writer.write_text("estimate.json", res.to_json())
    if opts.get("require_valid") and not res.all_valid:
        raise ValidityFailure("validity gate requested and not all "
                              "conditions passed")
    return {"estimates": res.estimates, "all_valid": res.all_valid}


def _task_counting(cfg, writer):
    model = _build_model(cfg)
    boundary = _build_boundary(cfg)
    ic = _build_ic(cfg)
    opts = cfg["task_options"]
    ref = _refractory_from_dict(opts.get("refractory",
                                         {"kind": "constant", "r": 0.0}))
    t_max = float(opts.get("t_max", 10.0))
    gd = volterra_fpt_pdf(model, boundary, t_max, h=opts.get("h", "auto"),
                          ic=ic)
    k_max = int(opts.get("k_max", 5))
    t_eval = float(opts.get("t", t_max / 2.0))
    q = counting_probabilities(gd, ref, k_max, t_eval)
    lines = [f"# neurofpt counting probabilities at t={t_eval} ms", "k,q"]
    for k, v in enumerate(q):
        lines.append(f"{k},{v!r}")
    writer.write_text("counting.csv", "\n".join(lines) + "\n")
    return {"t": t_eval, "q": [float(v) for v in q], "mass": float(np.sum(q))}


def _task_compare(cfg, writer):
    from .compare import compare_methods
    report = compare_methods(cfg, writer)
    writer.write_text("comparison.json", json.dumps(report, indent=2))
    return report


_TASK_FNS = {
    "fpt-pdf": _task_fpt_pdf,
    "fpt-moments": _task_fpt_moments,
    "simulate": _task_simulate,
    "inverse": _task_inverse,
    "estimate": _task_estimate,
    "counting": _task_counting,
    "compare": _task_compare,
}


# ---------------------------------------------------------------------------
# click wiring
# ---------------------------------------------------------------------------

def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="JSON experiment description")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--out", type=click.Path(), default=None)(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
                      default=None)(fn)
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VAL",
                      help="dotted-path config override (repeatable)")(fn)
    return fn


def _execute(task, config_path, seed, out, fmt, overrides):
    try:
        cfg = load_config(config_path, seed, out, fmt, overrides, task=task)
    except ConfigError as exc:
        click.echo(json.dumps({"error": "config", "message": str(exc)}))
        sys.exit(2)
    try:
        summary = run(cfg)
    except ConfigError as exc:
        click.echo(json.dumps({"error": "config", "message": str(exc)}))
        sys.exit(2)
    except ValidityFailure as exc:
        click.echo(json.dumps({"error": "validity", "message": str(exc)}))
        sys.exit(4)
    except NeuroFptError as exc:
        click.echo(json.dumps({"error": "numeric",
                               "type": type(exc).__name__,
                               "message": str(exc)}))
        sys.exit(3)
    click.echo(json.dumps({"ok": True, "out": cfg["out"], "summary": summary},
                          default=str))


@click.group()
@click.version_option(__version__)
def main():
    """First-passage-time toolkit for stochastic integrate-and-fire models."""


def _register(task):
    @main.command(task)
    @_common
    def _cmd(config_path, seed, out, fmt, overrides):
        _execute(task, config_path, seed, out, fmt, overrides)
    _cmd.__name__ = task.replace("-", "_")
    return _cmd


for _t in _TASKS:
    _register(_t)


if __name__ == "__main__":
    main()
