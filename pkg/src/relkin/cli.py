"""Command-line experiment driver.

Usage::

    relkin list
    relkin <experiment> --config cfg.json [--out DIR] [--seed N] [--natural-units]

Exit status is 0 when every check passes, 1 when a numerical check fails and
2 when the configuration is invalid.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import free_particle as fp
from . import io
from .config import EXPERIMENTS, STOCHASTIC, ConfigError, build_constants, build_gauge, build_spec, config_hash, \
    load_config
from .exceptions import DomainError, GridCoverageError, PecletError
from .fields import (
    EMPotential,
    ScalarField,
    diffusion_from_velocity,
    free_particle_rest,
    gradient_condition_residual,
    inverse_from_velocity,
    nelson1_residual,
    nelson1_residual_general,
    nelson2_residual,
    normalization_residual,
)
from .fd import FiniteDifference
from .geometry import METRIC, boost
from .sde import SimulationConfig, estimate_diffusion, estimate_drift, integration_by_parts_check, \
    simulate_ensemble
from .spectral import (
    PeriodicGrid,
    assemble_backward,
    assemble_forward,
    eigensolve,
    fit_decay_rate,
    spectral_density,
    wrapped_gaussian,
)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class Context:
    """Resolved config plus the check list being built."""

    def __init__(self, cfg, out):
        self.cfg = cfg
        self.out = Path(out)
        self.checks = []
        self.artifacts = []
        self.constants = build_constants(cfg)
        self.gauge = build_gauge(cfg)
        self.params = cfg.get("params", {})

    def tol(self, name, default):
        return float(self.cfg.get("tolerances", {}).get(name, default))

    def check(self, name, value, target, tolerance, relative=False):
        """Record ``|value - target| <= tolerance`` (scaled by ``|target|`` if relative)."""
        tol = self.tol(name, tolerance)
        value = float(value)
        err = abs(value - target)
        if relative:
            err /= abs(target)
        ok = bool(np.isfinite(err) and err <= tol)
        self.checks.append({"name": name, "value": value, "target": float(target), "tolerance": tol, "pass": ok})
        return ok

    def bound(self, name, value, tolerance):
        """Record ``value <= tolerance`` for a nonnegative error measure."""
        return self.check(name, value, 0.0, tolerance)

    def flag(self, name, ok):
        self.checks.append({"name": name, "value": float(bool(ok)), "target": 1.0, "tolerance": 0.0,
                            "pass": bool(ok)})

    def write(self, kind, name, obj):
        path = self.out / name
        {"json": io.write_json, "operator": io.write_operator}[kind](path, obj)
        self.artifacts.append(name)

    def write_csv(self, name, header, rows):
        io.write_csv(self.out / name, header, rows)
        self.artifacts.append(name)

    def sim_config(self, **overrides):
        sim = dict(self.cfg.get("simulation", {}))
        sim.update(overrides)
        return SimulationConfig(step=sim.get("step", 1e-3), n_steps=sim.get("n_steps", 10),
                                n_paths=sim.get("n_paths", 1000), direction=sim.get("direction", "forward"),
                                seed=sim["seed"], gauge=self.gauge, record_every=sim.get("record_every", 1))

    def start(self):
        sim = self.cfg.get("simulation", {})
        return np.asarray(sim.get("x0", [0.0, 0.0, 0.0, 0.0]), dtype=float), float(sim.get("s0", 0.0))


# ---------------------------------------------------------------- experiments


def run_identities(ctx):
    k = ctx.constants
    rng = np.random.default_rng(ctx.cfg.get("simulation", {}).get("seed", 0))
    n = ctx.params.get("n_samples", 1000)
    beta = rng.uniform(-1, 1, (n, 3))
    beta *= rng.uniform(0, 0.95, (n, 1)) / np.maximum(np.linalg.norm(beta, axis=1, keepdims=True), 1e-300)
    gamma = 1.0 / np.sqrt(1.0 - np.sum(beta**2, axis=1))
    v = k.c * gamma[:, None] * np.concatenate([np.ones((n, 1)), beta], axis=1)
    v *= rng.uniform(0.5, 2.0, (n, 1))
    W = diffusion_from_velocity(v, k)
    Winv = inverse_from_velocity(v, k)
    inv_err = np.max(np.abs(Winv @ W - np.eye(4)))
    v_low = v * np.diag(METRIC)
    contr = np.einsum("pij,pj->pi", Winv, v)
    contr_err = np.max(np.abs(contr - v_low / k.diffusion_scale) / (np.abs(v_low).max(axis=1, keepdims=True)
                                                                    / k.diffusion_scale))
    trace = np.einsum("ij,pij->p", METRIC, W)
    target = -k.h / (2 * np.pi * k.m)
    trace_err = np.max(np.abs(trace - target)) / abs(target)
    min_eig = float(np.min(np.linalg.eigvalsh(W)))
    ctx.bound("symmetry", np.max(np.abs(W - np.swapaxes(W, 1, 2))), 0.0)
    ctx.bound("inverse_identity", inv_err, 1e-10)
    ctx.bound("contraction_identity", contr_err, 1e-10)
    ctx.bound("trace_identity_relative", trace_err, 1e-10)
    ctx.flag("positive_definite", min_eig > 0)
    ctx.write("json", "identities.json", {"n_samples": n, "inverse_error": inv_err, "contraction_error": contr_err,
                                          "trace_error": trace_err, "min_eigenvalue": min_eig})


def _simulate(ctx):
    spec = build_spec(ctx.cfg, ctx.constants)
    x0, s0 = ctx.start()
    return spec, simulate_ensemble(spec, x0, s0, ctx.sim_config())


def run_simulate(ctx):
    _, ens = _simulate(ctx)
    io.write_ensemble_csv(ctx.out / "ensemble.csv", ens)
    ctx.artifacts.append("ensemble.csv")
    ctx.check("failed_paths", int(ens.failed.sum()), 0, 0)


def run_estimate(ctx):
    spec, ens = _simulate(ctx)
    drift = estimate_drift(ens)
    diff, trace = estimate_diffusion(ens)
    x0, _ = ctx.start()
    if spec.is_constant:
        sign = 1.0 if ens.direction == "forward" else -1.0
        v_target = spec.forward_drift(x0) if sign > 0 else spec.backward_drift(x0)
        w_target = spec.diffusion(x0)
        n_sigma = ctx.tol("n_sigma", 3.0)
        for i in range(4):
            ctx.flag(f"drift_{i}_within_{n_sigma:g}_sigma", drift.within(v_target, n_sigma)[i])
            ctx.flag(f"diffusion_{i}{i}_within_{n_sigma:g}_sigma", diff.within(w_target, n_sigma)[i, i])
        ctx.flag(f"metric_trace_within_{n_sigma:g}_sigma",
                 trace.within(float(np.einsum("ij,ij->", METRIC, w_target)), n_sigma))
    ctx.write("json", "estimates.json", {"drift": drift.to_dict(), "diffusion": diff.to_dict(),
                                         "metric_trace": trace.to_dict(), "n_paths": ens.n_paths,
                                         "failed": int(ens.failed.sum())})


def _solution(ctx):
    beta = ctx.cfg.get("field", {}).get("beta", [0.0, 0.0, 0.0])
    return fp.boosted_solution(ctx.constants, ctx.gauge, boost(beta))


def run_free_particle(ctx):
    k = ctx.constants
    sol = _solution(ctx)
    dg = ctx.params.get("dg", 1.0)
    s1 = ctx.gauge.inverse(ctx.gauge(0.0) + dg)
    step = ctx.cfg.get("grid", {}).get("fd_step", 1e-2)
    if sol.frame == "rest":
        x_t = np.array([k.c * dg, 0, 0, 0])
        ctx.check("timelike_point", fp.conditional_density(x_t, s1, np.zeros(4), 0.0, sol), (k.m / (k.h * dg)) ** 2,
                  1e-12, relative=True)
        x_s = np.array([0, k.c * dg, 0, 0])
        target = (k.m / (k.h * dg)) ** 2 * np.exp(-2 * np.pi * k.m * k.c**2 * dg / k.h)
        ctx.check("spacelike_point", fp.conditional_density(x_s, s1, np.zeros(4), 0.0, sol), target, 1e-12,
                  relative=True)
    res = fp.kolmogorov_residuals(sol, s=s1, s0=0.0, step=step)
    res2 = fp.kolmogorov_residuals(sol, s=s1, s0=0.0, step=step / 2)
    ctx.bound("backward_residual", res.backward, 1e-3)
    ctx.bound("forward_residual", res.forward, 1e-3)
    ctx.check("step_halving_ratio", res.backward / res2.backward, 4.0, 0.5)
    ctx.check("normalization", fp.normalization_integral(sol, s=s1, s0=0.0), 1.0, 1e-4)
    ctx.write("json", "free_particle.json", {
        "V": sol.V, "W": sol.W, "backward_residual": res.backward, "forward_residual": res.forward,
        "backward_residual_half_step": res2.backward, "forward_residual_half_step": res2.forward})
    z = np.linspace(-3, 3, 61) * np.sqrt(2 * sol.W[1, 1] * dg)
    X = np.zeros((len(z), 4))
    X[:, 0] = sol.V[0] * dg
    X[:, 1] = sol.V[1] * dg + z
    ctx.write_csv("density_x1.csv", ["x0", "x1", "x2", "x3", "density"],
                  [[*row, p] for row, p in zip(X, fp.conditional_density(X, s1, np.zeros(4), 0.0, sol))])


def run_ck_check(ctx):
    sol = _solution(ctx)
    splits = ctx.params.get("splits", [[0.0, 0.5, 1.0]])
    results = []
    for s0, s1, s2 in splits:
        r = fp.chapman_kolmogorov_check(sol, s0, s1, s2)
        ctx.bound(f"ck_error_{s0:g}_{s1:g}_{s2:g}", r.max_error, 1e-5)
        results.append({"split": [s0, s1, s2], "max_error": r.max_error, "mass_deficit": r.mass_deficit,
                        "factorization_error": r.factorization_error})
    ctx.write("json", "ck_check.json", results)


def run_ratio_table(ctx):
    k = ctx.constants
    tau = np.asarray(ctx.params.get("tau", list(np.linspace(0, 5, 11) / k.rest_rate)), dtype=float)
    ratio = fp.spacelike_timelike_ratio(tau, k)
    ctx.write_csv("ratio_table.csv", ["tau", "ratio"], [[t, r] for t, r in zip(tau, ratio)])
    ctx.flag("ratio_decreasing", bool(np.all(np.diff(ratio[np.argsort(tau)]) <= 0)))
    rate = k.rest_rate
    if ctx.cfg.get("constants") == "electron":
        ctx.check("electron_rest_rate", float(f"{rate:.5g}"), 7.7634e20, 1e-4, relative=True)
    ctx.write("json", "ratio_table.json", {"rest_rate": rate, "tau": tau, "ratio": ratio})


def run_nr_limit(ctx):
    c_values = ctx.params.get("c_values", [1.0, 2.0, 4.0, 8.0, 16.0])
    rep = fp.nr_limit_scan(c_values, ctx.constants, ctx.gauge, ctx.params.get("velocity", [0.0, 0.0, 0.0]),
                           ctx.params.get("dg", 1.0))
    ctx.check("t_std_slope", rep.t_std_slope, -1.0, 1e-6)
    ctx.bound("norm_residual", float(np.max(np.abs(rep.norm_residual) / rep.c_values**2)), 1e-12)
    if any(ctx.params.get("velocity", [0.0, 0.0, 0.0])):
        ctx.flag("w_deviation_decreasing", bool(np.all(np.diff(rep.w_deviation) < 0)))
        ctx.flag("spatial_kernel_deviation_decreasing", bool(np.all(np.diff(rep.spatial_kernel_deviation) < 0)))
    else:
        ctx.bound("w_limit_deviation", float(np.max(rep.w_deviation)) / ctx.constants.diffusion_scale, 1e-12)
        ctx.bound("spatial_kernel_deviation", float(np.max(rep.spatial_kernel_deviation)), 1e-12)
    ctx.write("json", "nr_limit.json", rep.to_dict())


def run_spectral(ctx):
    grid_cfg = ctx.cfg.get("grid", {})
    grid = PeriodicGrid(tuple(grid_cfg.get("lengths", [2 * np.pi])), tuple(grid_cfg.get("n_points", [128])))
    d = grid.dim
    w_cfg = np.asarray(grid_cfg.get("w", 4.0), dtype=float)
    w = np.eye(d) * float(w_cfg) if w_cfg.ndim == 0 else w_cfg.reshape(d, d)
    v = np.broadcast_to(np.asarray(grid_cfg.get("v", 1.0), dtype=float), (d,))
    L0 = assemble_backward(w, v, grid)
    L = assemble_forward(w, v, grid)
    exp = eigensolve(L0, L, grid)
    ctx.bound("adjoint_spectra", exp.adjoint_mismatch, 1e-8)
    ctx.bound("biorthonormality", exp.biorthonormality_error(), 1e-8)
    ctx.bound("lambda0", abs(exp.eigenvalues[0]), 1e-10)
    n_modes = ctx.params.get("n_modes")
    dg = ctx.params.get("dg", 0.2)
    if d == 1:
        Lx = grid.lengths[0]
        kmax = 10
        errs = []
        for kk in range(-kmax, kmax + 1):
            if kk == 0:
                continue
            q = 2 * np.pi * kk / Lx
            target = w[0, 0] * q * q + 1j * v[0] * q
            errs.append(np.min(np.abs(exp.eigenvalues - target)) / abs(target))
        ctx.bound("eigenvalue_relative_error", max(errs), (2 * np.pi / grid.n_points[0]) ** 2 * 10)
        x = grid.points()[:, 0]
        dens = spectral_density(exp, None, dg, np.zeros(1), 0.0, n_modes=n_modes)
        ref = wrapped_gaussian(x, 0.0, dg, w[0, 0], v[0], Lx)
        ctx.bound("wrapped_gaussian", np.max(np.abs(dens - ref)), 1e-4)
        ctx.write_csv("spectral_density.csv", ["x", "density", "wrapped_gaussian"],
                      [[a, b, c] for a, b, c in zip(x, dens, ref)])
    rate_target = float(exp.eigenvalues[1].real)
    T0 = 3.0 / rate_target
    rate = fit_decay_rate(exp, np.linspace(T0, 3 * T0, 9), n_modes)
    ctx.check("decay_rate", rate, rate_target, 0.05, relative=True)
    ctx.write("json", "spectrum.json", io.spectrum_to_json(exp.eigenvalues))
    ctx.write("operator", "backward_operator.txt", L0)
    ctx.write("operator", "forward_operator.txt", L)


def run_nelson_check(ctx):
    k = ctx.constants
    d = free_particle_rest(k)
    A = EMPotential.zero()
    fd = FiniteDifference()
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(5, 4))
    vals = {"normalization": 0.0, "nelson1": 0.0, "nelson1_general": 0.0, "nelson2": 0.0, "gradient_curl": 0.0}
    for x in pts:
        vals["normalization"] = max(vals["normalization"], abs(float(normalization_residual(d, k, x))))
        vals["nelson1"] = max(vals["nelson1"], abs(nelson1_residual(d, k, x)))
        vals["nelson1_general"] = max(vals["nelson1_general"], abs(nelson1_residual_general(d, k, x, fd)))
        vals["nelson2"] = max(vals["nelson2"], float(np.max(np.abs(nelson2_residual(d, k, A, x)))))
        vals["gradient_curl"] = max(vals["gradient_curl"], float(np.max(np.abs(gradient_condition_residual(d, k, A,
                                                                                                       x)))))
    ctx.bound("normalization_residual", vals["normalization"], 1e-10)
    ctx.bound("nelson1_residual", vals["nelson1"], 1e-10)
    ctx.bound("nelson1_general_fd", vals["nelson1_general"], 1e-6)
    ctx.bound("nelson2_residual", vals["nelson2"], 1e-10)
    ctx.bound("gradient_condition_curl", vals["gradient_curl"], 1e-10)
    ctx.write("json", "nelson_check.json", vals)


IBP_CASES = {
    "one": (ScalarField.constant(1.0), ScalarField.constant(1.0)),
    "x0": (ScalarField.coordinate(0), ScalarField.constant(1.0)),
    "x1": (ScalarField.coordinate(1), ScalarField.coordinate(1)),
}


def run_ibp_check(ctx):
    spec = build_spec(ctx.cfg, ctx.constants)
    x0, _ = ctx.start()
    interval = ctx.params.get("interval", [0.0, 0.2])
    cfg = ctx.sim_config()
    out = {}
    for name in ctx.params.get("cases", ["one", "x0", "x1"]):
        f, g = IBP_CASES[name]
        r = integration_by_parts_check(f, g, spec, x0, interval, cfg)
        out[name] = r.to_dict()
        ctx.check(f"ibp_{name}", r.difference, 0.0, r.budget)
    ctx.write("json", "ibp_check.json", out)


RUNNERS = {
    "identities": run_identities,
    "simulate": run_simulate,
    "estimate": run_estimate,
    "free-particle": run_free_particle,
    "ck-check": run_ck_check,
    "ratio-table": run_ratio_table,
    "nr-limit": run_nr_limit,
    "spectral": run_spectral,
    "nelson-check": run_nelson_check,
    "ibp-check": run_ibp_check,
}


def list_experiments():
    """``(name, description)`` pairs in a stable order."""
    return [(name, EXPERIMENTS[name]) for name in RUNNERS]


def run(config_path, out=None, seed=None, natural_units=False, experiment=None):
    """Run one experiment; return ``(report dict, exit code)``."""
    cfg = load_config(config_path, seed=seed, natural_units=natural_units)
    if experiment is not None and experiment != cfg["experiment"]:
        raise ConfigError([f"experiment: command line says {experiment!r}, config says {cfg['experiment']!r}"])
    name = cfg["experiment"]
    out = Path(out or cfg.get("output", f"relkin-{name}"))
    ctx = Context(cfg, out)
    t0 = time.perf_counter()
    error = None
    try:
        RUNNERS[name](ctx)
    except (DomainError, PecletError, GridCoverageError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        ctx.checks.append({"name": "completed", "value": 0.0, "target": 1.0, "tolerance": 0.0, "pass": False})
    report = {
        "experiment": name,
        "checks": ctx.checks,
        "pass": bool(ctx.checks) and all(c["pass"] for c in ctx.checks),
        "wall_time": time.perf_counter() - t0,
        "version": __version__,
        "config_hash": config_hash(cfg),
        "artifacts": ctx.artifacts,
        "stochastic": name in STOCHASTIC,
    }
    if error:
        report["error"] = error
    io.write_json(out / "report.json", report)
    return report, EXIT_PASS if report["pass"] else EXIT_FAIL


def main(argv=None):
    parser = argparse.ArgumentParser(prog="relkin", description="Relativistic diffusion experiments")
    parser.add_argument("experiment", help="experiment name, or 'list'")
    parser.add_argument("--config", help="JSON config path")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="override simulation.seed")
    parser.add_argument("--natural-units", action="store_true", help="force m = c = h = 1, q = 0")
    parser.add_argument("--version", action="version", version=__version__)
    args = parser.parse_args(argv)

    if args.experiment == "list":
        for name, desc in list_experiments():
            print(f"{name:14s} {desc}")
        return EXIT_PASS
    if args.experiment not in RUNNERS:
        print(f"unknown experiment {args.experiment!r}; see 'relkin list'", file=sys.stderr)
        return EXIT_CONFIG
    if not args.config:
        print("--config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report, code = run(args.config, args.out, args.seed, args.natural_units, args.experiment)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    for c in report["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['value']:.6g} "
              f"(target {c['target']:.6g}, tol {c['tolerance']:.3g})")
    if report.get("error"):
        print(report["error"], file=sys.stderr)
    if code != EXIT_PASS:
        failing = [c["name"] for c in report["checks"] if not c["pass"]]
        print("failed checks: " + ", ".join(failing), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
