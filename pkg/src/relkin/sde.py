"""Euler-Maruyama sample paths of the relativistic stochastic difference equation.

One step of the forward equation reads::

    x <- x + v+(x) g'(s) ds + b(x) sqrt(g'(s) ds) xi,    b b^T = 2 w(x)

with ``xi`` i.i.d. standard normal. The backward equation uses ``v-`` and a
negative parameter step. Paths are grouped in fixed-size blocks and each
block draws from its own ``Philox`` stream spawned from the seed, so the
output does not depend on how many threads run the blocks.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_four_vector, check_positive
from .exceptions import DomainError
from .fd import DEFAULT_FD
from .fields import ProcessSpec, ScalarField
from .gauge import GaugeFunction, identity_gauge
from .geometry import METRIC

DIRECTIONS = ("forward", "backward")


@dataclass(frozen=True)
class SimulationConfig:
    """Discretization and RNG settings for an ensemble.

    ``step`` is the magnitude of the parameter step; the sign comes from
    ``direction``. Only every ``record_every``-th state is stored.
    """

    step: float
    n_steps: int
    n_paths: int
    direction: str = "forward"
    seed: int = 0
    gauge: GaugeFunction = field(default_factory=identity_gauge)
    record_every: int = 1
    block_size: int = 4096
    n_jobs: Optional[int] = None

    def __post_init__(self):
        check_positive(self.step, "step")
        if int(self.n_steps) < 1 or int(self.n_paths) < 1:
            raise ValueError("n_steps and n_paths must be >= 1")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if int(self.record_every) < 1 or int(self.block_size) < 1:
            raise ValueError("record_every and block_size must be >= 1")

    @property
    def signed_step(self):
        return self.step if self.direction == "forward" else -self.step

    @property
    def recorded_steps(self):
        ks = list(range(0, self.n_steps + 1, self.record_every))
        if ks[-1] != self.n_steps:
            ks.append(self.n_steps)
        return np.array(ks)


@dataclass(frozen=True)
class SamplePath:
    s_values: np.ndarray
    points: np.ndarray
    direction: str
    failed_at: Optional[int] = None


@dataclass
class Ensemble:
    """Recorded states of all paths sharing the start ``(x0, s0)``.

    ``points[p, r]`` is path ``p`` at recorded step ``steps[r]``; entries after
    a path failure are NaN and ``fail_step[p]`` holds the failing step index.
    """

    x0: np.ndarray
    s0: float
    steps: np.ndarray
    s_values: np.ndarray
    points: np.ndarray
    direction: str
    gauge: GaugeFunction
    fail_step: np.ndarray

    @property
    def n_paths(self):
        return self.points.shape[0]

    @property
    def failed(self):
        return self.fail_step >= 0

    def path(self, i):
        fs = int(self.fail_step[i])
        return SamplePath(self.s_values, self.points[i], self.direction, None if fs < 0 else fs)

    def __iter__(self):
        return (self.path(i) for i in range(self.n_paths))

    def increments(self, index=-1):
        """Displacements ``x(s_index) - x0`` of the paths that did not fail."""
        return self.points[~self.failed, index] - self.x0

    def g_difference(self, index=-1):
        return float(self.gauge(self.s_values[index]) - self.gauge(self.s0))

    def boosted(self, L):
        """Transform every recorded point with the Lorentz map ``L``."""
        m = L.matrix
        return Ensemble(m @ self.x0, self.s0, self.steps, self.s_values, self.points @ m.T,
                        self.direction, self.gauge, self.fail_step)


def diffusion_factor(w):
    """Lower-triangular ``b`` with ``b b^T = 2 w`` (Cholesky)."""
    w = np.asarray(w, dtype=float)
    try:
        return np.linalg.cholesky(2.0 * w)
    except np.linalg.LinAlgError as exc:
        raise DomainError("diffusion tensor is not positive definite") from exc


def _factor_batch(w):
    """Cholesky factors of ``2 w`` per path; rows that fail come back NaN."""
    try:
        return np.linalg.cholesky(2.0 * w)
    except np.linalg.LinAlgError:
        out = np.full(w.shape, np.nan)
        for i, wi in enumerate(w):
            if not np.any(wi):
                out[i] = 0.0
                continue
            try:
                out[i] = np.linalg.cholesky(2.0 * wi)
            except np.linalg.LinAlgError:
                pass
        return out


def block_generators(seed, n_blocks):
    """Independent ``Philox`` generators, one per path block."""
    children = np.random.SeedSequence(int(seed)).spawn(n_blocks)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def _n_workers(cfg, n_blocks):
    cap = cfg.n_jobs
    env = os.environ.get("RELKIN_THREADS")
    if cap is None:
        cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(cap), n_blocks))


def _drift_value(spec, X, direction):
    return spec.forward_drift(X) if direction == "forward" else spec.backward_drift(X)


def _euler_block(spec, x0, s0, cfg, rng, n):
    """Yield ``(k, s_k, X, alive, fail_step)`` for ``k = 0..n_steps``.

    ``X`` is updated in place between yields.
    """
    gauge = cfg.gauge
    ds = cfg.signed_step
    X = np.broadcast_to(x0, (n, 4)).copy()
    alive = np.ones(n, dtype=bool)
    fail_step = np.full(n, -1)
    const = spec.is_constant
    if const:
        drift_c = _drift_value(spec, x0, cfg.direction)
        b_c = _factor_batch(spec.diffusion(x0)[None])[0]
    for k in range(cfg.n_steps + 1):
        s = s0 + k * ds
        yield k, s, X, alive, fail_step
        if k == cfg.n_steps:
            return
        gd = gauge.derivative(s)
        xi = rng.standard_normal((n, 4))
        noise_scale = np.sqrt(gd * cfg.step)
        if const:
            X += drift_c * (gd * ds) + noise_scale * (xi @ b_c.T)
            continue
        idx = np.flatnonzero(alive)
        Xa = X[idx]
        with np.errstate(all="ignore"):
            try:
                drift = _drift_value(spec, Xa, cfg.direction)
                b = _factor_batch(spec.diffusion(Xa))
            except DomainError:
                drift, b = _per_path_coefficients(spec, Xa, cfg.direction)
        bad = ~(np.all(np.isfinite(drift), axis=-1) & np.all(np.isfinite(b), axis=(-2, -1)))
        if np.any(bad):
            fail_step[idx[bad]] = k
            alive[idx[bad]] = False
            X[idx[bad]] = np.nan
        good = ~bad
        step = drift[good] * (gd * ds) + noise_scale * np.einsum("pij,pj->pi", b[good], xi[idx[good]])
        X[idx[good]] += step


def _per_path_coefficients(spec, Xa, direction):
    drift = np.full(Xa.shape, np.nan)
    b = np.full(Xa.shape + (4,), np.nan)
    for i, x in enumerate(Xa):
        try:
            drift[i] = _drift_value(spec, x, direction)
            b[i] = _factor_batch(spec.diffusion(x)[None])[0]
        except (DomainError, FloatingPointError, np.linalg.LinAlgError):
            pass
    return drift, b


def _blocks(cfg):
    n_blocks = -(-cfg.n_paths // cfg.block_size)
    sizes = [min(cfg.block_size, cfg.n_paths - b * cfg.block_size) for b in range(n_blocks)]
    return sizes, block_generators(cfg.seed, n_blocks)


def simulate_ensemble(spec: ProcessSpec, x0, s0, cfg: SimulationConfig) -> Ensemble:
    """Simulate ``cfg.n_paths`` paths from ``(x0, s0)``.

    Paths that reach a point where the drift or the diffusion factor cannot be
    evaluated (non-timelike current drift) are truncated and flagged in
    ``Ensemble.fail_step``.
    """
    x0 = as_four_vector(x0, "x0")
    s0 = float(s0)
    rec = cfg.recorded_steps
    rec_set = {int(k): r for r, k in enumerate(rec)}
    sizes, rngs = _blocks(cfg)

    def run(b):
        n = sizes[b]
        out = np.empty((n, len(rec), 4))
        fail = None
        for k, _s, X, _alive, fail_step in _euler_block(spec, x0, s0, cfg, rngs[b], n):
            r = rec_set.get(k)
            if r is not None:
                out[:, r] = X
            fail = fail_step
        return out, fail

    with ThreadPoolExecutor(_n_workers(cfg, len(sizes))) as pool:
        results = list(pool.map(run, range(len(sizes))))
    points = np.concatenate([r[0] for r in results])
    fail_step = np.concatenate([r[1] for r in results])
    s_values = s0 + rec * cfg.signed_step
    return Ensemble(x0, s0, rec, s_values, points, cfg.direction, cfg.gauge, fail_step)


# ---------------------------------------------------------------- estimation


@dataclass(frozen=True)
class Estimate:
    value: np.ndarray
    stderr: np.ndarray

    def to_dict(self):
        return {"value": np.asarray(self.value).tolist(), "stderr": np.asarray(self.stderr).tolist()}

    def within(self, target, n_sigma=3.0):
        """Componentwise ``|value - target| <= n_sigma * stderr``."""
        return np.abs(np.asarray(self.value) - target) <= n_sigma * np.asarray(self.stderr)


class IncrementMomentEstimator(BaseEstimator):
    """Drift and diffusion estimates from increments over a parameter window.

    Parameters
    ----------
    dg : float
        Signed gauge difference ``g(s) - g(s0)`` spanned by the increments.

    Attributes
    ----------
    drift_, drift_stderr_ : ndarray of shape (4,)
        Mean increment divided by ``dg``.
    diffusion_, diffusion_stderr_ : ndarray of shape (4, 4)
        Second central moment divided by ``2 |dg|``.
    metric_trace_, metric_trace_stderr_ : float
        ``g_ij`` contraction of ``diffusion_``.
    """

    def __init__(self, dg=1.0):
        self.dg = dg

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        if X.shape[1] != 4:
            raise ValueError(f"increments must have 4 columns, got {X.shape[1]}")
        if self.dg == 0 or not np.isfinite(self.dg):
            raise ValueError("dg must be nonzero and finite")
        n = X.shape[0]
        self.n_samples_ = n
        self.drift_ = X.mean(axis=0) / self.dg
        centered = X - X.mean(axis=0)
        prods = centered[:, :, None] * centered[:, None, :] / (2.0 * abs(self.dg))
        self.diffusion_ = prods.sum(axis=0) / max(n - 1, 1)
        trace_samples = np.einsum("ij,pij->p", METRIC, prods)
        self.metric_trace_ = float(trace_samples.sum() / max(n - 1, 1))
        if n < 2:
            self.drift_stderr_ = np.full(4, np.nan)
            self.diffusion_stderr_ = np.full((4, 4), np.nan)
            self.metric_trace_stderr_ = np.nan
        else:
            self.drift_stderr_ = X.std(axis=0, ddof=1) / abs(self.dg) / np.sqrt(n)
            self.diffusion_stderr_ = prods.std(axis=0, ddof=1) / np.sqrt(n)
            self.metric_trace_stderr_ = float(trace_samples.std(ddof=1) / np.sqrt(n))
        return self

    def drift_estimate(self):
        check_is_fitted(self, "drift_")
        return Estimate(self.drift_, self.drift_stderr_)

    def diffusion_estimate(self):
        check_is_fitted(self, "diffusion_")
        return Estimate(self.diffusion_, self.diffusion_stderr_)

    def metric_trace_estimate(self):
        check_is_fitted(self, "metric_trace_")
        return Estimate(self.metric_trace_, self.metric_trace_stderr_)


def _fit_window(e, window):
    index = -1 if window is None else int(window)
    return IncrementMomentEstimator(dg=e.g_difference(index)).fit(e.increments(index))


def estimate_drift(e: Ensemble, window=None) -> Estimate:
    """Parameter-free drift from increments up to recorded index ``window``."""
    return _fit_window(e, window).drift_estimate()


def estimate_diffusion(e: Ensemble, window=None):
    """Return ``(diffusion tensor estimate, metric-contraction estimate)``."""
    est = _fit_window(e, window)
    return est.diffusion_estimate(), est.metric_trace_estimate()


# ---------------------------------------------------------------- stochastic derivatives


def _generator_terms(f, X, s, fd):
    if f.analytic:
        return f.s_derivative(X, s), f.gradient(X, s), f.hessian(X, s)
    X = np.atleast_2d(X)
    ds = np.array([f.s_derivative(x, s, fd) for x in X], dtype=float)
    grad = np.stack([f.gradient(x, s, fd) for x in X])
    hess = np.stack([f.hessian(x, s, fd) for x in X])
    return ds, grad, hess


def _stochastic_derivative_values(f, X, s, drift, w, gd, sign, fd=DEFAULT_FD):
    dfs, grad, hess = _generator_terms(f, X, s, fd)
    return dfs + gd * np.einsum("...i,...i->...", drift, grad) + sign * gd * np.einsum("...ij,...ij->...", w, hess)


def stochastic_derivative(f: ScalarField, spec: ProcessSpec, x, s, direction="forward", gauge=None, fd=DEFAULT_FD):
    """Mean forward/backward derivative ``df/ds + v+-^i d_i f +- w^ij d_ij f``.

    Drift and diffusion carry the factor ``g'(s)``.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    gauge = gauge or identity_gauge()
    x = as_four_vector(x)
    drift = _drift_value(spec, x, direction)
    sign = 1.0 if direction == "forward" else -1.0
    val = _stochastic_derivative_values(f, x, s, drift, spec.diffusion(x), gauge.derivative(s), sign, fd)
    return float(np.squeeze(val))


@dataclass(frozen=True)
class IBPResult:
    lhs: float
    rhs: float
    difference: float
    stderr: float
    budget: float

    @property
    def passed(self):
        return self.difference <= self.budget

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "difference": self.difference,
                "stderr": self.stderr, "budget": self.budget, "pass": bool(self.passed)}


def gaussian_backward_drift(spec, x0, s0, gauge):
    """Backward drift of a constant-coefficient process started at ``x0``.

    The density is Gaussian with mean ``x0 + v+ S`` and covariance ``2 w S``
    (``S = g(s) - g(s0)``), so ``v- = v+ - (2/p) d_j(p w^ij) = v+ + (x - mean)/S``.
    """
    if not spec.is_constant:
        raise ValueError("closed-form backward drift needs constant coefficients")
    x0 = as_four_vector(x0)
    vp = spec.forward_drift(x0)

    def drift(X, s):
        S = gauge(s) - gauge(s0)
        return vp + (X - x0 - vp * S) / S

    return drift


def integration_by_parts_check(f, g, spec, x0, interval, cfg, backward_drift=None,
                               discretization_constant=1.0, fd=DEFAULT_FD):
    """Monte Carlo check of ``E[f g](b) - E[f g](a) = int E[g D+f + f D-g] ds``.

    ``backward_drift(X, s)`` gives the parameter-free ``v-`` of the simulated
    process; it depends on the process density and defaults to the
    closed-form Gaussian one for constant coefficients. The integrand at the
    singular start ``s = a`` is linearly extrapolated from the next two steps.
    The agreement budget is ``3 sigma + C |ds| int E|integrand| ds``.
    """
    a, b = map(float, interval)
    if not b > a:
        raise ValueError("interval must satisfy a < b")
    n_steps = int(round((b - a) / cfg.step))
    cfg = SimulationConfig(step=(b - a) / n_steps, n_steps=n_steps, n_paths=cfg.n_paths, direction="forward",
                           seed=cfg.seed, gauge=cfg.gauge, block_size=cfg.block_size, n_jobs=cfg.n_jobs)
    gauge = cfg.gauge
    x0 = as_four_vector(x0)
    vminus = backward_drift or gaussian_backward_drift(spec, x0, a, gauge)
    sizes, rngs = _blocks(cfg)
    fg0 = float(f(x0, a) * g(x0, a))
    if spec.is_constant:
        w_c, vp_c = spec.diffusion(x0), spec.forward_drift(x0)
        coefficients = lambda X: (w_c, vp_c)  # noqa: E731
    else:
        coefficients = lambda X: (spec.diffusion(X), spec.forward_drift(X))  # noqa: E731

    def run(bi):
        n = sizes[bi]
        integ = np.zeros(n)
        abs_integ = np.zeros(n)
        first = np.zeros((2, n))
        end = None
        for k, s, X, alive, _ in _euler_block(spec, x0, a, cfg, rngs[bi], n):
            if k == 0:
                continue
            gd = gauge.derivative(s)
            w, vp = coefficients(X)
            dpf = _stochastic_derivative_values(f, X, s, vp, w, gd, 1.0, fd)
            dmg = _stochastic_derivative_values(g, X, s, vminus(X, s), w, gd, -1.0, fd)
            val = g(X, s) * dpf + f(X, s) * dmg
            if k <= 2:
                first[k - 1] = val
            weight = 0.5 if k == cfg.n_steps else 1.0
            integ += weight * val
            abs_integ += weight * np.abs(val)
            if k == cfg.n_steps:
                end = f(X, s) * g(X, s)
        start = 2.0 * first[0] - first[1]
        integ += 0.5 * start
        abs_integ += 0.5 * np.abs(start)
        return end - fg0, integ * cfg.step, abs_integ * cfg.step

    with ThreadPoolExecutor(_n_workers(cfg, len(sizes))) as pool:
        parts = list(pool.map(run, range(len(sizes))))
    lhs_p = np.concatenate([p[0] for p in parts])
    rhs_p = np.concatenate([p[1] for p in parts])
    abs_p = np.concatenate([p[2] for p in parts])
    diff_p = lhs_p - rhs_p
    n = diff_p.size
    stderr = float(diff_p.std(ddof=1) / np.sqrt(n)) if n > 1 else np.nan
    budget = 3.0 * stderr + discretization_constant * cfg.step * float(abs_p.mean())
    return IBPResult(float(lhs_p.mean()), float(rhs_p.mean()), float(abs(diff_p.mean())), stderr, budget)
