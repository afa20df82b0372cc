"""Closed-form free-particle transition density and its checks.

The rest-frame solution has ``u = 0``, ``v = (c, 0, 0, 0)`` and
``w = h/(4 pi m) I``. In any boosted frame the drift ``V`` and diffusion ``W``
are still constant, and the transition density is a 4D Gaussian in
``Y = X - X0 - V S`` with covariance ``2 S W`` where ``S = g(s) - g(s0)``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_four_vector
from .exceptions import DomainError, GridCoverageError
from .fields import PhysicalConstants
from .gauge import GaugeFunction, identity_gauge
from .geometry import METRIC, LorentzTransform, boost, transform_tensor2, transform_vector


@dataclass(frozen=True)
class FreeParticleSolution:
    """Constant drift ``V`` and diffusion ``W`` of a free particle in one frame."""

    constants: PhysicalConstants
    gauge: GaugeFunction
    transform: LorentzTransform
    V: np.ndarray
    W: np.ndarray
    W_inv: np.ndarray = field(init=False)
    det_W_inv: float = field(init=False)
    principal_values: np.ndarray = field(init=False)
    principal_axes: np.ndarray = field(init=False)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        W_inv = np.linalg.inv(W)
        lam, R = np.linalg.eigh(W)
        if np.any(lam <= 0):
            raise DomainError("free-particle diffusion tensor must be positive definite")
        object.__setattr__(self, "W_inv", W_inv)
        object.__setattr__(self, "det_W_inv", float(np.prod(1.0 / lam)))
        object.__setattr__(self, "principal_values", lam)
        object.__setattr__(self, "principal_axes", R)

    @property
    def frame(self):
        return "rest" if np.array_equal(self.transform.matrix, np.eye(4)) else "boosted"

    @property
    def U(self):
        return np.zeros(4)

    def principal_drift(self):
        """Drift components along the eigenvectors of ``W``."""
        return self.principal_axes.T @ self.V


def rest_solution(k: PhysicalConstants, gauge: Optional[GaugeFunction] = None) -> FreeParticleSolution:
    return boosted_solution(k, gauge, LorentzTransform.identity())


def boosted_solution(k, gauge=None, L: Optional[LorentzTransform] = None) -> FreeParticleSolution:
    """Rest solution carried to the frame ``X = L x``."""
    L = L or LorentzTransform.identity()
    v_rest = np.array([k.c, 0.0, 0.0, 0.0])
    w_rest = k.diffusion_scale * np.eye(4)
    return FreeParticleSolution(k, gauge or identity_gauge(), L, transform_vector(L, v_rest),
                                transform_tensor2(L, w_rest))


def _gauge_gap(sol, s, s0):
    S = np.asarray(sol.gauge(s), dtype=float) - sol.gauge(s0)
    if np.any(S <= 0):
        raise DomainError("conditional density needs g(s) > g(s0)")
    return S


def kernel_Q(Y, S, sol):
    """Heat kernel ``sqrt(det W_ij / (4 pi S)^4) exp(-W_ij Y^i Y^j / (4 S))``."""
    Y = as_four_vector(Y, "Y")
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise DomainError("kernel_Q needs S > 0")
    quad = np.einsum("...i,ij,...j->...", Y, sol.W_inv, Y)
    return np.sqrt(sol.det_W_inv) / (4.0 * np.pi * S) ** 2 * np.exp(-quad / (4.0 * S))


def conditional_density(X, s, X0, s0, sol):
    """Transition density ``P(X, s | X0, s0)``; broadcasts over ``X`` and ``X0``."""
    S = _gauge_gap(sol, s, s0)
    X = as_four_vector(X, "X")
    X0 = as_four_vector(X0, "X0")
    Y = X - X0 - np.multiply.outer(S, sol.V) if np.ndim(S) else X - X0 - sol.V * S
    return kernel_Q(Y, S, sol)


def rest_product_density(x, s, x0, s0, k, gauge=None):
    """Rest-frame density written as a time factor times a spatial factor.

    Independent closed form used to cross-check :func:`conditional_density`.
    """
    gauge = gauge or identity_gauge()
    S = gauge(s) - gauge(s0)
    if S <= 0:
        raise DomainError("needs g(s) > g(s0)")
    d = as_four_vector(x) - as_four_vector(x0)
    a = np.sqrt(k.m / (k.h * S))
    t_part = a * np.exp(-np.pi * k.m / k.h * (d[..., 0] - k.c * S) ** 2 / S)
    r2 = d[..., 1] ** 2 + d[..., 2] ** 2 + d[..., 3] ** 2
    return t_part * a**3 * np.exp(-np.pi * k.m / k.h * r2 / S)


def spacelike_timelike_ratio(tau, k):
    """``exp(-2 pi m c^2 tau / h)``: spacelike over timelike density at equal ``c tau``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise DomainError("tau must be non-negative")
    return np.exp(-k.rest_rate * tau)


def rest_rate(k):
    """``2 pi m c^2 / h``."""
    return k.rest_rate


# ---------------------------------------------------------------- principal-axis marginals


def axis_density(sol, axis, z, z0, S):
    """1D Gaussian density along principal axis ``axis`` (mean ``z0 + V_a S``, var ``2 lam_a S``)."""
    lam = sol.principal_values[axis]
    mu = sol.principal_drift()[axis]
    var = 2.0 * lam * S
    return np.exp(-((z - z0 - mu * S) ** 2) / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def to_principal(sol, X, X0):
    """Principal coordinates ``R^T (X - X0)``."""
    return (as_four_vector(X) - as_four_vector(X0)) @ sol.principal_axes


def _trapezoid_weights(n, h):
    wts = np.full(n, h)
    wts[0] = wts[-1] = h / 2.0
    return wts


@dataclass(frozen=True)
class CKResult:
    max_error: float
    axis_errors: np.ndarray
    mass_deficit: float
    factorization_error: float


def chapman_kolmogorov_check(sol, s0, s1, s2, n_points=256, n_std=8.0, n_eval=16, mass_tol=1e-3):
    """Compare ``int p(.,s2|x1,s1) p(x1,s1|x0,s0) dx1`` with ``p(.,s2|x0,s0)``.

    The density separates along the eigenvectors of ``W``, so the 4-fold
    integral is a product of 1D trapezoid convolutions. The returned error is
    the maximum absolute difference over an ``n_eval**4`` tensor grid of target
    points. ``s1 == s0`` uses the delta initial condition directly.
    """
    g0, g1, g2 = (float(sol.gauge(t)) for t in (s0, s1, s2))
    if not (g0 <= g1 < g2):
        raise ValueError("need g(s0) <= g(s1) < g(s2)")
    S1, S2, S = g1 - g0, g2 - g1, g2 - g0
    mu = sol.principal_drift()
    lam = sol.principal_values
    conv = np.empty((4, n_eval))
    direct = np.empty((4, n_eval))
    targets = np.empty((4, n_eval))
    deficit = 0.0
    for a in range(4):
        sig_S = np.sqrt(2.0 * lam[a] * S)
        targets[a] = mu[a] * S + np.linspace(-3.0, 3.0, n_eval) * sig_S
        direct[a] = axis_density(sol, a, targets[a], 0.0, S)
        if S1 == 0.0:
            conv[a] = axis_density(sol, a, targets[a], 0.0, S2)
            continue
        sig1 = np.sqrt(2.0 * lam[a] * S1)
        z1 = mu[a] * S1 + np.linspace(-n_std, n_std, n_points) * sig1
        wts = _trapezoid_weights(n_points, z1[1] - z1[0])
        first = axis_density(sol, a, z1, 0.0, S1)
        deficit = max(deficit, abs(1.0 - float(wts @ first)))
        second = axis_density(sol, a, targets[a][:, None], z1[None, :], S2)
        conv[a] = second @ (wts * first)
    if deficit > mass_tol:
        raise GridCoverageError(f"grid loses probability mass {deficit:.3g} > {mass_tol}")
    full_conv = np.einsum("a,b,c,d->abcd", *conv)
    full_direct = np.einsum("a,b,c,d->abcd", *direct)
    # tie the separated form back to the 4D density at the target points
    Z = np.stack(np.meshgrid(*targets, indexing="ij"), axis=-1)
    X = Z @ sol.principal_axes.T
    P4 = conditional_density(X, s2, np.zeros(4), s0, sol)
    fact_err = float(np.max(np.abs(P4 - full_direct)) / np.max(full_direct))
    axis_err = np.max(np.abs(conv - direct), axis=1)
    return CKResult(float(np.max(np.abs(full_conv - full_direct))), axis_err, deficit, fact_err)


# ---------------------------------------------------------------- PDE residuals and normalization


@dataclass(frozen=True)
class KolmogorovResiduals:
    backward: float
    forward: float
    density_scale: float
    step: float


def _eval_points(sol, S, n_per_axis, span):
    lattice = np.linspace(-span, span, n_per_axis)
    sig = np.sqrt(2.0 * sol.principal_values * S)
    Z = np.stack(np.meshgrid(*(lattice * s for s in sig), indexing="ij"), axis=-1).reshape(-1, 4)
    return Z @ sol.principal_axes.T + sol.V * S


def kolmogorov_residuals(sol, s=1.0, s0=0.0, step=1e-2, n_per_axis=5, span=2.5, x0=None):
    """Residuals of both Kolmogorov equations on the analytic density.

    Derivatives are second-order central differences with spacing ``step`` in
    every coordinate and in the parameter. Residuals are reported as
    ``max |R| / max P`` over a lattice of ``n_per_axis**4`` points spanning
    ``+-span`` standard deviations along each principal axis.
    """
    x0 = np.zeros(4) if x0 is None else as_four_vector(x0)
    S = float(sol.gauge(s) - sol.gauge(s0))
    if S <= 0:
        raise DomainError("needs g(s) > g(s0)")
    pts = _eval_points(sol, S, n_per_axis, span) + x0
    h = float(step)
    eye = np.eye(4) * h
    V, W = sol.V, sol.W

    def spatial_terms(P):
        """First and second derivative contractions of ``P(z)`` around ``pts``."""
        p0 = P(pts)
        grad = np.stack([(P(pts + eye[i]) - P(pts - eye[i])) / (2 * h) for i in range(4)], axis=-1)
        hess = np.empty(pts.shape[:1] + (4, 4))
        for i in range(4):
            hess[:, i, i] = (P(pts + eye[i]) - 2 * p0 + P(pts - eye[i])) / h**2
            for j in range(i + 1, 4):
                m = (P(pts + eye[i] + eye[j]) - P(pts + eye[i] - eye[j]) - P(pts - eye[i] + eye[j])
                     + P(pts - eye[i] - eye[j])) / (4 * h * h)
                hess[:, i, j] = hess[:, j, i] = m
        return p0, grad @ V, np.einsum("ij,pij->p", W, hess)

    # forward: derivatives in the final point X and parameter s
    p0, adv, diff = spatial_terms(lambda X: conditional_density(X, s, x0, s0, sol))
    dps = (conditional_density(pts, s + h, x0, s0, sol) - conditional_density(pts, s - h, x0, s0, sol)) / (2 * h)
    forward = dps / sol.gauge.derivative(s) + adv - diff

    # backward: derivatives in the initial point X0 and parameter s0, with X fixed at pts
    def shifted(dx0, ds0=0.0):
        return conditional_density(pts, s, x0 + dx0, s0 + ds0, sol)

    b0 = shifted(0.0)
    grad0 = np.stack([(shifted(eye[i]) - shifted(-eye[i])) / (2 * h) for i in range(4)], axis=-1)
    hess0 = np.empty(pts.shape[:1] + (4, 4))
    for i in range(4):
        hess0[:, i, i] = (shifted(eye[i]) - 2 * b0 + shifted(-eye[i])) / h**2
        for j in range(i + 1, 4):
            m = (shifted(eye[i] + eye[j]) - shifted(eye[i] - eye[j]) - shifted(-eye[i] + eye[j])
                 + shifted(-eye[i] - eye[j])) / (4 * h * h)
            hess0[:, i, j] = hess0[:, j, i] = m
    dps0 = (shifted(0.0, h) - shifted(0.0, -h)) / (2 * h)
    backward = dps0 / sol.gauge.derivative(s0) + grad0 @ V + np.einsum("ij,pij->p", W, hess0)

    scale = float(np.max(p0))
    return KolmogorovResiduals(float(np.max(np.abs(backward)) / scale), float(np.max(np.abs(forward)) / scale),
                               scale, h)


def normalization_integral(sol, s=1.0, s0=0.0, n_per_axis=32, n_std=8.0):
    """Trapezoid integral of the 4D density over a principal-axis box."""
    S = float(sol.gauge(s) - sol.gauge(s0))
    sig = np.sqrt(2.0 * sol.principal_values * S)
    grids = [np.linspace(-n_std, n_std, n_per_axis) * sg for sg in sig]
    wts = [_trapezoid_weights(n_per_axis, g[1] - g[0]) for g in grids]
    total = 0.0
    center = sol.V * S
    R = sol.principal_axes
    for i0, z0 in enumerate(grids[0]):
        Z = np.stack(np.meshgrid([z0], *grids[1:], indexing="ij"), axis=-1).reshape(-1, 4)
        vals = conditional_density(Z @ R.T + center, s, np.zeros(4), s0, sol).reshape(n_per_axis, n_per_axis,
                                                                                       n_per_axis)
        total += wts[0][i0] * np.einsum("abc,a,b,c->", vals, *wts[1:])
    return float(total)


# ---------------------------------------------------------------- non-relativistic limit


@dataclass(frozen=True)
class NonRelLimitReport:
    """Per-``c`` quantities of the non-relativistic limit scan (arrays aligned with ``c_values``)."""

    c_values: np.ndarray
    t_marginal_std: np.ndarray
    v0_over_c: np.ndarray
    spatial_drift: np.ndarray
    w: np.ndarray
    w_target: np.ndarray
    w_deviation: np.ndarray
    norm_residual: np.ndarray
    spatial_kernel_deviation: np.ndarray
    t_std_slope: float
    w_deviation_slope: float

    def to_dict(self):
        out = {}
        for key, val in self.__dict__.items():
            out[key] = np.asarray(val).tolist() if isinstance(val, np.ndarray) else val
        return out


def nonrelativistic_kernel(r, dg, k, velocity=(0.0, 0.0, 0.0)):
    """3D Gaussian kernel with variance ``h dg / (2 pi m)`` per axis, centred at ``velocity * dg``."""
    r = np.asarray(r, dtype=float)
    var = k.h * dg / (2.0 * np.pi * k.m)
    d = r - np.asarray(velocity) * dg
    return np.exp(-np.sum(d * d, axis=-1) / (2.0 * var)) / (2.0 * np.pi * var) ** 1.5


def spatial_marginal(sol, r, dg):
    """Density of the spatial displacement after integrating out ``x^0``."""
    Wsp = sol.W[1:, 1:]
    cov = 2.0 * dg * Wsp
    d = np.asarray(r, dtype=float) - sol.V[1:] * dg
    quad = np.einsum("...i,ij,...j->...", d, np.linalg.inv(cov), d)
    return np.exp(-quad / 2.0) / np.sqrt((2.0 * np.pi) ** 3 * np.linalg.det(cov))


def nr_limit_scan(c_values, k_template, gauge=None, velocity=(0.0, 0.0, 0.0), dg=1.0, n_probe=7):
    """Track drift, diffusion and density limits as ``c`` grows.

    The particle moves with the fixed non-relativistic ``velocity`` (zero by
    default), i.e. each frame is the boost with ``beta = velocity / c``.
    """
    c_values = np.asarray(c_values, dtype=float)
    if np.any(c_values <= 0) or np.any(np.diff(c_values) <= 0):
        raise ValueError("c_values must be positive and ascending")
    velocity = np.asarray(velocity, dtype=float).reshape(3)
    gauge = gauge or identity_gauge()
    n = len(c_values)
    t_std = np.empty(n)
    v0c = np.empty(n)
    vsp = np.empty((n, 3))
    ws = np.empty((n, 4, 4))
    w_dev = np.empty(n)
    norm_res = np.empty(n)
    kern_dev = np.empty(n)
    target = k_template.diffusion_scale * np.eye(4)
    var_nr = k_template.h * dg / (2.0 * np.pi * k_template.m)
    probe = np.linspace(-2.5, 2.5, n_probe) * np.sqrt(var_nr)
    R = np.stack(np.meshgrid(probe, probe, probe, indexing="ij"), axis=-1).reshape(-1, 3) + velocity * dg
    for i, c in enumerate(c_values):
        kc = k_template.with_c(c)
        sol = boosted_solution(kc, gauge, boost(velocity / c))
        t_std[i] = np.sqrt(2.0 * sol.W[0, 0] * dg) / c
        v0c[i] = sol.V[0] / c
        vsp[i] = sol.V[1:]
        ws[i] = sol.W
        w_dev[i] = np.max(np.abs(sol.W - target))
        norm_res[i] = float(sol.V @ METRIC @ sol.V) - c**2
        nr = nonrelativistic_kernel(R, dg, kc, velocity)
        kern_dev[i] = np.max(np.abs(spatial_marginal(sol, R, dg) - nr) / nr)
    t_slope = float(np.polyfit(np.log(c_values), np.log(t_std), 1)[0])
    if np.all(w_dev > 0):
        w_slope = float(np.polyfit(np.log(c_values), np.log(w_dev), 1)[0])
    else:
        w_slope = float("nan")
    return NonRelLimitReport(c_values, t_std, v0c, vsp, ws, np.broadcast_to(target, ws.shape).copy(), w_dev,
                             norm_res, kern_dev, t_slope, w_slope)


# ---------------------------------------------------------------- estimator facade


class FreeParticleDensity(BaseEstimator):
    """Free-particle transition density as a density estimator.

    Parameters
    ----------
    constants : PhysicalConstants, optional
        Defaults to natural units.
    beta : array-like of shape (3,)
        Boost velocity of the observer frame (``v / c``).
    dg : float
        Gauge difference ``g(s) - g(s0)`` at which the density is evaluated.
    origin : array-like of shape (4,)
        Initial point ``X0``.
    """

    def __init__(self, constants=None, beta=(0.0, 0.0, 0.0), dg=1.0, origin=(0.0, 0.0, 0.0, 0.0)):
        self.constants = constants
        self.beta = beta
        self.dg = dg
        self.origin = origin

    def fit(self, X=None, y=None):
        k = self.constants or PhysicalConstants.natural()
        if not self.dg > 0:
            raise DomainError("dg must be positive")
        self.solution_ = boosted_solution(k, identity_gauge(), boost(self.beta))
        self.origin_ = as_four_vector(self.origin, "origin")
        return self

    def score_samples(self, X):
        """Log density at each row of ``X``."""
        check_is_fitted(self, "solution_")
        X = check_array(X)
        sol = self.solution_
        Y = X - self.origin_ - sol.V * self.dg
        quad = np.einsum("pi,ij,pj->p", Y, sol.W_inv, Y)
        return 0.5 * np.log(sol.det_W_inv) - 2.0 * np.log(4.0 * np.pi * self.dg) - quad / (4.0 * self.dg)

    def score(self, X, y=None):
        return float(logsumexp(self.score_samples(X)) - np.log(len(X)))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "solution_")
        rng = check_random_state(random_state)
        sol = self.solution_
        L = np.linalg.cholesky(2.0 * self.dg * sol.W)
        return self.origin_ + sol.V * self.dg + rng.standard_normal((n_samples, 4)) @ L.T

    def principal_cdf(self, z, axis):
        """CDF of the principal-axis coordinate ``R^T (X - X0)``."""
        check_is_fitted(self, "solution_")
        sol = self.solution_
        mu = sol.principal_drift()[axis] * self.dg
        sd = np.sqrt(2.0 * sol.principal_values[axis] * self.dg)
        return norm.cdf(z, loc=mu, scale=sd)
