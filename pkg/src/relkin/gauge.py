"""Dynamical-parameter gauges ``g(s)`` and the reparametrization of drifts.

A gauge is a strictly increasing C1 map with an analytic derivative. Drift
and diffusion fields carry their parameter dependence only through the
factor ``g'(s)``, so every physical result depends on ``g(s) - g(s0)``.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .exceptions import DomainError


@dataclass(frozen=True)
class GaugeFunction:
    """Strictly increasing parameter map with derivative.

    Parameters
    ----------
    func, deriv : callable
        ``g(s)`` and ``g'(s)``; both must accept arrays.
    domain : (float, float)
        Interval of admissible ``s``.
    kind : str
        ``"identity"``, ``"affine"`` or ``"user"``.
    params : tuple
        ``(a, b)`` for affine gauges, empty otherwise.
    """

    func: Callable
    deriv: Callable
    domain: tuple = (-np.inf, np.inf)
    kind: str = "user"
    params: tuple = field(default=())

    def __call__(self, s):
        s = self._check_domain(s)
        return self.func(s)

    def derivative(self, s):
        s = self._check_domain(s)
        d = np.asarray(self.deriv(s), dtype=float)
        if not (np.all(np.isfinite(d)) and np.all(d > 0)):
            raise DomainError("gauge derivative must be positive and finite")
        return d if d.ndim else float(d)

    def inverse(self, value):
        """Return ``s`` with ``g(s) = value``."""
        if self.kind == "identity":
            return value
        if self.kind == "affine":
            a, b = self.params
            return (np.asarray(value, dtype=float) - b) / a
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise DomainError("inverse of a user gauge needs a bounded domain")
        vals = np.atleast_1d(np.asarray(value, dtype=float))
        out = np.array([brentq(lambda s, t=t: float(self.func(s)) - t, lo, hi, xtol=1e-15) for t in vals])
        return out if np.ndim(value) else float(out[0])

    def to_config(self):
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "affine":
            return {"kind": "affine", "a": self.params[0], "b": self.params[1]}
        return {"kind": "user"}

    def _check_domain(self, s):
        arr = np.asarray(s, dtype=float)
        lo, hi = self.domain
        if np.any(arr < lo) or np.any(arr > hi):
            raise DomainError(f"s outside gauge domain {self.domain}")
        return arr if arr.ndim else float(arr)


def _unit_slope(s):
    return np.ones_like(s) if np.ndim(s) else 1.0


def identity_gauge():
    return GaugeFunction(lambda s: s, _unit_slope, kind="identity")


def affine_gauge(a, b=0.0):
    """``g(s) = a s + b`` with ``a > 0``."""
    a = float(a)
    b = float(b)
    if not (np.isfinite(a) and a > 0):
        raise DomainError(f"affine gauge slope must be positive, got {a!r}")
    return GaugeFunction(
        lambda s: a * s + b,
        lambda s: np.full(np.shape(s), a) if np.ndim(s) else a,
        kind="affine",
        params=(a, b),
    )


def user_gauge(func, deriv, domain=(-np.inf, np.inf), n_check=257):
    """Wrap a user gauge, checking monotonicity on a sample of the domain."""
    lo, hi = domain
    lo_c = lo if np.isfinite(lo) else -10.0
    hi_c = hi if np.isfinite(hi) else 10.0
    grid = np.linspace(lo_c, hi_c, n_check)
    d = np.asarray(deriv(grid), dtype=float)
    g = np.asarray(func(grid), dtype=float)
    if not (np.all(np.isfinite(d)) and np.all(d > 0)) or np.any(np.diff(g) <= 0):
        raise DomainError("user gauge is not strictly increasing with positive finite derivative")
    return GaugeFunction(func, deriv, domain=tuple(domain), kind="user")


def make_gauge(kind="identity", a=1.0, b=0.0, func=None, deriv=None, domain=(-np.inf, np.inf)):
    """Build a gauge from a kind name: ``identity``, ``affine`` or ``user``."""
    if kind == "identity":
        return identity_gauge()
    if kind == "affine":
        return affine_gauge(a, b)
    if kind == "user":
        if func is None or deriv is None:
            raise ValueError("user gauge requires func and deriv")
        return user_gauge(func, deriv, domain)
    raise ValueError(f"unknown gauge kind {kind!r}")


def gauge_from_config(cfg):
    if cfg is None:
        return identity_gauge()
    kind = cfg.get("kind", "identity")
    if kind == "affine":
        return affine_gauge(cfg["a"], cfg.get("b", 0.0))
    if kind == "identity":
        return identity_gauge()
    raise ValueError(f"gauge kind {kind!r} cannot be loaded from config")


def scaled_drift(v, gauge, s):
    """Parameter-dependent drift ``v(x) g'(s)``."""
    return np.asarray(v, dtype=float) * gauge.derivative(s)


def scaled_diffusion(w, gauge, s):
    """Parameter-dependent diffusion tensor ``w(x) g'(s)``."""
    return np.asarray(w, dtype=float) * gauge.derivative(s)


def integrated_diffusion(w, gauge, s0, s1):
    """Closed form of ``int_{s0}^{s1} w g'(s) ds = w (g(s1) - g(s0))``."""
    return np.asarray(w, dtype=float) * (gauge(s1) - gauge(s0))
