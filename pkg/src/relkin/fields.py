"""Physical constants, drift and potential fields, and the diffusion tensor.

Vector fields are contravariant except the electromagnetic potential, which
is stored covariantly (``A_0 = V / c``). Gradients follow the convention
``grad[i, ...] = d/dx^i`` and Hessians ``hess[i, j, ...]``.

The residual evaluators return zero for exact solutions of the relations
they check: the two Nelson equations, the gradient condition on
``m v_i + q A_i``, the osmotic relation and the continuity equation.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ._validation import as_four_vector, check_positive
from .exceptions import DomainError, SingularDiffusionError
from .fd import DEFAULT_FD
from .geometry import METRIC, METRIC_INV, LorentzTransform, minkowski_dot, transform_vector

_SIGNS = np.array([1.0, -1.0, -1.0, -1.0])

# CODATA 2018 exact/recommended values
ELECTRON_MASS = 9.1093837e-31
ELECTRON_CHARGE = -1.602176634e-19
SPEED_OF_LIGHT = 2.99792458e8
PLANCK = 6.62607015e-34


@dataclass(frozen=True)
class PhysicalConstants:
    """Mass, charge, speed of light and the (non-reduced) Planck constant."""

    m: float = 1.0
    c: float = 1.0
    h: float = 1.0
    q: float = 0.0

    def __post_init__(self):
        check_positive(self.m, "m")
        check_positive(self.c, "c")
        check_positive(self.h, "h")
        if not np.isfinite(self.q):
            raise DomainError("q must be finite")

    @classmethod
    def natural(cls):
        return cls(1.0, 1.0, 1.0, 0.0)

    @classmethod
    def electron(cls):
        return cls(ELECTRON_MASS, SPEED_OF_LIGHT, PLANCK, ELECTRON_CHARGE)

    def with_c(self, c):
        return replace(self, c=float(c))

    @property
    def diffusion_scale(self):
        """``h / (4 pi m)``, the diagonal of the rest-frame diffusion tensor."""
        return self.h / (4.0 * np.pi * self.m)

    @property
    def rest_rate(self):
        """``2 pi m c^2 / h`` in inverse seconds (SI) or natural units."""
        return 2.0 * np.pi * self.m * self.c**2 / self.h

    def to_config(self):
        return {"m": self.m, "c": self.c, "h": self.h, "q": self.q}


def _batched(fn, x, vectorized):
    x = np.asarray(x, dtype=float)
    if vectorized or x.ndim == 1:
        return np.asarray(fn(x), dtype=float)
    flat = x.reshape(-1, 4)
    out = np.stack([np.asarray(fn(p), dtype=float) for p in flat])
    return out.reshape(x.shape[:-1] + out.shape[1:])


@dataclass(frozen=True)
class Field:
    """Field on Minkowski space with optional analytic derivatives.

    ``value`` maps points of shape ``(..., 4)`` to values of shape
    ``(..., *vshape)``. When ``vectorized`` is false, points are fed one at a
    time. Missing derivatives fall back to central finite differences.
    """

    value: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    vectorized: bool = True
    constant: bool = False

    def __call__(self, x):
        return _batched(self.value, x, self.vectorized)

    def gradient(self, x, fd=DEFAULT_FD):
        x = as_four_vector(x)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        if self.constant:
            return np.zeros((4,) + self(x).shape)
        return fd.gradient(self, x)

    def hessian(self, x, fd=DEFAULT_FD):
        x = as_four_vector(x)
        if self.hess is not None:
            return np.asarray(self.hess(x), dtype=float)
        if self.constant:
            return np.zeros((4, 4) + self(x).shape)
        return fd.hessian(self, x)

    @classmethod
    def constant_value(cls, value):
        value = np.array(value, dtype=float)
        value.setflags(write=False)

        def fn(x):
            x = np.asarray(x)
            return np.broadcast_to(value, x.shape[:-1] + value.shape).copy()

        return cls(fn, constant=True)

    @classmethod
    def affine(cls, offset, jacobian):
        """``f^k(x) = offset[k] + jacobian[i, k] x^i`` with exact derivatives."""
        offset = np.array(offset, dtype=float)
        jac = np.array(jacobian, dtype=float)
        return cls(
            lambda x: offset + np.asarray(x) @ jac,
            grad=lambda x: jac.copy(),
            hess=lambda x: np.zeros((4,) + jac.shape),
        )


@dataclass(frozen=True)
class ScalarField:
    """Scalar field ``f(x, s)`` with optional analytic derivatives.

    ``value``, ``grad`` and ``hess`` accept batches of points ``(..., 4)``;
    derivative axes come last, so ``grad`` returns ``(..., 4)`` and ``hess``
    ``(..., 4, 4)``. ``ds`` differentiates in the parameter ``s``. Missing
    derivatives fall back to finite differences at single points.
    """

    value: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    ds: Optional[Callable] = None

    def __call__(self, x, s=0.0):
        return np.asarray(self.value(np.asarray(x, dtype=float), s), dtype=float)

    @property
    def analytic(self):
        return self.grad is not None and self.hess is not None and self.ds is not None

    def gradient(self, x, s=0.0, fd=DEFAULT_FD):
        if self.grad is not None:
            return np.asarray(self.grad(np.asarray(x, dtype=float), s), dtype=float)
        return fd.gradient(lambda pts: self(pts, s), as_four_vector(x))

    def hessian(self, x, s=0.0, fd=DEFAULT_FD):
        if self.hess is not None:
            return np.asarray(self.hess(np.asarray(x, dtype=float), s), dtype=float)
        return fd.hessian(lambda pts: self(pts, s), as_four_vector(x))

    def s_derivative(self, x, s=0.0, fd=DEFAULT_FD):
        if self.ds is not None:
            return np.asarray(self.ds(np.asarray(x, dtype=float), s), dtype=float)
        return float(fd.derivative(lambda t: self(x, t), s))

    @classmethod
    def coordinate(cls, index):
        """The coordinate function ``f(x) = x^index``."""
        e = np.zeros(4)
        e[index] = 1.0
        return cls(
            lambda x, s: x[..., index],
            grad=lambda x, s: np.broadcast_to(e, x.shape).copy(),
            hess=lambda x, s: np.zeros(x.shape + (4,)),
            ds=lambda x, s: np.zeros(x.shape[:-1]),
        )

    @classmethod
    def constant(cls, value):
        value = float(value)
        return cls(
            lambda x, s: np.full(x.shape[:-1], value),
            grad=lambda x, s: np.zeros(x.shape),
            hess=lambda x, s: np.zeros(x.shape + (4,)),
            ds=lambda x, s: np.zeros(x.shape[:-1]),
        )

    @classmethod
    def coordinate_square(cls, index):
        """``f(x) = (x^index)^2``."""

        def grad(x, s):
            g = np.zeros(x.shape)
            g[..., index] = 2.0 * x[..., index]
            return g

        def hess(x, s):
            H = np.zeros(x.shape + (4,))
            H[..., index, index] = 2.0
            return H

        return cls(lambda x, s: x[..., index] ** 2, grad=grad, hess=hess, ds=lambda x, s: np.zeros(x.shape[:-1]))


@dataclass(frozen=True)
class DriftFields:
    """Osmotic drift ``u`` and current drift ``v`` (both contravariant)."""

    u: Field
    v: Field

    @classmethod
    def constant(cls, u, v):
        return cls(Field.constant_value(as_four_vector(u, "u")), Field.constant_value(as_four_vector(v, "v")))

    @classmethod
    def from_forward_backward(cls, v_plus, v_minus):
        """Build ``u = (v+ - v-)/2`` and ``v = (v+ + v-)/2`` from constant drifts."""
        vp = as_four_vector(v_plus, "v_plus")
        vm = as_four_vector(v_minus, "v_minus")
        return cls.constant((vp - vm) / 2.0, (vp + vm) / 2.0)

    @property
    def is_constant(self):
        return self.u.constant and self.v.constant


@dataclass(frozen=True)
class EMPotential:
    """Covariant four-potential ``A_i`` independent of the parameter ``s``."""

    A: Field

    def __call__(self, x):
        return self.A(x)

    def gradient(self, x, fd=DEFAULT_FD):
        return self.A.gradient(x, fd)

    @classmethod
    def zero(cls):
        return cls(Field.constant_value(np.zeros(4)))

    @classmethod
    def constant(cls, V, c):
        """Uniform scalar potential ``V``: ``A_0 = V / c``, spatial parts zero."""
        return cls(Field.constant_value([V / c, 0.0, 0.0, 0.0]))

    @classmethod
    def from_scalar_and_vector(cls, V, A_vec, c):
        """Constant potential from electric ``V`` and magnetic vector ``A_vec``."""
        a = np.asarray(A_vec, dtype=float).reshape(3)
        return cls(Field.constant_value([V / c, -a[0], -a[1], -a[2]]))

    @classmethod
    def linear(cls, jacobian, offset=(0.0, 0.0, 0.0, 0.0)):
        """``A_k(x) = offset[k] + jacobian[i, k] x^i``."""
        return cls(Field.affine(offset, jacobian))

    @classmethod
    def gradient_of(cls, grad_phi, hess_phi):
        """Pure-gauge potential ``A_i = d_i phi`` from the derivatives of a scalar ``phi``."""
        return cls(Field(grad_phi, grad=hess_phi))


@dataclass(frozen=True)
class ProcessSpec:
    """Everything needed to simulate or verify a relativistic diffusion.

    ``diffusion_override`` replaces the constructed diffusion tensor; it exists
    for deterministic limits (``lambda x: 0``) and for tests.
    """

    constants: PhysicalConstants
    drift: DriftFields
    potential: EMPotential = field(default_factory=EMPotential.zero)
    diffusion_override: Optional[Callable] = None

    def forward_drift(self, x):
        return self.drift.v(x) + self.drift.u(x)

    def backward_drift(self, x):
        return self.drift.v(x) - self.drift.u(x)

    def diffusion(self, x):
        if self.diffusion_override is not None:
            x = np.asarray(x, dtype=float)
            out = np.asarray(self.diffusion_override(x), dtype=float)
            return np.broadcast_to(out, x.shape[:-1] + (4, 4)).copy()
        return diffusion_from_velocity(self.drift.v(x), self.constants)

    @property
    def is_constant(self):
        return self.drift.is_constant and self.diffusion_override is None

    def boosted(self, L):
        """Constant-coefficient spec transformed by ``L`` (drifts only)."""
        if not self.drift.is_constant:
            raise ValueError("only constant drift fields can be boosted directly")
        x0 = np.zeros(4)
        return replace(
            self,
            drift=DriftFields.constant(transform_vector(L, self.drift.u(x0)), transform_vector(L, self.drift.v(x0))),
        )


def free_particle_rest(constants):
    """Rest-frame free particle: ``u = 0``, ``v = (c, 0, 0, 0)``."""
    return DriftFields.constant(np.zeros(4), [constants.c, 0.0, 0.0, 0.0])


def free_particle_spec(constants, L: Optional[LorentzTransform] = None):
    spec = ProcessSpec(constants, free_particle_rest(constants))
    return spec if L is None else spec.boosted(L)


# ---------------------------------------------------------------- diffusion


def _check_timelike(n2, v):
    scale = np.sum(np.asarray(v) ** 2, axis=-1)
    if np.any(~(n2 > 1e-14 * scale)):
        raise SingularDiffusionError("current drift must be timelike (v_k v^k > 0)")


def diffusion_from_velocity(v, constants):
    """``w^ij = h/(4 pi m) [2 v^i v^j / (v_k v^k) - g^ij]`` for timelike ``v``."""
    v = as_four_vector(v, "v")
    n2 = minkowski_dot(v, v)
    _check_timelike(n2, v)
    outer = v[..., :, None] * v[..., None, :]
    return constants.diffusion_scale * (2.0 * outer / n2[..., None, None] - METRIC_INV)


def inverse_from_velocity(v, constants):
    """Closed-form covariant inverse ``w_ij = 4 pi m/h [2 v_i v_j / (v_k v^k) - g_ij]``."""
    v = as_four_vector(v, "v")
    n2 = minkowski_dot(v, v)
    _check_timelike(n2, v)
    vl = v * _SIGNS
    outer = vl[..., :, None] * vl[..., None, :]
    return (2.0 * outer / n2[..., None, None] - METRIC) / constants.diffusion_scale


def forward_backward_drifts(d, x):
    """Return ``(v+, v-) = (v + u, v - u)`` at ``x``."""
    u = d.u(x)
    v = d.v(x)
    return v + u, v - u


def diffusion_tensor(d, k, x):
    return diffusion_from_velocity(d.v(x), k)


def diffusion_inverse(d, k, x):
    return inverse_from_velocity(d.v(x), k)


def normalization_residual(d, k, x):
    """``g_ij (v^i v^j + u^i u^j) - c^2``."""
    u = d.u(x)
    v = d.v(x)
    return minkowski_dot(v, v) + minkowski_dot(u, u) - k.c**2


def normalized_vectors(d, k, x):
    """Scale ``(u, v)`` by ``c / |v|`` so the combined norm equals ``c^2``."""
    u = d.u(x)
    v = d.v(x)
    n2 = minkowski_dot(v, v) + minkowski_dot(u, u)
    if np.any(n2 <= 0):
        raise DomainError("g_ij(v^i v^j + u^i u^j) must be positive to normalize")
    scale = np.asarray(k.c / np.sqrt(n2))[..., None]
    return u * scale, v * scale


def nelson1_residual(d, k, x, fd=DEFAULT_FD):
    """Simple form ``u^j v_j + w^ij d_i v_j`` of the first Nelson equation."""
    x = as_four_vector(x)
    u = d.u(x)
    v = d.v(x)
    w = diffusion_from_velocity(v, k)
    dv_low = d.v.gradient(x, fd) * _SIGNS[None, :]
    return float(minkowski_dot(u, v) + np.einsum("ij,ij->", w, dv_low))


def nelson1_residual_general(d, k, x, fd=DEFAULT_FD):
    """General form ``w_ij u^i v^j + w^ij d_i [w_jk v^k]``.

    Equals ``4 pi m / h`` times :func:`nelson1_residual` for every field,
    because ``w_jk v^k = (4 pi m / h) v_j``; here that product is
    differentiated numerically rather than simplified.
    """
    x = as_four_vector(x)
    u = d.u(x)
    v = d.v(x)
    w = diffusion_from_velocity(v, k)
    winv = inverse_from_velocity(v, k)

    def lowered_flux(pts):
        vv = d.v(pts)
        return np.einsum("...jk,...k->...j", inverse_from_velocity(vv, k), vv)

    grad_flux = fd.gradient(lowered_flux, x)
    return float(u @ winv @ v + np.einsum("ij,ij->", w, grad_flux))


def nelson2_residual(d, k, A, x, fd=DEFAULT_FD):
    """Second Nelson equation residual, one covariant component per ``k``.

    ``m [v^i d_i v_k - u^i d_i u_k - w^ij d_ij u_k] - q v^i [d_k A_i - d_i A_k]``
    """
    x = as_four_vector(x)
    u = d.u(x)
    v = d.v(x)
    w = diffusion_from_velocity(v, k)
    dv = d.v.gradient(x, fd) * _SIGNS[None, :]
    du = d.u.gradient(x, fd) * _SIGNS[None, :]
    d2u = d.u.hessian(x, fd) * _SIGNS[None, None, :]
    dA = A.gradient(x, fd)
    kinetic = v @ dv - u @ du - np.einsum("ij,ijk->k", w, d2u)
    force = v @ (dA.T - dA)  # sum_i v^i (d_k A_i - d_i A_k)
    return k.m * kinetic - k.q * force


def field_tensor(A, x, fd=DEFAULT_FD):
    """``B_ij = d_j A_i - d_i A_j``."""
    dA = A.gradient(as_four_vector(x), fd)
    return dA.T - dA


def gradient_condition_residual(d, k, A, x, fd=DEFAULT_FD):
    """Curl of ``m v_i + q A_i``; vanishes iff it is locally a gradient."""
    x = as_four_vector(x)
    M = k.m * d.v.gradient(x, fd) * _SIGNS[None, :] + k.q * A.gradient(x, fd)
    return M.T - M


def lagrangian_value(u, v, A_cov, k):
    """``m c sqrt(g(v, v) + g(u, u)) - q A_j v^j`` for given drift values."""
    rad = float(minkowski_dot(v, v) + minkowski_dot(u, u))
    if rad < 0:
        raise DomainError("negative radicand in the Lagrangian")
    return k.m * k.c * np.sqrt(rad) - k.q * float(np.dot(A_cov, v))


def lagrangian(d, k, A, x, gauge, s):
    """Lagrangian evaluated with parameter-scaled drifts ``u g'(s)``, ``v g'(s)``."""
    gd = gauge.derivative(s)
    return lagrangian_value(d.u(x) * gd, d.v(x) * gd, A(x), k)


def canonical_momenta(d, k, A, x):
    """Covariant ``(dL/du^k, dL/dv^k) = (m u~_k, m v~_k - q A_k)``."""
    ut, vt = normalized_vectors(d, k, x)
    return k.m * ut * _SIGNS, k.m * vt * _SIGNS - k.q * A(x)


def osmotic_relation_residual(d, k, p, x, s=0.0, fd=DEFAULT_FD):
    """``p u^i - d_j (p w^ij)`` for a density field ``p(x, s)``."""
    x = as_four_vector(x)
    w = diffusion_from_velocity(d.v(x), k)
    pval = float(p(x, s))
    grad_p = p.gradient(x, s, fd)
    div = w @ grad_p
    if not d.v.constant:
        dw = fd.gradient(lambda pts: diffusion_from_velocity(d.v(pts), k), x)
        div = div + pval * np.einsum("jij->i", dw)
    return pval * d.u(x) - div


def continuity_residual(d, p, gauge, s, x, fd=DEFAULT_FD):
    """``(1/g'(s)) dp/ds + d_i (p v^i)``."""
    x = as_four_vector(x)
    pval = float(p(x, s))
    div_v = float(np.trace(d.v.gradient(x, fd)))
    flux = float(d.v(x) @ p.gradient(x, s, fd)) + pval * div_v
    return float(p.s_derivative(x, s, fd)) / gauge.derivative(s) + flux


def backward_drift_from_density(spec, p, x, s=0.0, fd=DEFAULT_FD):
    """``v- = v+ - (2/p) d_j (p w^ij)`` given the process density ``p``."""
    x = as_four_vector(x)
    w = spec.diffusion(x)
    pval = float(p(x, s))
    div = w @ p.gradient(x, s, fd)
    if not spec.is_constant:
        dw = fd.gradient(lambda pts: spec.diffusion(pts), x)
        div = div + pval * np.einsum("jij->i", dw)
    return spec.forward_drift(x) - 2.0 * div / pval


def check_field_consistency(A, d, points, fd=DEFAULT_FD, atol=1e-10):
    """True unless the field tensor is nonzero somewhere while ``v`` vanishes there."""
    for x in np.atleast_2d(points):
        B = field_tensor(A, x, fd)
        if np.max(np.abs(B)) > atol and np.max(np.abs(d.v(x))) <= atol:
            return False
    return True
