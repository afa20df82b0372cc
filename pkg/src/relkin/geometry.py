"""Minkowski metric algebra and Lorentz transformations.

Coordinates are contravariant with ``x[0] = c t`` and metric
``diag(+1, -1, -1, -1)``. Vectors are plain ``numpy`` arrays with a trailing
axis of length 4; every function broadcasts over leading axes.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._validation import as_four_vector, as_tensor2
from .exceptions import DomainError

METRIC = np.diag([1.0, -1.0, -1.0, -1.0])
METRIC.setflags(write=False)
METRIC_INV = METRIC.copy()
METRIC_INV.setflags(write=False)

_SIGNS = np.array([1.0, -1.0, -1.0, -1.0])


class IntervalKind(str, Enum):
    TIMELIKE = "timelike"
    SPACELIKE = "spacelike"
    LIGHTLIKE = "lightlike"


def lower_index(v):
    """Covariant components ``v_i = g_ij v^j``."""
    return as_four_vector(v) * _SIGNS


def raise_index(v):
    """Contravariant components ``v^i = g^ij v_j``."""
    return as_four_vector(v) * _SIGNS


def lower_tensor2(w):
    """Lower both indices of a rank-2 contravariant tensor."""
    w = as_tensor2(w)
    return w * _SIGNS[:, None] * _SIGNS[None, :]


def minkowski_dot(a, b):
    """Quadratic-form contraction ``g_ij a^i b^j``."""
    a = as_four_vector(a)
    b = as_four_vector(b)
    return a[..., 0] * b[..., 0] - a[..., 1] * b[..., 1] - a[..., 2] * b[..., 2] - a[..., 3] * b[..., 3]


def minkowski_norm2(v):
    """Return ``g_ij v^i v^j`` (positive for timelike vectors)."""
    return minkowski_dot(v, v)


def classify_interval(x1, x0, tol=1e-12):
    """Classify the displacement ``x1 - x0`` by the sign of its quadratic form.

    A displacement is lightlike when ``|g(d, d)| <= tol * sum(d_i**2)``; the
    relative tolerance absorbs the cancellation between time and space parts.
    """
    d = as_four_vector(x1, "x1") - as_four_vector(x0, "x0")
    q = float(minkowski_norm2(d))
    scale = float(np.sum(d * d))
    if abs(q) <= tol * scale:
        return IntervalKind.LIGHTLIKE
    return IntervalKind.TIMELIKE if q > 0 else IntervalKind.SPACELIKE


def is_lorentz(matrix, rtol=1e-12):
    """True when ``matrix.T @ g @ matrix == g`` within ``rtol`` of the largest entry."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (4, 4) or not np.all(np.isfinite(m)):
        return False
    defect = np.max(np.abs(m.T @ METRIC @ m - METRIC))
    return bool(defect <= rtol * max(1.0, float(np.max(np.abs(m))) ** 2))


@dataclass(frozen=True)
class LorentzTransform:
    """Linear map ``X^r = matrix[r, i] x^i`` preserving the Minkowski form.

    The constructor rejects matrices failing :func:`is_lorentz`.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if not is_lorentz(m):
            raise DomainError("matrix does not preserve the Minkowski metric")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(4))

    def __matmul__(self, other):
        if not isinstance(other, LorentzTransform):
            return NotImplemented
        return LorentzTransform(self.matrix @ other.matrix)

    def inverse(self):
        # Lambda^{-1} = g Lambda^T g for metric-preserving maps
        return LorentzTransform(METRIC @ self.matrix.T @ METRIC)

    def metric_defect(self):
        return float(np.max(np.abs(self.matrix.T @ METRIC @ self.matrix - METRIC)))


def boost(beta):
    """Pure boost with velocity ``beta = v / c`` (3 components).

    The rest four-velocity ``(c, 0, 0, 0)`` maps to ``gamma * (c, c*beta)``.
    """
    b = np.asarray(beta, dtype=float).reshape(3)
    b2 = float(b @ b)
    if not np.all(np.isfinite(b)) or b2 >= 1.0:
        raise DomainError(f"|beta| must be < 1, got {np.sqrt(b2)!r}")
    gamma = 1.0 / np.sqrt(1.0 - b2)
    m = np.eye(4)
    m[0, 0] = gamma
    m[0, 1:] = gamma * b
    m[1:, 0] = gamma * b
    if b2 > 0:
        m[1:, 1:] += (gamma - 1.0) * np.outer(b, b) / b2
    return LorentzTransform(m)


def axis_permutation(perm):
    """Spatial axis permutation, e.g. ``(2, 1, 3)`` swaps x and y."""
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != [1, 2, 3]:
        raise ValueError("perm must be a permutation of (1, 2, 3)")
    m = np.zeros((4, 4))
    m[0, 0] = 1.0
    for new, old in enumerate(perm, start=1):
        m[new, old] = 1.0
    return LorentzTransform(m)


def transform_vector(L, v):
    """Apply ``V^r = L^r_i v^i`` over the trailing axis."""
    v = as_four_vector(v)
    return v @ L.matrix.T


def transform_tensor2(L, w):
    """Apply ``W^rs = L^r_i L^s_j w^ij`` to a contravariant rank-2 tensor."""
    w = as_tensor2(w)
    m = L.matrix
    return m @ w @ m.T
