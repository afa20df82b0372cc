"""Central finite differences for black-box fields on Minkowski space.

First derivatives and the diagonal of the Hessian use fourth-order 5-point
stencils; mixed second derivatives compose two 5-point first-derivative
stencils. Stencil points are evaluated in one batched call.
"""

from dataclasses import dataclass

import numpy as np

_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_OFFSETS = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])


@dataclass(frozen=True)
class FiniteDifference:
    """Stencil configuration.

    Parameters
    ----------
    step : float
        Step for first derivatives (units of the coordinates).
    step2 : float
        Step for second derivatives; larger than ``step`` because the
        rounding error of a second difference grows like ``eps / step**2``.
    """

    step: float = 1e-4
    step2: float = 1e-3

    def scaled(self, length):
        return FiniteDifference(self.step * length, self.step2 * length)

    def gradient(self, f, x):
        """Return ``out[i, ...] = d f / d x^i`` at the single point ``x``."""
        x = np.asarray(x, dtype=float)
        h = self.step
        n = x.shape[-1]
        pts = np.repeat(x[None, None, :], 5, axis=1).repeat(n, axis=0)
        for i in range(n):
            pts[i, :, i] += _OFFSETS * h
        vals = np.asarray(f(pts.reshape(-1, n)))
        vals = vals.reshape((n, 5) + vals.shape[1:])
        return np.tensordot(_D1, vals, axes=([0], [1])) / h

    def hessian(self, f, x):
        """Return ``out[i, j, ...] = d^2 f / d x^i d x^j`` at ``x``."""
        x = np.asarray(x, dtype=float)
        h = self.step2
        n = x.shape[-1]
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        diag_pts = np.repeat(x[None, None, :], 5, axis=1).repeat(n, axis=0)
        for i in range(n):
            diag_pts[i, :, i] += _OFFSETS * h
        mixed_pts = np.repeat(x[None, None, None, :], 5, axis=1).repeat(5, axis=2).repeat(len(pairs), axis=0)
        for p, (i, j) in enumerate(pairs):
            mixed_pts[p, :, :, i] += _OFFSETS[:, None] * h
            mixed_pts[p, :, :, j] += _OFFSETS[None, :] * h
        allpts = np.concatenate([diag_pts.reshape(-1, n), mixed_pts.reshape(-1, n)])
        vals = np.asarray(f(allpts))
        tail = vals.shape[1:]
        dvals = vals[: n * 5].reshape((n, 5) + tail)
        mvals = vals[n * 5:].reshape((len(pairs), 5, 5) + tail)
        out = np.empty((n, n) + tail)
        diag = np.tensordot(_D2, dvals, axes=([0], [1])) / h**2
        for i in range(n):
            out[i, i] = diag[i]
        for p, (i, j) in enumerate(pairs):
            m = np.tensordot(_D1, np.tensordot(_D1, mvals[p], axes=([0], [1])), axes=([0], [0])) / h**2
            out[i, j] = m
            out[j, i] = m
        return out

    def derivative(self, f, s):
        """Scalar-argument derivative ``d f / d s``."""
        h = self.step
        vals = np.asarray([f(s + o * h) for o in _OFFSETS])
        return np.tensordot(_D1, vals, axes=([0], [0])) / h


DEFAULT_FD = FiniteDifference()
