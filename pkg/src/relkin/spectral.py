"""Eigenfunction expansion of the Kolmogorov operators on periodic grids.

The backward operator ``L0 = w^ij d_i d_j + v^i d_i`` and the forward operator
``L = d_i d_j (w^ij .) - d_i (v^i .)`` are discretized with second-order
central differences on a 1D or 2D periodic box. With the stencils used here
``L`` is exactly ``L0.T`` even for variable coefficients.

Eigenvalues follow the sign convention ``L0 X0_n = -lam_n X0_n``, so the
transition density reads ``sum_n X_n(x) X0_n(x0) exp(-lam_n (g - g0))``.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DefectiveSpectrumError, DomainError, InconsistentFieldWarning, PecletError
from .fields import check_field_consistency
from .gauge import GaugeFunction, identity_gauge

PECLET_LIMIT = 2.0
PAIRING_TOL = 1e-6


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid on ``[0, L_1) x ... x [0, L_d)``, ``d`` in {1, 2}."""

    lengths: tuple
    n_points: tuple

    def __post_init__(self):
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        n_points = tuple(int(n) for n in np.atleast_1d(self.n_points))
        if len(lengths) != len(n_points) or len(lengths) not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2 with one length and point count per axis")
        if any(n < 8 for n in n_points):
            raise ValueError("periodic grids need at least 8 points per axis")
        if any(not (L > 0 and np.isfinite(L)) for L in lengths):
            raise ValueError("grid lengths must be positive")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "n_points", n_points)

    @property
    def dim(self):
        return len(self.n_points)

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.lengths, self.n_points))

    @property
    def size(self):
        return int(np.prod(self.n_points))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def axes(self):
        return [np.arange(n) * h for n, h in zip(self.n_points, self.spacing)]

    def points(self):
        """Grid points of shape ``(size, d)`` in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def index_of(self, x, atol=1e-9):
        """Flat index of the grid point at ``x`` (coordinates are wrapped into the box)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for xi, L, n, h in zip(x, self.lengths, self.n_points, self.spacing):
            t = (xi % L) / h
            k = int(np.rint(t))
            if abs(t - k) > atol / h * max(1.0, L):
                raise ValueError(f"{xi} is not a grid coordinate")
            idx.append(k % n)
        return int(np.ravel_multi_index(tuple(idx), self.n_points))

    def to_config(self):
        return {"lengths": list(self.lengths), "n_points": list(self.n_points)}


Coefficient = Union[float, np.ndarray, Callable]


def _evaluate(coef, pts, shape):
    if callable(coef):
        out = np.asarray(coef(pts), dtype=float)
    else:
        out = np.asarray(coef, dtype=float)
    return np.broadcast_to(out.reshape(out.shape if out.ndim > len(shape) else shape), (len(pts),) + shape).copy()


def restrict_spec(spec, axes: Sequence[int], base_point=(0.0, 0.0, 0.0, 0.0)):
    """Coefficient callables of a ``ProcessSpec`` along the chosen coordinate axes.

    Grid coordinate ``j`` is inserted into spacetime coordinate ``axes[j]`` of
    ``base_point``; the other coordinates stay fixed.
    """
    axes = list(axes)
    base = np.asarray(base_point, dtype=float)

    def lift(pts):
        X = np.broadcast_to(base, (len(pts), 4)).copy()
        X[:, axes] = pts
        return X

    def w(pts):
        return spec.diffusion(lift(pts))[:, axes][:, :, axes]

    def v(pts):
        return spec.forward_drift(lift(pts))[:, axes]

    return w, v


def _difference_matrices(grid):
    """Periodic central first and second difference matrices per axis (CSR)."""
    d1, d2 = [], []
    for ax, (n, h) in enumerate(zip(grid.n_points, grid.spacing)):
        one = sp.diags([-1.0, 1.0, -1.0, 1.0], [-1, 1, n - 1, -(n - 1)], shape=(n, n)) / (2.0 * h)
        two = sp.diags([1.0, -2.0, 1.0, 1.0, 1.0], [-1, 0, 1, n - 1, -(n - 1)], shape=(n, n)) / h**2
        mats = []
        for m in (one, two):
            parts = [sp.identity(k, format="csr") for k in grid.n_points]
            parts[ax] = m
            full = parts[0]
            for p in parts[1:]:
                full = sp.kron(full, p)
            mats.append(sp.csr_matrix(full))
        d1.append(mats[0])
        d2.append(mats[1])
    return d1, d2


def _coefficients(w, v, grid, check=True):
    pts = grid.points()
    d = grid.dim
    W = _evaluate(w, pts, (d, d))
    V = _evaluate(v, pts, (d,))
    if check:
        if np.max(np.abs(W - np.swapaxes(W, 1, 2))) > 1e-12 * max(1.0, np.max(np.abs(W))):
            raise DomainError("restricted diffusion tensor is not symmetric")
        if np.any(np.linalg.eigvalsh(W) <= 0):
            raise DomainError("restricted diffusion tensor is not positive definite on the grid")
        h = np.asarray(grid.spacing)
        peclet = np.abs(V) * h / np.diagonal(W, axis1=1, axis2=2)
        if np.max(peclet) > PECLET_LIMIT:
            raise PecletError(f"grid Peclet number {np.max(peclet):.3g} exceeds {PECLET_LIMIT}; refine the grid")
    return W, V


def assemble_backward(w: Coefficient, v: Coefficient, grid: PeriodicGrid):
    """Sparse backward generator ``L0`` (nondivergence form)."""
    W, V = _coefficients(w, v, grid)
    d1, d2 = _difference_matrices(grid)
    L0 = sp.csr_matrix((grid.size, grid.size))
    for i in range(grid.dim):
        L0 = L0 + sp.diags(W[:, i, i]) @ d2[i] + sp.diags(V[:, i]) @ d1[i]
        for j in range(i + 1, grid.dim):
            L0 = L0 + sp.diags(2.0 * W[:, i, j]) @ (d1[i] @ d1[j])
    return sp.csr_matrix(L0)


def assemble_forward(w: Coefficient, v: Coefficient, grid: PeriodicGrid):
    """Sparse forward (Fokker-Planck) generator ``L`` in divergence form."""
    W, V = _coefficients(w, v, grid)
    d1, d2 = _difference_matrices(grid)
    L = sp.csr_matrix((grid.size, grid.size))
    for i in range(grid.dim):
        L = L + d2[i] @ sp.diags(W[:, i, i]) - d1[i] @ sp.diags(V[:, i])
        for j in range(i + 1, grid.dim):
            L = L + (d1[i] @ d1[j]) @ sp.diags(2.0 * W[:, i, j])
    return sp.csr_matrix(L)


@dataclass
class SpectralExpansion:
    """Biorthonormal eigenpairs of a discretized generator pair.

    Attributes
    ----------
    eigenvalues : complex array (n,)
        Sorted by real part, then imaginary part.
    right : complex array (size, n)
        Forward eigenfunctions ``X_n`` (columns).
    left : complex array (size, n)
        Backward eigenfunctions ``X0_n`` (columns), ``X0_0 = 1``.
    partner : int array (n,)
        Index of the conjugate partner, ``-1`` for real eigenvalues.
    clusters : list of int arrays
        Groups of numerically equal eigenvalues.
    """

    grid: PeriodicGrid
    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    partner: np.ndarray
    clusters: list
    adjoint_mismatch: float
    report: dict = field(default_factory=dict)

    @property
    def n_modes(self):
        return len(self.eigenvalues)

    def biorthonormality_matrix(self):
        return self.right.T @ self.left * self.grid.cell_volume

    def biorthonormality_error(self):
        B = self.biorthonormality_matrix()
        return float(np.max(np.abs(B - np.eye(len(B)))))

    def stationary_density(self):
        return self.right[:, 0].real.copy()

    def conjugate_pairs(self):
        """Records ``(i, j)`` with ``i < j`` and ``lam_j = conj(lam_i)``."""
        return [(int(i), int(j)) for i, j in enumerate(self.partner) if j > i]

    def mode_selection(self, n_modes=None):
        """First ``n_modes`` indices, extended to whole clusters and conjugate partners."""
        if n_modes is None or n_modes >= self.n_modes:
            return np.arange(self.n_modes)
        if n_modes < 1:
            raise ValueError("n_modes must be positive")
        keep = np.zeros(self.n_modes, dtype=bool)
        keep[:n_modes] = True
        changed = True
        while changed:
            changed = False
            for c in self.clusters:
                if keep[c].any() and not keep[c].all():
                    keep[c] = True
                    changed = True
            for i in np.flatnonzero(keep):
                j = self.partner[i]
                if j >= 0 and not keep[j]:
                    keep[j] = True
                    changed = True
        return np.flatnonzero(keep)

    def transition_matrix(self, dg, n_modes=None):
        """Complex density matrix ``P[x0, x]`` after gauge difference ``dg``."""
        if dg < 0:
            raise DomainError("needs g(s) >= g(s0)")
        sel = self.mode_selection(n_modes)
        decay = np.exp(-self.eigenvalues[sel] * dg)
        return (self.left[:, sel] * decay) @ self.right[:, sel].T


def _sort_order(lam, scale):
    re = np.round(lam.real / scale, 9)
    im = np.round(lam.imag / scale, 9)
    return np.lexsort((im, re))


def _clusters(lam, tol):
    """Group consecutive (sorted) eigenvalues closer than ``tol``."""
    groups, current = [], [0]
    for i in range(1, len(lam)):
        if np.min(np.abs(lam[current] - lam[i])) <= tol:
            current.append(i)
        else:
            groups.append(np.array(current))
            current = [i]
    groups.append(np.array(current))
    # merge non-adjacent members (sorting by real part can interleave equal values)
    merged = []
    for g in groups:
        for m in merged:
            if np.min(np.abs(lam[m][:, None] - lam[g][None, :])) <= tol:
                m.extend(g.tolist())
                break
        else:
            merged.append(g.tolist())
    return [np.array(sorted(m)) for m in merged]


def eigensolve(L0, L, grid: PeriodicGrid, pairing_tol=PAIRING_TOL):
    """Biorthonormal eigen-decomposition of the generator pair.

    Right eigenvectors of ``L0`` give the backward functions ``X0_n``; the
    conjugated left eigenvectors of ``L0`` are eigenvectors of ``L0.T = L`` and
    give ``X_n``. The spectrum of ``L`` is computed separately and matched.
    """
    A0 = L0.toarray() if sp.issparse(L0) else np.asarray(L0, dtype=float)
    A = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=float)
    vals, vl, vr = scipy.linalg.eig(A0, left=True, right=True)
    lam = -vals
    mu = -scipy.linalg.eigvals(A)
    scale = max(1.0, float(np.max(np.abs(lam))))
    rows, cols = linear_sum_assignment(np.abs(lam[:, None] - mu[None, :]))
    adjoint_mismatch = float(np.max(np.abs(lam[rows] - mu[cols])) / scale)

    order = _sort_order(lam, scale)
    lam = lam[order]
    X0 = vr[:, order]
    X = np.conj(vl[:, order])
    dV = grid.cell_volume
    tol = 1e-9 * scale
    clusters = _clusters(lam, tol)

    report = {"min_overlap": 1.0, "max_cluster": max(len(c) for c in clusters)}
    for c in clusters:
        X0[:, c] /= np.linalg.norm(X0[:, c], axis=0)
        X[:, c] /= np.linalg.norm(X[:, c], axis=0)
        B = X[:, c].T @ X0[:, c]
        smin = float(np.linalg.svd(B, compute_uv=False).min())
        report["min_overlap"] = min(report["min_overlap"], smin)
        if smin < pairing_tol:
            report["cluster"] = c.tolist()
            report["eigenvalues"] = lam[c].tolist()
            raise DefectiveSpectrumError(f"near-defective eigenvalue cluster (overlap {smin:.3g})", report)
        X[:, c] = np.linalg.solve(B, X[:, c].T).T / dV

    # conjugate partners share conjugated eigenfunctions
    partner = np.full(len(lam), -1)
    cluster_of = np.empty(len(lam), dtype=int)
    for ci, c in enumerate(clusters):
        cluster_of[c] = ci
    done = set()
    for ci, c in enumerate(clusters):
        if ci in done:
            continue
        lc = lam[c].mean()
        if abs(lc.imag) <= tol:
            done.add(ci)
            continue
        dist = [np.abs(lam[other].mean() - np.conj(lc)) if len(other) == len(c) else np.inf for other in clusters]
        cj = int(np.argmin(dist))
        if dist[cj] > max(pairing_tol * scale, 1e3 * tol) or cj == ci:
            report["unpaired"] = lam[c].tolist()
            raise DefectiveSpectrumError("complex eigenvalue without a conjugate partner", report)
        other = clusters[cj]
        X0[:, other] = np.conj(X0[:, c])
        X[:, other] = np.conj(X[:, c])
        lam[other] = np.conj(lam[c])
        partner[c] = other
        partner[other] = c
        done.update((ci, cj))

    # stationary mode: X0_0 = 1
    zero = int(np.argmin(np.abs(lam)))
    if len(clusters[cluster_of[zero]]) != 1:
        raise DefectiveSpectrumError("zero eigenvalue is not simple", report)
    a = np.mean(X0[:, zero])
    X0[:, zero] /= a
    X[:, zero] *= a
    if zero != 0:
        raise DefectiveSpectrumError("zero eigenvalue is not the lowest mode", report)

    return SpectralExpansion(grid, lam, X, X0, partner, clusters, adjoint_mismatch, report)


def time_factors(lam, gauge: Optional[GaugeFunction] = None, s=None, s0=None):
    """``(exp(-lam g(s)), exp(lam g(s0)))``; either entry is ``None`` when its parameter is."""
    gauge = gauge or identity_gauge()
    fwd = None if s is None else np.exp(-np.asarray(lam) * gauge(s))
    bwd = None if s0 is None else np.exp(np.asarray(lam) * gauge(s0))
    return fwd, bwd


def spectral_density(expansion: SpectralExpansion, x, s, x0, s0, gauge=None, n_modes=None, return_imag=False):
    """Truncated expansion of the transition density.

    ``x`` and ``x0`` are grid coordinates (length ``d``), or ``None`` for the
    whole grid. The imaginary residue is returned on request.
    """
    gauge = gauge or identity_gauge()
    dg = float(gauge(s) - gauge(s0))
    if dg < 0:
        raise DomainError("needs g(s) >= g(s0)")
    grid = expansion.grid
    sel = expansion.mode_selection(n_modes)
    decay = np.exp(-expansion.eigenvalues[sel] * dg)
    rows = slice(None) if x0 is None else grid.index_of(x0)
    cols = slice(None) if x is None else grid.index_of(x)
    vals = (expansion.left[rows][..., sel] * decay) @ expansion.right[cols][..., sel].T
    if return_imag:
        return vals.real, vals.imag
    return vals.real


def markov_factorization_check(expansion: SpectralExpansion, params, gauge=None, n_modes=None):
    """Max error of marginalizing the middle point of consecutive triples.

    For each ``(s_a, s_b, s_c)`` the grid sum
    ``sum_y P(z | y; b->c) P(y | x; a->b) dV`` is compared with ``P(z | x; a->c)``
    over all grid points ``x`` and ``z``.
    """
    gauge = gauge or identity_gauge()
    params = np.asarray(params, dtype=float)
    if len(params) < 2:
        raise ValueError("need at least two parameter values")
    g = np.asarray(gauge(params), dtype=float)
    if np.any(np.diff(g) < 0):
        raise ValueError("parameters must be ordered")
    if len(params) == 2:
        return 0.0
    dV = expansion.grid.cell_volume
    err = 0.0
    for a in range(len(params) - 2):
        P1 = expansion.transition_matrix(g[a + 1] - g[a], n_modes).real
        P2 = expansion.transition_matrix(g[a + 2] - g[a + 1], n_modes).real
        P12 = expansion.transition_matrix(g[a + 2] - g[a], n_modes).real
        err = max(err, float(np.max(np.abs(P1 @ P2 * dV - P12))))
    return err


def stationary_joint(expansion: SpectralExpansion, params, indices, gauge=None, n_modes=None):
    """Joint density of the stationary process at grid points ``indices`` and ``params``."""
    gauge = gauge or identity_gauge()
    g = np.asarray(gauge(np.asarray(params, dtype=float)), dtype=float)
    out = expansion.stationary_density()[indices[0]]
    for k in range(len(g) - 1):
        P = expansion.transition_matrix(g[k + 1] - g[k], n_modes).real
        out = out * P[indices[k], indices[k + 1]]
    return float(out)


def wrapped_gaussian(x, x0, dg, w, v, length, n_images=20):
    """Periodized 1D Gaussian with mean ``x0 + v dg`` and variance ``2 w dg``."""
    x = np.asarray(x, dtype=float)
    var = 2.0 * w * dg
    m = np.arange(-n_images, n_images + 1)
    d = x[..., None] - x0 - v * dg + m * length
    return np.sum(np.exp(-d * d / (2.0 * var)), axis=-1) / np.sqrt(2.0 * np.pi * var)


def fit_decay_rate(expansion: SpectralExpansion, times, n_modes=None, x0=None):
    """Fitted exponent of ``max_x |p(x, T) - stationary|`` over ``times``."""
    grid = expansion.grid
    x0 = np.zeros(grid.dim) if x0 is None else x0
    row = grid.index_of(x0)
    stat = expansion.stationary_density()
    dev = [np.max(np.abs(expansion.transition_matrix(T, n_modes)[row].real - stat)) for T in times]
    return float(-np.polyfit(np.asarray(times, dtype=float), np.log(dev), 1)[0])


def warn_if_inconsistent(potential, drift, points):
    """Emit :class:`InconsistentFieldWarning` when ``B != 0`` where ``v = 0``."""
    if potential is None:
        return True
    ok = check_field_consistency(potential, drift, points)
    if not ok:
        warnings.warn("field tensor is nonzero where the current drift v vanishes", InconsistentFieldWarning,
                      stacklevel=2)
    return ok


class KolmogorovSpectralModel(BaseEstimator):
    """Spectral transition-density model on a periodic box.

    Parameters
    ----------
    lengths, n_points : sequence
        Box size and points per axis (1 or 2 axes).
    w, v : array-like or callable
        Restricted diffusion tensor ``(d, d)`` and forward drift ``(d,)``,
        either constant or callables of grid points of shape ``(P, d)``.
    n_modes : int, optional
        Truncation for densities; whole clusters and conjugate pairs are kept.
    """

    def __init__(self, lengths=(2 * np.pi,), n_points=(128,), w=1.0, v=0.0, n_modes=None):
        self.lengths = lengths
        self.n_points = n_points
        self.w = w
        self.v = v
        self.n_modes = n_modes

    def fit(self, X=None, y=None):
        self.grid_ = PeriodicGrid(tuple(np.atleast_1d(self.lengths)), tuple(np.atleast_1d(self.n_points)))
        d = self.grid_.dim
        w = self.w if callable(self.w) else np.broadcast_to(np.asarray(self.w, dtype=float), (d, d))
        v = self.v if callable(self.v) else np.broadcast_to(np.asarray(self.v, dtype=float), (d,))
        self.backward_ = assemble_backward(w, v, self.grid_)
        self.forward_ = assemble_forward(w, v, self.grid_)
        self.expansion_ = eigensolve(self.backward_, self.forward_, self.grid_)
        self.eigenvalues_ = self.expansion_.eigenvalues
        return self

    def density(self, dg, x0=None, x=None):
        check_is_fitted(self, "expansion_")
        return spectral_density(self.expansion_, x, dg, x0 if x0 is not None else np.zeros(self.grid_.dim), 0.0,
                                n_modes=self.n_modes)

    def predict(self, dg, x0=None):
        """Density field over the whole grid after gauge difference ``dg``."""
        return self.density(dg, x0)
