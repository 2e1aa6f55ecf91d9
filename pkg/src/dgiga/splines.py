"""Univariate and tensor-product B-spline spaces on the parametric cube.

Basis indices are 0-based throughout. Coefficients of a tensor space are
stored as a flat vector in C order of the multi-index (last direction
fastest), i.e. ``coeffs.reshape(space.shape)`` recovers the tensor layout.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.linalg

BREAK_TOL = 1e-14


class KnotVector:
    """Open knot vector on [0, 1] with simple interior knots.

    Parameters
    ----------
    knots : array_like
        Full knot sequence, first and last knots repeated ``p + 1`` times.
    p : int
        Spline degree.
    """

    def __init__(self, knots, p):
        knots = np.asarray(knots, dtype=float)
        p = int(p)
        if p < 0:
            raise ValueError("degree must be non-negative")
        if knots.ndim != 1 or np.any(np.diff(knots) < 0):
            raise ValueError("knots must be a non-decreasing 1D sequence")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("knots must span [0, 1]")
        n = knots.size - p - 1
        if n < p + 1:
            raise ValueError(f"need at least p+1={p + 1} basis functions, got {n}")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-(p + 1):] != 1.0):
            raise ValueError("knot vector is not open")
        inner = knots[p + 1: n]
        if inner.size and (np.any(np.diff(inner) <= BREAK_TOL) or inner[0] <= 0.0
                           or inner[-1] >= 1.0):
            raise ValueError("interior knots must be simple")
        self.knots = knots
        self.p = p
        self.n = n

    @classmethod
    def from_breakpoints(cls, breaks, p):
        breaks = np.asarray(breaks, dtype=float)
        knots = np.concatenate([np.zeros(p), breaks, np.ones(p)])
        return cls(knots, p)

    @classmethod
    def uniform(cls, p, n_elements):
        return cls.from_breakpoints(np.linspace(0.0, 1.0, int(n_elements) + 1), p)

    def __repr__(self):
        return f"KnotVector(p={self.p}, n={self.n}, elements={self.n_elements})"

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.p == other.p
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.p, self.knots.tobytes()))

    @cached_property
    def breakpoints(self):
        """Distinct knot values (element boundaries)."""
        t = self.knots
        keep = np.concatenate([[True], np.diff(t) > BREAK_TOL])
        return t[keep]

    @property
    def n_elements(self):
        return self.breakpoints.size - 1

    @cached_property
    def greville(self):
        """Greville abscissae; element midpoints stand in for p = 0."""
        t, p = self.knots, self.p
        if p == 0:
            return 0.5 * (t[:-1] + t[1:])
        c = np.cumsum(np.concatenate([[0.0], t]))
        return (c[p + 1: p + 1 + self.n] - c[1: 1 + self.n]) / p

    def find_span(self, x):
        """Index ``mu`` with ``t[mu] <= x < t[mu+1]``; x = 1 maps to the last element."""
        x = np.asarray(x, dtype=float)
        mu = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(mu, self.p, self.n - 1)

    def refine(self, factor=2):
        """Uniformly subdivide every element into ``factor`` pieces."""
        b = self.breakpoints
        fine = [np.linspace(b[e], b[e + 1], factor + 1)[:-1] for e in range(b.size - 1)]
        return KnotVector.from_breakpoints(np.concatenate(fine + [[1.0]]), self.p)


def eval_univariate(kv, i, x, deriv_order=0):
    """Evaluate ``B_i`` (0-based) or its derivative at a scalar ``x`` by the
    Cox-de Boor recursion, dividing by zero as zero.

    This is the reference scalar path; use :func:`basis_funs` for arrays.
    """
    if not 0 <= i < kv.n:
        raise IndexError(f"basis index {i} out of range [0, {kv.n})")
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if deriv_order not in (0, 1):
        raise ValueError("deriv_order must be 0 or 1")
    t, p = kv.knots, kv.p
    # at x = 1 the half-open indicator is replaced by the last element's closure
    last = kv.n - 1

    def b(j, q):
        if q == 0:
            if x == 1.0:
                return 1.0 if j == last else 0.0
            return 1.0 if t[j] <= x < t[j + 1] else 0.0
        val = 0.0
        den = t[j + q] - t[j]
        if den > 0.0:
            val += (x - t[j]) / den * b(j, q - 1)
        den = t[j + q + 1] - t[j + 1]
        if den > 0.0:
            val += (t[j + q + 1] - x) / den * b(j + 1, q - 1)
        return val

    if deriv_order == 0:
        return b(i, p)
    if p == 0:
        return 0.0
    val = 0.0
    den = t[i + p] - t[i]
    if den > 0.0:
        val += p / den * b(i, p - 1)
    den = t[i + p + 1] - t[i + 1]
    if den > 0.0:
        val -= p / den * b(i + 1, p - 1)
    return val


def _triangle(t, p, x, mu):
    # nonzero basis values of degrees 0..p at x, rows ordered by degree
    m = x.size
    table = [np.ones((m, 1))]
    for q in range(1, p + 1):
        prev = table[-1]
        cur = np.zeros((m, q + 1))
        for r in range(q):
            # prev[:, r] feeds cur[:, r] and cur[:, r + 1]
            j = mu - q + 1 + r
            span = t[j + q] - t[j]
            w = np.divide(x - t[j], span, out=np.zeros(m), where=span > 0)
            cur[:, r + 1] += w * prev[:, r]
            cur[:, r] += np.where(span > 0, 1.0 - w, 0.0) * prev[:, r]
        table.append(cur)
    return table


def basis_funs(kv, x, deriv=0):
    """Values (or first derivatives) of the ``p+1`` nonzero basis functions.

    Returns
    -------
    first : ndarray of int
        Index of the first nonzero function at each point.
    vals : ndarray, shape (m, p+1)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
        raise ValueError("evaluation points outside [0, 1]")
    x = np.clip(x, 0.0, 1.0)
    t, p = kv.knots, kv.p
    mu = kv.find_span(x)
    table = _triangle(t, p, x, mu)
    first = mu - p
    if deriv == 0:
        return first, table[p]
    if deriv != 1:
        raise ValueError("only first derivatives are supported")
    if p == 0:
        return first, np.zeros_like(table[0])
    low = table[p - 1]
    m = x.size
    d = np.zeros((m, p + 1))
    for r in range(p + 1):
        i = mu - p + r
        if r > 0:
            den = t[i + p] - t[i]
            d[:, r] += np.divide(p * low[:, r - 1], den, out=np.zeros(m), where=den > 0)
        if r < p:
            den = t[i + p + 1] - t[i + 1]
            d[:, r] -= np.divide(p * low[:, r], den, out=np.zeros(m), where=den > 0)
    return first, d


def collocation_matrix(kv, x, deriv=0):
    """Dense matrix ``C[k, i] = B_i^(deriv)(x_k)``."""
    first, vals = basis_funs(kv, x, deriv)
    m = vals.shape[0]
    out = np.zeros((m, kv.n))
    cols = first[:, None] + np.arange(kv.p + 1)
    np.put_along_axis(out, cols, vals, axis=1)
    return out


class TensorSplineSpace:
    """Tensor product of univariate spline spaces on ``[0, 1]^d``."""

    def __init__(self, kvs):
        self.kvs = tuple(kvs)
        if not self.kvs:
            raise ValueError("need at least one direction")

    @classmethod
    def uniform(cls, degrees, elements):
        return cls(KnotVector.uniform(p, n) for p, n in zip(degrees, elements))

    def __repr__(self):
        return f"TensorSplineSpace(degrees={self.degrees}, elements={self.elements})"

    @property
    def dim(self):
        return len(self.kvs)

    @property
    def shape(self):
        return tuple(kv.n for kv in self.kvs)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def degrees(self):
        return tuple(kv.p for kv in self.kvs)

    @property
    def elements(self):
        return tuple(kv.n_elements for kv in self.kvs)

    @property
    def breakpoints(self):
        return [kv.breakpoints for kv in self.kvs]

    def refine(self, factors):
        if np.isscalar(factors):
            factors = [factors] * self.dim
        return TensorSplineSpace(kv.refine(int(f)) for kv, f in zip(self.kvs, factors))


def _apply_along(tensor, mats):
    # contract axis a of tensor with mats[a] (shape (m_a, n_a)); None leaves the axis
    out = tensor
    for a, mat in enumerate(mats):
        if mat is None:
            continue
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [a])), 0, a)
    return out


def eval_tensor(space, coeffs, x, deriv=None):
    """Evaluate ``sum_i c_i prod_a B_{i_a}(x_a)`` at points ``x`` of shape (m, d).

    ``deriv`` is a multi-index with total order at most one.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size != space.size:
        raise ValueError(f"coefficient length {coeffs.size} != space dimension {space.size}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != space.dim:
        raise ValueError("point dimension mismatch")
    deriv = (0,) * space.dim if deriv is None else tuple(deriv)
    if sum(deriv) > 1 or len(deriv) != space.dim:
        raise ValueError("deriv must be a multi-index of order <= 1")
    c = coeffs.reshape(space.shape)
    m = x.shape[0]
    # gather the (p+1)^d local coefficients per point
    firsts, vals = [], []
    for a, kv in enumerate(space.kvs):
        f, v = basis_funs(kv, x[:, a], deriv[a])
        firsts.append(f)
        vals.append(v)
    result = np.zeros(m)
    loc = [np.arange(kv.p + 1) for kv in space.kvs]
    grids = np.meshgrid(*loc, indexing="ij")
    for offs in zip(*(g.ravel() for g in grids)):
        idx = tuple(firsts[a] + offs[a] for a in range(space.dim))
        w = np.ones(m)
        for a in range(space.dim):
            w = w * vals[a][:, offs[a]]
        result += w * c[idx]
    return result


def eval_grid(space, coeffs, grids, deriv=None):
    """Evaluate on the tensor grid ``grids[0] x ... x grids[d-1]``."""
    deriv = (0,) * space.dim if deriv is None else tuple(deriv)
    mats = [collocation_matrix(kv, g, d) for kv, g, d in zip(space.kvs, grids, deriv)]
    return _apply_along(np.asarray(coeffs, dtype=float).reshape(space.shape), mats)


class _Interpolator1D:
    def __init__(self, kv):
        self.kv = kv
        self.lu = scipy.linalg.lu_factor(collocation_matrix(kv, kv.greville))

    def solve(self, rhs, axis):
        moved = np.moveaxis(rhs, axis, 0)
        shp = moved.shape
        sol = scipy.linalg.lu_solve(self.lu, moved.reshape(shp[0], -1))
        return np.moveaxis(sol.reshape(shp), 0, axis)


def project(space, f):
    """Quasi-interpolant by interpolation at the Greville abscissae.

    ``f`` takes an array of shape (m, d) and returns m values. Applied
    direction by direction, so the tensor projection is the product of the
    univariate ones. Returns the flat coefficient vector.
    """
    nodes = [kv.greville for kv in space.kvs]
    pts = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1).reshape(-1, space.dim)
    vals = np.asarray(f(pts), dtype=float).reshape(space.shape)
    return interpolate_values(space, vals)


def interpolate_values(space, vals):
    """Coefficients interpolating tensor-grid values given at the Greville nodes."""
    c = np.asarray(vals, dtype=float).reshape(space.shape)
    for a, kv in enumerate(space.kvs):
        c = _Interpolator1D(kv).solve(c, a)
    return c.ravel()
