"""Gauss-Legendre rules, tensor products, and rules for corner singularities."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_legendre(q, a=0.0, b=1.0):
    """``q``-point Gauss-Legendre rule on [a, b]; exact to degree 2q-1."""
    if q < 1:
        raise ValueError("order must be >= 1")
    x, w = _leggauss(int(q))
    return a + (b - a) * x, (b - a) * w


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (m, d)
    weights: np.ndarray  # (m,)
    order: int = 0

    def integrate(self, f):
        return float(np.dot(self.weights, f(self.points)))

    def __add__(self, other):
        return QuadratureRule(np.vstack([self.points, other.points]),
                              np.concatenate([self.weights, other.weights]),
                              max(self.order, other.order))


def tensor_rule(rules_1d, order=0):
    """Tensor product of 1D ``(points, weights)`` pairs."""
    pts = np.stack(np.meshgrid(*[r[0] for r in rules_1d], indexing="ij"), axis=-1)
    w = rules_1d[0][1]
    for r in rules_1d[1:]:
        w = np.multiply.outer(w, r[1])
    return QuadratureRule(pts.reshape(-1, len(rules_1d)), np.asarray(w).ravel(), order)


def composite_rule(cells, q):
    """Gauss rule on each ``(a, b)`` cell; returns points, weights, cell index."""
    x, w = _leggauss(int(q))
    cells = np.asarray(cells, dtype=float).reshape(-1, 2)
    h = cells[:, 1] - cells[:, 0]
    pts = (cells[:, :1] + h[:, None] * x).ravel()
    wts = (h[:, None] * w).ravel()
    owner = np.repeat(np.arange(cells.shape[0]), q)
    return pts, wts, owner


def graded_intervals(a, b, toward, levels):
    """Split [a, b] into ``levels`` dyadic cells shrinking toward endpoint ``toward``."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    s = np.concatenate([[0.0], 0.5 ** np.arange(levels - 1, -1, -1)])
    if np.isclose(toward, a):
        nodes = a + (b - a) * s
    elif np.isclose(toward, b):
        nodes = b - (b - a) * s[::-1]
    else:
        raise ValueError("grading target must be an endpoint")
    return np.column_stack([nodes[:-1], nodes[1:]])


def duffy_corner_rule(lo, hi, corner, q):
    """Rule on the box [lo, hi] that is accurate for integrands ~ 1/|x - corner|.

    The box is split into d pyramids with apex at the corner; each pyramid is
    the image of the unit cube under a collapsing map whose Jacobian vanishes
    to order d-1 at the apex, cancelling the singularity.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corner = np.asarray(corner, float)
    d = lo.size
    flip = ~np.isclose(corner, lo)
    if np.any(flip & ~np.isclose(corner, hi)):
        raise ValueError("singular point must be a corner of the box")
    x, w = _leggauss(int(q))
    if d == 1:
        pts, wts = x[:, None], w
    else:
        grid = np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1).reshape(-1, d)
        gw = np.ones(1)
        for _ in range(d):
            gw = np.multiply.outer(gw, w).ravel()
        u = grid[:, 0]
        rest = grid[:, 1:] * u[:, None]
        jac = u ** (d - 1)
        pts_list, w_list = [], []
        for lead in range(d):
            p = np.empty_like(grid)
            p[:, lead] = u
            others = [a for a in range(d) if a != lead]
            p[:, others] = rest
            pts_list.append(p)
            w_list.append(gw * jac)
        pts, wts = np.vstack(pts_list), np.concatenate(w_list)
    # unit cube with singular corner at the origin -> physical box
    pts = np.where(flip, 1.0 - pts, pts)
    ext = hi - lo
    return QuadratureRule(lo + pts * ext, wts * np.prod(ext), q)


def volume_quadrature(lo, hi, order, singular_corner=None, levels=8):
    """Tensor Gauss rule on an axis-aligned element.

    With ``singular_corner`` the element is graded dyadically toward that
    corner (``levels`` cells per direction); the innermost corner cell uses
    :func:`duffy_corner_rule`, every other sub-box plain tensor Gauss.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if singular_corner is None:
        return tensor_rule([gauss_legendre(order, a, b) for a, b in zip(lo, hi)], order)
    corner = np.asarray(singular_corner, float)
    cells = [graded_intervals(a, b, c, levels) for a, b, c in zip(lo, hi, corner)]
    pts, wts = [], []
    for combo in itertools.product(*[range(len(c)) for c in cells]):
        boxes = [cells[a][i] for a, i in enumerate(combo)]
        blo = np.array([bx[0] for bx in boxes])
        bhi = np.array([bx[1] for bx in boxes])
        touches = np.all(np.isclose(blo, corner) | np.isclose(bhi, corner))
        if touches:
            r = duffy_corner_rule(blo, bhi, corner, order)
        else:
            r = tensor_rule([gauss_legendre(order, a, b) for a, b in zip(blo, bhi)])
        pts.append(r.points)
        wts.append(r.weights)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), order)
