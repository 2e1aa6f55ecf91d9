"""Box patch layouts, affine patch maps, per-patch meshes and quadrature grids."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .quadrature import (QuadratureRule, _leggauss, gauss_legendre, tensor_rule,
                         volume_quadrature)
from .splines import TensorSplineSpace

log = logging.getLogger(__name__)

MERGE_TOL = 1e-12
CM_WARN = 20.0


class LayoutError(ValueError):
    """Invalid patch decomposition."""


def _fmt_box(lo, hi):
    return "[" + ", ".join(f"{a:g}:{b:g}" for a, b in zip(lo, hi)) + "]"


@dataclass(frozen=True)
class Patch:
    """Axis-aligned box ``Omega_i`` with map ``G(xi) = lo + (hi - lo) * xi``."""

    index: int
    lo: np.ndarray
    hi: np.ndarray

    @property
    def dim(self):
        return self.lo.size

    @property
    def scale(self):
        """Diagonal of the map matrix."""
        return self.hi - self.lo

    @property
    def jacobian(self):
        return float(np.prod(self.scale))

    @property
    def volume(self):
        return self.jacobian

    def contains(self, x, strict=False, tol=MERGE_TOL):
        x = np.asarray(x, float)
        if strict:
            return bool(np.all(x > self.lo + tol) and np.all(x < self.hi - tol))
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def __str__(self):
        return f"patch {self.index} {_fmt_box(self.lo, self.hi)}"


@dataclass(frozen=True)
class InterfaceFace:
    """Interior face shared by patches ``i`` (below) and ``j`` (above) along ``axis``.

    The normal ``n+`` points out of patch ``i``, i.e. along ``+e_axis``.
    """

    i: int
    j: int
    axis: int
    position: float
    lo: np.ndarray   # tangential extents; entry ``axis`` equals position
    hi: np.ndarray

    @property
    def normal(self):
        n = np.zeros(self.lo.size)
        n[self.axis] = 1.0
        return n

    @property
    def tangential(self):
        return [a for a in range(self.lo.size) if a != self.axis]

    @property
    def measure(self):
        t = self.tangential
        return float(np.prod(self.hi[t] - self.lo[t])) if t else 1.0


@dataclass(frozen=True)
class ExteriorFace:
    patch: int
    axis: int
    side: int   # 0 = low end, 1 = high end


@dataclass
class PatchLayout:
    dim: int
    lo: np.ndarray
    hi: np.ndarray
    patches: list
    faces: list
    exterior: list
    nuclei: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_patches(self):
        return len(self.patches)

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    def pushforward(self, i, xi):
        xi = np.asarray(xi, float)
        if np.any(xi < -MERGE_TOL) or np.any(xi > 1 + MERGE_TOL):
            raise ValueError("parametric point outside [0, 1]^d")
        p = self.patches[i]
        return p.lo + p.scale * xi

    def pullback(self, i, x):
        x = np.asarray(x, float)
        p = self.patches[i]
        if not all(p.contains(pt) for pt in np.atleast_2d(x)):
            raise ValueError(f"point outside {p}")
        return (x - p.lo) / p.scale

    def locate(self, x):
        """Index of a patch containing each point (first match on shared faces)."""
        x = np.atleast_2d(np.asarray(x, float))
        out = np.full(x.shape[0], -1, dtype=int)
        for p in self.patches:
            inside = np.all((x >= p.lo - MERGE_TOL) & (x <= p.hi + MERGE_TOL), axis=1)
            out[(out < 0) & inside] = p.index
        if np.any(out < 0):
            raise ValueError("point outside the domain")
        return out

    def owner_of(self, point):
        for p in self.patches:
            if p.contains(point, strict=True):
                return p.index
        raise LayoutError(f"nucleus at {tuple(point)} is not interior to any patch")

    def faces_of(self, i):
        return [f for f in self.faces if i in (f.i, f.j)]


def build_layout(domain, boxes, nuclei=None, tol=MERGE_TOL):
    """Validate a box decomposition and enumerate its interfaces.

    Parameters
    ----------
    domain : (lo, hi) pair of length-d sequences
    boxes : sequence of (lo, hi) pairs
    nuclei : optional (M, d) positions; each must be interior to a patch
    """
    dlo, dhi = (np.asarray(v, float) for v in domain)
    d = dlo.size
    if dhi.size != d or np.any(dhi <= dlo):
        raise LayoutError("degenerate domain")
    patches = []
    for k, (blo, bhi) in enumerate(boxes):
        blo, bhi = np.asarray(blo, float), np.asarray(bhi, float)
        if blo.size != d or bhi.size != d:
            raise LayoutError(f"box {k} has wrong dimension")
        if np.any(bhi <= blo):
            raise LayoutError(f"box {k} {_fmt_box(blo, bhi)} is degenerate")
        if np.any(blo < dlo - tol) or np.any(bhi > dhi + tol):
            raise LayoutError(f"box {k} {_fmt_box(blo, bhi)} leaves the domain")
        patches.append(Patch(k, blo, bhi))
    for a, b in itertools.combinations(patches, 2):
        ext = np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo)
        if np.all(ext > tol):
            raise LayoutError(f"boxes {a.index} {_fmt_box(a.lo, a.hi)} and "
                              f"{b.index} {_fmt_box(b.lo, b.hi)} overlap")
    covered = sum(p.volume for p in patches)
    total = float(np.prod(dhi - dlo))
    if abs(covered - total) > 1e-10 * total:
        raise LayoutError(f"patches cover volume {covered:g} of {total:g}: gap in layout")

    faces = []
    for a, b in itertools.permutations(patches, 2):
        for ax in range(d):
            if abs(a.hi[ax] - b.lo[ax]) > tol:
                continue
            t = [k for k in range(d) if k != ax]
            flo = np.maximum(a.lo, b.lo)
            fhi = np.minimum(a.hi, b.hi)
            if t and np.any(fhi[t] - flo[t] <= tol):
                continue
            flo[ax] = fhi[ax] = a.hi[ax]
            faces.append(InterfaceFace(a.index, b.index, ax, float(a.hi[ax]), flo, fhi))
    faces.sort(key=lambda f: (f.i, f.j, f.axis))

    exterior = []
    for p in patches:
        for ax in range(d):
            if abs(p.lo[ax] - dlo[ax]) <= tol:
                exterior.append(ExteriorFace(p.index, ax, 0))
            if abs(p.hi[ax] - dhi[ax]) <= tol:
                exterior.append(ExteriorFace(p.index, ax, 1))

    nuc = np.zeros((0, d)) if nuclei is None else np.asarray(nuclei, float).reshape(-1, d)
    layout = PatchLayout(d, dlo, dhi, patches, faces, exterior, nuc)
    for r in nuc:
        if np.any(r <= dlo) or np.any(r >= dhi):
            raise LayoutError(f"nucleus at {tuple(r)} outside the domain")
        layout.owner_of(r)
    return layout


@dataclass
class PatchMesh:
    """Spline space on one patch plus its physical mesh sizes."""

    patch: Patch
    space: TensorSplineSpace

    @cached_property
    def element_sizes(self):
        """Physical element edge lengths per direction."""
        return [np.diff(b) * s for b, s in zip(self.space.breakpoints, self.patch.scale)]

    @cached_property
    def h(self):
        """Largest element diameter."""
        return float(np.sqrt(sum(e.max() ** 2 for e in self.element_sizes)))

    @cached_property
    def h_min_element(self):
        return float(np.sqrt(sum(e.min() ** 2 for e in self.element_sizes)))

    @property
    def quasi_uniformity(self):
        """Smallest ``C_m`` with ``h_Q <= h <= C_m h_Q`` over all elements."""
        return self.h / self.h_min_element

    def physical_breakpoints(self, axis):
        p = self.patch
        return p.lo[axis] + p.scale[axis] * self.space.breakpoints[axis]


def build_meshes(layout, degrees, elements):
    """Uniform per-patch meshes; ``degrees``/``elements`` are per patch, per direction."""
    meshes = []
    for p, deg, ne in zip(layout.patches, degrees, elements):
        deg = np.broadcast_to(np.asarray(deg, int), (layout.dim,))
        ne = np.broadcast_to(np.asarray(ne, int), (layout.dim,))
        m = PatchMesh(p, TensorSplineSpace.uniform(deg, ne))
        if m.quasi_uniformity > CM_WARN:
            log.warning("patch %d quasi-uniformity constant %.1f exceeds %g",
                        p.index, m.quasi_uniformity, CM_WARN)
        meshes.append(m)
    check_nuclei_on_breakpoints(layout, meshes)
    return meshes


def check_nuclei_on_breakpoints(layout, meshes, tol=1e-10):
    """Nuclei must sit on element corners of the owning patch mesh."""
    for r in layout.nuclei:
        i = layout.owner_of(r)
        m = meshes[i]
        for ax in range(layout.dim):
            b = m.physical_breakpoints(ax)
            if np.min(np.abs(b - r[ax])) > tol * max(1.0, abs(r[ax])):
                raise LayoutError(f"nucleus at {tuple(r)} is not on a mesh corner of "
                                  f"patch {i} (direction {ax})")


def merged_breakpoints(*seqs, tol=MERGE_TOL):
    """Sorted union of breakpoint sequences, merging values closer than ``tol``."""
    allb = np.sort(np.concatenate([np.asarray(s, float) for s in seqs]))
    keep = np.concatenate([[True], np.diff(allb) > tol])
    return allb[keep]


def face_rules_1d(face, mesh_i, mesh_j, q):
    """Per tangential direction: physical Gauss points/weights on merged cells."""
    rules = []
    for ax in face.tangential:
        lo, hi = face.lo[ax], face.hi[ax]
        b = merged_breakpoints(mesh_i.physical_breakpoints(ax),
                               mesh_j.physical_breakpoints(ax))
        b = b[(b > lo + MERGE_TOL) & (b < hi - MERGE_TOL)]
        b = np.concatenate([[lo], b, [hi]])
        x, w = _leggauss(int(q))
        h = np.diff(b)
        rules.append(((b[:-1, None] + h[:, None] * x).ravel(), (h[:, None] * w).ravel(), b))
    return rules


def face_quadrature(face, meshes, orders):
    """Quadrature on ``F_ij`` as a union of tensor Gauss rules on merged cells.

    ``orders`` gives the requested points per direction for each side; the
    larger one is used on every merged cell.
    """
    if face.measure <= 0:
        raise LayoutError("degenerate face")
    q = int(max(orders))
    rules = face_rules_1d(face, meshes[face.i], meshes[face.j], q)
    d = face.lo.size
    if not rules:
        return QuadratureRule(face.lo.reshape(1, d).copy(), np.ones(1), q)
    tr = tensor_rule([(r[0], r[1]) for r in rules], q)
    pts = np.empty((tr.weights.size, d))
    pts[:, face.tangential] = tr.points
    pts[:, face.axis] = face.position
    return QuadratureRule(pts, tr.weights, q)


@dataclass
class PatchQuadrature:
    """Tensor composite rule on one patch plus singular corner corrections.

    ``points[a]``/``weights[a]`` are parametric 1D nodes and weights (weights
    sum to one) for direction ``a``; the rule is their tensor product.
    ``corrections`` lists ``(points, weights)`` in parametric coordinates that,
    added to the tensor rule, replace tensor Gauss by a Duffy rule on each
    cell with a nucleus at its corner. They are meant for singular integrands
    only.
    """

    points: list
    weights: list
    corrections: list

    @property
    def shape(self):
        return tuple(p.size for p in self.points)

    def tensor_weights(self, jacobian=1.0):
        w = self.weights[0]
        for v in self.weights[1:]:
            w = np.multiply.outer(w, v)
        return np.asarray(w) * jacobian


NEAR_RING = 2
NEAR_BOOST = 2
GRADE_ETA = 0.5
GRADE_DEPTH = 6


def _strip_distance(lo_a, hi_a, axis, patch, r):
    # distance from r to the slab [lo_a, hi_a] (direction axis) of the patch
    lo = patch.lo.copy()
    hi = patch.hi.copy()
    lo[axis], hi[axis] = lo_a, hi_a
    return float(np.linalg.norm(np.maximum(0.0, np.maximum(lo - r, r - hi))))


def graded_cells(patch, breaks, axis, nuclei, eta=GRADE_ETA, depth=GRADE_DEPTH):
    """Physical cells of one direction, bisected near nuclei.

    A cell is bisected while its length exceeds ``eta`` times the distance
    from the nuclei to the slab of the patch it spans (at most ``depth``
    times). Slabs containing a nucleus are left alone: their elements either
    touch the nucleus (handled by corner corrections) or are far from it.
    """
    out = []

    def split(a, b, level):
        if level < depth and len(nuclei):
            dist = min(_strip_distance(a, b, axis, patch, r) for r in nuclei)
            if dist > 0.0 and b - a > eta * dist:
                m = 0.5 * (a + b)
                split(a, m, level + 1)
                split(m, b, level + 1)
                return
        out.append((a, b))

    for a, b in zip(breaks[:-1], breaks[1:]):
        split(a, b, 0)
    return np.asarray(out)


def _cell_orders(cells, coords, q, ring, boost):
    # cells within `ring` cells of a nucleus coordinate get `boost` extra points
    orders = np.full(len(cells), int(q))
    for c in coords:
        hit = np.flatnonzero(np.isclose(cells[:, 0], c, rtol=0, atol=1e-12)
                             | np.isclose(cells[:, 1], c, rtol=0, atol=1e-12)
                             | ((cells[:, 0] < c) & (cells[:, 1] > c)))
        for k in hit:
            orders[max(0, k - ring + 1):k + ring] = q + boost
    return orders


def patch_quadrature(mesh, nuclei, q, levels=8, ring=NEAR_RING, boost=NEAR_BOOST,
                     eta=GRADE_ETA):
    """Composite Gauss grid on a patch plus singular corrections.

    Element cells are bisected near nuclei of other patches (see
    :func:`graded_cells`); cells get ``q`` points, raised by ``boost`` within
    ``ring`` cells of a nucleus coordinate. Every element having a nucleus at
    a corner gets a correction equal to :func:`volume_quadrature` (``levels``
    graded cells, Duffy at the corner) minus the tensor Gauss rule already
    present in the grid.
    """
    patch = mesh.patch
    d = patch.dim
    nuclei = np.asarray(nuclei, float).reshape(-1, d)
    inside = [r for r in nuclei if patch.contains(r, strict=True)]
    xis = [(r - patch.lo) / patch.scale for r in inside]
    pts, wts, cells_all, orders_all = [], [], [], []
    for ax in range(d):
        phys = graded_cells(patch, mesh.physical_breakpoints(ax), ax, nuclei, eta)
        cells = (phys - patch.lo[ax]) / patch.scale[ax]
        orders = _cell_orders(cells, [xi[ax] for xi in xis], q, ring, boost)
        px, pw = [], []
        for (a, c), o in zip(cells, orders):
            x, w = gauss_legendre(int(o), a, c)
            px.append(x)
            pw.append(w)
        pts.append(np.concatenate(px))
        wts.append(np.concatenate(pw))
        cells_all.append(cells)
        orders_all.append(orders)
    corrections = []
    for xi in xis:
        per_dir = []
        for ax in range(d):
            c = cells_all[ax]
            hit = np.flatnonzero(np.isclose(c[:, 0], xi[ax], rtol=0, atol=1e-12)
                                 | np.isclose(c[:, 1], xi[ax], rtol=0, atol=1e-12))
            per_dir.append(hit)
        for combo in itertools.product(*per_dir):
            lo = np.array([cells_all[a][k, 0] for a, k in enumerate(combo)])
            hi = np.array([cells_all[a][k, 1] for a, k in enumerate(combo)])
            qo = [int(orders_all[a][k]) for a, k in enumerate(combo)]
            sing = volume_quadrature(lo, hi, max(qo), xi, levels)
            gauss = tensor_rule([gauss_legendre(o, a, b) for o, a, b in zip(qo, lo, hi)])
            corrections.append((np.vstack([sing.points, gauss.points]),
                                np.concatenate([sing.weights, -gauss.weights])))
    return PatchQuadrature(pts, wts, corrections)
