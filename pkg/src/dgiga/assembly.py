"""Global matrices of the symmetric interior penalty form over a multi-patch space.

All volume integrals exploit the tensor structure of each patch: kinetic and
mass terms are Kronecker products of 1D matrices, potential terms are
sum-factorized contractions over the per-direction composite rules of
:func:`dgiga.geometry.patch_quadrature`. Interface terms are Kronecker
products of a normal-direction trace matrix with mixed 1D mass matrices on
the merged tangential grids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, reduce

import numpy as np
import scipy.sparse as sp

from .geometry import face_rules_1d, patch_quadrature
from .splines import basis_funs, collocation_matrix

log = logging.getLogger(__name__)


def default_penalty(p_max):
    return 10.0 * (p_max + 1) ** 2


@dataclass
class DofMap:
    """Global numbering of (patch, multi-index) pairs and the Dirichlet set."""

    offsets: np.ndarray
    constrained: np.ndarray  # bool mask over all dofs

    @classmethod
    def build(cls, layout, meshes):
        sizes = [m.space.size for m in meshes]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        mask = np.zeros(offsets[-1], dtype=bool)
        for ext in layout.exterior:
            shape = meshes[ext.patch].space.shape
            local = np.zeros(shape, dtype=bool)
            idx = [slice(None)] * len(shape)
            idx[ext.axis] = 0 if ext.side == 0 else shape[ext.axis] - 1
            local[tuple(idx)] = True
            o = offsets[ext.patch]
            mask[o:o + local.size] |= local.ravel()
        return cls(offsets, mask)

    @property
    def n_total(self):
        return int(self.offsets[-1])

    @cached_property
    def free(self):
        return np.flatnonzero(~self.constrained)

    @property
    def n_dof(self):
        return int(self.free.size)

    def patch_slice(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])


class DGSpace:
    """Broken spline space ``V_h`` over a validated layout.

    Parameters
    ----------
    layout : PatchLayout
    meshes : list of PatchMesh, one per patch
    quad_extra : int
        Volume rules use ``p + quad_extra`` Gauss points per cell.
    grading_levels : int
        Graded levels of the corner rule on elements touching a nucleus.
    """

    def __init__(self, layout, meshes, quad_extra=2, grading_levels=8):
        if len(meshes) != layout.n_patches:
            raise ValueError("one mesh per patch required")
        self.layout = layout
        self.meshes = list(meshes)
        self.dofs = DofMap.build(layout, meshes)
        self.quad_extra = int(quad_extra)
        self.grading_levels = int(grading_levels)

    @property
    def dim(self):
        return self.layout.dim

    @property
    def n_dof(self):
        return self.dofs.n_dof

    @property
    def n_total(self):
        return self.dofs.n_total

    @property
    def h(self):
        return np.array([m.h for m in self.meshes])

    @property
    def h_max(self):
        return float(self.h.max())

    @property
    def h_min(self):
        return float(self.h.min())

    @property
    def p_max(self):
        return max(max(m.space.degrees) for m in self.meshes)

    def __repr__(self):
        return (f"DGSpace(patches={self.layout.n_patches}, dof={self.n_dof}, "
                f"h_max={self.h_max:.4g}, h_min={self.h_min:.4g})")

    # -- vectors ---------------------------------------------------------
    def to_full(self, x):
        x = np.asarray(x)
        if x.shape[0] == self.n_total:
            return x
        if x.shape[0] != self.n_dof:
            raise ValueError(f"vector length {x.shape[0]} matches neither "
                             f"{self.n_dof} free nor {self.n_total} total dofs")
        out = np.zeros((self.n_total,) + x.shape[1:], dtype=x.dtype)
        out[self.dofs.free] = x
        return out

    def patch_coeffs(self, x, i):
        full = self.to_full(x)
        return full[self.dofs.patch_slice(i)].reshape(self.meshes[i].space.shape)

    # -- quadrature grids ---------------------------------------------------
    @cached_property
    def quads(self):
        out = []
        for m in self.meshes:
            q = max(m.space.degrees) + self.quad_extra
            out.append(patch_quadrature(m, self.layout.nuclei, q, self.grading_levels))
        return out

    @cached_property
    def colloc(self):
        """Per patch, per direction: (values, parametric derivatives) at grid nodes."""
        out = []
        for m, q in zip(self.meshes, self.quads):
            out.append([(collocation_matrix(kv, x, 0), collocation_matrix(kv, x, 1))
                        for kv, x in zip(m.space.kvs, q.points)])
        return out

    def grid_axes(self, i):
        """Physical coordinates of the grid nodes, one array per direction."""
        p = self.meshes[i].patch
        return [p.lo[a] + p.scale[a] * x for a, x in enumerate(self.quads[i].points)]

    def grid_points(self, i):
        return np.stack(np.meshgrid(*self.grid_axes(i), indexing="ij"), axis=-1)

    @cached_property
    def _weights(self):
        return [q.tensor_weights(m.patch.jacobian) for q, m in zip(self.quads, self.meshes)]

    def grid_weights(self, i):
        """Physical quadrature weights on the tensor grid of patch ``i``."""
        return self._weights[i]

    def grid_eval(self, x, i, deriv=None):
        """Field with coefficient vector ``x`` on the grid of patch ``i``.

        ``deriv`` selects a physical first partial derivative direction.
        """
        c = self.patch_coeffs(x, i)
        mats = []
        for a, (B, D) in enumerate(self.colloc[i]):
            mats.append(D / self.meshes[i].patch.scale[a] if deriv == a else B)
        return _apply(c, mats)

    def grid_function(self, f, i):
        pts = self.grid_points(i)
        return np.asarray(f(pts.reshape(-1, self.dim)), float).reshape(pts.shape[:-1])

    def integrate_grid(self, values):
        return float(sum(np.sum(w * v) for w, v in
                         zip((self.grid_weights(i) for i in range(len(values))), values)))

    # -- pointwise evaluation ------------------------------------------------
    def evaluate_on_patch(self, x, i, points, deriv=None):
        """Evaluate the restriction to patch ``i`` (a one-sided trace on faces)."""
        mesh = self.meshes[i]
        points = np.atleast_2d(np.asarray(points, float))
        xi = np.clip((points - mesh.patch.lo) / mesh.patch.scale, 0.0, 1.0)
        return _eval_points(mesh.space, self.patch_coeffs(x, i), xi, deriv, mesh.patch.scale)

    def evaluate(self, x, points, deriv=None):
        """Evaluate a field at arbitrary physical points (first patch wins on faces)."""
        points = np.atleast_2d(np.asarray(points, float))
        owner = self.layout.locate(points)
        out = np.zeros(points.shape[0])
        for i in np.unique(owner):
            sel = owner == i
            mesh = self.meshes[i]
            xi = np.clip((points[sel] - mesh.patch.lo) / mesh.patch.scale, 0.0, 1.0)
            out[sel] = _eval_points(mesh.space, self.patch_coeffs(x, i), xi, deriv,
                                    mesh.patch.scale)
        return out


def _apply(tensor, mats):
    out = tensor
    for mat in mats:
        out = np.tensordot(out, mat, axes=([0], [1]))
    return out


def _eval_points(space, c, xi, deriv, scale):
    m = xi.shape[0]
    firsts, vals = [], []
    for a, kv in enumerate(space.kvs):
        f, v = basis_funs(kv, xi[:, a], 1 if deriv == a else 0)
        if deriv == a:
            v = v / scale[a]
        firsts.append(f)
        vals.append(v)
    out = np.zeros(m)
    for offs in np.ndindex(*[kv.p + 1 for kv in space.kvs]):
        w = np.ones(m)
        for a in range(space.dim):
            w = w * vals[a][:, offs[a]]
        out += w * c[tuple(firsts[a] + offs[a] for a in range(space.dim))]
    return out


# -- potential handling ---------------------------------------------------
def _split_potential(space, potential):
    """Grid values per patch plus the callables that take corner corrections."""
    if potential is None:
        return None, []
    terms = getattr(potential, "terms", None)
    if terms is None:
        terms = [potential]
    grids = [np.zeros(space.quads[i].shape) for i in range(space.layout.n_patches)]
    singular = []
    for t in terms:
        if callable(t):
            for i in range(space.layout.n_patches):
                grids[i] += space.grid_function(t, i)
            singular.append(t)
        else:
            values = getattr(t, "values", t)
            for i in range(space.layout.n_patches):
                grids[i] += values[i]
    return grids, singular


def _pair_matrix(B, p):
    nq, n = B.shape
    K = 2 * p + 1
    P = np.zeros((nq, n, K))
    for o in range(-p, p + 1):
        lo, hi = max(0, -o), min(n, n - o)
        P[:, lo:hi, o + p] = B[:, lo:hi] * B[:, lo + o:hi + o]
    return P.reshape(nq, n * K)


def _banded_coo(R, shape, degrees, offset):
    # R has shape (n_1*K_1, ..., n_d*K_d) with pair columns (a, b - a + p)
    d = len(shape)
    rows = np.zeros(1, dtype=np.int64)
    cols = np.zeros(1, dtype=np.int64)
    valid = np.ones(1, dtype=bool)
    for a in range(d):
        n, p = shape[a], degrees[a]
        K = 2 * p + 1
        ia = np.repeat(np.arange(n), K)
        ib = ia + np.tile(np.arange(K) - p, n)
        ok = (ib >= 0) & (ib < n)
        rows = (rows[..., None] * n + ia)
        cols = (cols[..., None] * n + np.where(ok, ib, 0))
        valid = valid[..., None] & ok
    rows, cols, valid = rows.reshape(R.shape), cols.reshape(R.shape), valid.reshape(R.shape)
    return rows[valid] + offset, cols[valid] + offset, R[valid]


def _potential_patch(space, i, grid_v, singular):
    mesh = space.meshes[i]
    degrees = mesh.space.degrees
    W = grid_v * space.grid_weights(i)
    R = W
    for (B, _), p in zip(space.colloc[i], degrees):
        R = np.tensordot(R, _pair_matrix(B, p), axes=([0], [0]))
    off = space.dofs.offsets[i]
    r, c, v = _banded_coo(R, mesh.space.shape, degrees, off)
    parts = [(r, c, v)]
    if singular:
        for pts, w in space.quads[i].corrections:
            phys = mesh.patch.lo + mesh.patch.scale * pts
            vals = sum(np.asarray(f(phys), float) for f in singular)
            parts.append(_point_cloud(mesh, pts, w * vals * mesh.patch.jacobian, off))
    return parts


def _point_cloud(mesh, pts, w, offset):
    space = mesh.space
    d = space.dim
    firsts, vals = [], []
    for a, kv in enumerate(space.kvs):
        f, v = basis_funs(kv, pts[:, a])
        firsts.append(f)
        vals.append(v)
    loc = list(np.ndindex(*[kv.p + 1 for kv in space.kvs]))
    phi = np.empty((pts.shape[0], len(loc)))
    gidx = np.empty((pts.shape[0], len(loc)), dtype=np.int64)
    for k, offs in enumerate(loc):
        phi[:, k] = np.prod([vals[a][:, offs[a]] for a in range(d)], axis=0)
        gidx[:, k] = np.ravel_multi_index(tuple(firsts[a] + offs[a] for a in range(d)),
                                          space.shape)
    # points of one correction may straddle elements only on measure-zero sets
    rows, cols, data = [], [], []
    for key in np.unique(gidx, axis=0):
        sel = np.all(gidx == key, axis=1)
        local = phi[sel].T @ (w[sel, None] * phi[sel])
        rows.append(np.repeat(key, key.size))
        cols.append(np.tile(key, key.size))
        data.append(local.ravel())
    return (np.concatenate(rows) + offset, np.concatenate(cols) + offset,
            np.concatenate(data))


# -- 1D building blocks ----------------------------------------------------------
def _patch_1d(space, i):
    mesh = space.meshes[i]
    out = []
    for a, (B, D) in enumerate(space.colloc[i]):
        w = space.quads[i].weights[a]
        L = mesh.patch.scale[a]
        M = L * B.T @ (w[:, None] * B)
        K = (D.T @ (w[:, None] * D)) / L
        out.append((sp.csr_matrix(_clean(M)), sp.csr_matrix(_clean(K))))
    return out


def _clean(A, rtol=1e-15):
    A = np.array(A)
    A[np.abs(A) < rtol * np.abs(A).max()] = 0.0
    return A


def _kron(mats):
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def _volume_patch(space, i, kinetic, mass):
    one_d = _patch_1d(space, i)
    d = len(one_d)
    blocks = []
    if mass:
        blocks.append(mass * _kron([m for m, _ in one_d]))
    if kinetic:
        for a in range(d):
            blocks.append(kinetic * _kron([one_d[b][1] if b == a else one_d[b][0]
                                           for b in range(d)]))
    if not blocks:
        n = space.meshes[i].space.size
        return sp.csr_matrix((n, n))
    return reduce(lambda x, y: x + y, blocks)


def _trace_data(mesh, axis, side):
    kv = mesh.space.kvs[axis]
    x = np.array([float(side)])
    v = collocation_matrix(kv, x, 0)[0]
    dv = collocation_matrix(kv, x, 1)[0] / mesh.patch.scale[axis]
    return v, dv


def face_penalty(space, face, C_sigma=None):
    """``C_sigma (1/h_i + 1/h_j)`` for one face."""
    mi, mj = space.meshes[face.i], space.meshes[face.j]
    if C_sigma is None:
        C_sigma = default_penalty(max(max(mi.space.degrees), max(mj.space.degrees)))
    return C_sigma * (1.0 / mi.h + 1.0 / mj.h)


def _face_blocks(space, face, pen, consistency):
    """Yield (s, t, block) with block[a, b] = contribution of trial b (patch t)
    to test a (patch s)."""
    mi, mj = space.meshes[face.i], space.meshes[face.j]
    q = max(max(mi.space.degrees), max(mj.space.degrees)) + 1
    rules = face_rules_1d(face, mi, mj, q)
    sides = {face.i: (mi, 1, +1.0), face.j: (mj, 0, -1.0)}
    traces = {k: _trace_data(m, face.axis, end) for k, (m, end, _) in sides.items()}
    colloc = {}
    for k, (m, _, _) in sides.items():
        mats = []
        for ax, (x, _, _) in zip(face.tangential, rules):
            xi = np.clip((x - m.patch.lo[ax]) / m.patch.scale[ax], 0.0, 1.0)
            mats.append(collocation_matrix(m.space.kvs[ax], xi))
        colloc[k] = mats
    for s, (ms, _, es) in sides.items():
        vs, ds = traces[s]
        for t, (mt, _, et) in sides.items():
            vt, dt = traces[t]
            N = pen * es * et * np.outer(vs, vt)
            if consistency:
                N -= 0.5 * consistency * (es * np.outer(vs, dt) + et * np.outer(ds, vt))
            mats = []
            ti = 0
            for ax in range(space.dim):
                if ax == face.axis:
                    mats.append(sp.csr_matrix(N))
                else:
                    _, w, _ = rules[ti]
                    T = colloc[s][ti].T @ (w[:, None] * colloc[t][ti])
                    mats.append(sp.csr_matrix(_clean(T)))
                    ti += 1
            yield s, t, _kron(mats)


def _assemble_faces(space, pen_of, consistency):
    parts = []
    for face in space.layout.faces:
        pen = pen_of(face)
        for s, t, blk in _face_blocks(space, face, pen, consistency):
            blk = blk.tocoo()
            parts.append((blk.row + space.dofs.offsets[s], blk.col + space.dofs.offsets[t],
                          blk.data))
    return parts


def _finish(space, parts, full):
    n = space.n_total
    if parts:
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        data = np.concatenate([p[2] for p in parts])
    else:
        rows = cols = np.zeros(0, dtype=int)
        data = np.zeros(0)
    A = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    # mirror the upper triangle: exact symmetry regardless of rounding
    U = sp.triu(A, format="csr")
    A = (U + sp.triu(A, k=1, format="csr").T).tocsr()
    A.eliminate_zeros()
    if not full:
        f = space.dofs.free
        A = A[f][:, f].tocsr()
    A.sort_indices()
    return A


def _block_parts(space, i, block):
    b = block.tocoo()
    o = space.dofs.offsets[i]
    return (b.row + o, b.col + o, b.data)


def assemble_bilinear(space, potential=None, C_sigma=None, kinetic=0.5, full=False):
    """Matrix of ``a^DG`` with kinetic coefficient ``kinetic`` (1/2 for Schroedinger).

    ``C_sigma=None`` selects ``10 (p_max + 1)^2`` per face. The face
    consistency terms carry the same coefficient as the Laplacian.
    """
    if C_sigma is not None and C_sigma <= 0:
        raise ValueError("C_sigma must be positive")
    grids, singular = _split_potential(space, potential)
    parts = []
    for i in range(space.layout.n_patches):
        parts.append(_block_parts(space, i, _volume_patch(space, i, kinetic, 0.0)))
        if grids is not None:
            parts.extend(_potential_patch(space, i, grids[i], singular))
    scale = 2.0 * kinetic
    parts.extend(_assemble_faces(space, lambda f: scale * face_penalty(space, f, C_sigma),
                                 kinetic))
    return _finish(space, parts, full)


def assemble_potential(space, potential, full=False):
    """Matrix of ``(V u, v)`` alone."""
    grids, singular = _split_potential(space, potential)
    parts = []
    for i in range(space.layout.n_patches):
        parts.extend(_potential_patch(space, i, grids[i], singular))
    return _finish(space, parts, full)


def assemble_mass(space, full=False):
    parts = [_block_parts(space, i, _volume_patch(space, i, 0.0, 1.0))
             for i in range(space.layout.n_patches)]
    return _finish(space, parts, full)


def assemble_load(space, f, full=False):
    """Vector ``(f, phi_a)``; ``f`` is a callable or per-patch grid values."""
    grids, singular = _split_potential(space, f)
    b = np.zeros(space.n_total)
    for i in range(space.layout.n_patches):
        R = grids[i] * space.grid_weights(i)
        for B, _ in space.colloc[i]:
            R = np.tensordot(R, B, axes=([0], [0]))
        b[space.dofs.patch_slice(i)] += R.ravel()
        mesh = space.meshes[i]
        for pts, w in space.quads[i].corrections if singular else ():
            phys = mesh.patch.lo + mesh.patch.scale * pts
            vals = sum(np.asarray(g(phys), float) for g in singular)
            wv = w * vals * mesh.patch.jacobian
            for offs in np.ndindex(*[kv.p + 1 for kv in mesh.space.kvs]):
                phi = np.ones(pts.shape[0])
                idx = []
                for a, kv in enumerate(mesh.space.kvs):
                    first, v = basis_funs(kv, pts[:, a])
                    phi = phi * v[:, offs[a]]
                    idx.append(first + offs[a])
                flat = np.ravel_multi_index(tuple(idx), mesh.space.shape)
                np.add.at(b, flat + space.dofs.offsets[i], wv * phi)
    return b if full else b[space.dofs.free]


def dg_norm_matrix(space, C_sigma=None, full=False):
    """Gram matrix of the DG norm: broken H1 plus penalty-weighted jumps."""
    parts = [_block_parts(space, i, _volume_patch(space, i, 1.0, 1.0))
             for i in range(space.layout.n_patches)]
    parts.extend(_assemble_faces(space, lambda f: face_penalty(space, f, C_sigma), 0.0))
    return _finish(space, parts, full)


def dg_norm(space, coeffs, C_sigma=None):
    """DG norm of the field with the given (free or full) coefficients."""
    x = space.to_full(np.asarray(coeffs, float))
    N = dg_norm_matrix(space, C_sigma, full=True)
    return float(np.sqrt(max(x @ (N @ x), 0.0)))


def write_triplets(path, A):
    """Coordinate dump: header ``dimension nnz``, then ``row col value`` lines."""
    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"{C.shape[0]} {C.nnz}\n")
        for r, c, v in zip(C.row, C.col, C.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_triplets(path):
    with open(path) as fh:
        n, nnz = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(n, n))
