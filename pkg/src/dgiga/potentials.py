"""Potentials: nuclear Coulomb sums, LDA exchange-correlation, GP and Hartree terms.

Density-dependent terms are stored as values on the patch quadrature grids
of a :class:`~dgiga.assembly.DGSpace` (:class:`GridPotential`), which is
exactly what the assembly contracts against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import assemble_bilinear, assemble_load
from .splines import interpolate_values

log = logging.getLogger(__name__)

DENSITY_FLOOR = -1e-10


@dataclass(frozen=True)
class NucleusSet:
    """Point charges ``Z_k`` at positions ``R_k``."""

    charges: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.charges, float))
        r = np.asarray(self.positions, float).reshape(z.size, -1)
        if np.any(z <= 0):
            raise ValueError("nuclear charges must be positive")
        for a in range(len(r)):
            for b in range(a):
                if np.allclose(r[a], r[b], rtol=0, atol=1e-14):
                    raise ValueError(f"nuclei {b} and {a} coincide")
        object.__setattr__(self, "charges", z)
        object.__setattr__(self, "positions", r)

    def __len__(self):
        return self.charges.size

    @property
    def max_charge(self):
        return float(self.charges.max()) if len(self) else 0.0

    def shifted(self, offset):
        return NucleusSet(self.charges, self.positions + np.asarray(offset, float))


def eval_coulomb(nuclei, r):
    """``-sum_k Z_k / |r - R_k|`` at one point ``(d,)`` or many ``(..., d)``."""
    r = np.asarray(r, float)
    out = np.zeros(r.shape[:-1])
    for z, pos in zip(nuclei.charges, nuclei.positions):
        dist = np.linalg.norm(r - pos, axis=-1)
        if np.any(dist == 0.0):
            raise ValueError(f"Coulomb potential evaluated at nucleus {tuple(pos)}")
        out -= z / dist
    return out if out.ndim else float(out)


class CoulombPotential:
    """Callable external potential; singular, so assembly adds corner corrections."""

    def __init__(self, nuclei, scale=1.0):
        self.nuclei = nuclei
        self.scale = float(scale)

    def __call__(self, points):
        return self.scale * eval_coulomb(self.nuclei, points)


@dataclass
class GridPotential:
    """Per-patch values on the quadrature grids of one DG space."""

    values: list
    name: str = ""

    def __add__(self, other):
        return GridPotential([a + b for a, b in zip(self.values, other.values)], self.name)

    def __mul__(self, s):
        return GridPotential([s * v for v in self.values], self.name)

    __rmul__ = __mul__


@dataclass
class PotentialStack:
    """Ordered potential terms; callables or :class:`GridPotential` objects."""

    terms: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.terms)


# -- LDA --------------------------------------------------------------------------
_PZ_HIGH = dict(gamma=-0.1423, beta1=1.0529, beta2=0.3334)
_PZ_LOW = dict(A=0.0311, B=-0.048, C=0.0020, D=-0.0116)


def _clamp(rho):
    rho = np.asarray(rho, float)
    return np.where(rho > 0.0, rho, 0.0)


def slater_exchange(rho):
    """Exchange energy density per particle and potential, ``(eps_x, v_x)``."""
    rho = _clamp(rho)
    v = -np.cbrt(3.0 * rho / np.pi)
    return 0.75 * v, v


def pz81_correlation(rho):
    """Perdew-Zunger 1981 unpolarized correlation ``(eps_c, v_c)``."""
    rho = _clamp(rho)
    eps = np.zeros_like(rho)
    v = np.zeros_like(rho)
    pos = rho > 0.0
    rs = np.full_like(rho, np.inf)
    rs[pos] = np.cbrt(3.0 / (4.0 * np.pi * rho[pos]))
    hi = pos & (rs >= 1.0)
    lo = pos & (rs < 1.0)
    if np.any(hi):
        g, b1, b2 = _PZ_HIGH["gamma"], _PZ_HIGH["beta1"], _PZ_HIGH["beta2"]
        s = np.sqrt(rs[hi])
        den = 1.0 + b1 * s + b2 * rs[hi]
        e = g / den
        eps[hi] = e
        v[hi] = e * (1.0 + 7.0 / 6.0 * b1 * s + 4.0 / 3.0 * b2 * rs[hi]) / den
    if np.any(lo):
        A, B, C, D = (_PZ_LOW[k] for k in "ABCD")
        r = rs[lo]
        ln = np.log(r)
        eps[lo] = A * ln + B + C * r * ln + D * r
        v[lo] = (A * ln + (B - A / 3.0) + 2.0 / 3.0 * C * r * ln
                 + (2.0 * D - C) / 3.0 * r)
    return eps, v


def eval_lda_xc(rho, correlation=True):
    """LDA exchange-correlation potential ``V_xc(rho)``; 0 at zero density."""
    _, vx = slater_exchange(rho)
    if not correlation:
        return vx if np.ndim(vx) else float(vx)
    _, vc = pz81_correlation(rho)
    out = vx + vc
    return out if np.ndim(out) else float(out)


def lda_energy_density(rho, correlation=True):
    """Energy per particle ``eps_xc(rho)`` matching :func:`eval_lda_xc`."""
    ex, _ = slater_exchange(rho)
    if not correlation:
        return ex
    ec, _ = pz81_correlation(rho)
    return ex + ec


# -- densities -------------------------------------------------------------------
@dataclass
class DensityField:
    """Density values on the quadrature grids of ``space``."""

    space: object
    values: list
    n_electrons: float

    @classmethod
    def from_orbitals(cls, space, coeffs, occupation=1.0):
        """``rho = occupation * sum_k u_k^2`` for coefficient columns ``coeffs``."""
        coeffs = np.asarray(coeffs, float)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        vals = []
        for i in range(space.layout.n_patches):
            acc = 0.0
            for k in range(coeffs.shape[1]):
                acc = acc + space.grid_eval(coeffs[:, k], i) ** 2
            vals.append(occupation * np.asarray(acc))
        return cls(space, vals, occupation * coeffs.shape[1])

    def integral(self):
        return self.space.integrate_grid(self.values)

    def clamped(self):
        return [np.maximum(v, 0.0) for v in self.values]

    def centroid(self):
        tot = self.integral()
        if tot == 0.0:
            return np.zeros(self.space.dim)
        c = np.zeros(self.space.dim)
        for i, v in enumerate(self.values):
            pts = self.space.grid_points(i)
            w = self.space.grid_weights(i) * v
            c += np.tensordot(w, pts, axes=(tuple(range(w.ndim)), tuple(range(w.ndim))))
        return c / tot

    def mix(self, other, alpha):
        vals = [(1 - alpha) * a + alpha * b for a, b in zip(self.values, other.values)]
        return DensityField(self.space, vals, self.n_electrons)

    def renormalized(self):
        tot = self.integral()
        if tot <= 0.0 or self.n_electrons == 0:
            return self
        s = self.n_electrons / tot
        return DensityField(self.space, [s * v for v in self.values], self.n_electrons)

    def l2_distance(self, other):
        diff = [a - b for a, b in zip(self.values, other.values)]
        return float(np.sqrt(self.space.integrate_grid([d * d for d in diff])))

    def min_value(self):
        return float(min(v.min() for v in self.values))


def gp_term(density, r=None):
    """Gross-Pitaevskii density term ``rho = |u|^2``.

    With a :class:`DensityField` and no ``r``, returns it as a grid
    potential. Otherwise ``density`` is ``(space, coeffs)`` and ``r`` points.
    """
    if isinstance(density, DensityField):
        if r is None:
            return GridPotential([v.copy() for v in density.values], "gp")
        raise TypeError("pointwise evaluation needs (space, coeffs)")
    space, coeffs = density
    return space.evaluate(coeffs, r) ** 2


def xc_potential(density, correlation=True):
    return GridPotential([eval_lda_xc(v, correlation) for v in density.clamped()], "xc")


# -- Hartree ------------------------------------------------------------------------
def _boundary_coeffs(space, g):
    """Dirichlet coefficients interpolating ``g`` at boundary Greville nodes."""
    full = np.zeros(space.n_total)
    mask = space.dofs.constrained
    for i, mesh in enumerate(space.meshes):
        sl = space.dofs.patch_slice(i)
        if not mask[sl].any():
            continue
        grev = [mesh.patch.lo[a] + mesh.patch.scale[a] * kv.greville
                for a, kv in enumerate(mesh.space.kvs)]
        pts = np.stack(np.meshgrid(*grev, indexing="ij"), axis=-1)
        on_bd = np.zeros(pts.shape[:-1], dtype=bool)
        for a in range(space.dim):
            on_bd |= np.isclose(pts[..., a], space.layout.lo[a]) | np.isclose(
                pts[..., a], space.layout.hi[a])
        vals = np.zeros(pts.shape[:-1])
        # boundary coefficients only depend on boundary nodes of the interpolant
        vals[on_bd] = g(pts[on_bd])
        c = interpolate_values(mesh.space, vals).ravel()
        full[sl] = np.where(mask[sl], c, 0.0)
    return full


class HartreeSolver:
    """Solves ``-Laplace V_H = 4 pi rho`` with monopole Dirichlet data.

    The operator ``2 a^DG(.,.)`` at ``V = 0`` is assembled and factored once;
    repeated solves (one per SCF iteration) reuse it. ``method`` is
    ``"direct"`` (sparse LU) or ``"cg"`` (conjugate gradients with an
    algebraic multigrid preconditioner).
    """

    def __init__(self, space, C_sigma=None, method="auto", tol=1e-10):
        self.space = space
        self.tol = tol
        A = assemble_bilinear(space, None, C_sigma, kinetic=1.0, full=True)
        free = space.dofs.free
        mask = space.dofs.constrained
        self.A_ff = A[free][:, free].tocsc()
        self.A_fb = A[free][:, np.flatnonzero(mask)].tocsr()
        if method == "auto":
            method = "direct" if self.A_ff.shape[0] <= 20000 else "cg"
        self.method = method
        self._x0 = None
        if method == "direct":
            self._lu = spla.splu(self.A_ff)
        elif method == "cg":
            import pyamg
            self._ml = pyamg.smoothed_aggregation_solver(self.A_ff.tocsr(), symmetry="symmetric")
            self._M = self._ml.aspreconditioner(cycle="V")
        else:
            raise ValueError(f"unknown Hartree method {method!r}")

    def solve(self, density, boundary=None):
        """Return the full coefficient vector of ``V_H``.

        ``boundary`` overrides the Dirichlet data callable; by default it is
        ``N_e / |r - r_bar|`` with ``r_bar`` the density centroid.
        """
        space = self.space
        if boundary is None:
            ne = density.integral()
            centre = density.centroid()
            boundary = lambda r: ne / np.linalg.norm(r - centre, axis=-1)  # noqa: E731
        gb = _boundary_coeffs(space, boundary)
        b = 4.0 * np.pi * assemble_load(space, GridPotential(density.values))
        b = b - self.A_fb @ gb[space.dofs.constrained]
        if self.method == "direct":
            x = self._lu.solve(b)
        else:
            x, info = spla.cg(self.A_ff, b, x0=self._x0, rtol=self.tol, M=self._M,
                              maxiter=2000)
            if info != 0:
                raise RuntimeError(f"Hartree CG did not converge (info={info})")
            self._x0 = x
        res = np.linalg.norm(self.A_ff @ x - b) / max(np.linalg.norm(b), 1e-300)
        if res > max(1e3 * self.tol, 1e-8):
            raise RuntimeError(f"Hartree solve residual {res:.2e}")
        gb[space.dofs.free] = x
        return gb

    def potential(self, density, boundary=None):
        coeffs = self.solve(density, boundary)
        return GridPotential([self.space.grid_eval(coeffs, i)
                              for i in range(self.space.layout.n_patches)], "hartree"), coeffs


def solve_hartree(space, density, C_sigma=None, method="auto", boundary=None):
    """One-shot Hartree potential on the grids of ``space``."""
    pot, _ = HartreeSolver(space, C_sigma, method).potential(density, boundary)
    return pot
