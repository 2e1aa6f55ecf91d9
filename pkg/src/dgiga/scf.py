"""Self-consistent field iterations for Gross-Pitaevskii and Kohn-Sham LDA problems."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_bilinear, assemble_mass, assemble_potential
from .potentials import (DensityField, GridPotential, HartreeSolver, gp_term,
                         lda_energy_density, xc_potential)
from .solver import make_preconditioner, solve_eigen

log = logging.getLogger(__name__)


class SCFError(RuntimeError):
    pass


@dataclass
class GrossPitaevskii:
    """``(-1/2 Laplace + V + g |u|^2) u = lambda u`` with one normalized orbital."""

    external: object
    interaction: float = 1.0
    occupation: float = 1.0
    name: str = "gp"


@dataclass
class KohnShamLDA:
    """Closed-shell Kohn-Sham with ``rho = occupation * u_1^2``."""

    external: object
    occupation: float = 2.0
    hartree: bool = True
    xc: bool = True
    correlation: bool = True
    hartree_method: str = "auto"
    name: str = "ks-lda"


@dataclass
class SCFOptions:
    alpha: float = 0.3
    tol: float = 1e-8
    max_iter: int = 200
    eig_tol: float = 1e-10
    sigma: float | None = None
    C_sigma: float | None = None
    eig_method: str = "auto"
    precond: str = "auto"


@dataclass
class SCFState:
    iteration: int
    density: DensityField
    solution: object
    delta: float
    alpha: float
    energy: float
    converged: bool = False
    history: list = field(default_factory=list)

    @property
    def eigenvalue(self):
        return float(self.solution.values[0])


def _density_potentials(space, problem, density, hartree):
    """Density-dependent potential terms and the pieces the energy needs."""
    parts = {}
    if isinstance(problem, GrossPitaevskii):
        parts["gp"] = gp_term(density) * problem.interaction
    else:
        if problem.hartree:
            parts["hartree"], _ = hartree.potential(density)
        if problem.xc:
            parts["xc"] = xc_potential(density, problem.correlation)
    return parts


def total_energy(space, problem, eigenvalue, density, parts):
    """Total energy from the lowest eigenvalue and the density feeding ``H``."""
    if isinstance(problem, GrossPitaevskii):
        rho = density.values
        return float(eigenvalue - 0.5 * problem.interaction
                     * space.integrate_grid([r * r for r in rho]))
    e = problem.occupation * eigenvalue
    rho = density.values
    if "hartree" in parts:
        e -= 0.5 * space.integrate_grid([r * v for r, v in zip(rho, parts["hartree"].values)])
    if "xc" in parts:
        eps = [lda_energy_density(r, problem.correlation) for r in density.clamped()]
        e -= space.integrate_grid([r * (v - ex) for r, v, ex in
                                   zip(rho, parts["xc"].values, eps)])
    return float(e)


def scf_run(space, problem, opts=None, progress=None, initial=None):
    """Fixed-point iteration with linear density mixing.

    ``progress`` receives one ``key=value`` line per iteration.
    """
    opts = opts or SCFOptions()
    t0 = time.perf_counter()
    A0 = assemble_bilinear(space, problem.external, opts.C_sigma)
    M = assemble_mass(space)
    hartree = None
    if isinstance(problem, KohnShamLDA) and problem.hartree:
        hartree = HartreeSolver(space, opts.C_sigma, method=problem.hartree_method)

    method = opts.eig_method
    if method == "auto":
        method = "lobpcg" if space.dim == 3 else "lanczos"
    sol = solve_eigen(A0, M, 1, tol=opts.eig_tol, sigma=opts.sigma,
                      method="lanczos" if method == "lobpcg" else method)
    precond = None
    if method == "lobpcg":
        # density terms are bounded perturbations: one factorization of the
        # fixed operator, shifted just below its ground state, serves all steps
        lam0 = float(sol.values[0])
        shift = lam0 - 0.25 * max(1.0, abs(lam0))
        precond = make_preconditioner(A0, M, shift, opts.precond)

    def eig(A, v0=None):
        return solve_eigen(A, M, 1, tol=opts.eig_tol, sigma=opts.sigma, v0=v0,
                           method=method, precond=precond)

    if initial is None:
        rho_in = DensityField.from_orbitals(space, space.to_full(sol.vectors[:, 0]),
                                            problem.occupation)
    else:
        rho_in = initial
    history = []
    state = None
    for it in range(1, opts.max_iter + 1):
        parts = _density_potentials(space, problem, rho_in, hartree)
        A = A0
        if parts:
            V = GridPotential([sum(p.values[i] for p in parts.values())
                               for i in range(space.layout.n_patches)])
            A = A0 + assemble_potential(space, V)
        sol = eig(A, sol.vectors[:, 0])
        rho_out = DensityField.from_orbitals(space, space.to_full(sol.vectors[:, 0]),
                                             problem.occupation)
        delta = rho_out.l2_distance(rho_in)
        energy = total_energy(space, problem, sol.values[0], rho_in, parts)
        rec = dict(iter=it, lambda1=float(sol.values[0]), delta=delta, energy=energy,
                   norm=rho_in.integral())
        history.append(rec)
        line = " ".join(f"{k}={v:.12g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in rec.items())
        log.info(line)
        if progress is not None:
            progress(line)
        state = SCFState(it, rho_in, sol, delta, opts.alpha, energy, False, history)
        if delta <= opts.tol:
            state.converged = True
            state.info = dict(seconds=time.perf_counter() - t0)
            return state
        rho_in = rho_in.mix(rho_out, opts.alpha).renormalized()
    last = ", ".join(f"{h['delta']:.3e}" for h in history[-5:])
    raise SCFError(f"SCF did not converge in {opts.max_iter} iterations; last deltas: {last}")


def problem_from_config(cfg):
    """SCF problem description for a ``gp`` or ``ks-lda`` configuration."""
    from .config import external_potential
    ext = external_potential(cfg)
    sc = cfg.scf
    if cfg.kind == "gp":
        return GrossPitaevskii(ext, sc["interaction"], sc["occupation"])
    if cfg.kind == "ks-lda":
        if cfg.dim != 3:
            raise ValueError("Kohn-Sham LDA needs a 3D configuration")
        return KohnShamLDA(ext, sc["occupation"], sc["hartree"], sc["xc"], sc["correlation"])
    raise ValueError(f"problem kind {cfg.kind!r} is not an SCF problem")


def options_from_config(cfg):
    from .config import default_sigma
    sc = cfg.scf
    return SCFOptions(alpha=sc["alpha"], tol=sc["tol"], max_iter=sc["max_iter"],
                      sigma=default_sigma(cfg), C_sigma=cfg.C_sigma)
