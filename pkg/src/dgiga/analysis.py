"""Error norms against reference solutions, EOCs and convergence sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_bilinear, assemble_mass, face_penalty
from .config import (box_eigenfunctions, box_eigenvalues, build_space, default_sigma,
                     external_potential)
from .geometry import face_rules_1d
from .solver import solve_eigen

log = logging.getLogger(__name__)

CONVERGED_EXACTLY = math.inf
CSV_HEADER = "# dgiga-csv v1"


def eoc(h, e):
    """Pairwise orders ``log(e_l / e_{l+1}) / log(h_l / h_{l+1})``.

    A zero error on the finer level yields :data:`CONVERGED_EXACTLY`.
    """
    h = np.asarray(h, float)
    e = np.abs(np.asarray(e, float))
    if h.size < 2 or h.size != e.size:
        raise ValueError("need at least two (h, e) pairs of equal length")
    if np.any(h <= 0):
        raise ValueError("mesh sizes must be positive")
    out = []
    for l in range(h.size - 1):
        if e[l + 1] == 0.0:
            out.append(CONVERGED_EXACTLY)
        elif e[l] == 0.0:
            out.append(-CONVERGED_EXACTLY)
        else:
            out.append(float(np.log(e[l] / e[l + 1]) / np.log(h[l] / h[l + 1])))
    return out


def fitted_order(h, e):
    """Least-squares slope of ``log e`` against ``log h``."""
    return float(np.polyfit(np.log(h), np.log(np.abs(e)), 1)[0])


# -- reference fields ---------------------------------------------------------------
class SplineField:
    """Eigenfunction of a (reference) DG space, evaluable at physical points."""

    def __init__(self, space, coeffs):
        self.space = space
        self.coeffs = space.to_full(np.asarray(coeffs, float))

    def __call__(self, points, deriv=None, patch=None):
        pts = np.asarray(points, float)
        flat = pts.reshape(-1, pts.shape[-1])
        if patch is None:
            out = self.space.evaluate(self.coeffs, flat, deriv)
        else:
            out = self.space.evaluate_on_patch(self.coeffs, patch, flat, deriv)
        return out.reshape(pts.shape[:-1])


def _closed(f):
    def g(points, deriv=None, patch=None):
        return f(points, deriv)
    return g


def _face_trace_points(face, rules):
    grids = [r[0] for r in rules]
    w = np.ones(1)
    for r in rules:
        w = np.multiply.outer(w, r[1]).ravel()
    if grids:
        mesh = np.meshgrid(*grids, indexing="ij")
        pts = np.empty((mesh[0].size, face.lo.size))
        for t, m in zip(face.tangential, mesh):
            pts[:, t] = m.ravel()
    else:
        pts = np.empty((1, face.lo.size))
    pts[:, face.axis] = face.position
    return pts, w


def eigenfunction_error(space, coeffs, ref_fields, norm="L2", C_sigma=None):
    """Error of a discrete eigenfunction against a reference (cluster).

    With one reference field the sign is aligned first; with several (a
    degenerate cluster) the error is the distance to their span, i.e. the
    norm of ``(I - P) u_h`` with ``P`` the L2 projector onto the span.
    Integration uses the quadrature grids of ``space``.
    """
    if norm not in ("L2", "DG"):
        raise ValueError("norm must be 'L2' or 'DG'")
    fields = list(ref_fields) if isinstance(ref_fields, (list, tuple)) else [ref_fields]
    n_p = space.layout.n_patches
    uh = [space.grid_eval(coeffs, i) for i in range(n_p)]
    pts = [space.grid_points(i) for i in range(n_p)]
    refs = [[f(pts[i], None, i) for i in range(n_p)] for f in fields]
    W = [space.grid_weights(i) for i in range(n_p)]

    def dot(a, b):
        return sum(float(np.sum(w * x * y)) for w, x, y in zip(W, a, b))

    G = np.array([[dot(a, b) for b in refs] for a in refs])
    rhs = np.array([dot(a, uh) for a in refs])
    if len(fields) == 1:
        c = np.array([1.0 if rhs[0] >= 0 else -1.0])
    else:
        c = np.linalg.solve(G, rhs)
    diff = [uh[i] - sum(cj * r[i] for cj, r in zip(c, refs)) for i in range(n_p)]
    total = dot(diff, diff)
    if norm == "DG":
        for a in range(space.dim):
            for i in range(n_p):
                g = space.grid_eval(coeffs, i, deriv=a)
                g = g - sum(cj * f(pts[i], a, i) for cj, f in zip(c, fields))
                total += float(np.sum(W[i] * g * g))
        for face in space.layout.faces:
            mi, mj = space.meshes[face.i], space.meshes[face.j]
            q = max(max(mi.space.degrees), max(mj.space.degrees)) + 2
            fp, fw = _face_trace_points(face, face_rules_1d(face, mi, mj, q))
            jump = (space.evaluate_on_patch(coeffs, face.i, fp)
                    - space.evaluate_on_patch(coeffs, face.j, fp))
            jump = jump - sum(cj * (f(fp, None, face.i) - f(fp, None, face.j))
                              for cj, f in zip(c, fields))
            total += face_penalty(space, face, C_sigma) * float(np.sum(fw * jump * jump))
    return float(np.sqrt(max(total, 0.0)))


def clusters_of(values, rtol=1e-8):
    """Group indices of (sorted) reference eigenvalues that coincide."""
    groups = []
    for k, v in enumerate(values):
        if groups and abs(values[groups[-1][0]] - v) <= rtol * max(1.0, abs(v)):
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def eigenvalue_errors(computed, reference):
    """Per-index errors; clusters compare the mean of the computed cluster."""
    computed = np.asarray(computed, float)
    reference = np.asarray(reference, float)
    out = np.empty(reference.size)
    for g in clusters_of(reference):
        out[g] = abs(np.mean(computed[g]) - reference[g[0]])
    return out


# -- convergence records -------------------------------------------------------------
@dataclass
class ConvergenceRecord:
    """Per-level errors and EOCs between consecutive levels."""

    k: int
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    QUANTITIES = ("lambda", "l2", "dg")

    def add(self, level, h_max, h_min, dof, lambda_err, l2_err=None, dg_err=None,
            wall_ms=0.0, values=None):
        nan = [math.nan] * self.k
        self.rows.append(dict(level=level, h_max=h_max, h_min=h_min, dof=dof,
                              lambda_err=list(lambda_err),
                              l2_err=list(l2_err) if l2_err is not None else nan,
                              dg_err=list(dg_err) if dg_err is not None else nan,
                              wall_ms=wall_ms,
                              values=list(values) if values is not None else nan))
        if len(self.rows) > 1 and self.rows[-1]["h_max"] >= self.rows[-2]["h_max"]:
            raise ValueError("levels must strictly decrease in h_max")

    def column(self, quantity, k):
        return np.array([r[f"{quantity}_err"][k] for r in self.rows])

    @property
    def h_max(self):
        return np.array([r["h_max"] for r in self.rows])

    def eoc(self, quantity, k):
        e = self.column(quantity, k)
        if e.size < 2:
            return []
        if np.any(np.isnan(e)):
            return [math.nan] * (len(e) - 1)
        return eoc(self.h_max, e)

    def header(self):
        cols = ["level", "h_max", "h_min", "dof"]
        for q in self.QUANTITIES:
            cols += [f"{q}_err_{k + 1}" for k in range(self.k)]
        for q in self.QUANTITIES:
            cols += [f"eoc_{q}_{k + 1}" for k in range(self.k)]
        return cols + ["wall_ms"]

    def to_csv(self, fh=None):
        """Write the CSV (to ``fh`` or return it as text)."""
        buf = io.StringIO() if fh is None else fh
        buf.write(CSV_HEADER + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        eocs = {(q, k): self.eoc(q, k) for q in self.QUANTITIES for k in range(self.k)}
        for l, r in enumerate(self.rows):
            row = [r["level"], _fmt(r["h_max"]), _fmt(r["h_min"]), r["dof"]]
            for q in self.QUANTITIES:
                row += [_fmt(v) for v in r[f"{q}_err"]]
            for q in self.QUANTITIES:
                row += ["" if l == 0 else _fmt(eocs[(q, k)][l - 1]) for k in range(self.k)]
            row.append(_fmt(r["wall_ms"]))
            w.writerow(row)
        return buf.getvalue() if fh is None else None

    def summary(self):
        lines = [f"{'level':>5} {'h_max':>10} {'dof':>8}  lambda_err / eoc"]
        for l, r in enumerate(self.rows):
            parts = []
            for k in range(self.k):
                e = r["lambda_err"][k]
                o = "" if l == 0 else f" ({self.eoc('lambda', k)[l - 1]:.2f})"
                parts.append(f"{e:.3e}{o}")
            lines.append(f"{r['level']:>5} {r['h_max']:>10.4g} {r['dof']:>8}  " + "  ".join(parts))
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return repr(float(v))


def read_csv(path):
    """Parse a CSV written by :meth:`ConvergenceRecord.to_csv` into column arrays."""
    with open(path) as fh:
        first = fh.readline().strip()
        if first != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {first!r}")
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) if r[k] != "" else math.nan for r in rows])
            for k in rows[0]}


# -- sweeps ------------------------------------------------------------------------------
def reference_clusters(cfg, k):
    """Closed-form reference clusters if the config has them, else ``None``."""
    if cfg.reference.get("kind") == "closed-form":
        if cfg.charges.size:
            raise ValueError("closed-form references exist only for V = 0 boxes")
        return box_eigenfunctions(cfg.domain, k)
    return None


def solve_level(cfg, level, k=None, degrees=None):
    """Assemble and solve one level; ``gp`` problems run their SCF loop."""
    k = k or cfg.k
    space = build_space(cfg, level, degrees)
    if cfg.kind == "gp":
        from .scf import options_from_config, problem_from_config, scf_run
        state = scf_run(space, problem_from_config(cfg), options_from_config(cfg))
        return space, None, None, state.solution
    A = assemble_bilinear(space, external_potential(cfg), cfg.C_sigma)
    M = assemble_mass(space)
    sol = solve_eigen(A, M, k, tol=cfg.tol, sigma=default_sigma(cfg))
    return space, A, M, sol


def numeric_reference(cfg, finest_level, k):
    """Cubic reference one level beyond ``finest_level``."""
    degrees = [[3] * cfg.dim for _ in cfg.boxes]
    space, _, _, sol = solve_level(cfg, finest_level + 1, k, degrees)
    return space, sol


def eigenvalue_error_sweep(cfg, levels=None, k=None, degrees=None, deterministic=False,
                           function_errors=None, progress=None):
    """Run the refinement plan of ``cfg`` and collect a :class:`ConvergenceRecord`.

    ``function_errors`` enables L2/DG eigenfunction errors (default: when a
    closed-form or numeric reference is configured).
    """
    levels = list(range(cfg.refine_levels)) if levels is None else list(levels)
    if len(levels) < 2:
        raise ValueError("a sweep needs at least two levels")
    k = k or cfg.k
    ref_kind = cfg.reference.get("kind", "values")
    if "eigenvalues" in cfg.reference:
        ref_vals = np.asarray(cfg.reference["eigenvalues"][:k], float)
    elif ref_kind == "closed-form":
        ref_vals = box_eigenvalues(cfg.domain, k)
    else:
        ref_vals = None
    if function_errors is None:
        function_errors = ref_kind in ("closed-form", "numeric")
    clusters = None
    ref_space = ref_sol = None
    if function_errors:
        clusters = reference_clusters(cfg, k)
        if clusters is None:
            ref_space, ref_sol = numeric_reference(cfg, max(levels), k)
            if ref_vals is None:
                ref_vals = ref_sol.values
    if ref_vals is None:
        raise ValueError("no reference eigenvalues available for the sweep")
    k = min(k, ref_vals.size)
    groups = clusters_of(ref_vals)
    rec = ConvergenceRecord(k, meta=dict(name=cfg.name, mode=cfg.refine_mode))
    for level in levels:
        t0 = time.perf_counter()
        space, A, M, sol = solve_level(cfg, level, k, degrees)
        lam_err = eigenvalue_errors(sol.values[:k], ref_vals[:k])
        l2 = dg = None
        if function_errors:
            l2, dg = np.empty(k), np.empty(k)
            for g in groups:
                if clusters is not None:
                    fields = _cluster_fields(clusters, g)
                else:
                    fields = [SplineField(ref_space, ref_sol.vectors[:, j]) for j in g]
                for j in g:
                    l2[j] = eigenfunction_error(space, sol.vectors[:, j], fields, "L2",
                                                cfg.C_sigma)
                    dg[j] = eigenfunction_error(space, sol.vectors[:, j], fields, "DG",
                                                cfg.C_sigma)
        wall = 0.0 if deterministic else 1e3 * (time.perf_counter() - t0)
        rec.add(level, space.h_max, space.h_min, space.n_dof, lam_err, l2, dg, wall,
                sol.values[:k])
        if progress:
            progress(f"level={level} dof={space.n_dof} lambda1={sol.values[0]:.12g} "
                     f"err1={lam_err[0]:.3e}")
    return rec


def _cluster_fields(clusters, group):
    # map reference indices to the closed-form cluster containing them
    start = 0
    for _, modes in clusters:
        idx = list(range(start, start + len(modes)))
        if group[0] in idx:
            return [_closed(f) for f in modes]
        start += len(modes)
    raise ValueError("cluster mismatch between reference and requested indices")
