"""Linear source solves and the generalized eigenproblem ``A x = lambda M x``."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DENSE_MAX = 2000


class SolverError(RuntimeError):
    pass


@dataclass
class SourceSolution:
    coeffs: np.ndarray
    residual: float


@dataclass
class EigenSolution:
    """Lowest eigenpairs; columns of ``vectors`` are M-orthonormal."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.values.size


def solve_source(A, b, tol=1e-12, method="direct"):
    """Solve ``A w = b`` for a coercive DG matrix."""
    b = np.asarray(b, float)
    if not np.any(b):
        return SourceSolution(np.zeros_like(b), 0.0)
    A = sp.csc_matrix(A)
    if method == "direct":
        try:
            w = spla.splu(A).solve(b)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed ({exc}); try a positive beta shift") from exc
    elif method == "cg":
        import pyamg
        ml = pyamg.smoothed_aggregation_solver(A.tocsr(), symmetry="symmetric")
        w, info = spla.cg(A, b, rtol=tol, M=ml.aspreconditioner(), maxiter=5000)
        if info:
            raise SolverError(f"CG did not converge (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.linalg.norm(A @ w - b) / np.linalg.norm(b))
    if res > max(tol, 1e-8):
        raise SolverError(f"source solve residual {res:.2e} above tolerance")
    return SourceSolution(w, res)


def default_shift(total_charge=0.0):
    """Shift below the ground state: the 2D united-atom energy ``-2 Z^2``.

    It also lies below the 3D value ``-Z^2 / 2``.
    """
    return -2.0 * total_charge ** 2 if total_charge > 0 else -1.0


def _finalize(A, M, X, tol, iterations=0, info=None):
    """Rayleigh-Ritz on span(X), M-normalize, fix signs, compute residuals."""
    AX = A @ X
    MX = M @ X
    H = X.T @ AX
    S = X.T @ MX
    H = 0.5 * (H + H.T)
    S = 0.5 * (S + S.T)
    lam, Y = sla.eigh(H, S)
    X = X @ Y
    AX = AX @ Y
    MX = MX @ Y
    norms = np.sqrt(np.einsum("ij,ij->j", X, MX))
    X /= norms
    AX /= norms
    MX /= norms
    idx = np.argmax(np.abs(X), axis=0)
    signs = np.sign(X[idx, np.arange(X.shape[1])])
    signs[signs == 0] = 1.0
    X *= signs
    AX *= signs
    MX *= signs
    lam = np.einsum("ij,ij->j", X, AX)
    R = AX - MX * lam
    den = np.maximum(np.linalg.norm(AX, axis=0), 1e-300)
    res = np.linalg.norm(R, axis=0) / den
    return EigenSolution(lam, X, res, iterations, info or {})


def _factor(A, M, sigma):
    K = sp.csc_matrix(A - sigma * M)
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        lu = spla.splu(K)
    # near-singular factors show up as huge growth in U's diagonal ratio
    d = np.abs(lu.U.diagonal())
    if d.min() <= 1e-14 * d.max():
        raise RuntimeError("near-singular shifted matrix")
    return lu


def solve_eigen(A, M, k, tol=DEFAULT_TOL, sigma=None, v0=None, method="auto", max_retries=4,
                precond=None):
    """Lowest ``k`` eigenpairs of the pencil ``(A, M)``.

    ``method="lanczos"`` uses shift-invert Lanczos with a sparse LU of
    ``A - sigma M``; ``"lobpcg"`` uses preconditioned LOBPCG (for large 3D
    problems); ``"auto"`` picks by size.
    """
    n = A.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        return dense_oracle(A, M, n)
    if method == "auto":
        method = "lanczos" if n <= 60000 or A.nnz / n < 60 else "lobpcg"
    if sigma is None:
        sigma = -1.0
    if method == "lobpcg":
        return solve_eigen_lobpcg(A, M, k, tol=tol, sigma=sigma, X0=v0, precond=precond)
    A = sp.csc_matrix(A)
    M = sp.csc_matrix(M)
    kk = min(k + 1, n - 2)
    ncv = min(n - 1, max(kk + 5, 2 * kk))
    s = float(sigma)
    for attempt in range(max_retries + 1):
        try:
            lu = _factor(A, M, s)
            break
        except RuntimeError:
            s = s - 1e-3 * max(1.0, abs(s)) * (attempt + 1)
            log.warning("shift collided with the spectrum, perturbed to %g", s)
    else:
        raise SolverError("could not factor A - sigma M")
    op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    if v0 is not None:
        v0 = np.asarray(v0, float)
        start = v0 if v0.ndim == 1 else v0.sum(axis=1)
    else:
        # fixed start vector: repeated runs give identical results
        start = np.random.default_rng(0).standard_normal(n)
    vals, vecs = spla.eigsh(A, k=kk, M=M, sigma=s, which="LM", OPinv=op, ncv=ncv,
                            tol=tol * 1e-2, v0=start)
    order = np.argsort(vals)
    sol = _finalize(A, M, vecs[:, order], tol, info={"sigma": s, "method": "lanczos"})
    if np.any(sol.values[:k] < s):
        log.warning("eigenvalues below the shift %g; results may have skipped states", s)
    return _truncate(sol, k)


def _truncate(sol, k):
    return EigenSolution(sol.values[:k], sol.vectors[:, :k], sol.residuals[:k],
                         sol.iterations, sol.info)


def make_preconditioner(A, M, sigma, kind="auto"):
    """Approximate inverse of ``A - sigma M``: sparse LU or smoothed-aggregation AMG."""
    K = (A - sigma * M).tocsc()
    n = K.shape[0]
    if kind == "auto":
        kind = "lu" if n <= 40000 else "amg"
    if kind == "lu":
        lu = spla.splu(K)
        return spla.LinearOperator((n, n), matvec=lu.solve, matmat=lu.solve, dtype=float)
    if kind == "amg":
        import pyamg
        ml = pyamg.smoothed_aggregation_solver(K.tocsr(), symmetry="symmetric")
        return ml.aspreconditioner(cycle="V")
    raise ValueError(f"unknown preconditioner {kind!r}")


def solve_eigen_lobpcg(A, M, k, tol=DEFAULT_TOL, sigma=-1.0, X0=None, precond=None,
                       maxiter=500, seed=0):
    """LOBPCG with an algebraic multigrid preconditioner for ``A - sigma M``."""
    n = A.shape[0]
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    # extra block vectors guard a cold start; a warm start converges best alone
    kk = k if X0 is not None else min(k + 2, n // 3)
    if precond is None:
        precond = make_preconditioner(A, M, sigma, "amg")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, kk))
    if X0 is not None:
        X0 = np.asarray(X0, float).reshape(n, -1)
        m = min(X0.shape[1], kk)
        X[:, :m] = X0[:, :m]
    # shift so the working operator is positive definite; eigenvectors unchanged
    As = (A - sigma * M).tocsr()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        vals, vecs, hist = spla.lobpcg(As, X, B=M, M=precond, tol=tol, maxiter=maxiter,
                                       largest=False, retResidualNormsHistory=True)
    sol = _finalize(A, M, vecs, tol, iterations=len(hist),
                    info={"sigma": sigma, "method": "lobpcg"})
    return _truncate(sol, k)


def dense_oracle(A, M, k=None):
    """All (or the lowest ``k``) eigenpairs by explicit Cholesky reduction."""
    n = A.shape[0]
    if n > DENSE_MAX:
        raise SolverError(f"dense oracle refused: dimension {n} exceeds {DENSE_MAX}")
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, float)
    Md = M.toarray() if sp.issparse(M) else np.asarray(M, float)
    L = np.linalg.cholesky(Md)
    C = sla.solve_triangular(L, sla.solve_triangular(L, Ad, lower=True).T, lower=True)
    C = 0.5 * (C + C.T)
    lam, Y = np.linalg.eigh(C)
    X = sla.solve_triangular(L.T, Y, lower=False)
    k = n if k is None else k
    sol = _finalize(Ad, Md, X[:, :k], DEFAULT_TOL, info={"method": "dense"})
    return sol


def subspace_angle(X, Y, M):
    """Largest principal angle between span(X) and span(Y) in the M inner product."""
    def orth(Z):
        G = Z.T @ (M @ Z)
        L = np.linalg.cholesky(0.5 * (G + G.T))
        return sla.solve_triangular(L, Z.T, lower=True).T
    Qx, Qy = orth(np.atleast_2d(X.T).T), orth(np.atleast_2d(Y.T).T)
    # sines of the angles: component of span(X) outside span(Y)
    R = Qx - Qy @ (Qy.T @ (M @ Qx))
    G = R.T @ (M @ R)
    s2 = np.linalg.eigvalsh(0.5 * (G + G.T)).max()
    return float(np.arcsin(min(1.0, np.sqrt(max(s2, 0.0)))))
