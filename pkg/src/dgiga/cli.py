"""Command-line driver: ``dgiga {solve,converge,scf,oracle} --config FILE``.

Exit codes: 0 success, 1 solver failure, 2 configuration error, 3 refusal
(oracle dimension cap).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3
LINECUT_POINTS = 401
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="config file, or the name of a shipped config")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS threads")
    common.add_argument("--level", type=int, default=0, help="refinement level")
    common.add_argument("--deterministic", action="store_true",
                        help="zero wall-clock columns for byte-identical output")
    p = argparse.ArgumentParser(prog="dgiga", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one refinement level")
    conv = sub.add_parser("converge", parents=[common], help="refinement sweep with EOCs")
    conv.add_argument("--levels", type=int, default=None, help="override refine.levels")
    conv.add_argument("--degree", type=int, default=None, help="override every patch degree")
    sub.add_parser("scf", parents=[common], help="self-consistent field run")
    orc = sub.add_parser("oracle", parents=[common], help="sparse vs dense eigensolver")
    orc.add_argument("--max-dof", type=int, default=1500)
    return p


def _setup_logging():
    level = os.environ.get("DGIGA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fmt(v):
    return repr(float(v))


def _write_linecut(path, cfg, space, columns, names):
    import numpy as np
    a = np.asarray(cfg.linecut["start"], float)
    b = np.asarray(cfg.linecut["end"], float)
    s = np.linspace(0.0, 1.0, LINECUT_POINTS)
    pts = a + s[:, None] * (b - a)
    vals = [fn(pts) for fn in columns]
    coord = ["x", "y", "z"][:space.dim]
    with open(path, "w") as fh:
        fh.write("# dgiga-csv v1\n")
        fh.write(",".join(["s"] + coord + names) + "\n")
        for r in range(LINECUT_POINTS):
            row = [_fmt(s[r])] + [_fmt(c) for c in pts[r]] + [_fmt(v[r]) for v in vals]
            fh.write(",".join(row) + "\n")


def _degrees(cfg, degree):
    return None if degree is None else [[degree] * cfg.dim for _ in cfg.boxes]


def cmd_solve(args, cfg, out):
    import numpy as np
    from .analysis import eigenvalue_errors, solve_level
    from .assembly import assemble_bilinear, assemble_load
    from .config import build_space, external_potential
    from .solver import solve_source

    if cfg.kind in ("gp", "ks-lda"):
        return cmd_scf(args, cfg, out)
    if cfg.kind == "source":
        space = build_space(cfg, args.level)
        A = assemble_bilinear(space, external_potential(cfg), cfg.C_sigma)
        value = float(cfg.raw.get("source.value", "1"))
        sol = solve_source(A, assemble_load(space, lambda x: np.full(x.shape[0], value)))
        print(f"dof={space.n_dof} residual={sol.residual:.3e}")
        print(f"l2_norm={float(np.sqrt(sol.coeffs @ (_mass(space) @ sol.coeffs))):.12g}")
        return EXIT_OK
    space, _, _, sol = solve_level(cfg, args.level)
    print(f"config={cfg.name} level={args.level} dof={space.n_dof} "
          f"h_max={space.h_max:.6g} h_min={space.h_min:.6g}")
    ref = cfg.reference.get("eigenvalues")
    if ref is None and cfg.reference.get("kind") == "closed-form":
        from .config import box_eigenvalues
        ref = box_eigenvalues(cfg.domain, sol.k)
    errs = eigenvalue_errors(sol.values, ref[:sol.k]) if ref is not None else None
    stem = out / f"{cfg.name}_L{args.level}"
    with open(f"{stem}_eigen.csv", "w") as fh:
        fh.write("# dgiga-csv v1\nindex,lambda,residual,reference,error\n")
        for k in range(sol.k):
            r = _fmt(ref[k]) if ref is not None and k < len(ref) else "nan"
            e = _fmt(errs[k]) if errs is not None else "nan"
            fh.write(f"{k + 1},{_fmt(sol.values[k])},{_fmt(sol.residuals[k])},{r},{e}\n")
    for k in range(sol.k):
        extra = f" error={errs[k]:.3e}" if errs is not None else ""
        print(f"lambda_{k + 1}={sol.values[k]:.12g} residual={sol.residuals[k]:.1e}{extra}")
    if cfg.linecut:
        cols = [lambda p, j=j: space.evaluate(sol.vectors[:, j], p) for j in range(sol.k)]
        _write_linecut(f"{stem}_linecut.csv", cfg, space, cols,
                       [f"u_{j + 1}" for j in range(sol.k)])
    return EXIT_OK


def _mass(space):
    from .assembly import assemble_mass
    return assemble_mass(space)


def cmd_converge(args, cfg, out):
    from .analysis import eigenvalue_error_sweep
    from .config import ConfigError
    if cfg.kind not in ("linear", "gp"):
        raise ConfigError(f"converge supports linear and gp problems, not {cfg.kind!r}")
    levels = args.levels or cfg.refine_levels
    if levels < 3:
        raise ConfigError("a convergence sweep needs refine.levels >= 3")
    start = args.level
    rec = eigenvalue_error_sweep(cfg, range(start, start + levels),
                                 degrees=_degrees(cfg, args.degree),
                                 deterministic=args.deterministic, progress=print)
    path = out / f"{cfg.name}_converge.csv"
    with open(path, "w") as fh:
        rec.to_csv(fh)
    print(rec.summary())
    print(f"csv={path}")
    return EXIT_OK


def cmd_scf(args, cfg, out):
    from .config import ConfigError, build_space
    from .scf import options_from_config, problem_from_config, scf_run
    if cfg.kind not in ("gp", "ks-lda"):
        raise ConfigError(f"scf needs kind gp or ks-lda, not {cfg.kind!r}")
    space = build_space(cfg, args.level)
    state = scf_run(space, problem_from_config(cfg), options_from_config(cfg), progress=print)
    print(f"config={cfg.name} level={args.level} dof={space.n_dof} iterations={state.iteration} "
          f"lambda_1={state.eigenvalue:.12g} energy={state.energy:.12g} delta={state.delta:.3e}")
    if "eigenvalues" in cfg.reference:
        print(f"lambda_1_error={abs(state.eigenvalue - cfg.reference['eigenvalues'][0]):.3e}")
    if "energy" in cfg.reference:
        print(f"energy_error={abs(state.energy - cfg.reference['energy']):.3e}")
    if cfg.linecut:
        occ = cfg.scf["occupation"]
        u = state.solution.vectors[:, 0]
        _write_linecut(out / f"{cfg.name}_L{args.level}_density.csv", cfg, space,
                       [lambda p: occ * space.evaluate(u, p) ** 2], ["rho"])
    return EXIT_OK


def cmd_oracle(args, cfg, out):
    import numpy as np
    from .analysis import clusters_of
    from .assembly import assemble_bilinear, assemble_mass
    from .config import build_space, default_sigma, external_potential
    from .solver import dense_oracle, solve_eigen, subspace_angle

    space = build_space(cfg, args.level)
    if space.n_dof > args.max_dof:
        print(f"refused: {space.n_dof} dof exceeds --max-dof {args.max_dof}", file=sys.stderr)
        return EXIT_REFUSED
    A = assemble_bilinear(space, external_potential(cfg), cfg.C_sigma)
    M = assemble_mass(space)
    dense = dense_oracle(A, M)
    k = min(6, space.n_dof - 2)
    # widen k so the last degenerate cluster is compared whole
    while k < space.n_dof - 2 and abs(dense.values[k] - dense.values[k - 1]) \
            <= 1e-6 * max(1.0, abs(dense.values[k])):
        k += 1
    sparse = solve_eigen(A, M, k, sigma=default_sigma(cfg))
    rel = np.abs(sparse.values - dense.values[:k]) / np.maximum(np.abs(dense.values[:k]), 1e-300)
    print(f"config={cfg.name} level={args.level} dof={space.n_dof}")
    print(f"max_rel_eigenvalue_diff={rel.max():.3e}")
    for g in clusters_of(dense.values[:k], rtol=1e-6):
        ang = subspace_angle(sparse.vectors[:, g], dense.vectors[:, g], M)
        print(f"cluster={'+'.join(str(i + 1) for i in g)} lambda={dense.values[g[0]]:.12g} "
              f"subspace_angle={ang:.3e}")
    return EXIT_OK


COMMANDS = dict(solve=cmd_solve, converge=cmd_converge, scf=cmd_scf, oracle=cmd_oracle)


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads:
        # effective only before the numerical libraries are loaded
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    _setup_logging()
    from .config import ConfigError, load_config
    from .geometry import LayoutError
    from .scf import SCFError
    from .solver import SolverError
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        from .config import build_layout_from
        build_layout_from(cfg)
        return COMMANDS[args.command](args, cfg, out)
    except (ConfigError, LayoutError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SCFError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
