"""Lowest states of the 2D hydrogen-like problem on the nine-patch layout.

Solves one refinement level, prints the eigenvalues next to the reference
values, and writes ``u_1`` along the x-axis to ``hydrogen_2d_linecut.csv``.

    python3 demos/hydrogen_2d.py [level]
"""

import sys

import numpy as np

from dgiga.analysis import eigenvalue_errors, solve_level
from dgiga.config import load_config

level = int(sys.argv[1]) if len(sys.argv) > 1 else 1
cfg = load_config("example1")
space, A, M, sol = solve_level(cfg, level)
ref = np.asarray(cfg.reference["eigenvalues"])
print(f"level {level}: {space.n_dof} dof, h_max {space.h_max:.3g}, h_min {space.h_min:.3g}")
for k, (lam, err) in enumerate(zip(sol.values, eigenvalue_errors(sol.values, ref))):
    print(f"  lambda_{k + 1} = {lam:+.10f}   reference {ref[k]:+.8f}   error {err:.2e}")

x = np.linspace(-1.0, 1.0, 401)
pts = np.stack([x, np.zeros_like(x)], axis=1)
u = space.evaluate(sol.vectors[:, 0], pts)
u *= np.sign(u[200]) if u[200] else 1.0
np.savetxt("hydrogen_2d_linecut.csv", np.stack([x, u], axis=1), delimiter=",",
           header="x,u_1", comments="")
print("u_1 peaks at the nucleus:", f"u_1(0) = {u[200]:.4f}, u_1(+-0.5) = {u[100]:.4f}, {u[300]:.4f}")
