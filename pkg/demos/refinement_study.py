"""Uniform against multiscale refinement for the 2D hydrogen-like ground state.

Uniform refinement halves every element, and the cusp of ``u_1`` at the
nucleus caps the eigenvalue rate near 2 for every degree. Multiscale
refinement squares the mesh size in the patch holding the nucleus
(``h_min ~ h_max^2``), and the rate climbs toward ``2p``.

    python3 demos/refinement_study.py [degree] [levels]
"""

import sys

from dgiga.analysis import eigenvalue_error_sweep
from dgiga.config import load_config

p = int(sys.argv[1]) if len(sys.argv) > 1 else 2
levels = int(sys.argv[2]) if len(sys.argv) > 2 else 3

for mode in ("uniform", "multiscale"):
    cfg = load_config("example1")
    cfg.refine_mode, cfg.refine_exponent = mode, 2.0
    rec = eigenvalue_error_sweep(cfg, range(levels), k=1, degrees=[[p, p]] * len(cfg.boxes),
                                 deterministic=True, function_errors=False)
    print(f"\n{mode} refinement, p = {p}")
    print(rec.summary())
