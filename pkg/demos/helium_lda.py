"""Helium ground state with Kohn-Sham LDA on the 27-patch cube.

Prints one line per SCF iteration, then the total energy against the
reference -2.83428. Level 0 takes about half a minute; level 2 takes
several minutes.

    python3 demos/helium_lda.py [level]
"""

import sys

from dgiga.config import build_space, load_config
from dgiga.scf import options_from_config, problem_from_config, scf_run

level = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = load_config("example5")
space = build_space(cfg, level)
print(f"level {level}: {space.n_dof} dof")
state = scf_run(space, problem_from_config(cfg), options_from_config(cfg), progress=print)
ref = cfg.reference["energy"]
print(f"E = {state.energy:.6f}  (reference {ref}, error {abs(state.energy - ref):.2e}), "
      f"eigenvalue {state.eigenvalue:.6f}, {state.iteration} iterations")
