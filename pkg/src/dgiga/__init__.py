"""Discontinuous Galerkin isogeometric solvers for Schrödinger-type eigenproblems.

Submodules are imported lazily so that ``dgiga.cli`` can cap BLAS threads
before numpy is loaded.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("splines", "quadrature", "geometry", "potentials", "assembly", "solver",
               "scf", "analysis", "config", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
