import warnings

import numpy as np
import pytest

from conftest import make_space
from dgiga.assembly import assemble_bilinear, assemble_mass
from dgiga.config import build_space, default_sigma, external_potential, load_config
from dgiga.potentials import CoulombPotential, NucleusSet
from dgiga.scf import (GrossPitaevskii, KohnShamLDA, SCFError, SCFOptions, options_from_config,
                       problem_from_config, scf_run)
from dgiga.solver import solve_eigen


@pytest.fixture(scope="module")
def example3_level0():
    cfg = load_config("example3")
    space = build_space(cfg, 0)
    state = scf_run(space, problem_from_config(cfg), options_from_config(cfg))
    return cfg, space, state


def test_gp_without_interaction_is_linear():
    cfg = load_config("example1")
    space = build_space(cfg, 0)
    ref = solve_eigen(assemble_bilinear(space, external_potential(cfg)), assemble_mass(space), 1,
                      sigma=default_sigma(cfg))
    state = scf_run(space, GrossPitaevskii(external_potential(cfg), interaction=0.0),
                    SCFOptions(sigma=default_sigma(cfg)))
    assert state.converged and state.iteration == 1
    assert state.eigenvalue == pytest.approx(ref.values[0], rel=1e-10)
    assert state.energy == pytest.approx(state.eigenvalue, rel=1e-12)


def test_example3_converges(example3_level0):
    cfg, space, state = example3_level0
    assert state.converged and state.iteration <= 60
    assert cfg.scf["alpha"] == 0.3
    assert state.eigenvalue == pytest.approx(-0.5773370795, abs=1e-2)
    assert state.density.integral() == pytest.approx(1.0, abs=1e-8)


def test_density_normalized_each_iteration():
    cfg = load_config("example3")
    space = build_space(cfg, 0)
    opts = options_from_config(cfg)
    opts.max_iter = 8
    lines = []
    with pytest.raises(SCFError):
        scf_run(space, problem_from_config(cfg), opts, progress=lines.append)
    norms = [float(dict(t.split("=") for t in ln.split())["norm"]) for ln in lines]
    assert len(norms) == 8
    assert np.allclose(norms, 1.0, atol=1e-8)


def test_fixed_point_idempotent(example3_level0):
    cfg, space, state = example3_level0
    opts = options_from_config(cfg)
    opts.tol = np.inf
    again = scf_run(space, problem_from_config(cfg), opts, initial=state.density)
    assert again.iteration == 1
    assert abs(again.eigenvalue - state.eigenvalue) <= 10 * cfg.scf["tol"]


def test_delta_history_trend(example3_level0):
    _, _, state = example3_level0
    tail = [h["delta"] for h in state.history[-5:]]
    if not np.all(np.diff(tail) < 0):
        warnings.warn(f"SCF deltas not monotone over the last five steps: {tail}")
    assert tail[-1] <= tail[0]


def test_divergence_reports_history():
    cfg = load_config("example3")
    space = build_space(cfg, 0)
    opts = options_from_config(cfg)
    opts.max_iter = 3
    with pytest.raises(SCFError, match=r"last deltas: (\S+, ){2}\S+$"):
        scf_run(space, problem_from_config(cfg), opts)


def test_kohn_sham_without_interactions_doubles_eigenvalue():
    sp = make_space(([-3.0] * 3, [3.0] * 3), [([-3.0] * 3, [3.0] * 3)], 2, 4,
                    nuclei=[[0.0, 0.0, 0.0]])
    ext = CoulombPotential(NucleusSet([2.0], [[0.0, 0.0, 0.0]]))
    state = scf_run(sp, KohnShamLDA(ext, hartree=False, xc=False), SCFOptions(sigma=-8.0))
    assert state.iteration == 1
    assert state.energy == pytest.approx(2.0 * state.eigenvalue, rel=1e-12)


def test_problem_kind_checks():
    with pytest.raises(ValueError):
        problem_from_config(load_config("example1"))
