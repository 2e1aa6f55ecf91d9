import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgiga.config import (ConfigError, build_space, level_elements, load_config, parse_config,
                          serialize_config, shipped_configs)

SHIPPED = ["box1d", "box2d", "example1", "example2", "example3", "example4", "example5"]


def test_shipped_configs_present():
    assert shipped_configs() == SHIPPED


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_round_trip(name):
    cfg = load_config(name)
    again = parse_config(serialize_config(cfg), name)
    assert again.raw == cfg.raw
    assert again.boxes == cfg.boxes and again.kind == cfg.kind
    build_space(cfg, 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 1e3), st.floats(1e-12, 1e-3), st.integers(1, 10), st.floats(1.0, 3.0))
def test_round_trip_with_edited_values(cs, tol, k, expo):
    cfg = load_config("example1")
    text = serialize_config(cfg) + (f"penalty = {cs!r}\nsolver.tol = {tol!r}\nsolver.k = {k}\n"
                                    f"refine.exponent = {expo!r}\n").replace("solver.k = 4\n", "")
    text = text.replace("solver.k = 4\n", "", 1)
    a = parse_config(text)
    b = parse_config(serialize_config(a))
    assert set(a.raw) == set(b.raw)
    assert (a.C_sigma, a.tol, a.k, a.refine_exponent) == (b.C_sigma, b.tol, b.k, b.refine_exponent)
    assert a.C_sigma == cs and a.k == k


BASE = "name = t\nkind = linear\ndomain = 0:1\npatch.0.box = 0:1\npatch.0.elements = 2\n"


@pytest.mark.parametrize("extra,needle", [
    ("kind = magic\n", "kind"),
    ("refine.exponent = 0.5\n", "refine.exponent"),
    ("penalty = -1\n", "penalty"),
    ("patch.0.degree = x\n", "patch.0.degree"),
    ("patch.4.degree = 2\n", "patch.4.degree"),
    ("this is not a key\n", "line 6"),
])
def test_errors_name_key_or_line(extra, needle):
    text = BASE.replace("kind = linear\n", "") + extra if extra.startswith("kind") else BASE + extra
    with pytest.raises(ConfigError, match=needle):
        parse_config(text, "t.cfg")


def test_missing_key():
    with pytest.raises(ConfigError, match="domain"):
        parse_config("name = t\nkind = linear\n")


def test_multiscale_levels():
    cfg = load_config("example1")
    cfg.refine_mode, cfg.refine_exponent = "multiscale", 2.0
    ne = level_elements(cfg, 2)
    centre = [i for i, (lo, hi) in enumerate(cfg.boxes) if lo[0] < 0 < hi[0] and lo[1] < 0 < hi[1]]
    assert ne[centre[0]] == [8 * 16, 8 * 16]
    assert ne[0] == [2 * 4, 2 * 4]


def test_multiscale_mesh_sizes():
    cfg = load_config("example1")
    cfg.refine_mode, cfg.refine_exponent = "multiscale", 2.0
    spaces = [build_space(cfg, l) for l in range(3)]
    hmax = np.array([s.h_max for s in spaces])
    hmin = np.array([s.h_min for s in spaces])
    # h_min shrinks like h_max squared
    assert np.allclose(np.log(hmin[1:] / hmin[:-1]) / np.log(hmax[1:] / hmax[:-1]), 2.0)
