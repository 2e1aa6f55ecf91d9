import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_space
from dgiga.analysis import (CONVERGED_EXACTLY, CSV_HEADER, ConvergenceRecord, SplineField,
                            clusters_of, eigenfunction_error, eigenvalue_error_sweep,
                            eigenvalue_errors, eoc, fitted_order, read_csv)
from dgiga.config import load_config
from dgiga.quadrature import gauss_legendre
from dgiga.splines import eval_tensor, project


def test_eoc_examples():
    assert eoc([0.4, 0.2], [0.1, 0.025]) == [pytest.approx(2.0)]
    assert eoc([1.0, 0.5], [0.3, 0.3]) == [0.0]
    assert eoc([1.0, 0.5], [0.8, 0.1]) == [pytest.approx(3.0)]
    assert eoc([1.0, 0.5], [0.1, 0.0]) == [CONVERGED_EXACTLY]


@pytest.mark.parametrize("h,e", [([1.0], [1.0]), ([1.0, 0.5], [1.0]), ([0.0, 1.0], [1, 1])])
def test_eoc_rejects_bad_input(h, e):
    with pytest.raises(ValueError):
        eoc(h, e)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 6.0), st.floats(1e-3, 1.0), st.floats(1e-6, 1e3))
def test_eoc_recovers_power_law(rate, h0, c):
    h = h0 * 0.5 ** np.arange(4)
    orders = eoc(h, c * h ** rate)
    assert np.allclose(orders, rate, rtol=1e-9)
    assert fitted_order(h, c * h ** rate) == pytest.approx(rate, rel=1e-9)


def test_clusters_and_cluster_errors():
    ref = [1.0, 2.0, 2.0, 3.0]
    assert clusters_of(ref) == [[0], [1, 2], [3]]
    err = eigenvalue_errors([1.1, 1.9, 2.3, 3.0], ref)
    assert np.allclose(err, [0.1, 0.1, 0.1, 0.0])


def interval(p, n):
    return make_space(([0], [1]), [([0], [1])], p, n)


def test_error_of_identical_fields_is_zero():
    sp = make_space(([0, 0], [1, 1]), [([0, 0], [0.5, 1]), ([0.5, 0], [1, 1])], 2, [[2, 3], [3, 2]])
    x = np.random.default_rng(0).standard_normal(sp.n_dof)
    ref = SplineField(sp, x)
    for norm in ("L2", "DG"):
        assert eigenfunction_error(sp, x, [ref], norm) <= 1e-12


def test_error_matches_projection_error():
    """L2 error of an interpolated sine equals the spline-module projection error."""
    p, n = 2, 8
    # the error integrand is not polynomial, so integrate it with a rich grid
    sp = make_space(([0], [1]), [([0], [1])], p, n, quad_extra=12)
    s = sp.meshes[0].space
    f = lambda x: np.sqrt(2) * np.sin(np.pi * x)  # noqa: E731
    c = project(s, lambda x: f(x[:, 0]))

    def exact(pts, deriv=None, patch=None):
        return f(pts[..., 0])

    got = eigenfunction_error(sp, c, [exact], "L2")
    x, w = gauss_legendre(30)
    cells = np.linspace(0, 1, n + 1)
    xs = (cells[:-1, None] + np.diff(cells)[:, None] * x).ravel()
    ws = (np.diff(cells)[:, None] * w).ravel()
    ref = np.sqrt(ws @ (eval_tensor(s, c, xs[:, None]) - f(xs)) ** 2)
    assert got == pytest.approx(ref, rel=1e-10)


def test_cluster_error_is_basis_independent():
    sp = make_space(([-1, -1], [1, 1]), [([-1, -1], [1, 1])], 2, 4)
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2, sp.n_dof))
    fa, fb = SplineField(sp, a), SplineField(sp, b)
    u = 0.3 * a - 1.2 * b
    assert eigenfunction_error(sp, u, [fa, fb], "L2") <= 1e-10
    rot = [SplineField(sp, a + b), SplineField(sp, a - 2 * b)]
    assert eigenfunction_error(sp, u, rot, "DG") <= 1e-9


def test_error_symmetric_on_common_mesh():
    a = interval(2, 4)
    b = interval(3, 4)
    rng = np.random.default_rng(5)
    ca, cb = rng.standard_normal(a.n_dof), rng.standard_normal(b.n_dof)
    ab = eigenfunction_error(a, ca, [SplineField(b, cb)], "L2")
    ba = eigenfunction_error(b, cb, [SplineField(a, ca)], "L2")
    assert ab == pytest.approx(ba, rel=1e-9)
    ab = eigenfunction_error(a, ca, [SplineField(b, cb)], "DG", C_sigma=5.0)
    ba = eigenfunction_error(b, cb, [SplineField(a, ca)], "DG", C_sigma=5.0)
    assert ab == pytest.approx(ba, rel=1e-9)


@pytest.fixture(scope="module")
def box1d_p1():
    cfg = load_config("box1d")
    return eigenvalue_error_sweep(cfg, range(4), degrees=[[1]], deterministic=True)


@pytest.fixture(scope="module")
def box2d_p2():
    cfg = load_config("box2d")
    # levels 0 and 1 are pre-asymptotic on the non-matching layout
    return eigenvalue_error_sweep(cfg, range(2, 5), k=4, deterministic=True)


def test_linear_box_sweep_rate(box1d_p1):
    assert box1d_p1.eoc("lambda", 0)[-1] == pytest.approx(2.0, abs=0.1)
    assert box1d_p1.eoc("dg", 0)[-1] == pytest.approx(1.0, abs=0.15)


def test_dg_rate_band(box2d_p2):
    p = 2
    for k in range(4):
        assert p - 0.2 <= box2d_p2.eoc("dg", k)[-1] <= p + 0.3


def test_l2_over_dg_ratio_bounded(box2d_p2):
    ratio = box2d_p2.column("l2", 0) / (box2d_p2.h_max * box2d_p2.column("dg", 0))
    slope = fitted_order(box2d_p2.h_max, ratio)
    assert -0.3 <= slope <= 0.3 or np.all(np.diff(ratio) <= 0)


def test_eigenvalue_error_is_square_of_dg_error(box2d_p2):
    slope = np.polyfit(np.log(box2d_p2.column("dg", 0)), np.log(box2d_p2.column("lambda", 0)), 1)[0]
    assert 1.7 <= slope <= 2.3


def test_csv_roundtrip(box1d_p1, tmp_path):
    text = box1d_p1.to_csv()
    assert text.splitlines()[0] == CSV_HEADER
    path = tmp_path / "sweep.csv"
    path.write_text(text)
    cols = read_csv(path)
    assert np.allclose(cols["lambda_err_1"], box1d_p1.column("lambda", 0), rtol=0, atol=0)
    assert math.isnan(cols["eoc_lambda_1"][0])
    assert cols["eoc_lambda_1"][-1] == pytest.approx(box1d_p1.eoc("lambda", 0)[-1])
    assert np.all(cols["wall_ms"] == 0.0)


def test_record_requires_decreasing_h():
    rec = ConvergenceRecord(1)
    rec.add(0, 0.5, 0.5, 10, [1.0])
    with pytest.raises(ValueError):
        rec.add(1, 0.5, 0.5, 20, [0.5])


def test_summary_lists_levels(box1d_p1):
    lines = box1d_p1.summary().splitlines()
    assert len(lines) == 5 and "(" in lines[-1]


def test_read_csv_rejects_foreign_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(p)
    buf = io.StringIO()
    ConvergenceRecord(1).to_csv(buf)
    assert buf.getvalue().startswith(CSV_HEADER)
