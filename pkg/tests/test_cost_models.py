import math
import pickle

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mtwreg import geometry as geo
from mtwreg.cost_models import (
    COST_NAMES,
    CostError,
    cost_from_config,
    fd_consistency_report,
    hess_xx_sphere_normal,
    make_cost,
    normal_hessian_fd,
)

ALL = [
    ("quadratic", {}, 2),
    ("sqrt_plus", {}, 2),
    ("sqrt_minus", {}, 2),
    ("power_ratio", {"p": 1.5}, 2),
    ("power_p", {"p": 4}, 2),
    ("power_p", {"p": -0.5}, 3),
    ("neg_log", {}, 2),
    ("sphere_sq_dist", {}, 3),
]


def test_eval_examples():
    assert make_cost("quadratic", {}, 2).eval(np.zeros(2), np.ones(2)) == pytest.approx(1.0, abs=1e-15)
    s = make_cost("sphere_sq_dist", {}, 3)
    assert s.eval(np.array([0, 0, 1.0]), np.array([1.0, 0, 0])) == pytest.approx(math.pi**2 / 8, abs=1e-14)
    assert make_cost("neg_log", {}, 2).eval(np.zeros(2), np.array([1.0, 0])) == 0.0


def test_power_costs_closed_form():
    x, y = np.array([0.1, 0.2]), np.array([0.7, -0.1])
    r2 = float(np.sum((x - y) ** 2))
    assert make_cost("power_ratio", {"p": 1.5}, 2).eval(x, y) == pytest.approx((1 + r2) ** 0.75, rel=1e-14)
    assert make_cost("power_p", {"p": 4}, 2).eval(x, y) == pytest.approx(r2**2 / 4, rel=1e-14)
    assert make_cost("power_p", {"p": 4, "sign": -1}, 2).eval(x, y) == pytest.approx(-(r2**2) / 4, rel=1e-14)
    assert make_cost("sqrt_minus", {}, 2).eval(x, y) == pytest.approx(-math.sqrt(1 - r2), rel=1e-14)


@pytest.mark.parametrize(
    "name,params,dim",
    [("nope", {}, 2), ("power_p", {"p": 0}, 2), ("power_p", {}, 2), ("power_p", {"p": 1}, 2),
     ("power_p", {"p": 2, "sign": 3}, 2), ("quadratic", {}, 0), ("sphere_sq_dist", {}, 1)],
)
def test_make_cost_errors(name, params, dim):
    with pytest.raises(CostError):
        make_cost(name, params, dim)


def test_cost_names_complete():
    assert set(COST_NAMES) == {"quadratic", "sqrt_plus", "sqrt_minus", "power_ratio", "power_p",
                               "neg_log", "sphere_sq_dist"}


def test_validity_loci():
    log = make_cost("neg_log", {}, 2)
    assert not log.valid(np.zeros(2), np.zeros(2))
    assert not log.valid(np.zeros(2), np.array([5e-4, 0]))
    sph = make_cost("sphere_sq_dist", {}, 3)
    x = np.array([0, 0, 1.0])
    assert not sph.valid(x, geo.sphere_exp(x, np.array([math.pi - 5e-3, 0, 0])))
    assert sph.valid(x, geo.sphere_exp(x, np.array([math.pi - 2e-2, 0, 0])))
    loose = make_cost("sphere_sq_dist", {"cut_margin": 1e-3}, 3)
    assert loose.valid(x, geo.sphere_exp(x, np.array([math.pi - 5e-3, 0, 0])))
    pr = make_cost("power_ratio", {"p": 1.5}, 2)
    assert pr.valid(np.zeros(2), np.array([1.4, 0]))
    assert not pr.valid(np.zeros(2), np.array([1.42, 0]))


def test_cost_from_config():
    m = cost_from_config({"name": "power_p", "dim": "3", "params.p": "4"})
    assert m.name == "power_p" and m.dim == 3 and m.params["p"] == 4.0
    with pytest.raises(CostError):
        cost_from_config({"dim": "2"})


@pytest.mark.parametrize("name,params,dim", ALL)
def test_pickle_round_trip(name, params, dim):
    m = make_cost(name, params, dim)
    m2 = pickle.loads(pickle.dumps(m))
    assert m2.descriptor() == m.descriptor()


def test_sphere_normal_hessian_examples():
    np.testing.assert_allclose(hess_xx_sphere_normal(math.pi / 2, 3), np.diag([1.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(hess_xx_sphere_normal(1e-9, 3), np.eye(2), atol=1e-12)
    H = hess_xx_sphere_normal(2.0, 4)
    rc = 2 * math.cos(2) / math.sin(2)
    np.testing.assert_allclose(H, np.diag([1.0, rc, rc]), atol=1e-15)
    assert np.max(np.abs(H - normal_hessian_fd(2.0, 4))) < 1e-4
    for bad in (0.0, math.pi, -1.0):
        with pytest.raises(ValueError):
            hess_xx_sphere_normal(bad, 3)


def test_fd_report_quadratic():
    rep = fd_consistency_report(make_cost("quadratic", {}, 2), 100, 7)
    assert rep.passed(1e-8), rep.max_error


def test_fd_report_neg_log():
    m = make_cost("neg_log", {}, 2)
    rep = fd_consistency_report(m, 100, 7, accept=lambda x, y: np.linalg.norm(x - y) > 0.1)
    assert rep.passed(1e-5), rep.max_error


def test_fd_report_sphere():
    m = make_cost("sphere_sq_dist", {}, 3)
    rep = fd_consistency_report(m, 50, 7, accept=lambda x, y: geo.geodesic_distance(x, y) <= math.pi - 0.2)
    assert rep.passed(1e-4), rep.max_error


@pytest.mark.parametrize("name,params,dim", ALL)
def test_fd_report_every_cost(name, params, dim):
    m = make_cost(name, params, dim)
    sep = (lambda x, y: np.linalg.norm(x - y) > 0.1) if name in ("neg_log", "power_p") else None
    if name == "sqrt_minus":
        sep = lambda x, y: np.linalg.norm(x - y) < 0.9  # noqa: E731
    rep = fd_consistency_report(m, 20, 3, accept=sep)
    assert rep.passed(1e-5), rep.max_error
    assert fd_consistency_report(m, 5, 3, accept=sep).max_error == fd_consistency_report(m, 5, 3, accept=sep).max_error


def test_fd_report_rejects_zero_samples():
    with pytest.raises(ValueError):
        fd_consistency_report(make_cost("quadratic"), 0, 1)


def test_fd_report_no_valid_pair():
    m = make_cost("neg_log", {}, 2)
    with pytest.raises(RuntimeError):
        fd_consistency_report(m, 1, 0, accept=lambda x, y: False)


def test_quadratic_hessians_exact():
    m = make_cost("quadratic", {}, 3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, y = rng.normal(size=(2, 3))
        assert np.array_equal(m.hess_xx(x, y), np.eye(3))
        assert np.array_equal(m.hess_xy(x, y), -np.eye(3))


def test_sqrt_plus_against_sympy():
    x1, x2, y1, y2 = sp.symbols("x1 x2 y1 y2", real=True)
    c = sp.sqrt(1 + (x1 - y1) ** 2 + (x2 - y2) ** 2)
    X, Y = [x1, x2], [y1, y2]
    vals = {x1: 0.3, x2: -0.2, y1: 0.9, y2: 0.4}
    m = make_cost("sqrt_plus", {}, 2)
    x, y = np.array([0.3, -0.2]), np.array([0.9, 0.4])
    gx = np.array([float(sp.diff(c, v).subs(vals)) for v in X])
    hxx = np.array([[float(sp.diff(c, a, b).subs(vals)) for b in X] for a in X])
    hxy = np.array([[float(sp.diff(c, a, b).subs(vals)) for b in Y] for a in X])
    np.testing.assert_allclose(m.grad_x(x, y), gx, atol=1e-14)
    np.testing.assert_allclose(m.hess_xx(x, y), hxx, atol=1e-14)
    np.testing.assert_allclose(m.hess_xy(x, y), hxy, atol=1e-14)


def test_sphere_hessian_against_law_of_cosines():
    # d^2/2 with d = arccos(x.y) on the ambient sphere; tangent Hessian by sympy in angle charts
    t, s = sp.symbols("t s", real=True)
    x = sp.Matrix([sp.sin(t) * sp.cos(s), sp.sin(t) * sp.sin(s), sp.cos(t)])
    y = np.array([math.sin(1.1), 0.0, math.cos(1.1)])
    f = sp.acos((x.T * sp.Matrix(y))[0]) ** 2 / 2
    at = {t: 0.4, s: 0.3}
    xv = np.array([float(v) for v in x.subs(at)])
    m = make_cost("sphere_sq_dist", {}, 3)
    J = np.array([[float(v) for v in x.diff(q).subs(at)] for q in (t, s)]).T
    g = np.array([float(sp.diff(f, q).subs(at)) for q in (t, s)])
    np.testing.assert_allclose(J.T @ m.grad_x(xv, y), g, atol=1e-12)
    assert float(m.eval(xv, y)) == pytest.approx(0.5 * math.acos(float(xv @ y)) ** 2, abs=1e-12)


unit = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(unit, min_size=4, max_size=4), st.sampled_from(["quadratic", "sqrt_plus", "neg_log"]))
def test_symmetric_costs_property(v, name):
    x, y = np.array(v[:2]), np.array(v[2:])
    m = make_cost(name, {}, 2)
    if not m.valid(x, y):
        return
    assert abs(float(m.eval(x, y)) - float(m.eval(y, x))) <= 1e-12
    np.testing.assert_allclose(m.grad_y(x, y), m.grad_x(y, x), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.lists(unit, min_size=6, max_size=6))
def test_sphere_symmetry_property(v):
    a = np.array(v[:3])
    b = np.array(v[3:])
    if np.linalg.norm(a) < 0.1 or np.linalg.norm(b) < 0.1:
        return
    x, y = geo.normalize(a), geo.normalize(b)
    m = make_cost("sphere_sq_dist", {}, 3)
    if not m.valid(x, y) or abs(x @ y) >= 1 - 1e-12:
        return
    assert abs(float(m.eval(x, y)) - float(m.eval(y, x))) <= 1e-12
    assert float(m.eval(x, y)) == pytest.approx(0.5 * math.acos(float(x @ y)) ** 2, abs=1e-12)
    np.testing.assert_allclose(m.grad_y(x, y), m.grad_x(y, x), atol=1e-10)


def test_sphere_point_check():
    m = make_cost("sphere_sq_dist", {}, 3)
    with pytest.raises(ValueError):
        m.check_point(np.array([1.0, 1.0, 0.0]))
    m.check_point(np.array([0.0, 0.0, 1.0]))


@pytest.mark.parametrize("name,params,dim", [c for c in ALL if c[0] != "power_p" or c[2] == 2])
def test_mixed_hessian_nonsingular(name, params, dim):
    m = make_cost(name, params, dim)
    rng = np.random.default_rng(11)
    from mtwreg.cost_models import sample_valid_pair

    for _ in range(10):
        x, y = sample_valid_pair(m, rng, accept=lambda a, b: m.distance(a, b) > 0.1)
        assert abs(m.mixed_det(x, y)) > 0
