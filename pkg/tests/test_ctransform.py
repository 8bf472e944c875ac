import math

import numpy as np
import pytest

from mtwreg import geometry as geo
from mtwreg.cost_models import make_cost
from mtwreg.ctransform import (
    GridDomain,
    GridError,
    GridPotential,
    build_phibar,
    c_convexify,
    c_star_transform,
    c_transform,
    cantor_points,
    contact_set,
    default_contact_tol,
    holder_exponent,
    measure_growth_exponent,
    phibar_at,
    segment_strip,
    spread_targets,
    verify_aw_geometric,
)

Q = make_cost("quadratic", {}, 2)


def brute_transform(model, X, phi, Y):
    C = np.array([[float(model.eval(x, y)) for y in Y] for x in X])
    return np.max(-C - phi[:, None], axis=0)


def test_zero_potential():
    g = GridDomain.box(0, 1, (11, 11))
    phic = c_transform(Q, GridPotential(g, np.zeros(g.size)), g)
    assert np.max(np.abs(phic.values)) == 0.0


def test_matches_brute_force_and_chunking():
    rng = np.random.default_rng(0)
    src = GridDomain.box(0, 1, (23, 17))
    tgt = GridDomain.box([0.2, 0.1], [1.3, 0.9], (19, 21))
    phi = GridPotential(src, rng.normal(size=src.size))
    for name in ("quadratic", "sqrt_plus", "power_p"):
        m = make_cost(name, {"p": 3} if name == "power_p" else {}, 2)
        if name == "power_p":
            continue  # coincident nodes are invalid for power costs
        np.testing.assert_allclose(c_transform(m, phi, tgt).values, brute_transform(m, src.points, phi.values, tgt.points),
                                   atol=1e-14)


def test_half_norm_closed_form():
    g = GridDomain.box(-1, 1, (21, 21))
    phi = GridPotential(g, 0.5 * np.sum(g.points**2, axis=1))
    phic = c_transform(Q, phi, g)
    # continuous maximiser x = y/2 gives -|y|^2/4; exact at nodes where y/2 is a node
    closed = -np.sum(g.points**2, axis=1) / 4
    assert np.all(phic.values <= closed + 1e-14)
    even = np.all(np.isclose(np.round(g.points / 0.2) * 0.2, g.points), axis=1)
    np.testing.assert_allclose(phic.values[even], closed[even], atol=1e-14)
    # grid rounding: the maximiser is within half a spacing of y/2
    assert np.max(closed - phic.values) <= (0.05 * math.sqrt(2)) ** 2 + 1e-14


def test_shift_and_order_reversal():
    rng = np.random.default_rng(1)
    g = GridDomain.box(0, 1, (9, 9))
    phi = GridPotential(g, rng.normal(size=g.size))
    psi = GridPotential(g, phi.values + np.abs(rng.normal(size=g.size)))
    a, b = c_transform(Q, phi, g), c_transform(Q, psi, g)
    np.testing.assert_allclose(c_transform(Q, phi.shifted(0.7), g).values, a.values - 0.7, atol=1e-14)
    assert np.all(b.values <= a.values)


def test_convexify_algebra():
    rng = np.random.default_rng(2)
    g = GridDomain.box(0, 1, (13, 13))
    for name in ("quadratic", "sqrt_plus", "neg_log"):
        m = make_cost(name, {}, 2)
        t = GridDomain.box(1.5, 2.5, (13, 13)) if name == "neg_log" else g
        phi = GridPotential(g, rng.normal(size=g.size) * 0.1)
        cc = c_convexify(m, phi, t)
        assert np.all(cc.values <= phi.values + 1e-15)
        assert np.max(np.abs(c_convexify(m, cc, t).values - cc.values)) <= 1e-12
        assert np.max(np.abs(c_transform(m, cc, t).values - c_transform(m, phi, t).values)) <= 1e-12
        # Young-type inequality after convexification
        phic = c_transform(m, cc, t)
        C = m.eval(g.points[:, None, :], t.points[None, :, :])
        assert np.min(cc.values[:, None] + phic.values[None, :] + C) >= -1e-12


def test_c_convex_input_is_fixed():
    rng = np.random.default_rng(3)
    g = GridDomain.box(0, 1, (11, 11))
    psi = GridPotential(g, rng.normal(size=g.size))
    phi = c_star_transform(Q, psi, g)
    np.testing.assert_allclose(c_convexify(Q, phi, g).values, phi.values, atol=1e-12)


def test_spike_removed():
    g = GridDomain.box(-1, 1, (9, 9))
    t = GridDomain.box(-1, 1, (17, 17))  # holds every supporting point x/2
    base = -0.25 * np.sum(g.points**2, axis=1)
    spiked = base.copy()
    k = g.index_of(np.array([0.25, 0.0]))
    spiked[k] += 1.0
    cc = c_convexify(Q, GridPotential(g, spiked), t)
    phic = brute_transform(Q, g.points, spiked, t.points)
    oracle = brute_transform(Q, t.points, phic, g.points)
    np.testing.assert_allclose(cc.values, oracle, atol=1e-14)
    assert base[k] < cc.values[k] < spiked[k] - 0.5
    others = np.ones(g.size, dtype=bool)
    others[k] = False
    np.testing.assert_allclose(cc.values[others], base[others], atol=1e-14)


def test_phibar_is_c_convex_and_vanishes():
    g = GridDomain.box(0, 0.6, (31, 31))
    x0 = g.points[g.nearest([0.3, 0.3])]
    y0, y1 = np.array([0.7, 0.45]), np.array([0.45, 0.75])
    for name in ("quadratic", "neg_log", "sqrt_plus"):
        m = make_cost(name, {}, 2)
        pb = build_phibar(m, x0, y0, y1, g)
        assert pb.values[g.index_of(x0)] == 0.0
        tgt = GridDomain.box([0.62, 0.62], [1.0, 1.0], (21, 21))
        tgt_pts = np.vstack([tgt.points, y0, y1])
        t = GridDomain("points", tgt_pts, tgt.spacing)
        np.testing.assert_allclose(c_convexify(m, pb, t).values, pb.values, atol=1e-12)
    with pytest.raises(GridError):
        build_phibar(Q, x0, y0, y0, g)


def test_phibar_dominates_interpolants():
    g = GridDomain.box(0, 0.6, (41, 41))
    x0 = np.array([0.3, 0.3])
    y0, y1 = np.array([0.7, 0.45]), np.array([0.45, 0.75])
    for name in ("quadratic", "neg_log"):
        rep = verify_aw_geometric(make_cost(name, {}, 2), x0, y0, y1, np.linspace(0, 1, 11), g, fit=False)
        assert rep.min_value >= -rep.tol
        assert rep.sign >= 0
    rep = verify_aw_geometric(Q, x0, y0, y1, [0.5], g, fit=False)
    assert abs(rep.min_value) <= 1e-12


def test_phibar_fit_positive_for_as_cost():
    g = GridDomain.box(0.2, 0.4, (41, 41))
    x0 = np.array([0.3, 0.3])
    rep = verify_aw_geometric(make_cost("neg_log", {}, 2), x0, [0.7, 0.45], [0.45, 0.75], [0.25, 0.5, 0.75], g)
    assert rep.delta0_estimate > 0
    assert all(d[1] > 0 for d in rep.delta_fit)
    with pytest.raises(GridError):
        verify_aw_geometric(Q, x0, [0.7, 0.45], [0.45, 0.75], [1.5], g)


def test_contact_set_smooth_potential():
    g = GridDomain.box(-1, 1, (41, 41))
    phi = GridPotential(g, 0.5 * np.sum(g.points**2, axis=1) * 0.8)
    phic = c_transform(Q, phi, g)
    x = g.points[g.nearest([0.3, -0.2])]
    cs = contact_set(Q, phi, phic, x)
    assert cs.n_components == 1
    assert cs.tol_used == pytest.approx(default_contact_tol(Q, x, g))
    tight = contact_set(Q, phi, phic, x, tol=1e-12)
    # exact ties between neighbouring nodes; the continuous contact point is 1.8 x
    assert tight.n_components == 1 and len(tight.members) <= 4
    assert g.nearest(1.8 * x) in set(tight.members.tolist())
    with pytest.raises(GridError):
        contact_set(Q, phi, phic, x, tol=-1.0)
    with pytest.raises(GridError):
        contact_set(Q, phi, phic, x + 0.013)
    d = cs.as_dict()
    assert d["components"] == 1 and d["members"] == len(cs.members)


def test_contact_quadratic_phibar_covers_segment():
    x0 = np.array([0.3, 0.3])
    y0, y1 = np.array([0.7, 0.45]), np.array([0.45, 0.75])
    src = GridDomain.box(x0 - 0.1, x0 + 0.1, (21, 21))
    tgt = GridDomain.box(0.4, 0.8, (41, 41))
    pb = build_phibar(Q, x0, y0, y1, src)
    cs = contact_set(Q, pb, c_transform(Q, pb, tgt), x0)
    assert cs.n_components == 1
    members = tgt.points[cs.members]
    for t in np.linspace(0, 1, 9):
        y = (1 - t) * y0 + t * y1
        assert np.min(np.linalg.norm(members - y, axis=1)) <= tgt.spacing


def test_segment_strip_contains_segment():
    x0 = np.array([0.3, 0.3])
    y0, y1 = np.array([0.7, 0.45]), np.array([0.45, 0.75])
    s = segment_strip(Q, x0, y0, y1, nodes_along=100, half_width=3)
    for t in np.linspace(0, 1, 11):
        y = (1 - t) * y0 + t * y1
        assert np.min(np.linalg.norm(s.points - y, axis=1)) <= s.spacing
    sph = make_cost("sphere_sq_dist", {}, 3)
    c = geo.normalize(np.array([0.1, 0.2, 1.0]))
    B = geo.tangent_basis(c)
    ss = segment_strip(sph, c, geo.sphere_exp(c, B @ [0.9, 0.2]), geo.sphere_exp(c, B @ [0.1, 1.1]), 60, 3)
    assert np.allclose(np.linalg.norm(ss.points, axis=1), 1.0)


def test_spread_targets_on_segment_line():
    m = make_cost("power_p", {"p": 4}, 2)
    x0, y = np.array([0.2, 0.2]), np.array([0.7, 0.5])
    nu = np.array([0.0, 1.0])
    y0, y1 = spread_targets(m, x0, y, nu, 0.5)
    p = -m.grad_x(x0, y)
    np.testing.assert_allclose(-m.grad_x(x0, y0), p - 0.5 * np.linalg.norm(p) * nu, atol=1e-10)
    np.testing.assert_allclose(-m.grad_x(x0, y1), p + 0.5 * np.linalg.norm(p) * nu, atol=1e-10)


def test_grid_domain_checks(tmp_path):
    with pytest.raises(GridError):
        GridDomain.box(0, 1, (1, 5))
    with pytest.raises(GridError):
        GridDomain.sphere_points(np.array([[0, 0, 1.0], [0, 0, 1.0], [1.0, 0, 0]]), k=1)
    g = GridDomain.box(0, 1, (5, 5))
    mask = np.zeros(g.size, dtype=bool)
    mask[[0, 24]] = True
    with pytest.raises(GridError):
        g.subset(mask)
    cloud = GridDomain.sphere_points(geo.fibonacci_sphere(200))
    assert cloud.adjacency().shape == (200, 200)
    pot = GridPotential(g, np.arange(g.size) * 0.1)
    pot.to_csv(tmp_path / "p.csv")
    back = GridPotential.from_csv(tmp_path / "p.csv", g)
    assert np.array_equal(back.values, pot.values)
    with pytest.raises(ValueError):
        GridPotential(g, np.full(g.size, np.nan))


def test_invalid_pair_raises():
    g = GridDomain.box(0, 1, (5, 5))
    with pytest.raises(GridError):
        c_transform(make_cost("neg_log", {}, 2), GridPotential(g, np.zeros(g.size)), g)


def test_holder_exponent():
    assert holder_exponent(2, math.inf) == (1.0, 1 / 7)
    assert holder_exponent(1, math.inf) == (1.0, 1 / 3)
    a, b = holder_exponent(3, 6)
    assert a == pytest.approx(0.5) and b == pytest.approx(1 / 21)
    with pytest.raises(ValueError):
        holder_exponent(2, 2)


def test_growth_uniform_and_line():
    u = np.stack(np.meshgrid(*(2 * [np.linspace(0, 1, 100)])), -1).reshape(-1, 2)
    fit = measure_growth_exponent(u, np.full(len(u), 1 / len(u)), np.geomspace(0.02, 0.2, 6), n=2)
    assert fit.slope == pytest.approx(2.0, abs=0.15)
    x = np.linspace(0, 1, 2000)
    line = np.column_stack([x, 0.5 * x])
    fit = measure_growth_exponent(line, np.full(2000, 1 / 2000), np.geomspace(0.01, 0.1, 6), n=2, p=4)
    assert fit.slope == pytest.approx(1.0, abs=0.05)
    assert fit.satisfies_ball_growth is False
    with pytest.raises(ValueError):
        measure_growth_exponent(line, np.full(2000, 1 / 2000), [0.1, 0.2])
    with pytest.raises(ValueError):
        measure_growth_exponent(np.zeros((1, 2)), [1.0], [0.1, 0.2, 0.3])


def test_cantor_points():
    c = cantor_points(3)
    assert len(c) == 8
    np.testing.assert_allclose(c[:4], [0, 2 / 27, 6 / 27, 8 / 27])
    assert np.all(np.diff(c) >= 1 / 27 - 1e-15)


def test_phibar_at_matches_grid():
    g = GridDomain.box(0, 1, (6, 6))
    x0, y0, y1 = np.array([0.4, 0.4]), np.array([2.0, 1.0]), np.array([1.0, 2.0])
    np.testing.assert_allclose(phibar_at(Q, x0, y0, y1, g.points), build_phibar(Q, x0, y0, y1, g).values)
