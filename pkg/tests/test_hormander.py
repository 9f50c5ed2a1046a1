import numpy as np
import pytest

from pathdens import coeffs, hormander
from pathdens.errors import DomainError, ResourceError
from pathdens.timegrid import Config, GridPath, MeasureSpec, build_grid


def _zero_path(grid, n):
    return GridPath(grid, np.zeros((grid.n_points, n)))


def test_bracket_antisymmetry_and_self(grid64):
    fld = coeffs.HormanderExample3D()
    path = _zero_path(grid64, 3)
    y = np.array([0.3, -0.4, 0.8])
    l1, l2 = hormander.sigma_leaves(fld)
    b12 = hormander.lie_bracket(l1, l2, 0.5, path, y)
    b21 = hormander.lie_bracket(l2, l1, 0.5, path, y)
    assert np.allclose(b12, -b21, atol=1e-12)
    assert np.allclose(hormander.lie_bracket(l2, l2, 0.5, path, y), 0.0, atol=1e-12)


def test_bracket_constant_fields(grid64):
    fld = coeffs.ConstantField(np.array([[1.0, 0.0], [0.0, 1.0]]))
    path = _zero_path(grid64, 2)
    l1, l2 = hormander.sigma_leaves(fld)
    assert np.allclose(hormander.lie_bracket(l1, l2, 0.5, path, np.zeros(2)), 0.0, atol=1e-12)


def test_paper_bracket_oracle_and_fd(grid64):
    y = np.array([0.7, 0.1, -0.2])
    path = _zero_path(grid64, 3)
    # analytic oracles: exact
    fld = coeffs.HormanderExample3D()
    l1, l2 = hormander.sigma_leaves(fld)
    assert np.array_equal(hormander.lie_bracket(l1, l2, 0.5, path, y), [0.0, 0.0, -1.0])
    # FD route through a bare closure field: within 1e-6
    a = 2.5
    bare = coeffs.ClosureField(
        3, 2,
        sigma=lambda t, p, v: np.array([[1.0, 0.0], [0.0, a + np.sin(v[1])], [0.0, v[0]]]),
        b=lambda t, p, v: np.zeros(3),
    )
    m1, m2 = hormander.sigma_leaves(bare)
    got = hormander.lie_bracket(m1, m2, 0.5, path, y)
    assert np.max(np.abs(got - [0.0, 0.0, -1.0])) < 1e-6


def test_bracket_bilinearity(grid64):
    path = _zero_path(grid64, 2)
    y = np.array([0.2, -0.6])
    f1 = hormander.FuncVector(lambda t, p, v: np.array([np.sin(v[0]), v[1] ** 2]), 2)
    f2 = hormander.FuncVector(lambda t, p, v: np.array([v[0] * v[1], np.cos(v[1])]), 2)
    f3 = hormander.FuncVector(lambda t, p, v: np.array([v[1], 0.5 * v[0]]), 2)
    a, b = 1.7, -0.6
    comb = hormander.FuncVector(lambda t, p, v: a * f1.fn(t, p, v) + b * f2.fn(t, p, v), 2)
    lhs = hormander.lie_bracket(comb, f3, 0.5, path, y)
    rhs = a * hormander.lie_bracket(f1, f3, 0.5, path, y) + b * hormander.lie_bracket(f2, f3, 0.5, path, y)
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_classical_bracket_coincidence(grid64):
    # state-dependent polynomial fields: the vertical bracket reduces to the
    # plain value-space bracket computed by independent finite differences
    gen = np.random.default_rng(3)
    c1, c2 = gen.standard_normal((2, 2, 2, 2)) * 0.4
    fld = coeffs.ClosureField(
        2, 2,
        sigma=lambda t, p, v: np.stack(
            [c1[0] @ v + c1[1] @ (v * v), c2[0] @ v + c2[1] @ (v * v)], axis=1
        ),
        b=lambda t, p, v: np.zeros(2),
    )
    path = _zero_path(grid64, 2)
    y = gen.standard_normal(2) * 0.5
    l1, l2 = hormander.sigma_leaves(fld)
    got = hormander.lie_bracket(l1, l2, 0.5, path, y)

    h = 1e-6

    def val_jac(f):
        cols = []
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            cols.append((f(y + e) - f(y - e)) / (2 * h))
        return np.stack(cols, axis=1)

    s1 = lambda v: c1[0] @ v + c1[1] @ (v * v)
    s2 = lambda v: c2[0] @ v + c2[1] @ (v * v)
    classical = val_jac(s1) @ s2(y) - val_jac(s2) @ s1(y)
    assert np.max(np.abs(got - classical)) < 1e-6


def test_sigma_set_sizes():
    f1 = coeffs.ConstantField(np.ones((1, 1)))
    levels = hormander.generate_sigma_sets(f1, 2)
    assert [len(l) for l in levels] == [1, 1, 1]
    f2 = coeffs.DegeneratePair()
    levels = hormander.generate_sigma_sets(f2, 2)
    assert [len(l) for l in levels] == [2, 4, 8]
    labels = [v.label() for v in levels[1]]
    assert sorted(labels) == sorted(["[s1,s1]", "[s2,s1]", "[s1,s2]", "[s2,s2]"])
    with pytest.raises(ResourceError):
        hormander.generate_sigma_sets(coeffs.HormanderExample3D(), 14)


def test_span_check_elliptic(grid64):
    fld = coeffs.ConstantField(np.eye(3))
    rep = hormander.span_check(fld, 0.5, _zero_path(grid64, 3), np.zeros(3), max_depth=2)
    assert rep.spanning_depth == 0
    assert rep.lambda_min == pytest.approx(1.0, abs=1e-12)


def test_span_check_monotone_depth(grid64):
    fld = coeffs.HormanderExample3D()
    rep = hormander.span_check(fld, 0.5, _zero_path(grid64, 3), np.array([0.4, 0.1, -0.3]), max_depth=3)
    lam = rep.lambda_by_depth
    assert all(b >= a - 1e-12 for a, b in zip(lam, lam[1:]))
    assert rep.spanning_depth == 1


def test_span_check_degenerate(grid64):
    rep = hormander.span_check(coeffs.DegeneratePair(), 0.5, _zero_path(grid64, 2), np.array([0.3, 0.0]), max_depth=3)
    assert rep.lambda_min <= 1e-12
    assert rep.spanning_depth is None


def test_paper_example_3d_values():
    out = hormander.paper_example_3d(2.0, [0.0, 0.0, 0.0])
    assert np.array_equal(out["bracket"], [0.0, 0.0, -1.0])
    assert out["det"] == pytest.approx(-2.0)
    gen = np.random.default_rng(0)
    for _ in range(50):
        a = 2.0 + gen.random() * 3
        y = gen.standard_normal(3)
        res = hormander.paper_example_3d(a, y)
        assert res["lambda_min"] <= 1.0 + 1e-15
        assert res["det"] == pytest.approx(-(a + np.sin(y[1])), rel=1e-15)
    with pytest.raises(DomainError):
        hormander.paper_example_3d(1.5, [0.0, 0.0, 0.0])


def test_span_check_matches_closed_form(grid64):
    fld = coeffs.HormanderExample3D()
    path = _zero_path(grid64, 3)
    l1, l2 = hormander.sigma_leaves(fld)
    nodes = [l1, l2, hormander.BracketNode(l1, l2)]
    gen = np.random.default_rng(1)
    for _ in range(20):
        y = gen.standard_normal(3)
        rep = hormander.span_check(fld, 0.5, path, y, nodes=nodes)
        a = fld.a_param(0.5, path)
        assert rep.lambda_min == pytest.approx(hormander.example3d_lambda_min(a, y[0], y[1]), abs=1e-8)
        assert rep.theta_lower == pytest.approx(rep.lambda_min, abs=1e-8)


def test_a5_certificate():
    ms = MeasureSpec(horizon=1.0)
    cfg = Config(p=1.4, tau=1.0, tau0=0.5, seed=21, n_steps=32)
    elliptic = coeffs.ConstantField(np.eye(2))
    rep = hormander.a5_certificate(elliptic, [0.0, 0.0], ms, cfg, 20, max_depth=1)
    assert rep.passed
    assert np.allclose(rep.lambda_mins, rep.lambda_mins[0])
    h3 = hormander.a5_certificate(coeffs.HormanderExample3D(), [0.2, -0.1, 0.3], ms, cfg, 30, max_depth=2)
    assert h3.passed and np.isfinite(h3.inverse_moments[4])
    h3b = hormander.a5_certificate(coeffs.HormanderExample3D(), [0.2, -0.1, 0.3], ms, cfg, 15, max_depth=2)
    assert h3b.inverse_moments[4] == pytest.approx(h3.inverse_moments[4], rel=2.0)
    deg = hormander.a5_certificate(coeffs.DegeneratePair(), [0.1, 0.2], ms, cfg, 10, max_depth=2)
    assert not deg.passed
