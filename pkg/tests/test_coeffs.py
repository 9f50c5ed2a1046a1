import numpy as np
import pytest

from pathdens import coeffs
from pathdens.errors import DomainError
from pathdens.timegrid import GridPath, MeasureSpec, build_grid


def _grid(T=1.0, n_steps=64, atoms=(), req=()):
    return build_grid(MeasureSpec(horizon=T, atoms=atoms), n_steps, req)


def _without_oracles(field):
    """Copy of the field with every analytic derivative disabled."""
    import copy

    f = copy.copy(field)
    for name in ("_dv_b", "_dv_sigma", "_dpath_b", "_dpath_sigma", "_dt_b", "_dt_sigma"):
        setattr(f, name, lambda *a, **k: None)
    return f


def all_families():
    g2 = _grid(T=2.0, n_steps=64, req=[1.0])
    g1 = _grid()
    gd = _grid(atoms=[(0.0, 1.0)])
    ga = _grid(atoms=[(0.25, 0.5)], req=[0.25, 0.5, 0.75])
    gen = np.random.default_rng(5)
    return [
        ("constant", coeffs.ConstantField([[1.0, 0.2], [0.0, 0.7]]), g1, 2),
        ("state_linear", coeffs.scalar_geometric(sigma=0.6, mu=-0.2), g1, 1),
        ("intro", coeffs.IntroExample(), g2, 1),
        ("integral", coeffs.IntegralCoefficient(), g1, 1),
        ("delay", coeffs.ContinuousDelay(horizon=1.0, n_quad=64), gd, 1),
        ("discrete", coeffs.DiscretePoints([0.25, 0.5, 0.75], [0.4, -0.3, 0.2]), ga, 1),
        ("hormander3d", coeffs.HormanderExample3D(), g1, 3),
        ("degenerate", coeffs.DegeneratePair(), g1, 2),
    ]


def _state(grid, n, seed=0):
    gen = np.random.default_rng(seed)
    vals = np.cumsum(gen.standard_normal((grid.n_points, n)), axis=0) * 0.1 + 0.3
    return GridPath(grid, vals)


def test_eval_examples():
    g2 = _grid(T=2.0, n_steps=100, req=[1.0, 1.5])
    intro = coeffs.IntroExample()
    path = GridPath(g2, g2.points[:, None])  # x(s) = s
    assert coeffs.eval_b(intro, 1.5, path, path.values[g2.index(1.5)]) == pytest.approx([-1.0])
    assert coeffs.eval_b(intro, 0.5, path, np.array([0.5])) == pytest.approx([-0.5])
    g1 = _grid(n_steps=512)
    integ = coeffs.IntegralCoefficient()
    p1 = GridPath(g1, g1.points[:, None])
    got = coeffs.eval_b(integ, 1.0, p1, np.array([1.0]))
    assert got == pytest.approx([0.5], abs=2 / 512)
    const = coeffs.ConstantField([[1.0, 0.2]])
    assert np.array_equal(coeffs.eval_sigma(const, 0.3, p1, np.array([9.0])), [[1.0, 0.2]])
    with pytest.raises(DomainError):
        coeffs.eval_b(intro, 5.0, path, np.array([0.0]))


@pytest.mark.parametrize("name,field,grid,n", all_families())
def test_non_anticipative(name, field, grid, n):
    path = _state(grid, n)
    t = grid.points[grid.n_points // 2]
    assert coeffs.check_nonanticipative(field, t, path, path.values[grid.index(t)], trials=1000)


@pytest.mark.parametrize("name,field,grid,n", all_families())
def test_fd_matches_analytic_oracles(name, field, grid, n):
    """Where analytic first derivatives exist, FD agrees to 1e-5 relative."""
    path = _state(grid, n, seed=3)
    t = grid.points[int(grid.n_points * 0.6)]
    value = path.values[grid.index(t)]
    bare = _without_oracles(field)
    gen = np.random.default_rng(1)
    dpath = gen.standard_normal(path.values.shape) * 0.5
    dvalue = gen.standard_normal(n)
    for which in ["b", "sigma"]:
        ana = coeffs.directional_derivative(field, which, t, path, value, dpath, dvalue)
        fd = coeffs.directional_derivative(bare, which, t, path, value, dpath, dvalue)
        scale = max(1.0, np.max(np.abs(ana)))
        assert np.max(np.abs(ana - fd)) / scale < 1e-5, which


def test_vertical_examples():
    # state-dependent linear: exact jacobian
    lin = coeffs.StateLinearField(a_sigma=[[[0.3]]], a_b=[[-0.9]])
    g = _grid()
    path = _state(g, 1)
    vb = coeffs.vertical_derivative(lin, "b", 0.5, path, np.array([2.0]))
    assert np.allclose(vb, [[-0.9]], atol=1e-14)
    # the 3D example: cos(y2) at (2,2) and 1 at (3,1)
    h3 = coeffs.HormanderExample3D()
    p3 = _state(g, 3)
    y = np.array([0.4, -0.7, 0.2])
    v = coeffs.vertical_derivative(h3, 1, 0.5, p3, y)
    expect = np.zeros((3, 3))
    expect[1, 1] = np.cos(-0.7)
    expect[2, 0] = 1.0
    assert np.allclose(v, expect, atol=1e-12)
    # integral family: the integral term never reads slots at or after t
    integ = coeffs.IntegralCoefficient()
    p1 = _state(g, 1)
    vi = coeffs.vertical_derivative(integ, "b", 0.5, p1, np.array([0.3]))
    assert np.allclose(vi, 0.0, atol=1e-12)  # a_b = 0 and the bump misses [0, t)


def test_directional_examples():
    g = _grid()
    lin = coeffs.IntegralCoefficient()  # b = integral of x over [0,t)
    path = _state(g, 1)
    zero = np.zeros_like(path.values)
    assert coeffs.directional_derivative(lin, "b", 0.5, path, path.values[32], zero, np.zeros(1)) == pytest.approx([0.0])
    # linearity: derivative equals the quadrature of dpath over [0, t)
    gen = np.random.default_rng(2)
    dpath = gen.standard_normal(path.values.shape)
    got = coeffs.directional_derivative(lin, "b", 0.5, path, path.values[32], dpath, np.zeros(1))
    it = g.index(0.5)
    leb = np.append(np.diff(g.points), 0.0)
    expect = np.sum(leb[:it] * dpath[:it, 0])
    assert got == pytest.approx([expect], rel=1e-12)
    # continuous delay: analytic vs FD to 1e-6
    gd = _grid(atoms=[(0.0, 1.0)])
    dly = coeffs.ContinuousDelay(horizon=1.0, n_quad=64)
    pd = _state(gd, 1, seed=7)
    dv = gen.standard_normal(1)
    ana = coeffs.directional_derivative(dly, "b", 0.5, pd, pd.values[gd.index(0.5)], dpath, dv)
    fd = coeffs.directional_derivative(_without_oracles(dly), "b", 0.5, pd, pd.values[gd.index(0.5)], dpath, dv)
    assert np.max(np.abs(ana - fd)) < 1e-6


def test_time_derivative_examples():
    g = _grid(n_steps=1024)
    # autonomous field
    lin = coeffs.scalar_geometric(sigma=0.5)
    path = _state(g, 1)
    assert coeffs.time_derivative(lin, "b", 0.5, path, np.array([1.0])) == pytest.approx([0.0])
    # sigma(t, y) = t * y: the time slope is y (FD is exact for linear time dependence)
    tv = coeffs.ClosureField(1, 1, sigma=lambda t, p, v: [[t * v[0]]], b=lambda t, p, v: [0.0])
    got = coeffs.time_derivative(tv, 0, 0.5, path, np.array([1.7]))
    assert got == pytest.approx([1.7], rel=1e-9)
    # continuous delay: analytic matches FD at half-mesh within 1e-5
    # (quadrature at the grid mesh keeps the FD stencil off interpolation kinks)
    gd = _grid(n_steps=2048, atoms=[(0.0, 1.0)])
    dly = coeffs.ContinuousDelay(horizon=1.0)
    smooth = GridPath(gd, (np.sin(2.3 * gd.points) + 0.2 * gd.points)[:, None])
    t = gd.points[1500]
    ana = coeffs.time_derivative(dly, "b", t, smooth, smooth.values[1500])
    fd = coeffs.time_derivative(_without_oracles(dly), "b", t, smooth, smooth.values[1500])
    assert np.max(np.abs(ana - fd)) < 1e-5


def test_time_derivative_boundary_flag():
    g = _grid()
    fld = coeffs.ClosureField(1, 1, sigma=lambda t, p, v: [[1.0]], b=lambda t, p, v: [t * t])
    path = _state(g, 1)
    with pytest.warns(coeffs.BoundaryFlag):
        coeffs.time_derivative(fld, "b", 0.0, path, np.array([0.0]))


def test_lift_examples(grid64):
    lv = coeffs.lift(np.zeros(2), 0.5, grid64)
    assert np.all(lv.path_part == 0) and np.all(lv.point_part == 0)
    lv0 = coeffs.lift([1.0, 2.0], 0.0, grid64)
    assert np.all(lv0.path_part == [1.0, 2.0])
    t = grid64.points[20]
    lvt = coeffs.lift([3.0], t, grid64)
    assert np.all(lvt.path_part[:20] == 0)
    assert np.all(lvt.path_part[20:] == 3.0)
    assert lvt.point_part == pytest.approx([3.0])


def test_freeze_views_match():
    for name, field, grid, n in all_families():
        frozen_supported = type(field).freeze is not coeffs.CoefficientField.freeze
        path = _state(grid, n, seed=11)
        t = grid.points[int(grid.n_points * 0.7)]
        fr = field.freeze(t, path)
        gen = np.random.default_rng(4)
        for _ in range(3):
            v = gen.standard_normal(n)
            assert np.allclose(
                coeffs.eval_sigma(fr, t, path, v), coeffs.eval_sigma(field, t, path, v), atol=1e-13
            ), name
            assert np.allclose(coeffs.eval_b(fr, t, path, v), coeffs.eval_b(field, t, path, v), atol=1e-13), name
        del frozen_supported


def test_batch_steppers_match_scalar():
    # walk the stepper along a constant path and compare coefficients with
    # the scalar field evaluation at matching checkpoints
    for name, field, grid, n in all_families():
        stepper = field.batch_stepper(grid, 3)
        if stepper is None:
            continue
        gen = np.random.default_rng(8)
        x0 = np.abs(gen.standard_normal(n)) + 0.2
        batch = np.tile(x0, (3, 1))
        path = GridPath(grid, np.tile(x0, (grid.n_points, 1)))
        checkpoints = {0, grid.n_steps // 2, grid.n_steps - 1}
        for j in range(grid.n_steps):
            b, s = stepper.step(j, batch)
            if j in checkpoints:
                t = grid.points[j]
                bs = coeffs.eval_b(field, t, path, x0)
                ss = coeffs.eval_sigma(field, t, path, x0)
                assert np.allclose(b[0], bs, atol=1e-10), name
                assert np.allclose(s[0], ss, atol=1e-10), name
            stepper.advance(j, batch)


def test_make_field_registry():
    fld = coeffs.make_field("geometric", sigma=0.5)
    assert fld.d == 1
    with pytest.raises(Exception):
        coeffs.make_field("no_such_family")
