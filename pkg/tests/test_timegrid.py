import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathdens.errors import DomainError
from pathdens.timegrid import (
    Config,
    GridPath,
    MeasureSpec,
    build_grid,
    holder_seminorm,
    hs_norm_S,
    indicator_distance,
    lifted_norm,
    lp_norm,
)


def test_build_grid_uniform():
    grid = build_grid(MeasureSpec(horizon=1.0), 4)
    assert np.allclose(grid.points, [0, 0.25, 0.5, 0.75, 1.0])
    assert math.fsum(grid.weights) == 1.0


def test_build_grid_atom_mass():
    grid = build_grid(MeasureSpec(horizon=2.0, atoms=[(0.0, 1.0)]), 2)
    assert math.fsum(grid.weights) == 3.0


def test_build_grid_required_point_dedup():
    grid = build_grid(MeasureSpec(horizon=1.0, atoms=[(0.3, 0.5)]), 7, required_points=[0.3])
    assert np.sum(np.abs(grid.points - 0.3) < 1e-12) == 1
    assert math.fsum(grid.weights) == 1.5


def test_build_grid_rejects_outside_points():
    with pytest.raises(DomainError):
        build_grid(MeasureSpec(horizon=1.0), 4, required_points=[1.5])


def test_measure_validation():
    with pytest.raises(DomainError):
        MeasureSpec(horizon=1.0, atoms=[(0.5, -1.0)])
    with pytest.raises(DomainError):
        MeasureSpec(horizon=1.0, atoms=[(0.6, 0.1), (0.4, 0.1)])


def test_lp_norm_examples():
    grid = build_grid(MeasureSpec(horizon=1.0), 8)
    ones = np.ones(grid.n_points)
    assert lp_norm(ones, grid, 1.4) == pytest.approx(1.0, abs=1e-14)
    assert lp_norm(np.zeros(grid.n_points), grid, 1.4) == 0.0
    ga = build_grid(MeasureSpec(horizon=2.0, atoms=[(0.0, 1.0)]), 8)
    assert lp_norm(np.ones(ga.n_points), ga, 1.25) == pytest.approx(3 ** (1 / 1.25), rel=1e-14)
    with pytest.raises(DomainError):
        lp_norm(ones, grid, 0.9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.05, 1.45))
def test_lp_norm_is_a_norm(seed, p):
    grid = build_grid(MeasureSpec(horizon=1.0), 16)
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((grid.n_points, 2))
    y = gen.standard_normal((grid.n_points, 2))
    c = gen.standard_normal()
    assert lp_norm(x + y, grid, p) <= lp_norm(x, grid, p) + lp_norm(y, grid, p) + 1e-12
    assert lp_norm(c * x, grid, p) == pytest.approx(abs(c) * lp_norm(x, grid, p), rel=1e-12)


def test_indicator_distance_examples():
    grid = build_grid(MeasureSpec(horizon=1.0), 4)
    assert indicator_distance(0.25, 0.25, grid, 1.25) == pytest.approx(0.25**0.8, rel=1e-14)
    assert indicator_distance(0.25, 0.0, grid, 1.25) == 0.0
    ga = build_grid(MeasureSpec(horizon=1.0, atoms=[(0.4, 0.3)]), 10)
    got = indicator_distance(0.2, 0.4, ga, 1.4)
    assert got == pytest.approx((0.4 + 0.3) ** (1 / 1.4), rel=1e-13)


def test_indicator_distance_p_additive():
    grid = build_grid(MeasureSpec(horizon=1.0), 16)
    p = 1.4
    for a, b, c in [(0.0, 0.25, 0.75), (0.125, 0.5, 1.0)]:
        lhs = indicator_distance(a, b - a, grid, p) ** p + indicator_distance(b, c - b, grid, p) ** p
        rhs = indicator_distance(a, c - a, grid, p) ** p
        assert lhs == pytest.approx(rhs, rel=1e-13)


def test_hs_norm_examples():
    grid = build_grid(MeasureSpec(horizon=1.0), 8)
    assert hs_norm_S(0.0, grid, 1) == pytest.approx(2.0, abs=1e-14)
    assert hs_norm_S(0.5, grid, 3) == pytest.approx(3 * 1.5, abs=1e-13)
    assert hs_norm_S(0.5, grid, 0) == 0.0
    ga = build_grid(MeasureSpec(horizon=1.0, atoms=[(1.0, 0.25)]), 8)
    w_end = ga.weights[-1]
    assert hs_norm_S(1.0, ga, 2) == pytest.approx(2 * (w_end + 1.0), abs=1e-14)
    with pytest.raises(DomainError):
        hs_norm_S(0.123, grid, 1)


def test_holder_seminorm_examples(grid64):
    const = np.ones(grid64.n_points)
    assert holder_seminorm(const, grid64, 0.4) == 0.0
    linear = grid64.points.copy()
    assert holder_seminorm(linear, grid64, 0.5) == pytest.approx(1.0, rel=1e-12)
    gen = np.random.default_rng(1)
    v = gen.standard_normal(grid64.n_points)
    assert holder_seminorm(3.5 * v, grid64, 0.4) == pytest.approx(3.5 * holder_seminorm(v, grid64, 0.4), rel=1e-12)
    with pytest.raises(DomainError):
        holder_seminorm(v, grid64, 0.4, window=(2.0, 3.0))


def test_lifted_norm_formula():
    grid = build_grid(MeasureSpec(horizon=1.0, atoms=[(0.9, 0.2)]), 10)
    from pathdens.coeffs import lift

    t = 0.5
    v = np.array([1.0])
    lv = lift(v, t, grid)
    mass = grid.mass_from(grid.index(t))
    expect = math.sqrt(mass ** (2 / 1.4) + 1.0)
    assert lifted_norm(lv.path_part, lv.point_part, grid, 1.4) == pytest.approx(expect, rel=1e-13)


def test_config_validation():
    with pytest.raises(DomainError):
        Config(p=1.6)
    with pytest.raises(DomainError):
        Config(p=1.0)
    with pytest.raises(DomainError):
        Config(tau=0.5, tau0=0.5)
    cfg = Config(p=1.4, tau=1.0, tau0=0.5, n_steps=16)
    assert 1 / 3 < cfg.alpha < 0.5
    ms = MeasureSpec(horizon=1.0, atoms=[(0.7, 0.1)])
    with pytest.raises(DomainError):
        cfg.validate(ms)
    # atom at tau itself is allowed: the window is half open
    ok = MeasureSpec(horizon=1.0, atoms=[(1.0, 0.1)])
    cfg.validate(ok)
    before = MeasureSpec(horizon=1.0, atoms=[(0.25, 0.1)])
    cfg.validate(before)


def test_config_grid_contains_window(grid64):
    ms = MeasureSpec(horizon=1.0)
    cfg = Config(p=1.4, tau=0.77, tau0=0.13, n_steps=10)
    grid = cfg.grid(ms)
    assert grid.contains(0.77) and grid.contains(0.13)


def test_gridpath_stopped(grid64):
    x = np.arange(grid64.n_points, dtype=float)
    path = GridPath(grid64, x)
    st_ = path.stopped(grid64.points[10])
    assert np.all(st_.values[10:] == x[10])
    assert np.all(st_.values[:10, 0] == x[:10])
