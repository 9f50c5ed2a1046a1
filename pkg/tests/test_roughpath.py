import numpy as np
import pytest

from pathdens import roughpath as rp
from pathdens.errors import ContractError, DomainError
from pathdens.timegrid import MeasureSpec, build_grid


def test_sampling_deterministic(grid64):
    b1 = rp.sample_brownian(grid64, 2, 7, "x")
    b2 = rp.sample_brownian(grid64, 2, 7, "x")
    assert np.array_equal(b1, b2)
    b3 = rp.sample_brownian(grid64, 2, 8, "x")
    assert not np.array_equal(b1, b3)
    assert np.all(b1[0] == 0)


def test_sampling_variance():
    grid = build_grid(MeasureSpec(horizon=1.0), 4)
    h = 0.25
    incs = np.array([np.diff(rp.sample_brownian(grid, 1, 0, "var", m), axis=0)[0, 0] for m in range(10_000)])
    assert np.var(incs) == pytest.approx(h, rel=0.05)


def test_brownian_tree_nested():
    paths = rp.brownian_tree(1.0, 8, 3, 2, seed=5)
    for coarse, fine in zip(paths, paths[1:]):
        assert np.array_equal(fine[::2], coarse)


def test_lift_kappa_one_zero_second():
    b = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 16), 2, 1)
    lifted = rp.lift(b, np.linspace(0, 1, 17), 1)
    assert np.all(lifted.second == 0.0)


def test_lift_deterministic_line():
    # B_t = t: left sums give (t-s)^2 (1 - 1/kappa) / 2 exactly
    for kappa in (2, 8, 32):
        fine = np.linspace(0, 1, 4 * kappa + 1)[:, None]
        lifted = rp.lift(fine, np.linspace(0, 1, 4 * kappa + 1), kappa)
        h = 0.25
        expect = h * h * (1 - 1 / kappa) / 2
        assert np.allclose(lifted.second[:, 0, 0], expect, rtol=1e-12)


def test_lift_divisibility():
    with pytest.raises(DomainError):
        rp.lift(np.zeros((18, 1)), np.linspace(0, 1, 18), 4)


def test_chen_defect_lifted_and_smooth():
    fine = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 256), 3, 2)
    lifted = rp.lift(fine, np.linspace(0, 1, 257), 4)
    assert rp.chen_defect_scan(lifted) < 1e-14
    # smooth path (t, t^2) with analytic iterated integrals
    times = np.linspace(0, 1, 33)
    vals = np.stack([times, times**2], axis=1)
    second = np.zeros((32, 2, 2))
    for j in range(32):
        s, t = times[j], times[j + 1]
        second[j, 0, 0] = (t - s) ** 2 / 2
        second[j, 0, 1] = 2 * (t**3 - s**3) / 3 - s * (t**2 - s**2)  # int (r-s) d(r^2)
        second[j, 1, 0] = (t**3 - s**3) / 3 - s**2 * (t - s)  # int (r^2-s^2) dr
        second[j, 1, 1] = (t**2 - s**2) ** 2 / 2
    smooth = rp.RoughPath(times, vals, second, "strat")
    assert rp.chen_defect_scan(smooth) < 1e-14
    # cross-check against a refined left-point lift
    fine_t = np.linspace(0, 1, 32 * 64 + 1)
    fine_v = np.stack([fine_t, fine_t**2], axis=1)
    approx = rp.lift(fine_v, fine_t, 64)
    assert np.max(np.abs(approx.second - second)) < 2e-3


def test_chen_defect_scan_matches_bruteforce():
    fine = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 48), 2, 9)
    lifted = rp.lift(fine, np.linspace(0, 1, 49), 4)
    k = lifted.n_steps
    worst = 0.0
    for i in range(k + 1):
        for u in range(i + 1, k + 1):
            for t in range(u + 1, k + 1):
                d = rp.chen_defect(lifted, lifted.times[i], lifted.times[u], lifted.times[t])
                worst = max(worst, np.max(np.abs(d)))
    assert rp.chen_defect_scan(lifted) == pytest.approx(worst, abs=1e-16)


def test_chen_defect_corruption_linearity():
    fine = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 64), 2, 4)
    lifted = rp.lift(fine, np.linspace(0, 1, 65), 4)
    s, u, t = lifted.times[2], lifted.times[7], lifted.times[12]
    delta = np.array([[0.3, -0.1], [0.2, 0.5]])
    base = rp.chen_defect(lifted, s, u, t)
    corrupted = lifted.pair(2, 7) + delta
    defect = lifted.pair(2, 12) - corrupted - lifted.pair(7, 12) - np.outer(
        lifted.values[7] - lifted.values[2], lifted.values[12] - lifted.values[7]
    )
    assert np.allclose(defect - base, -delta, atol=1e-15)


def test_strat_round_trip_and_contract():
    fine = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 64), 2, 5)
    ito = rp.lift(fine, np.linspace(0, 1, 65), 4)
    strat = rp.strat_from_ito(ito)
    h = np.diff(strat.times)[0]
    assert np.allclose(strat.second[:, 0, 0] - ito.second[:, 0, 0], h / 2)
    back = rp.ito_from_strat(strat)
    assert np.array_equal(back.second, ito.second)
    with pytest.raises(ContractError):
        rp.strat_from_ito(strat)
    with pytest.raises(ContractError):
        rp.ito_from_strat(ito)


def test_geometric_defect_linear_interpolation_exact():
    b = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 32), 3, 6)
    g = rp.lift_linear(b, np.linspace(0, 1, 33))
    assert np.max(np.abs(rp.geometric_defect(g))) == 0.0


def test_rough_integral_constant():
    fine = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 128), 2, 8)
    lifted = rp.lift(fine, np.linspace(0, 1, 129), 4)
    c = np.array([[1.5, -0.5]])  # one output, d = 2
    vals = np.tile(c, (33, 1, 1))
    out = rp.rough_integral(vals, np.zeros((33, 1, 2, 2)), lifted)
    expect = (lifted.values - lifted.values[0]) @ c[0]
    assert np.allclose(out[:, 0], expect, atol=1e-14)


def test_rough_integral_ito_and_strat_closed_forms():
    tree = rp.brownian_tree(1.0, 128 * 32, 0, 1, seed=3)
    fine = tree[0]
    lifted = rp.lift(fine, np.linspace(0, 1, len(fine)), 32)
    b = lifted.values
    ito = rp.rough_integral(b, np.ones((len(b), 1, 1)), lifted)
    assert np.max(np.abs(ito - 0.5 * (b[:, 0] ** 2 - lifted.times))) < 0.05
    strat = rp.rough_integral(b, np.ones((len(b), 1, 1)), rp.strat_from_ito(lifted))
    assert np.max(np.abs(strat - 0.5 * b[:, 0] ** 2)) < 0.05


def test_rough_integral_grid_mismatch():
    fine = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 64), 1, 0)
    lifted = rp.lift(fine, np.linspace(0, 1, 65), 4)
    with pytest.raises(DomainError):
        rp.rough_integral(np.zeros((10, 1)), np.zeros((10, 1, 1)), lifted)


def test_young_integral_cases():
    times = np.linspace(0, 1, 257)
    g = np.sin(times)
    out = rp.young_integral(np.full(257, 2.0), g, times)
    assert np.allclose(out, 2.0 * (g - g[0]), atol=1e-14)
    # f = g smooth: -> (g^2_b - g^2_a)/2 under refinement
    errs = []
    for k in (256, 512, 1024):
        t = np.linspace(0, 1, k + 1)
        gg = np.sin(3 * t)
        val = rp.young_integral(gg, gg, t)[-1]
        errs.append(abs(val - 0.5 * (gg[-1] ** 2 - gg[0] ** 2)))
    assert errs[2] < errs[0] / 2


def test_young_indicator_closed_form_matches_riemann(grid64):
    # raw telescoping Riemann sums against the moving indicator equal the
    # closed form exactly
    gen = np.random.default_rng(0)
    f = gen.standard_normal((grid64.n_points, 1))
    a, t = grid64.points[8], grid64.points[40]
    closed = rp.young_indicator_integral(f, grid64, a, t)
    raw = np.zeros_like(f)
    for j in range(8, 40):
        ind_next = (grid64.points >= grid64.points[j + 1] - 1e-12).astype(float)
        ind_cur = (grid64.points >= grid64.points[j] - 1e-12).astype(float)
        raw += f[j] * (ind_next - ind_cur)[:, None]
    assert np.array_equal(closed, raw)


def test_controlled_remainder_cases(grid64):
    b = rp.sample_brownian(grid64, 2, 11)
    times = grid64.points
    a_mat = np.array([[0.7, -0.2], [0.1, 0.4]])
    u = b @ a_mat.T + 1.0
    uprime = np.tile(a_mat, (len(b), 1, 1))
    assert rp.controlled_remainder(u, uprime, b, times, 0.357) < 1e-13
    drift = times[:, None].copy()
    r = rp.controlled_remainder(drift, np.zeros((len(b), 1, 2)), b, times, 0.357)
    assert r == pytest.approx(max(np.diff(times)) ** 0 * 1.0 ** (1 - 2 * 0.357), rel=1e-10)


def test_controlled_remainder_sde_stable(grid64):
    from pathdens import coeffs, flow

    field = coeffs.scalar_geometric(sigma=0.5)
    vals = []
    for seed in (0, 1):
        b = rp.sample_brownian(grid64, 1, seed)
        bundle = flow.solve_sde(field, [1.0], np.diff(b, axis=0), grid64)
        sig = bundle.X * 0.5
        vals.append(rp.controlled_remainder(bundle.X, sig[:, :, None], b, grid64.points, 0.357))
    assert all(np.isfinite(v) and v < 50 for v in vals)


def test_holder_roughness_properties(grid64):
    line = np.outer(grid64.points, [1.0, 2.0])
    assert rp.holder_roughness(line, 0.55).L_theta == 0.0
    b = rp.sample_brownian(build_grid(MeasureSpec(horizon=1.0), 512), 3, 3)
    r = rp.holder_roughness(b, 0.55)
    assert r.L_theta > 0
    assert rp.holder_roughness(2.0 * b, 0.55).L_theta == pytest.approx(2 * r.L_theta, rel=1e-12)
    assert rp.holder_roughness(b, 0.65).L_theta <= r.L_theta + 1e-15
    with pytest.raises(DomainError):
        rp.holder_roughness(b, 0.55, scales=())
    with pytest.raises(DomainError):
        rp.holder_roughness(b, 0.3)


def test_holder_norms_window(grid64):
    b = rp.sample_brownian(grid64, 2, 12)
    lifted = rp.lift(b, grid64.points, 1)
    nb, nbb = rp.holder_norms(lifted, window=(0.25, 0.75), alpha=0.357)
    assert nb > 0 and nbb >= 0
