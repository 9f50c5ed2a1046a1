import numpy as np
import pytest
from scipy.stats import norm

from pathdens import coeffs, density
from pathdens.errors import DomainError
from pathdens.timegrid import Config, MeasureSpec


def _cfg(seed=0, n_steps=128, tau0=0.5):
    return Config(p=1.4, tau=1.0, tau0=tau0, seed=seed, n_steps=n_steps)


def test_sampling_mean_and_determinism(unit_measure):
    fld = coeffs.ConstantField(np.eye(2))
    s1 = density.sample_terminal(fld, [0.4, -0.4], unit_measure, _cfg(seed=1), 4000)
    s2 = density.sample_terminal(fld, [0.4, -0.4], unit_measure, _cfg(seed=1), 4000)
    assert np.array_equal(s1, s2)
    bound = 3.0 * np.sqrt(1.0 / 4000)
    assert np.max(np.abs(s1.mean(axis=0) - [0.4, -0.4])) < bound


def test_single_deterministic_sample(unit_measure):
    fld = coeffs.ConstantField(np.zeros((2, 1)))
    s = density.sample_terminal(fld, [0.7, 0.1], unit_measure, _cfg(seed=3), 1)
    assert np.array_equal(s, [[0.7, 0.1]])


def test_kde_gaussian_oracle(unit_measure):
    fld = coeffs.ConstantField([[1.0]])
    samples = density.sample_terminal(fld, [0.3], unit_measure, _cfg(seed=4, n_steps=256), 20000)
    vals, lattice, h = density.kde(samples)
    oracle = norm.pdf(lattice[:, 0], 0.3, 1.0)
    assert np.max(np.abs(vals - oracle)) < 0.03
    mass = np.trapezoid(vals, lattice[:, 0])
    assert mass == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(DomainError):
        density.kde(samples[:1])


def test_kde_symmetry_and_translation(unit_measure):
    fld = coeffs.ConstantField([[1.0]])
    samples = density.sample_terminal(fld, [0.0], unit_measure, _cfg(seed=5), 20000)
    lattice = np.linspace(-3, 3, 121)[:, None]
    vals, _, _ = density.kde(samples, lattice=lattice, bandwidth=[0.15])
    asym = np.max(np.abs(vals - vals[::-1]))
    assert asym < 4 * 3.0 / np.sqrt(20000)
    shifted, _, _ = density.kde(samples + 1.5, lattice=lattice + 1.5, bandwidth=[0.15])
    assert np.allclose(vals, shifted, atol=1e-12)


def test_charfn_gaussian_slope(unit_measure):
    fld = coeffs.ConstantField([[1.0]])
    samples = density.sample_terminal(fld, [0.0], unit_measure, _cfg(seed=6, n_steps=256), 20000)
    rep = density.charfn_decay(samples)
    assert rep.slopes[0] == pytest.approx(2.0, abs=0.1)
    assert not rep.non_decaying[0]
    # |phi(0)| = 1 by normalization
    from pathdens._kernels import charfn_abs

    assert charfn_abs(samples, np.zeros((1, 1)))[0] == pytest.approx(1.0, abs=1e-12)


def test_charfn_dichotomy(unit_measure):
    cfg = _cfg(seed=7, n_steps=128)
    deg = density.sample_terminal(coeffs.DegeneratePair(), [0.1, 0.2], unit_measure, cfg, 3000)
    rep = density.charfn_decay(deg)
    assert rep.non_decaying[1]  # the law never spreads along e_2
    assert not rep.non_decaying[0]
    h3 = density.sample_terminal(coeffs.HormanderExample3D(), [0.2, -0.1, 0.3], unit_measure, cfg, 3000)
    rep3 = density.charfn_decay(h3)
    assert not rep3.non_decaying.any()
