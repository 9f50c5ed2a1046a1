"""Terminal-law sampling, kernel density estimation, and decay of the
empirical characteristic function as a qualitative smoothness diagnostic.

A spanning diffusion should show characteristic-function decay along every
direction; a rank-deficient one keeps |phi| near one along the directions
its law never spreads into.  The diagnostic is qualitative: no quantitative
link to eigenvalue tail exponents is claimed.
"""

from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from . import flow
from ._kernels import charfn_abs, kde_gauss
from .errors import DomainError
from .roughpath import sample_brownian

# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

_SAMP = {}


def _init_sampler(field, x0, grid, seed, tau_idx):
    _SAMP.update(field=field, x0=x0, grid=grid, seed=seed, tau_idx=tau_idx)


def _one_terminal(m):
    grid = _SAMP["grid"]
    field = _SAMP["field"]
    b = sample_brownian(grid, field.d, _SAMP["seed"], "mc", m)
    bundle = flow.solve_sde(field, _SAMP["x0"], np.diff(b, axis=0), grid)
    return bundle.X[_SAMP["tau_idx"]]


def sample_terminal(field, x0, measure, config, m_samples, workers=1, chunk=4096):
    """M independent terminal values X(tau); per-sample streams keyed by the
    sample index, so the result is identical for any worker count.

    Fields providing a batch stepper are integrated vectorized across
    samples (worker count then plays no role); otherwise samples run one by
    one, optionally on a fork pool.
    """
    grid = config.grid(measure)
    tau_idx = grid.index(config.tau)
    if field.batch_stepper(grid, 1) is not None:
        return _batched_terminal(field, x0, grid, config.seed, tau_idx, m_samples, chunk)
    if workers > 1:
        ctx = get_context("fork")
        with ctx.Pool(workers, initializer=_init_sampler, initargs=(field, x0, grid, config.seed, tau_idx)) as pool:
            rows = pool.map(_one_terminal, range(m_samples), chunksize=128)
    else:
        _init_sampler(field, x0, grid, config.seed, tau_idx)
        rows = [_one_terminal(m) for m in range(m_samples)]
    return np.stack(rows)


def _batched_terminal(field, x0, grid, seed, tau_idx, m_samples, chunk):
    from . import rng

    n, d = field.n, field.d
    k = grid.n_steps
    sq = np.sqrt(np.diff(grid.points))
    out = np.zeros((m_samples, n))
    for lo in range(0, m_samples, chunk):
        hi = min(lo + chunk, m_samples)
        m = hi - lo
        noise = np.empty((m, k, d))
        for i in range(m):
            noise[i] = rng.stream(seed, "brownian", "mc", lo + i).standard_normal((k, d))
        noise *= sq[None, :, None]
        stepper = field.batch_stepper(grid, m)
        x = np.tile(np.asarray(x0, dtype=float), (m, 1))
        dt = grid.dt
        for j in range(tau_idx):
            b, s = stepper.step(j, x)
            inc = b * dt[j] + np.einsum("mnd,md->mn", s, noise[:, j])
            stepper.advance(j, x)
            x = x + inc
        out[lo:hi] = x
    return out


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------


def silverman_bandwidth(samples):
    m, n = samples.shape
    std = np.std(samples, axis=0, ddof=1)
    return 1.06 * np.maximum(std, 1e-12) * m ** (-1.0 / (4.0 + n))


def default_lattice(samples, points=401, spread=6.0):
    """Axis-aligned lattice covering +- spread standard deviations (1D)."""
    mean, std = samples.mean(axis=0), samples.std(axis=0)
    if samples.shape[1] != 1:
        raise DomainError("the default lattice is one-dimensional; supply your own")
    return np.linspace(mean[0] - spread * std[0], mean[0] + spread * std[0], points)[:, None]


def kde(samples, lattice=None, bandwidth=None):
    """Gaussian product-kernel density values on the lattice."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    if samples.shape[0] < 2:
        raise DomainError("need at least two samples")
    if lattice is None:
        lattice = default_lattice(samples)
    lattice = np.atleast_2d(np.asarray(lattice, dtype=float).T).T
    h = np.asarray(bandwidth, dtype=float).reshape(-1) if bandwidth is not None else silverman_bandwidth(samples)
    if h.size == 1 and samples.shape[1] > 1:
        h = np.full(samples.shape[1], h[0])
    return kde_gauss(samples, lattice, h), lattice, h


@dataclass
class DecayReport:
    directions: np.ndarray  # (n_dir, n)
    magnitudes: np.ndarray  # |xi| grid per direction (n_dir, F)
    charfn: np.ndarray  # |phi| per direction (n_dir, F)
    slopes: np.ndarray  # decay exponent per direction (nan if not fit)
    non_decaying: np.ndarray  # directions with |phi| >= 0.5 beyond the floor
    noise_floor: float


def charfn_decay(samples, directions=None, n_freq=24, freq_max=None):
    """|empirical characteristic function| along coordinate rays with the
    decay exponent fitted as the slope of log(-log|phi|) against log|xi|.

    Frequencies below the CLT noise floor 3/sqrt(M) are excluded from fits;
    a direction counts as non-decaying when |phi| never falls below 1/2.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    m, n = samples.shape
    if directions is None:
        directions = np.eye(n)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    floor = 3.0 / np.sqrt(m)
    slopes = np.full(len(directions), np.nan)
    non_decaying = np.zeros(len(directions), dtype=bool)
    all_mags, all_phi = [], []
    for q, u in enumerate(directions):
        u = u / np.linalg.norm(u)
        proj_std = max(float(np.std(samples @ u)), 1e-9)
        top = freq_max if freq_max is not None else 6.0 / proj_std
        mags = np.geomspace(top / 100.0, top, n_freq)
        phi = charfn_abs(samples, mags[:, None] * u[None, :])
        all_mags.append(mags)
        all_phi.append(phi)
        usable = (phi > floor) & (phi < 0.85)
        if usable.sum() >= 3:
            slopes[q] = np.polyfit(np.log(mags[usable]), np.log(-np.log(phi[usable])), 1)[0]
        beyond = mags > 2.0 / proj_std
        non_decaying[q] = bool(np.min(phi[beyond]) >= 0.5) if beyond.any() else False
    return DecayReport(
        directions=directions,
        magnitudes=np.stack(all_mags),
        charfn=np.stack(all_phi),
        slopes=slopes,
        non_decaying=non_decaying,
        noise_floor=floor,
    )
