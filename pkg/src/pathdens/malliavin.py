"""Malliavin derivatives of the terminal value, covariance matrices over
full and restricted windows, eigenvalue tail estimation, and bump-the-noise
consistency checks.

The derivative at noise time r factorizes through the transfer rows
J_{tau,r} applied to the lifted diffusion columns, so one backward sweep per
sample yields the derivative at every quadrature time.  The directional
variation route is kept as an independent representation for cross-checks.
"""

import math
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from . import coeffs, flow, rng
from .errors import DomainError
from .roughpath import sample_brownian
from .timegrid import build_grid

# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class MalliavinReport:
    grid: object
    tau: float
    tau0: float
    r_indices: np.ndarray
    r_weights: np.ndarray
    derivatives: np.ndarray  # (R, n, d)
    gamma: np.ndarray
    gamma0: np.ndarray
    lambda_min: float
    lambda_min0: float


@dataclass
class TailReport:
    epsilons: np.ndarray
    probabilities: np.ndarray
    counts: np.ndarray
    samples: int
    slope: float
    slope_lcb: float
    lambda_min_values: np.ndarray


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def malliavin_derivative(field, bundle, r, tau=None, ops=None):
    """n x d matrix D_r X(tau); zero for r past tau (adaptedness)."""
    grid = bundle.grid
    tau = grid.points[-1] if tau is None else tau
    ir, it = grid.index(r), grid.index(tau)
    if ir > it:
        return np.zeros((field.n, field.d))
    sig = coeffs.eval_sigma(field, r, bundle.path(), bundle.X[ir])
    if ops is not None:
        return ops.j_rows(it).jl[ir] @ sig
    cols = [flow.propagate_variation(field, bundle, r, sig[:, i])[it] for i in range(field.d)]
    return np.stack(cols, axis=1)


def _quad_indices(grid, a, b, r_times):
    """Quadrature sub-grid of [a, b): grid indices plus Lebesgue cell weights."""
    ia, ib = grid.index(a), grid.index(b)
    if ib <= ia:
        return np.array([], dtype=int), np.array([])
    take = np.unique(np.linspace(ia, ib - 1, min(r_times, ib - ia)).round().astype(int))
    bounds = np.append(grid.points[take], grid.points[ib])
    return take, np.diff(bounds)


def covariance(field, bundle, tau=None, tau0=0.0, r_times=64, ops=None):
    """Covariance matrices of the terminal value over [0, tau] and [tau0, tau].

    Quadrature uses Lebesgue cell weights on a sub-grid of noise times; the
    restricted-window points are a subset of the full ones, so the ordering
    gamma0 <= gamma holds exactly.  Atoms of the singular measure never
    enter (the covariance integrates plain ds).
    """
    grid = bundle.grid
    tau = grid.points[-1] if tau is None else tau
    if not (0.0 <= tau0 < tau <= grid.points[-1] + 1e-12):
        raise DomainError("need 0 <= tau0 < tau <= T")
    it = grid.index(tau)
    idx_pre, w_pre = _quad_indices(grid, 0.0, tau0, r_times) if tau0 > 0 else (np.array([], int), np.array([]))
    idx_win, w_win = _quad_indices(grid, tau0, tau, r_times)
    idx = np.concatenate([idx_pre, idx_win])
    wts = np.concatenate([w_pre, w_win])

    if ops is None and field.linearization_spec(bundle) is not None:
        ops = flow.FlowOperators(field, bundle)
    path = bundle.path()
    ders = np.zeros((len(idx), field.n, field.d))
    if ops is not None:
        jl = ops.j_rows(it).jl
        for k, j in enumerate(idx):
            sig = coeffs.eval_sigma(field, grid.points[j], path, bundle.X[j])
            ders[k] = jl[j] @ sig
    else:
        for k, j in enumerate(idx):
            ders[k] = malliavin_derivative(field, bundle, grid.points[j], tau)

    gram = np.einsum("r,rab,rcb->rac", wts, ders, ders)
    gamma = gram.sum(axis=0)
    gamma0 = gram[len(idx_pre) :].sum(axis=0)
    gamma = 0.5 * (gamma + gamma.T)
    gamma0 = 0.5 * (gamma0 + gamma0.T)
    return MalliavinReport(
        grid=grid,
        tau=tau,
        tau0=tau0,
        r_indices=idx,
        r_weights=wts,
        derivatives=ders,
        gamma=gamma,
        gamma0=gamma0,
        lambda_min=float(np.linalg.eigvalsh(gamma)[0]),
        lambda_min0=float(np.linalg.eigvalsh(gamma0)[0]),
    )


def fd_consistency(field, x0, noise, grid, j, i, eps, tau=None):
    """Bump one noise increment and compare the resolve slope with D X(tau).

    Returns (bump derivative, Malliavin column, relative gap).
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    tau = grid.points[-1] if tau is None else tau
    it = grid.index(tau)
    base = flow.solve_sde(field, x0, noise, grid)
    bumped = np.array(noise, dtype=float)
    bumped[j, i] += eps
    redo = flow.solve_sde(field, x0, bumped, grid)
    fd_col = (redo.X[it] - base.X[it]) / eps
    mall = malliavin_derivative(field, base, grid.points[j], tau)[:, i]
    denom = max(np.linalg.norm(mall), 1e-30)
    return fd_col, mall, float(np.linalg.norm(fd_col - mall) / denom)


# ---------------------------------------------------------------------------
# Monte Carlo tail of the smallest eigenvalue
# ---------------------------------------------------------------------------

_WORKER = {}


def _init_worker(field, x0, measure, config, r_times):
    _WORKER["field"] = field
    _WORKER["x0"] = x0
    _WORKER["grid"] = config.grid(measure)
    _WORKER["config"] = config
    _WORKER["r_times"] = r_times


def _one_lambda(m):
    field = _WORKER["field"]
    grid = _WORKER["grid"]
    cfg = _WORKER["config"]
    b = sample_brownian(grid, field.d, cfg.seed, "tail", m)
    bundle = flow.solve_sde(field, _WORKER["x0"], np.diff(b, axis=0), grid)
    rep = covariance(field, bundle, tau=cfg.tau, tau0=cfg.tau0, r_times=_WORKER["r_times"])
    return float(rep.lambda_min0)


def _batched_lambdas(field, x0, grid, config, m_samples, r_times, chunk=2048):
    lam = np.zeros(m_samples)
    for lo in range(0, m_samples, chunk):
        hi = min(lo + chunk, m_samples)
        paths, noise = flow.solve_sde_batch(field, x0, grid, config.seed, ("tail",), range(lo, hi))
        for i in range(hi - lo):
            bundle = flow.SolutionBundle(grid=grid, X=paths[i], noise=noise[i], field=field)
            rep = covariance(field, bundle, tau=config.tau, tau0=config.tau0, r_times=r_times)
            lam[lo + i] = rep.lambda_min0
    return lam


def _fit_tail(epsilons, lam, m_samples):
    eps = np.sort(np.asarray(epsilons, dtype=float))
    counts = np.array([(lam <= e).sum() for e in eps])
    probs = counts / m_samples
    pos = counts > 0
    # fit the genuine tail: occupied bins below probability one half
    fit = pos & (probs <= 0.5)
    if fit.sum() < 2:
        fit = pos & (counts < m_samples)
    if fit.sum() < 2 and pos.sum() >= 2:
        fit = pos
    if fit.sum() >= 2:
        x, y = np.log(eps[fit]), np.log(probs[fit])
        var = np.maximum((1.0 - probs[fit]) / np.maximum(counts[fit], 1), 1e-12)
        w = 1.0 / var
        xm = np.average(x, weights=w)
        ym = np.average(y, weights=w)
        sxx = max(np.average((x - xm) ** 2, weights=w), 1e-12)
        slope = float(np.average((x - xm) * (y - ym), weights=w) / sxx)
        se = math.sqrt(1.0 / (w.sum() * sxx))
        lcb = slope - 1.96 * se
    else:
        slope = math.inf
        lcb = math.inf
    # censored bound: zero-count bins are below the rule-of-three level 3/M,
    # the first occupied bin above its binomial lower confidence limit
    if pos.any() and (~pos).any():
        hi = np.where(pos)[0][0]
        p_lo = probs[hi] * math.exp(-1.96 * math.sqrt((1.0 - probs[hi]) / counts[hi]))
        for lo in np.where(~pos)[0]:
            if lo < hi and p_lo > 3.0 / m_samples:
                bound = (math.log(p_lo) - math.log(3.0 / m_samples)) / (
                    math.log(eps[hi]) - math.log(eps[lo])
                )
                lcb = max(lcb, bound) if math.isfinite(lcb) else bound
    return eps, probs, counts, slope, lcb


def tail_estimate(field, x0, measure, config, m_samples, epsilons, r_times=64, workers=1):
    """Empirical P(lambda_min(gamma0) <= eps) with a log-log slope fit.

    The slope is a weighted regression over bins with at least one
    exceedance; with fewer than two such bins the decay is reported as
    +inf (no exceedance resolvable at this sample size).  The lower
    confidence bound combines the regression band with a rule-of-three
    censoring bound from the empty bins.
    """
    if m_samples < 100:
        raise DomainError("need at least 100 samples")
    grid = config.grid(measure)
    if field.batch_stepper(grid, 1) is not None:
        lam = _batched_lambdas(field, x0, grid, config, m_samples, r_times)
    elif workers > 1:
        ctx = get_context("fork")
        with ctx.Pool(workers, initializer=_init_worker, initargs=(field, x0, measure, config, r_times)) as pool:
            lam = np.array(pool.map(_one_lambda, range(m_samples), chunksize=64))
    else:
        _init_worker(field, x0, measure, config, r_times)
        lam = np.array([_one_lambda(m) for m in range(m_samples)])
    eps, probs, counts, slope, lcb = _fit_tail(epsilons, lam, m_samples)
    return TailReport(
        epsilons=eps,
        probabilities=probs,
        counts=counts,
        samples=m_samples,
        slope=slope,
        slope_lcb=lcb,
        lambda_min_values=lam,
    )
