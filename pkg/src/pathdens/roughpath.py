"""Brownian sampling, second-level lifts, Chen composition, rough and Young
integration, controlled-path remainders, and the Holder-roughness estimator.

Second-level blocks are stored per adjacent grid interval only; blocks over
distant pairs are composed through Chen's relation from cached prefix blocks,
so the relation holds by construction up to floating-point accumulation.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._kernels import chen_triple_max, remainder_pair_max, roughness_min
from .errors import ContractError, DomainError

# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_brownian(grid, d, seed, *labels):
    """Brownian path values on the grid, B_0 = 0, one value per grid point.

    Increment variances are the Lebesgue interval lengths (atoms carry no
    Brownian time).  Fully determined by (seed, labels).
    """
    if d < 1:
        raise DomainError("d must be >= 1")
    dt = np.diff(grid.points)
    z = rng.normals(seed, (len(dt), d), "brownian", *labels)
    inc = z * np.sqrt(dt)[:, None]
    out = np.zeros((len(dt) + 1, d))
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def brownian_tree(t_end, n_coarse, levels, d, seed, *labels):
    """Nested Brownian paths over [0, t_end] on meshes n_coarse * 2^l.

    Level l+1 inserts bridge midpoints into level l, so every coarser path is
    the restriction of every finer one; the family is a deterministic
    function of (seed, labels).  Returns a list of (K_l + 1, d) arrays.
    """
    h = t_end / n_coarse
    z = rng.normals(seed, (n_coarse, d), "tree", 0, *labels)
    values = np.zeros((n_coarse + 1, d))
    np.cumsum(z * math.sqrt(h), axis=0, out=values[1:])
    out = [values]
    for level in range(1, levels + 1):
        h /= 2.0
        prev = out[-1]
        mid = 0.5 * (prev[:-1] + prev[1:])
        z = rng.normals(seed, mid.shape, "tree", level, *labels)
        mid = mid + z * math.sqrt(h / 2.0)
        nxt = np.empty((2 * (prev.shape[0] - 1) + 1, d))
        nxt[::2] = prev
        nxt[1::2] = mid
        out.append(nxt)
    return out


# ---------------------------------------------------------------------------
# rough paths
# ---------------------------------------------------------------------------


@dataclass
class RoughPath:
    """First level B at grid points plus second-level blocks per interval."""

    times: np.ndarray
    values: np.ndarray  # (K+1, d)
    second: np.ndarray  # (K, d, d)
    convention: str = "ito"
    _prefix: np.ndarray = field(default=None, repr=False)
    _other_second: np.ndarray = field(default=None, repr=False)  # pre-conversion level

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def n_steps(self):
        return len(self.times) - 1

    def index(self, t):
        i = int(np.searchsorted(self.times, t - 1e-12))
        if i >= len(self.times) or abs(self.times[i] - t) > 1e-12:
            raise DomainError(f"{t} is not a grid point of this rough path")
        return i

    def prefix(self):
        """Second-level blocks over [t_0, t_k], composed left to right."""
        if self._prefix is None:
            k = self.n_steps
            p = np.zeros((k + 1, self.d, self.d))
            for j in range(k):
                db_pre = self.values[j] - self.values[0]
                db = self.values[j + 1] - self.values[j]
                p[j + 1] = p[j] + self.second[j] + np.outer(db_pre, db)
            self._prefix = p
        return self._prefix

    def pair(self, i, j):
        """Second-level block over [t_i, t_j] by Chen composition."""
        if not 0 <= i <= j <= self.n_steps:
            raise DomainError("need grid indices i <= j")
        p = self.prefix()
        db_pre = self.values[i] - self.values[0]
        return p[j] - p[i] - np.outer(db_pre, self.values[j] - self.values[i])


def lift(fine_values, fine_times, kappa):
    """Ito lift on the kappa-coarsened grid from a finer path.

    Per coarse interval the block is the left-point Riemann sum of
    integral (B_r - B_s) x dB_r over the kappa sub-intervals.
    """
    fine_values = np.atleast_2d(np.asarray(fine_values, dtype=float).T).T
    m_fine = fine_values.shape[0] - 1
    if kappa < 1 or m_fine % kappa != 0:
        raise DomainError("fine grid size must be a positive multiple of kappa")
    m = m_fine // kappa
    d = fine_values.shape[1]
    inc = np.diff(fine_values, axis=0).reshape(m, kappa, d)
    # partial sums B_f - B_{block start} at the left of each sub-interval
    rel = np.cumsum(inc, axis=1) - inc
    second = np.einsum("mka,mkc->mac", rel, inc)
    return RoughPath(
        times=np.asarray(fine_times)[::kappa].copy(),
        values=fine_values[::kappa].copy(),
        second=second,
        convention="ito",
    )


def lift_linear(values, times):
    """Stratonovich lift of the piecewise-linear interpolation: B = dB x dB / 2."""
    values = np.atleast_2d(np.asarray(values, dtype=float).T).T
    inc = np.diff(values, axis=0)
    second = 0.5 * np.einsum("ma,mc->mac", inc, inc)
    return RoughPath(np.asarray(times, dtype=float), values, second, convention="strat")


def strat_from_ito(rp):
    """Add (t-s)/2 times the identity per interval; flips the convention.

    The pre-conversion level rides along so converting back is bit-exact.
    """
    if rp.convention != "ito":
        raise ContractError("input lift must be in the Ito convention")
    if rp._other_second is not None:
        return RoughPath(rp.times, rp.values, rp._other_second, "strat", _other_second=rp.second)
    dt = np.diff(rp.times)
    second = rp.second + 0.5 * dt[:, None, None] * np.eye(rp.d)
    return RoughPath(rp.times, rp.values, second, convention="strat", _other_second=rp.second)


def ito_from_strat(rp):
    if rp.convention != "strat":
        raise ContractError("input lift must be in the Stratonovich convention")
    if rp._other_second is not None:
        return RoughPath(rp.times, rp.values, rp._other_second, "ito", _other_second=rp.second)
    dt = np.diff(rp.times)
    second = rp.second - 0.5 * dt[:, None, None] * np.eye(rp.d)
    return RoughPath(rp.times, rp.values, second, convention="ito", _other_second=rp.second)


def chen_defect(rp, s, u, t):
    """B_{s,t} - B_{s,u} - B_{u,t} - dB_{s,u} x dB_{u,t} at grid times s<u<t."""
    i, j, k = rp.index(s), rp.index(u), rp.index(t)
    if not i < j < k:
        raise DomainError("need s < u < t")
    dbsu = rp.values[j] - rp.values[i]
    dbut = rp.values[k] - rp.values[j]
    return rp.pair(i, k) - rp.pair(i, j) - rp.pair(j, k) - np.outer(dbsu, dbut)


def chen_defect_scan(rp):
    """Largest |Chen defect| entry over every grid triple."""
    return float(chen_triple_max(rp.prefix(), rp.values))


def geometric_defect(rp):
    """Per-interval 2 Sym(B) - dB x dB; zero for geometric lifts."""
    inc = np.diff(rp.values, axis=0)
    sym = rp.second + np.swapaxes(rp.second, 1, 2)
    return sym - np.einsum("ma,mc->mac", inc, inc)


def holder_norms(rp, window=None, alpha=0.5):
    """(||B||_alpha, ||BB||_2alpha) over grid pairs in the window."""
    i0, i1 = 0, rp.n_steps
    if window is not None:
        i0, i1 = rp.index(window[0]), rp.index(window[1])
    t = rp.times[i0 : i1 + 1]
    first = 0.0
    second = 0.0
    for i in range(i0, i1):
        db = rp.values[i + 1 : i1 + 1] - rp.values[i]
        dts = rp.times[i + 1 : i1 + 1] - rp.times[i]
        first = max(first, np.max(np.linalg.norm(db, axis=1) / dts**alpha))
        blocks = np.array([rp.pair(i, j) for j in range(i + 1, i1 + 1)])
        mags = np.sqrt(np.sum(blocks * blocks, axis=(1, 2)))
        second = max(second, np.max(mags / dts ** (2 * alpha)))
    del t
    return first, second


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------


@dataclass
class ControlledPath:
    """(U, U') with U grid-indexed in W and U' grid-indexed maps R^d -> W."""

    values: np.ndarray
    gubinelli: np.ndarray
    remainder_norm: float = None


def rough_integral(values, gubinelli, rp, window=None):
    """Compensated left-point sums of an L(R^d, W)-valued integrand.

    ``values`` has shape (K+1, ..., d), ``gubinelli`` (K+1, ..., d, d) with
    the first derivative axis the direction of differentiation.  Returns the
    accumulated path (K+1, ...), zero before the window start.
    """
    values = np.asarray(values, dtype=float)
    gubinelli = np.asarray(gubinelli, dtype=float)
    if values.shape[0] != len(rp.times):
        raise DomainError("integrand and rough path live on different grids")
    if values.shape[-1] != rp.d:
        raise DomainError("integrand must map R^d")
    i0, i1 = 0, rp.n_steps
    if window is not None:
        i0, i1 = rp.index(window[0]), rp.index(window[1])
    inc = np.diff(rp.values, axis=0)
    out = np.zeros(values.shape[:-1])
    for j in range(i0, i1):
        term = values[j] @ inc[j] + np.einsum("...lk,lk->...", gubinelli[j], rp.second[j])
        out[j + 1] = out[j] + term
    out[i1 + 1 :] = out[i1]
    return out


def young_integral(f_values, g_values, times, window=None):
    """Left-point Riemann sums sum f(s_j) * (g_{j+1} - g_j), accumulated.

    f and g broadcast elementwise; valid whenever the Holder exponents of
    integrand and integrator sum above one.
    """
    f_values = np.asarray(f_values, dtype=float)
    g_values = np.asarray(g_values, dtype=float)
    times = np.asarray(times, dtype=float)
    i0, i1 = 0, len(times) - 1
    if window is not None:
        i0 = int(np.searchsorted(times, window[0] - 1e-12))
        i1 = int(np.searchsorted(times, window[1] - 1e-12))
    dg = g_values[1:] - g_values[:-1]
    terms = f_values[:-1] * dg
    out = np.zeros_like(terms, shape=(len(times),) + terms.shape[1:])
    np.cumsum(terms[i0:i1], axis=0, out=out[i0 + 1 : i1 + 1])
    out[i1 + 1 :] = out[i1]
    return out


def young_indicator_integral(f_values, grid, a, t):
    """Closed form of the Young integral against s -> 1_{[s,T]}.

    The left-point sums telescope: the value at t is the lift-space path
    r -> -f(r) 1_{[a, t)}(r) on the grid (point part zero).
    """
    f_values = np.atleast_2d(np.asarray(f_values, dtype=float).T).T
    i0, i1 = grid.index(a), grid.index(t)
    out = np.zeros_like(f_values)
    out[i0:i1] = -f_values[i0:i1]
    return out


def controlled_remainder(values, gubinelli, b_values, times, alpha, window=None):
    """||R^U||_{2 alpha} over grid pairs: R = dU_{s,t} - U'_s dB_{s,t}."""
    values = np.asarray(values, dtype=float)
    gubinelli = np.asarray(gubinelli, dtype=float)
    b_values = np.atleast_2d(np.asarray(b_values, dtype=float).T).T
    times = np.asarray(times, dtype=float)
    if window is not None:
        sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
        values, gubinelli, b_values, times = values[sel], gubinelli[sel], b_values[sel], times[sel]
    flat = values.reshape(values.shape[0], -1)
    d = b_values.shape[1]
    gub = gubinelli.reshape(gubinelli.shape[0], -1, d)
    return float(remainder_pair_max(flat, gub, b_values, times, alpha))


# ---------------------------------------------------------------------------
# Holder roughness
# ---------------------------------------------------------------------------


@dataclass
class RoughnessReport:
    theta: float
    L_theta: float
    epsilon_set: tuple
    direction_samples: int


def holder_roughness(b_values, theta, probes=64, scales=(4, 8, 16, 32), seed=0):
    """Grid estimator of the theta-Holder roughness modulus.

    Scales are window half-widths in mesh units (dimensionless step counts);
    the reported modulus uses eps^theta in those units, making it a
    surrogate for, not the exact value of, the continuum modulus.  Direction
    probes combine random unit vectors with the per-window least-oscillation
    singular directions, so exactly degenerate paths report zero.
    """
    if not 0.5 < theta < 1.0:
        raise DomainError("theta must lie in (1/2, 1)")
    if len(scales) == 0:
        raise DomainError("at least one probe scale is required")
    b = np.atleast_2d(np.asarray(b_values, dtype=float).T).T
    k1, d = b.shape
    if d == 1:
        dirs = np.ones((1, 1))
    else:
        g = rng.stream(seed, "roughness").standard_normal((probes, d))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    proj = b @ dirs.T
    best = roughness_min(proj, np.asarray(scales, dtype=np.int64), theta)

    if d > 1:
        # refine with the flattest direction of each window's increment cloud
        for eps in scales:
            eps = int(eps)
            pads = np.pad(b, ((eps, eps), (0, 0)), mode="edge")
            windows = np.lib.stride_tricks.sliding_window_view(pads, (2 * eps + 1, d))
            windows = windows.reshape(k1, 2 * eps + 1, d)
            rel = windows - b[:, None, :]
            _, _, vt = np.linalg.svd(rel, full_matrices=False)
            flat_dir = vt[:, -1, :]
            osc = np.max(np.abs(np.einsum("ktd,kd->kt", rel, flat_dir)), axis=1)
            best = min(best, float(np.min(osc)) / float(eps) ** theta)
    return RoughnessReport(
        theta=theta,
        L_theta=float(best),
        epsilon_set=tuple(int(e) for e in scales),
        direction_samples=int(dirs.shape[0]),
    )
