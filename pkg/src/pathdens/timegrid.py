"""Time measure mu = lambda + mu_s, quadrature grids, and lift-space norms.

The measure carries a Lebesgue part on [0, T] plus finitely many atoms.
Grids use left-endpoint Lebesgue weights (w_j = t_{j+1} - t_j, terminal
Lebesgue weight zero) plus the atom weight wherever a grid point is an atom,
so that mu of any half-open interval [t_j, t_k) is exact on the grid.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import holder_pair_max
from .errors import DomainError

_ATOL = 1e-12


@dataclass(frozen=True)
class MeasureSpec:
    """Finite measure on [0, T]: Lebesgue plus atoms [(time, weight), ...]."""

    horizon: float
    atoms: tuple = ()

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        object.__setattr__(self, "atoms", tuple((float(t), float(w)) for t, w in self.atoms))
        times = [t for t, _ in self.atoms]
        if any(w <= 0 for _, w in self.atoms):
            raise DomainError("atom weights must be positive")
        if any(t < 0 or t > self.horizon for t in times):
            raise DomainError("atom times must lie in [0, T]")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise DomainError("atom times must be strictly increasing")

    @property
    def total_mass(self):
        return math.fsum([self.horizon] + [w for _, w in self.atoms])

    def atom_weight(self, t):
        for at, w in self.atoms:
            if abs(at - t) <= _ATOL:
                return w
        return 0.0

    def mass_halfopen(self, a, b):
        """mu[a, b) for a <= b."""
        if b < a:
            raise DomainError("need a <= b")
        atom = math.fsum(w for t, w in self.atoms if a - _ATOL <= t < b - _ATOL)
        return (b - a) + atom

    def mass_from(self, t):
        """mu[t, T]."""
        atom = math.fsum(w for at, w in self.atoms if at >= t - _ATOL)
        return (self.horizon - t) + atom


@dataclass(frozen=True)
class TimeGrid:
    """Sorted distinct times 0 = t_0 < ... < t_N = T with quadrature weights."""

    measure: MeasureSpec
    points: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self):
        return len(self.points)

    @property
    def n_steps(self):
        return len(self.points) - 1

    @property
    def dt(self):
        return np.diff(self.points)

    def index(self, t):
        i = int(np.searchsorted(self.points, t - _ATOL))
        if i >= len(self.points) or abs(self.points[i] - t) > _ATOL:
            raise DomainError(f"t={t} is not a grid point")
        return i

    def contains(self, t):
        i = int(np.searchsorted(self.points, t - _ATOL))
        return i < len(self.points) and abs(self.points[i] - t) <= _ATOL

    def mass_halfopen(self, i, j):
        """mu[t_i, t_j) from the stored weights (exact by construction)."""
        return math.fsum(self.weights[i:j])

    def mass_from(self, i):
        """mu[t_i, T] from the stored weights plus nothing beyond T."""
        return math.fsum(self.weights[i:])


def build_grid(measure, n_steps, required_points=()):
    """Uniform base grid of n_steps intervals, union atoms and required points."""
    if n_steps < 1:
        raise DomainError("n_steps must be >= 1")
    t_end = measure.horizon
    pts = list(np.linspace(0.0, t_end, n_steps + 1))
    for t in list(required_points) + [t for t, _ in measure.atoms]:
        if t < 0 or t > t_end + _ATOL:
            raise DomainError(f"required point {t} outside [0, {t_end}]")
        pts.append(float(min(t, t_end)))
    pts = np.array(sorted(pts))
    keep = np.concatenate([[True], np.diff(pts) > _ATOL])
    pts = pts[keep]

    weights = np.zeros(len(pts))
    weights[:-1] = np.diff(pts)
    for at, w in measure.atoms:
        idx = int(np.argmin(np.abs(pts - at)))
        weights[idx] += w

    # nudge the last Lebesgue cell so the weights sum to mu[0,T] exactly
    target = measure.total_mass
    for _ in range(4):
        resid = target - math.fsum(weights)
        if resid == 0.0:
            break
        weights[-2] += resid
    return TimeGrid(measure=measure, points=pts, weights=weights)


@dataclass(frozen=True)
class Config:
    """Run configuration: integrability exponent, target window, seed, mesh."""

    p: float = 1.4
    tau: float = 1.0
    tau0: float = 0.0
    seed: int = 0
    n_steps: int = 256

    @property
    def alpha(self):
        return 1.0 / (2.0 * self.p)

    def __post_init__(self):
        if not (1.0 < self.p < 1.5):
            raise DomainError("p must lie in (1, 3/2)")
        if not (1.0 / 3.0 < self.alpha < 0.5):
            raise DomainError("alpha = 1/(2p) must lie in (1/3, 1/2)")
        if self.n_steps < 1:
            raise DomainError("n_steps must be positive")
        if not (0.0 <= self.tau0 < self.tau):
            raise DomainError("need 0 <= tau0 < tau")

    def validate(self, measure):
        """Check tau, tau0 against the measure; rejects atoms in [tau0, tau)."""
        if self.tau > measure.horizon + _ATOL:
            raise DomainError("tau must lie in (0, T]")
        for at, _ in measure.atoms:
            if self.tau0 - _ATOL <= at < self.tau - _ATOL:
                raise DomainError(
                    f"window [tau0, tau) = [{self.tau0}, {self.tau}) intersects the "
                    f"singular support at {at}; assumption (A2) fails"
                )
        return self

    def grid(self, measure, required_points=()):
        self.validate(measure)
        req = [self.tau0, self.tau] + list(required_points)
        return build_grid(measure, self.n_steps, req)


@dataclass
class GridPath:
    """Values of an R^n-valued path at the grid points; shape (N+1, n)."""

    grid: TimeGrid
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((self.grid.n_points, 1))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float).T).T
        if self.values.shape[0] != self.grid.n_points:
            raise DomainError("path values must cover every grid point")

    @property
    def n(self):
        return self.values.shape[1]

    def stopped(self, t):
        """The path frozen after t: x^t(r) = x(t ^ r) on the grid."""
        i = self.grid.index(t)
        out = self.values.copy()
        out[i + 1 :] = self.values[i]
        return GridPath(self.grid, out)


def lp_norm(values, grid, p):
    """(sum_j w_j |x_j|^p)^(1/p) with |.| the Euclidean norm on R^n."""
    if p <= 1:
        raise DomainError("p must exceed 1")
    v = np.atleast_2d(np.asarray(values, dtype=float).T).T
    if v.shape[0] != grid.n_points:
        raise DomainError("values must cover every grid point")
    mags = np.sqrt(np.sum(v * v, axis=1))
    return float(np.sum(grid.weights * mags**p)) ** (1.0 / p)


def lifted_norm(path_part, point_part, grid, p):
    """Norm of (x, y) in the lift space: (||x||_p^2 + |y|^2)^(1/2)."""
    return math.hypot(lp_norm(path_part, grid, p), float(np.linalg.norm(point_part)))


def indicator_distance(t, dt, grid, p):
    """Distance between the indicator lift states at t and t+dt: mu-mass^(1/p).

    Equals |dt|^(1/p) exactly when both endpoints are grid points and no atom
    sits in the half-open gap.
    """
    if p <= 1:
        raise DomainError("p must exceed 1")
    if dt == 0:
        return 0.0
    a, b = (t, t + dt) if dt > 0 else (t + dt, t)
    i, j = grid.index(a), grid.index(b)
    return grid.mass_halfopen(i, j) ** (1.0 / p)


def hs_norm_S(t, grid, n):
    """Squared Hilbert-Schmidt norm of the tail-integration functional: n*(mu[t,T]+1)."""
    i = grid.index(t)
    return n * (grid.mass_from(i) + 1.0)


def holder_seminorm(values, grid, alpha, window=None):
    """max over grid pairs s != t in the window of ||v_t - v_s|| / |t-s|^alpha."""
    v = np.atleast_2d(np.asarray(values, dtype=float).T).T
    times = grid.points
    if window is not None:
        a, b = window
        sel = (times >= a - _ATOL) & (times <= b + _ATOL)
        if not np.any(sel):
            raise DomainError("empty window")
        v, times = v[sel], times[sel]
    if len(times) < 2:
        raise DomainError("window must contain at least two grid points")
    return float(holder_pair_max(v, times, alpha))
