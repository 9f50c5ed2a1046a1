"""Finite-dimensional lifting of discrete-delay equations: delay closure,
shifted Brownian motions, delayed cross areas, block-wise simulation, and a
state-dependent view of the lifted system for spanning checks.

Delays must be grid-aligned; every shifted quantity is an exact re-indexing
(no interpolation), so block zero of the lifted solve reproduces the direct
delay simulation float for float.
"""

from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientField
from .errors import ConfigurationError, DomainError
from .roughpath import RoughPath, lift
from .timegrid import GridPath

_ATOL = 1e-9


# ---------------------------------------------------------------------------
# delay closure
# ---------------------------------------------------------------------------


@dataclass
class DelaySystem:
    """Delay closure and argument wiring of the lifted system."""

    base_delays: tuple
    shifts: tuple  # all block shifts, shifts[0] = 0, strictly increasing
    horizon: float
    n: int
    wiring: tuple  # wiring[l][i] = block index of shifts[l] + base_delays[i], or None -> x0

    @property
    def n_blocks(self):
        return len(self.shifts)

    @property
    def dim(self):
        return self.n_blocks * self.n

    def composites(self):
        return tuple(s for s in self.shifts[1:] if all(abs(s - h) > _ATOL for h in self.base_delays))


def build_lift(delays, horizon, n):
    """Close the delay set under addition below the horizon (strictly)."""
    delays = sorted(float(h) for h in delays)
    if any(h <= 0 or h >= horizon for h in delays):
        raise DomainError("delays must lie strictly inside (0, T)")
    if any(b - a <= _ATOL for a, b in zip(delays, delays[1:])):
        raise DomainError("delays must be strictly increasing")
    shifts = [0.0]
    frontier = [0.0]
    while frontier:
        nxt = []
        for s in frontier:
            for h in delays:
                cand = s + h
                if cand < horizon - _ATOL and all(abs(cand - e) > _ATOL for e in shifts + nxt):
                    nxt.append(cand)
        shifts.extend(nxt)
        frontier = nxt
    shifts = sorted(shifts)

    def locate(v):
        for l, s in enumerate(shifts):
            if abs(s - v) <= _ATOL:
                return l
        return None

    wiring = tuple(tuple(locate(s + h) for h in delays) for s in shifts)
    return DelaySystem(
        base_delays=tuple(delays), shifts=tuple(shifts), horizon=float(horizon), n=n, wiring=wiring
    )


# ---------------------------------------------------------------------------
# shifted Brownian motion and delayed areas
# ---------------------------------------------------------------------------


def _shift_steps(times, h):
    if abs(h) <= _ATOL:
        return 0
    dt = times[1] - times[0]
    k = int(round(h / dt))
    if abs(k * dt - h) > _ATOL:
        raise DomainError(f"delay {h} is not aligned with the grid mesh {dt}")
    return k


def shifted_brownian(b_values, times, h):
    """B^h: the path delayed by h, zero before h; exact re-indexing."""
    b = np.atleast_2d(np.asarray(b_values, dtype=float).T).T
    k = _shift_steps(np.asarray(times, dtype=float), h)
    out = np.zeros_like(b)
    if k < b.shape[0]:
        out[k:] = b[: b.shape[0] - k]
    return out


def delayed_cross_area(b_values, times, h, s, t):
    """Left-point sums of int_s^t (B_{r-h} - B_{s-h}) x dB_r on the given mesh."""
    b = np.atleast_2d(np.asarray(b_values, dtype=float).T).T
    times = np.asarray(times, dtype=float)
    shifted = shifted_brownian(b, times, h)
    i = int(np.searchsorted(times, s - _ATOL))
    j = int(np.searchsorted(times, t - _ATOL))
    if abs(times[i] - s) > _ATOL or abs(times[j] - t) > _ATOL:
        raise DomainError("s and t must be grid points")
    rel = shifted[i:j] - shifted[i]
    inc = b[i + 1 : j + 1] - b[i:j]
    return np.einsum("ra,rc->ac", rel, inc)


def companion_cross_area(b_values, times, h, s, t):
    """The swapped block int (B_r - B_s) x dB_{r-h} via integration by parts:
    (B_r - B_s) x B_{r-h} |_s^t minus the plain-integrand area minus the
    diagonal bracket term (t-s) that survives only for h = 0."""
    b = np.atleast_2d(np.asarray(b_values, dtype=float).T).T
    times = np.asarray(times, dtype=float)
    shifted = shifted_brownian(b, times, h)
    i = int(np.searchsorted(times, s - _ATOL))
    j = int(np.searchsorted(times, t - _ATOL))
    if abs(times[i] - s) > _ATOL or abs(times[j] - t) > _ATOL:
        raise DomainError("s and t must be grid points")
    inc = b[i + 1 : j + 1] - b[i:j]
    leftsum = np.einsum("rb,ra->ab", shifted[i:j], inc)  # int B^b_{r-h} dB^a_r
    boundary = np.outer(b[j] - b[i], shifted[j])
    corr = np.eye(b.shape[1]) * (t - s) if abs(h) <= _ATOL else 0.0
    return boundary - leftsum - corr


def extended_lift(fine_values, fine_times, shifts, kappa):
    """Ito lift of the stacked shifted path (B^{s_0}, ..., B^{s_{L-1}}).

    All shifts must align with the fine mesh; Chen's relation then holds at
    every coarse triple by construction of the left-point sums.
    """
    fine = np.atleast_2d(np.asarray(fine_values, dtype=float).T).T
    cols = [shifted_brownian(fine, fine_times, s) for s in shifts]
    stacked = np.concatenate(cols, axis=1)
    return lift(stacked, fine_times, kappa)


# ---------------------------------------------------------------------------
# discrete-delay fields and the lifted solve
# ---------------------------------------------------------------------------


class DelayField:
    """Discrete-delay coefficients A(t, lagged values, current value).

    ``drift(t, lags, y)`` -> (n,), ``diffusion(t, lags, y)`` -> (n, d);
    ``lags`` is an (m, n) array ordered like the base delays.
    """

    def __init__(self, n, d, m, drift, diffusion):
        self.n, self.d, self.m = n, d, m
        self.drift = drift
        self.diffusion = diffusion


def linear_delay_field(c0=-0.8, c1=0.5, s0=1.0, s1=0.3):
    """dX = (c0 X(t) + c1 X(t-h)) dt + (s0 + s1 X(t-h)) dB, the default case."""
    return DelayField(
        n=1,
        d=1,
        m=1,
        drift=lambda t, lags, y: np.array([c0 * y[0] + c1 * lags[0, 0]]),
        diffusion=lambda t, lags, y: np.array([[s0 + s1 * lags[0, 0]]]),
    )


class DiscreteDelayCoefficient(CoefficientField):
    """The same delay dynamics as a path-reading coefficient field, used to
    cross-check the lifted solve against direct simulation."""

    def __init__(self, dfield, delays, grid):
        self.n, self.d = dfield.n, dfield.d
        self.dfield = dfield
        self.delays = tuple(delays)
        self._steps = [_shift_steps(grid.points, h) for h in delays]

    def _lags(self, t, path):
        j = path.grid.index(t)
        out = np.zeros((len(self.delays), self.n))
        for i, k in enumerate(self._steps):
            out[i] = path.values[j - k] if j - k >= 0 else path.values[0]
        return out

    def sigma(self, t, path, value):
        return self.dfield.diffusion(t, self._lags(t, path), value)

    def b(self, t, path, value):
        return self.dfield.drift(t, self._lags(t, path), value)


def solve_lifted(system, dfield, x0, noise, grid):
    """Block-wise Euler for the lifted system; returns (K+1, L, n) values.

    Block l is frozen at x0 before its shift; its time argument, lagged
    reads, and noise are all exact index lookups, so block zero coincides
    with the direct delay simulation float for float.
    """
    if dfield.m != len(system.base_delays):
        raise ConfigurationError("field lag count does not match the delay system")
    k = grid.n_steps
    L, n = system.n_blocks, system.n
    noise = np.atleast_2d(np.asarray(noise, dtype=float).T).T
    x0 = np.asarray(x0, dtype=float).reshape(n)
    vals = np.tile(x0, (k + 1, L, 1))
    ksh = [_shift_steps(grid.points, s) for s in system.shifts]
    dt = grid.dt
    for j in range(k):
        new = vals[j].copy()
        for l in range(L):
            kl = ksh[l]
            if j < kl:
                continue
            jj = j - kl  # un-shifted step index of this block
            if dfield.m:
                lags = np.stack(
                    [vals[j, system.wiring[l][i]] if system.wiring[l][i] is not None else x0 for i in range(dfield.m)]
                )
            else:
                lags = np.zeros((0, n))
            cur = vals[j, l]
            inc = dfield.drift(grid.points[jj], lags, cur) * dt[jj] + dfield.diffusion(
                grid.points[jj], lags, cur
            ) @ noise[jj]
            new[l] = cur + inc
        vals[j + 1] = new
    return vals


def method_of_steps(dfield, x0, delay, horizon, n_fine=4096):
    """Deterministic delay dynamics integrated segment by segment with RK4,
    the lagged value read from the previously computed fine segment."""
    n = dfield.n
    x0 = np.asarray(x0, dtype=float).reshape(n)
    times = np.linspace(0.0, horizon, n_fine + 1)
    h = horizon / n_fine
    out = np.zeros((n_fine + 1, n))
    out[0] = x0

    def lag(t):
        u = t - delay
        if u <= 0:
            return x0
        pos = u / h
        i = min(int(pos), n_fine - 1)
        w = pos - i
        return (1 - w) * out[i] + w * out[i + 1]

    def f(t, y):
        return dfield.drift(t, lag(t)[None, :], y)

    for i in range(n_fine):
        t, y = times[i], out[i]
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        out[i + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return times, out


# ---------------------------------------------------------------------------
# state-dependent view of the lifted system (for spanning checks)
# ---------------------------------------------------------------------------


class LiftedDelayView(CoefficientField):
    """The lifted system as a state-dependent field on R^{L n} with block
    noise (one d-block per shifted Brownian motion)."""

    def __init__(self, system, dfield, x0):
        self.system = system
        self.dfield = dfield
        self.n = system.dim
        self.d = system.n_blocks * dfield.d
        self._x0 = np.asarray(x0, dtype=float).reshape(system.n)

    def _blocks(self, value):
        return value.reshape(self.system.n_blocks, self.system.n)

    def _lags(self, l, blocks):
        return np.stack(
            [
                blocks[self.system.wiring[l][i]] if self.system.wiring[l][i] is not None else self._x0
                for i in range(self.dfield.m)
            ]
        )

    def sigma(self, t, path, value):
        blocks = self._blocks(np.asarray(value, dtype=float))
        nb, n, d = self.system.n_blocks, self.system.n, self.dfield.d
        out = np.zeros((self.n, self.d))
        for l in range(nb):
            tl = max(t - self.system.shifts[l], 0.0)
            out[l * n : (l + 1) * n, l * d : (l + 1) * d] = self.dfield.diffusion(
                tl, self._lags(l, blocks), blocks[l]
            )
        return out

    def b(self, t, path, value):
        blocks = self._blocks(np.asarray(value, dtype=float))
        nb, n = self.system.n_blocks, self.system.n
        out = np.zeros(self.n)
        for l in range(nb):
            tl = max(t - self.system.shifts[l], 0.0)
            out[l * n : (l + 1) * n] = self.dfield.drift(tl, self._lags(l, blocks), blocks[l])
        return out


def pinned_state(system, x0, observed):
    """Lifted state at tau in (h_i, h_{i+1}]: blocks with shifts >= tau are
    pinned to x0, earlier blocks carry the observed values (newest first)."""
    x0 = np.asarray(x0, dtype=float).reshape(system.n)
    vals = np.tile(x0, (system.n_blocks, 1))
    for l, v in enumerate(observed):
        if l < system.n_blocks:
            vals[l] = np.asarray(v, dtype=float)
    return vals.reshape(-1)
