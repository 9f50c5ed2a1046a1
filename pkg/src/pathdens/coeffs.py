"""Non-anticipative coefficient fields with vertical, directional, and time
derivatives, the lift-space embedding, and the provided example families.

A field maps (t, stopped path, current value) to a drift vector b and a
diffusion matrix sigma.  Path entries strictly after t must never be read;
the provided families read the path strictly before t (through integrals,
delays, or anchor points) and the present value through the value argument.

``which`` arguments select a coefficient: ``"b"`` for the drift, an integer
k in [0, d) for the k-th diffusion column, or ``"sigma"`` for all columns.
"""

import warnings

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalError
from .timegrid import GridPath

_FD_SCALE = 1e-5


class BoundaryFlag(UserWarning):
    """Raised as a warning when a time derivative falls back to one-sided FD."""


# ---------------------------------------------------------------------------
# lift-space vectors
# ---------------------------------------------------------------------------


class LiftedVector:
    """Pair (1_{[t,T]} V on the grid, V) in the discretized lift space."""

    def __init__(self, path_part, point_part):
        self.path_part = np.atleast_2d(np.asarray(path_part, dtype=float).T).T
        self.point_part = np.asarray(point_part, dtype=float).reshape(-1)

    def flat(self):
        return np.concatenate([self.path_part.reshape(-1), self.point_part])

    def __add__(self, other):
        return LiftedVector(self.path_part + other.path_part, self.point_part + other.point_part)

    def __sub__(self, other):
        return LiftedVector(self.path_part - other.path_part, self.point_part - other.point_part)

    def __mul__(self, c):
        return LiftedVector(self.path_part * c, self.point_part * c)

    __rmul__ = __mul__


def lift(v, t, grid):
    """Embed V at time t: path part r -> 1_{[t,T]}(r) V, point part V."""
    v = np.asarray(v, dtype=float).reshape(-1)
    path = np.zeros((grid.n_points, len(v)))
    path[grid.index(t) :] = v
    return LiftedVector(path, v)


# ---------------------------------------------------------------------------
# base field
# ---------------------------------------------------------------------------


class CoefficientField:
    n = 1
    d = 1
    metadata = {"smooth": True, "first_derivatives_bounded": True, "growth_exponent": 1}

    def sigma(self, t, path, value):
        raise NotImplementedError

    def b(self, t, path, value):
        raise NotImplementedError

    # analytic oracles; None means fall back to finite differences
    def _dv_b(self, t, path, value):
        return None

    def _dv_sigma(self, t, path, value):
        return None

    def _dpath_b(self, t, path, value, dpath):
        return None

    def _dpath_sigma(self, t, path, value, dpath):
        return None

    def _dt_b(self, t, path, value):
        return None

    def _dt_sigma(self, t, path, value):
        return None

    def linearization_spec(self, bundle):
        """Per-step derivative tables for the fast flow engines, or None."""
        return None

    def freeze(self, t, path):
        """A view with all strict-past path features fixed at time t.

        Vertical bumps only touch slots at and after t, so for strictly
        causal fields the frozen view evaluates identically under them at
        O(1) cost.  The default keeps full path dependence (no speedup).
        """
        return self

    def batch_stepper(self, grid, m):
        """Vectorized stepper over m simultaneous samples, or None.

        A stepper provides step(j, values (m,n)) -> (b (m,n), sigma (m,n,d))
        and advance(j, values) called after each Euler update; per-sample
        arithmetic matches the scalar route up to summation rounding.
        """
        return None

    def sigma_column(self, k, t, path, value):
        return self.sigma(t, path, value)[:, k]


def _check_time(field, t, path):
    t_end = path.grid.points[-1]
    if t < -1e-12 or t > t_end + 1e-12:
        raise DomainError(f"t={t} outside [0, {t_end}]")


def eval_sigma(field, t, path, value):
    _check_time(field, t, path)
    out = np.asarray(field.sigma(t, path, np.asarray(value, dtype=float)), dtype=float)
    if out.shape != (field.n, field.d):
        raise DomainError(f"sigma must return shape {(field.n, field.d)}, got {out.shape}")
    return out


def eval_b(field, t, path, value):
    _check_time(field, t, path)
    out = np.asarray(field.b(t, path, np.asarray(value, dtype=float)), dtype=float)
    if out.shape != (field.n,):
        raise DomainError(f"b must return shape {(field.n,)}, got {out.shape}")
    return out


def _eval_which(field, which, t, path, value):
    if which == "b":
        return eval_b(field, t, path, value)
    if which == "sigma":
        return eval_sigma(field, t, path, value)
    return eval_sigma(field, t, path, value)[:, which]


def _fd_step(value, path):
    return _FD_SCALE * max(1.0, float(np.max(np.abs(value), initial=0.0)), float(np.max(np.abs(path.values), initial=0.0)))


def directional_derivative(field, which, t, path, value, dpath, dvalue):
    """Derivative of the coefficient along the lift-space direction (dpath, dvalue)."""
    value = np.asarray(value, dtype=float)
    dvalue = np.asarray(dvalue, dtype=float)
    dpath = np.atleast_2d(np.asarray(dpath, dtype=float).T).T

    # analytic route: value part plus path part, when both oracles exist
    if which == "b":
        dv, dp = field._dv_b(t, path, value), field._dpath_b(t, path, value, dpath)
        if dv is not None and dp is not None:
            return dv @ dvalue + dp
    else:
        dv, dp = field._dv_sigma(t, path, value), field._dpath_sigma(t, path, value, dpath)
        if dv is not None and dp is not None:
            full = np.einsum("kij,j->ik", dv, dvalue) + np.asarray(dp).T
            return full if which == "sigma" else full[:, which]

    h = _fd_step(value, path)
    scale = max(1.0, float(np.max(np.abs(dvalue), initial=0.0)), float(np.max(np.abs(dpath), initial=0.0)))
    h = h / scale
    up = GridPath(path.grid, path.values + h * dpath)
    dn = GridPath(path.grid, path.values - h * dpath)
    fu = _eval_which(field, which, t, up, value + h * dvalue)
    fd = _eval_which(field, which, t, dn, value - h * dvalue)
    out = (fu - fd) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise NumericalError("finite-difference quotient is not finite")
    return out


def vertical_derivative(field, which, t, path, value):
    """Matrix of derivatives along the directions (1_{[t,T]} e_i, e_i).

    Returns (n, n) for ``b`` or a single column, (n, d, n) for ``sigma``
    (output, column, bump direction).
    """
    n = field.n
    it = path.grid.index(t)
    stopped = path.values.copy()
    stopped[it:] = np.asarray(value, dtype=float)
    base = GridPath(path.grid, stopped)
    cols = []
    for i in range(n):
        dpath = np.zeros_like(base.values)
        dpath[it:, i] = 1.0
        dvalue = np.zeros(n)
        dvalue[i] = 1.0
        cols.append(directional_derivative(field, which, t, base, value, dpath, dvalue))
    if which == "sigma":
        return np.stack(cols, axis=-1)
    return np.stack(cols, axis=-1)


def time_derivative(field, which, t, path, value, step=None):
    """Central finite difference in t with the path frozen at its stop at t.

    Analytic oracles take precedence.  At the ends of the horizon the
    difference degrades to one-sided and a BoundaryFlag warning is issued.
    """
    if which == "b":
        o = field._dt_b(t, path, value)
        if o is not None:
            return o
    else:
        o = field._dt_sigma(t, path, value)
        if o is not None:
            o = np.asarray(o)
            return o.T if which == "sigma" else o[which]

    it = path.grid.index(t)
    stopped = path.values.copy()
    stopped[it:] = np.asarray(value, dtype=float)
    frozen = GridPath(path.grid, stopped)
    t_end = path.grid.points[-1]
    h = step if step is not None else 0.5 * float(np.min(np.diff(path.grid.points)))
    lo, hi = t - h, t + h
    if lo < 0.0 or hi > t_end:
        warnings.warn("one-sided time difference at the window boundary", BoundaryFlag)
        lo, hi = max(lo, 0.0), min(hi, t_end)
    fu = _eval_which(field, which, hi, frozen, value)
    fd = _eval_which(field, which, lo, frozen, value)
    out = (fu - fd) / (hi - lo)
    if not np.all(np.isfinite(out)):
        raise NumericalError("time finite difference is not finite")
    return out


def check_nonanticipative(field, t, path, value, trials=20, seed=0):
    """Exact-equality check that values strictly after t never matter."""
    gen = np.random.default_rng(seed)
    it = path.grid.index(t)
    ref_s = eval_sigma(field, t, path, value)
    ref_b = eval_b(field, t, path, value)
    for _ in range(trials):
        other = path.values.copy()
        if it + 1 < other.shape[0]:
            other[it + 1 :] += gen.standard_normal(other[it + 1 :].shape)
        q = GridPath(path.grid, other)
        if not (np.array_equal(eval_sigma(field, t, q, value), ref_s) and np.array_equal(eval_b(field, t, q, value), ref_b)):
            return False
    return True


# ---------------------------------------------------------------------------
# causal quadrature helper shared by the integral-type families
# ---------------------------------------------------------------------------


class _CausalSum:
    """Partial-cell quadrature of sum_{s < t} g(s) against the grid measure.

    Piecewise linear in t between grid points (atoms enter as jumps), which
    makes half-mesh central time differences exact away from atoms.
    """

    def __init__(self, grid):
        self.grid = grid
        self.points = grid.points
        self.leb = np.append(np.diff(grid.points), 0.0)

    def value(self, t, g_at_points):
        j = int(np.searchsorted(self.points, t + 1e-12)) - 1
        if j < 0:
            return np.zeros_like(g_at_points[0])
        atom = sum(
            w * g_at_points[self.grid.index(at)]
            for at, w in self.grid.measure.atoms
            if at < t - 1e-12
        )
        full = np.tensordot(self.leb[:j], g_at_points[:j], axes=(0, 0))
        partial = (t - self.points[j]) * g_at_points[j]
        return full + partial + atom

    def slope(self, t, g_at_points):
        """d/dt of value(); the mean of adjacent cell slopes at grid points."""
        j = int(np.searchsorted(self.points, t + 1e-12)) - 1
        on_grid = self.grid.contains(t)
        if on_grid:
            i = self.grid.index(t)
            if self.grid.measure.atom_weight(t) > 0:
                raise NumericalError("time derivative at an atom of the singular measure")
            left = g_at_points[i - 1] if i > 0 else g_at_points[0]
            right = g_at_points[i] if i < len(self.points) - 1 else g_at_points[-1]
            return 0.5 * (left + right)
        return g_at_points[max(j, 0)]


# ---------------------------------------------------------------------------
# provided families
# ---------------------------------------------------------------------------


class ConstantField(CoefficientField):
    """Constant drift and diffusion; every derivative vanishes."""

    def __init__(self, sigma_mat, drift=None):
        self._s = np.atleast_2d(np.asarray(sigma_mat, dtype=float))
        self.n, self.d = self._s.shape
        self._b = np.zeros(self.n) if drift is None else np.asarray(drift, dtype=float)

    def sigma(self, t, path, value):
        return self._s

    def b(self, t, path, value):
        return self._b

    def _dv_b(self, t, path, value):
        return np.zeros((self.n, self.n))

    def _dv_sigma(self, t, path, value):
        return np.zeros((self.d, self.n, self.n))

    def _dpath_b(self, t, path, value, dpath):
        return np.zeros(self.n)

    def _dpath_sigma(self, t, path, value, dpath):
        return np.zeros((self.d, self.n))

    def _dt_b(self, t, path, value):
        return np.zeros(self.n)

    def _dt_sigma(self, t, path, value):
        return np.zeros((self.d, self.n))

    def linearization_spec(self, bundle):
        k = bundle.grid.n_steps
        return {
            "mode": "factored",
            "point_jac": np.zeros((k, 1 + self.d, self.n, self.n)),
            "feat_jac": np.zeros((k, 1 + self.d, self.n, 1)),
            "feat_w": np.zeros((k + 1, 1, self.n)),
        }


class StateLinearField(CoefficientField):
    """b(y) = A_b y + c_b, sigma_k(y) = A_k y + c_k; state-dependent only."""

    def __init__(self, a_b=None, a_sigma=None, c_b=None, c_sigma=None, n=None, d=None):
        if a_sigma is not None:
            a_sigma = np.asarray(a_sigma, dtype=float)
            d, n = a_sigma.shape[0], a_sigma.shape[1]
        self.n = int(n)
        self.d = int(d)
        self._ab = np.zeros((n, n)) if a_b is None else np.asarray(a_b, dtype=float)
        self._as = np.zeros((d, n, n)) if a_sigma is None else a_sigma
        self._cb = np.zeros(n) if c_b is None else np.asarray(c_b, dtype=float)
        self._cs = np.zeros((n, d)) if c_sigma is None else np.asarray(c_sigma, dtype=float)

    def sigma(self, t, path, value):
        return np.einsum("kij,j->ik", self._as, value) + self._cs

    def b(self, t, path, value):
        return self._ab @ value + self._cb

    def _dv_b(self, t, path, value):
        return self._ab

    def _dv_sigma(self, t, path, value):
        return self._as

    def _dpath_b(self, t, path, value, dpath):
        return np.zeros(self.n)

    def _dpath_sigma(self, t, path, value, dpath):
        return np.zeros((self.d, self.n))

    def _dt_b(self, t, path, value):
        return np.zeros(self.n)

    def _dt_sigma(self, t, path, value):
        return np.zeros((self.d, self.n))

    def linearization_spec(self, bundle):
        k = bundle.grid.n_steps
        pj = np.zeros((k, 1 + self.d, self.n, self.n))
        pj[:, 0] = self._ab
        for kk in range(self.d):
            pj[:, 1 + kk] = self._as[kk]
        return {
            "mode": "factored",
            "point_jac": pj,
            "feat_jac": np.zeros((k, 1 + self.d, self.n, 1)),
            "feat_w": np.zeros((k + 1, 1, self.n)),
        }


def scalar_geometric(sigma=0.8, mu=0.0):
    """dX = mu X dt + sigma X dB; the closed-form Malliavin test case."""
    return StateLinearField(a_b=[[mu]], a_sigma=[[[sigma]]])


class IntroExample(CoefficientField):
    """Unit noise with drift -x(t) up to time 1 and -x(1) afterwards (T = 2).

    Its projected Jacobian decays linearly to zero at t = 2, the seed
    counterexample for invertibility of path-dependent flows.
    """

    n = 1
    d = 1
    t_switch = 1.0
    horizon = 2.0

    def sigma(self, t, path, value):
        return np.ones((1, 1))

    def b(self, t, path, value):
        if t <= self.t_switch + 1e-12:
            return -np.asarray(value, dtype=float).reshape(1)
        return -path.values[path.grid.index(self.t_switch)].copy()

    def _dv_b(self, t, path, value):
        return np.array([[-1.0]]) if t <= self.t_switch + 1e-12 else np.zeros((1, 1))

    def _dv_sigma(self, t, path, value):
        return np.zeros((1, 1, 1))

    def _dpath_b(self, t, path, value, dpath):
        if t <= self.t_switch + 1e-12:
            return np.zeros(1)
        return -np.atleast_2d(np.asarray(dpath, dtype=float).T).T[path.grid.index(self.t_switch)]

    def _dpath_sigma(self, t, path, value, dpath):
        return np.zeros((1, 1))

    def _dt_b(self, t, path, value):
        return np.zeros(1)

    def _dt_sigma(self, t, path, value):
        return np.zeros((1, 1))

    def linearization_spec(self, bundle):
        grid = bundle.grid
        k = grid.n_steps
        isw = grid.index(self.t_switch)
        pj = np.zeros((k, 2, 1, 1))
        fj = np.zeros((k, 2, 1, 1))
        fw = np.zeros((k + 1, 1, 1))
        fw[isw, 0, 0] = 1.0
        for j in range(k):
            if grid.points[j] <= self.t_switch + 1e-12:
                pj[j, 0, 0, 0] = -1.0
            else:
                fj[j, 0, 0, 0] = -1.0
        # the feature reads slot isw strictly before the steps that use it
        return {"mode": "factored", "point_jac": pj, "feat_jac": fj, "feat_w": fw}


class IntegralCoefficient(CoefficientField):
    """Coefficients reading the running integral zeta(t, x) = int_[0,t) phi(s, x(s)) rho(s) mu(ds).

    b = A_b y + c_b zeta, sigma_k = const_k + c_sigma_k zeta, with the
    quadrature taken against the grid measure (partial last cell in t).
    """

    def __init__(self, n=1, d=1, phi=None, dphi=None, rho=None, a_b=None, c_b=None, sigma_const=None, c_sigma=None):
        self.n, self.d = n, d
        self.phi = phi if phi is not None else (lambda s, y: y[..., 0])
        self.dphi = dphi if dphi is not None else (lambda s, y: np.stack([np.ones_like(y[..., 0])] + [np.zeros_like(y[..., 0])] * (n - 1), axis=-1))
        self.rho = rho if rho is not None else (lambda s: np.ones_like(np.asarray(s, dtype=float)))
        self._ab = np.zeros((n, n)) if a_b is None else np.asarray(a_b, dtype=float)
        self._cb = np.ones(n) if c_b is None else np.asarray(c_b, dtype=float) * np.ones(n)
        self._cs = np.zeros((d, n)) if c_sigma is None else np.asarray(c_sigma, dtype=float)
        self._s0 = np.eye(n, d) if sigma_const is None else np.asarray(sigma_const, dtype=float)

    def _g(self, path):
        s = path.grid.points
        return self.phi(s, path.values) * self.rho(s)

    def zeta(self, t, path):
        return float(_CausalSum(path.grid).value(t, self._g(path)))

    def sigma(self, t, path, value):
        return self._s0 + self.zeta(t, path) * self._cs.T

    def b(self, t, path, value):
        return self._ab @ value + self._cb * self.zeta(t, path)

    def _dzeta(self, t, path, dpath):
        g = self.dphi(path.grid.points, path.values) * self.rho(path.grid.points)[:, None]
        contrib = np.sum(g * np.atleast_2d(np.asarray(dpath, dtype=float).T).T, axis=1)
        return float(_CausalSum(path.grid).value(t, contrib))

    def _dv_b(self, t, path, value):
        return self._ab

    def _dv_sigma(self, t, path, value):
        return np.zeros((self.d, self.n, self.n))

    def _dpath_b(self, t, path, value, dpath):
        return self._cb * self._dzeta(t, path, dpath)

    def _dpath_sigma(self, t, path, value, dpath):
        return self._cs * self._dzeta(t, path, dpath)

    def _dt_b(self, t, path, value):
        return self._cb * float(_CausalSum(path.grid).slope(t, self._g(path)))

    def _dt_sigma(self, t, path, value):
        return self._cs * float(_CausalSum(path.grid).slope(t, self._g(path)))

    def linearization_spec(self, bundle):
        grid = bundle.grid
        k = grid.n_steps
        pj = np.zeros((k, 1 + self.d, self.n, self.n))
        pj[:, 0] = self._ab
        fj = np.zeros((k, 1 + self.d, self.n, 1))
        fj[:, 0, :, 0] = self._cb
        for kk in range(self.d):
            fj[:, 1 + kk, :, 0] = self._cs[kk]
        g = self.dphi(grid.points, bundle.X) * self.rho(grid.points)[:, None]
        leb = np.append(np.diff(grid.points), 0.0)
        fw = np.zeros((k + 1, 1, self.n))
        fw[:, 0, :] = leb[:, None] * g
        for at, w in grid.measure.atoms:
            fw[grid.index(at), 0, :] += w * g[grid.index(at)]
        return {"mode": "factored", "point_jac": pj, "feat_jac": fj, "feat_w": fw}


class ContinuousDelay(CoefficientField):
    """Scalar drift reading a smoothed delayed window of the path.

    b(t, x, y) = a_b y + c_b * int_{-T}^0 Phi(t+s, xl(t+s)) rho(s) ds with xl
    the piecewise-linear extension of the grid path (frozen at x(0) for
    negative times); sigma is constant.  The grid measure should carry an
    atom at zero.
    """

    def __init__(self, horizon, n_quad=None, a_b=0.0, c_b=1.0, sigma_const=1.0, phi=None, dphi_dt=None, dphi_dy=None, rho=None):
        self.n = self.d = 1
        self.horizon = float(horizon)
        self.n_quad = n_quad
        self._ab, self._cb, self._s0 = float(a_b), float(c_b), float(sigma_const)
        self.phi = phi if phi is not None else (lambda u, v: np.sin(u) + np.tanh(v))
        self.dphi_dt = dphi_dt if dphi_dt is not None else (lambda u, v: np.cos(u))
        self.dphi_dy = dphi_dy if dphi_dy is not None else (lambda u, v: 1.0 / np.cosh(v) ** 2)
        self.rho = rho if rho is not None else (lambda s: np.exp(s / self.horizon))

    def _quad(self, grid):
        m = self.n_quad if self.n_quad is not None else max(grid.n_steps, 8)
        ds = self.horizon / m
        s_mid = -self.horizon + (np.arange(m) + 0.5) * ds
        return s_mid, ds

    def _interp(self, grid, values, u):
        """Piecewise-linear path lookup, frozen at x(0) for u <= 0."""
        u = np.clip(u, 0.0, grid.points[-1])
        return np.interp(u, grid.points, values[:, 0])

    def _zeta_terms(self, t, path):
        s_mid, ds = self._quad(path.grid)
        u = t + s_mid
        xv = self._interp(path.grid, path.values, u)
        return s_mid, ds, u, xv

    def zeta(self, t, path):
        s_mid, ds, u, xv = self._zeta_terms(t, path)
        return float(np.sum(self.phi(u, xv) * self.rho(s_mid)) * ds)

    def sigma(self, t, path, value):
        return np.array([[self._s0]])

    def b(self, t, path, value):
        return np.array([self._ab * value[0] + self._cb * self.zeta(t, path)])

    def dzeta_dpath(self, t, path, dpath):
        s_mid, ds, u, xv = self._zeta_terms(t, path)
        dv = np.atleast_2d(np.asarray(dpath, dtype=float).T).T
        dxv = self._interp(path.grid, dv, u)
        return float(np.sum(self.dphi_dy(u, xv) * dxv * self.rho(s_mid)) * ds)

    def dzeta_dt(self, t, path):
        s_mid, ds, u, xv = self._zeta_terms(t, path)
        pts, vals = path.grid.points, path.values[:, 0]
        slopes = np.zeros_like(u)
        inside = (u > 0) & (u < pts[-1])
        idx = np.clip(np.searchsorted(pts, u[inside]) - 1, 0, len(pts) - 2)
        slopes[inside] = (vals[idx + 1] - vals[idx]) / (pts[idx + 1] - pts[idx])
        return float(np.sum((self.dphi_dt(u, xv) + self.dphi_dy(u, xv) * slopes) * self.rho(s_mid)) * ds)

    def _dv_b(self, t, path, value):
        return np.array([[self._ab]])

    def _dv_sigma(self, t, path, value):
        return np.zeros((1, 1, 1))

    def _dpath_b(self, t, path, value, dpath):
        return np.array([self._cb * self.dzeta_dpath(t, path, dpath)])

    def _dpath_sigma(self, t, path, value, dpath):
        return np.zeros((1, 1))

    def _dt_b(self, t, path, value):
        return np.array([self._cb * self.dzeta_dt(t, path)])

    def _dt_sigma(self, t, path, value):
        return np.zeros((1, 1))


class DiscretePoints(CoefficientField):
    """Coefficients reading the path at fixed anchor times only.

    b(t, x, y) = A_b y + sum_{i: t_i <= t} c_i * tanh(x(t_i)[0]) acting on the
    first coordinate; sigma constant.  The measure should carry atoms at the
    anchors.
    """

    def __init__(self, anchors, coeffs, n=1, d=1, a_b=None, sigma_const=None):
        self.anchors = tuple(float(a) for a in anchors)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.n, self.d = n, d
        self._ab = np.zeros((n, n)) if a_b is None else np.asarray(a_b, dtype=float)
        self._s0 = np.eye(n, d) if sigma_const is None else np.asarray(sigma_const, dtype=float)

    def _active(self, t):
        return [i for i, a in enumerate(self.anchors) if a <= t + 1e-12]

    def sigma(self, t, path, value):
        return self._s0

    def b(self, t, path, value):
        out = self._ab @ value
        for i in self._active(t):
            out = out + self.coeffs[i] * np.tanh(path.values[path.grid.index(self.anchors[i]), 0]) * np.eye(self.n)[:, 0]
        return out

    def _dv_b(self, t, path, value):
        return self._ab

    def _dv_sigma(self, t, path, value):
        return np.zeros((self.d, self.n, self.n))

    def _dpath_b(self, t, path, value, dpath):
        dp = np.atleast_2d(np.asarray(dpath, dtype=float).T).T
        out = np.zeros(self.n)
        for i in self._active(t):
            j = path.grid.index(self.anchors[i])
            out[0] += self.coeffs[i] * dp[j, 0] / np.cosh(path.values[j, 0]) ** 2
        return out

    def _dpath_sigma(self, t, path, value, dpath):
        return np.zeros((self.d, self.n))


class HormanderExample3D(CoefficientField):
    """Two diffusion fields in R^3 whose single bracket completes the span.

    sigma_1 = (1, 0, 0); sigma_2 = (0, a + sin y_2, y_1) with the parameter
    a = a0 + a1 tanh(kappa * int_[0,t) x_1(s) ds) read from the strict past
    of the path, so a stays inside [a0 - a1, a0 + a1] with a0 - a1 >= 2.
    """

    n = 3
    d = 2

    def __init__(self, a0=2.5, a1=0.4, kappa=1.0):
        if a0 - a1 < 2.0:
            raise DomainError("parameter range must stay within [2, inf)")
        self.a0, self.a1, self.kappa = float(a0), float(a1), float(kappa)

    def feature(self, t, path):
        return float(_CausalSum(path.grid).value(t, path.values[:, 0]))

    def a_param(self, t, path):
        return self.a0 + self.a1 * np.tanh(self.kappa * self.feature(t, path))

    def _da_dF(self, t, path):
        return self.a1 * self.kappa / np.cosh(self.kappa * self.feature(t, path)) ** 2

    def sigma(self, t, path, value):
        a = self.a_param(t, path)
        return np.array(
            [[1.0, 0.0], [0.0, a + np.sin(value[1])], [0.0, value[0]]]
        )

    def b(self, t, path, value):
        return np.zeros(3)

    def _dv_b(self, t, path, value):
        return np.zeros((3, 3))

    def _dv_sigma(self, t, path, value):
        out = np.zeros((2, 3, 3))
        out[1, 1, 1] = np.cos(value[1])
        out[1, 2, 0] = 1.0
        return out

    def _dpath_b(self, t, path, value, dpath):
        return np.zeros(3)

    def _dpath_sigma(self, t, path, value, dpath):
        dp = np.atleast_2d(np.asarray(dpath, dtype=float).T).T
        dfeat = float(_CausalSum(path.grid).value(t, dp[:, 0]))
        out = np.zeros((2, 3))
        out[1, 1] = self._da_dF(t, path) * dfeat
        return out

    def _dt_b(self, t, path, value):
        return np.zeros(3)

    def _dt_sigma(self, t, path, value):
        slope = float(_CausalSum(path.grid).slope(t, path.values[:, 0]))
        out = np.zeros((2, 3))
        out[1, 1] = self._da_dF(t, path) * slope
        return out

    def theta_lower(self, t, path, value):
        """Closed-form smallest Gram eigenvalue of {sigma_1, sigma_2, bracket}."""
        c2 = (self.a_param(t, path) + np.sin(value[1])) ** 2
        s = c2 + value[0] ** 2 + 1.0
        return min(1.0, 2.0 * c2 / (s + np.sqrt(s * s - 4.0 * c2)))

    def linearization_spec(self, bundle):
        grid = bundle.grid
        k = grid.n_steps
        pj = np.zeros((k, 3, 3, 3))
        fj = np.zeros((k, 3, 3, 1))
        feats = np.concatenate([[0.0], np.cumsum(np.diff(grid.points) * bundle.X[:-1, 0])])
        for at, w in grid.measure.atoms:
            i = grid.index(at)
            feats[i + 1 :] += w * bundle.X[i, 0]
        sech2 = 1.0 / np.cosh(self.kappa * feats[:k]) ** 2
        pj[:, 2, 1, 1] = np.cos(bundle.X[:k, 1])
        pj[:, 2, 2, 0] = 1.0
        fj[:, 2, 1, 0] = self.a1 * self.kappa * sech2
        leb = np.append(np.diff(grid.points), 0.0)
        fw = np.zeros((k + 1, 1, 3))
        fw[:, 0, 0] = leb
        for at, w in grid.measure.atoms:
            fw[grid.index(at), 0, 0] += w
        return {"mode": "factored", "point_jac": pj, "feat_jac": fj, "feat_w": fw}


class DegeneratePair(CoefficientField):
    """Two parallel diffusion fields in R^2; brackets never leave span{e_1}."""

    n = 2
    d = 2

    def sigma(self, t, path, value):
        return np.array([[1.0, 1.0 + 0.5 * np.sin(value[0])], [0.0, 0.0]])

    def b(self, t, path, value):
        return np.zeros(2)

    def _dv_b(self, t, path, value):
        return np.zeros((2, 2))

    def _dv_sigma(self, t, path, value):
        out = np.zeros((2, 2, 2))
        out[1, 0, 0] = 0.5 * np.cos(value[0])
        return out

    def _dpath_b(self, t, path, value, dpath):
        return np.zeros(2)

    def _dpath_sigma(self, t, path, value, dpath):
        return np.zeros((2, 2))

    def _dt_b(self, t, path, value):
        return np.zeros(2)

    def _dt_sigma(self, t, path, value):
        return np.zeros((2, 2))

    def linearization_spec(self, bundle):
        k = bundle.grid.n_steps
        pj = np.zeros((k, 3, 2, 2))
        pj[:, 2, 0, 0] = 0.5 * np.cos(bundle.X[:k, 0])
        return {
            "mode": "factored",
            "point_jac": pj,
            "feat_jac": np.zeros((k, 3, 2, 1)),
            "feat_w": np.zeros((k + 1, 1, 2)),
        }


class _FrozenValueView(CoefficientField):
    """State-dependent view of a field with its path features pinned."""

    def __init__(self, base, sigma_fn, b_fn, dv_sigma=None, dv_b=None):
        self.n, self.d = base.n, base.d
        self._sigma_fn, self._b_fn = sigma_fn, b_fn
        self._dvs, self._dvb = dv_sigma, dv_b

    def sigma(self, t, path, value):
        return self._sigma_fn(value)

    def b(self, t, path, value):
        return self._b_fn(value)

    def _dv_sigma(self, t, path, value):
        return self._dvs(value) if self._dvs is not None else None

    def _dv_b(self, t, path, value):
        return self._dvb(value) if self._dvb is not None else None

    def _dpath_b(self, t, path, value, dpath):
        return np.zeros(self.n)

    def _dpath_sigma(self, t, path, value, dpath):
        return np.zeros((self.d, self.n))


def _freeze_hormander(self, t, path):
    a = self.a_param(t, path)

    def s(value):
        return np.array([[1.0, 0.0], [0.0, a + np.sin(value[1])], [0.0, value[0]]])

    def dvs(value):
        out = np.zeros((2, 3, 3))
        out[1, 1, 1] = np.cos(value[1])
        out[1, 2, 0] = 1.0
        return out

    return _FrozenValueView(self, s, lambda v: np.zeros(3), dv_sigma=dvs, dv_b=lambda v: np.zeros((3, 3)))


HormanderExample3D.freeze = _freeze_hormander


def _freeze_integral(self, t, path):
    z = self.zeta(t, path)

    def s(value, _z=z):
        return self._s0 + _z * self._cs.T

    def bb(value, _z=z):
        return self._ab @ value + self._cb * _z

    return _FrozenValueView(
        self, s, bb, dv_sigma=lambda v: np.zeros((self.d, self.n, self.n)), dv_b=lambda v: self._ab
    )


IntegralCoefficient.freeze = _freeze_integral


def _freeze_intro(self, t, path):
    if t <= self.t_switch + 1e-12:
        return self
    past = path.values[path.grid.index(self.t_switch)].copy()
    return _FrozenValueView(
        self,
        lambda v: np.ones((1, 1)),
        lambda v, _p=past: -_p,
        dv_sigma=lambda v: np.zeros((1, 1, 1)),
        dv_b=lambda v: np.zeros((1, 1)),
    )


IntroExample.freeze = _freeze_intro


class ClosureField(CoefficientField):
    """User-supplied callables; all derivatives by finite differences."""

    def __init__(self, n, d, sigma, b):
        self.n, self.d = n, d
        self._sigma, self._b = sigma, b

    def sigma(self, t, path, value):
        return np.asarray(self._sigma(t, path, value), dtype=float).reshape(self.n, self.d)

    def b(self, t, path, value):
        return np.asarray(self._b(t, path, value), dtype=float).reshape(self.n)


class _Stepper:
    def __init__(self, step, advance=None):
        self.step = step
        self.advance = advance if advance is not None else (lambda j, values: None)


def _constant_stepper(self, grid, m):
    b = np.tile(self._b, (m, 1))
    s = np.tile(self._s, (m, 1, 1))
    return _Stepper(lambda j, values: (b, s))


ConstantField.batch_stepper = _constant_stepper


def _state_linear_stepper(self, grid, m):
    def step(j, values):
        return values @ self._ab.T + self._cb, np.einsum("kij,mj->mik", self._as, values) + self._cs

    return _Stepper(step)


StateLinearField.batch_stepper = _state_linear_stepper


def _degenerate_stepper(self, grid, m):
    def step(j, values):
        s = np.zeros((values.shape[0], 2, 2))
        s[:, 0, 0] = 1.0
        s[:, 0, 1] = 1.0 + 0.5 * np.sin(values[:, 0])
        return np.zeros_like(values), s

    return _Stepper(step)


DegeneratePair.batch_stepper = _degenerate_stepper


def _intro_stepper(self, grid, m):
    isw = grid.index(self.t_switch)
    state = {"past": None}

    def step(j, values):
        if grid.points[j] <= self.t_switch + 1e-12:
            b = -values
        else:
            b = -state["past"]
        return b, np.ones((values.shape[0], 1, 1))

    def advance(j, values):
        if j == isw:
            state["past"] = values.copy()

    return _Stepper(step, advance)


IntroExample.batch_stepper = _intro_stepper


def _hormander_stepper(self, grid, m):
    leb = np.append(np.diff(grid.points), 0.0)
    atom_w = np.array([grid.measure.atom_weight(t) for t in grid.points])
    state = {"feat": np.zeros(m)}

    def step(j, values):
        a = self.a0 + self.a1 * np.tanh(self.kappa * state["feat"])
        s = np.zeros((values.shape[0], 3, 2))
        s[:, 0, 0] = 1.0
        s[:, 1, 1] = a + np.sin(values[:, 1])
        s[:, 2, 1] = values[:, 0]
        return np.zeros_like(values), s

    def advance(j, values):
        state["feat"] += (leb[j] + atom_w[j]) * values[:, 0]

    return _Stepper(step, advance)


HormanderExample3D.batch_stepper = _hormander_stepper


FAMILIES = {
    "constant": ConstantField,
    "state_linear": StateLinearField,
    "geometric": scalar_geometric,
    "intro": IntroExample,
    "integral": IntegralCoefficient,
    "continuous_delay": ContinuousDelay,
    "discrete_points": DiscretePoints,
    "hormander3d": HormanderExample3D,
    "degenerate_pair": DegeneratePair,
}


def make_field(name, **params):
    if name not in FAMILIES:
        raise ConfigurationError(f"unknown coefficient family '{name}'")
    return FAMILIES[name](**params)
