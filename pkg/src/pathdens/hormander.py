"""Lie brackets of non-anticipative vector fields via vertical derivatives,
iterated bracket families, spanning checks, and the closed-form 3D example.

Bracket orientation: [V, W] = dv(V) W - dv(W) V, so the 3D example returns
bracket(sigma_1, sigma_2) = (0, 0, -1).  Spanning checks are orientation
independent (the Gram matrix squares every field).
"""

from dataclasses import dataclass

import numpy as np

from . import coeffs, flow
from .errors import DomainError, NumericalError, ResourceError
from .roughpath import sample_brownian

_NODE_CAP = 10_000
_FD_BASE = 1e-5


# ---------------------------------------------------------------------------
# vector-field wrappers
# ---------------------------------------------------------------------------


class FieldVector:
    """Leaf wrapper around one diffusion column of a coefficient field."""

    def __init__(self, field, k):
        self.field = field
        self.k = k
        self.depth = 0

    def label(self):
        return f"s{self.k + 1}"

    def eval(self, t, path, value):
        return coeffs.eval_sigma(self.field, t, path, np.asarray(value, dtype=float))[:, self.k]

    def vertical(self, t, path, value):
        return coeffs.vertical_derivative(self.field, self.k, t, path, value)

    def time_derivative(self, t, path, value):
        return coeffs.time_derivative(self.field, self.k, t, path, value)


class DriftVector(FieldVector):
    def __init__(self, field):
        self.field = field
        self.k = "b"
        self.depth = 0

    def label(self):
        return "b"

    def eval(self, t, path, value):
        return coeffs.eval_b(self.field, t, path, np.asarray(value, dtype=float))


class FuncVector:
    """Plain callable (t, path, value) -> R^n with FD derivatives."""

    def __init__(self, fn, n, depth=0, dt_fn=None):
        self.fn = fn
        self.n = n
        self.depth = depth
        self.dt_fn = dt_fn

    def label(self):
        return "f"

    def eval(self, t, path, value):
        return np.asarray(self.fn(t, path, value), dtype=float).reshape(self.n)

    def vertical(self, t, path, value):
        return _fd_vertical(self, t, path, value)

    def time_derivative(self, t, path, value):
        if self.dt_fn is not None:
            return np.asarray(self.dt_fn(t, path, value), dtype=float).reshape(self.n)
        return _fd_time(self, t, path, value)


def _fd_vertical(node, t, path, value, step=None):
    """Central FD of node.eval along the directions (1_{[t,T]} e_i, e_i).

    The step shrinks with nesting depth to keep noise amplification through
    iterated brackets controlled.
    """
    value = np.asarray(value, dtype=float)
    n = value.shape[0]
    it = path.grid.index(t)
    h = step if step is not None else _FD_BASE * max(1.0, float(np.max(np.abs(value)))) * 2.0 ** (-getattr(node, "depth", 0))
    cols = []
    base = path.values.copy()
    base[it:] = value
    for i in range(n):
        up, dn = base.copy(), base.copy()
        up[it:, i] += h
        dn[it:, i] -= h
        fu = node.eval(t, coeffs.GridPath(path.grid, up), value + h * np.eye(n)[i])
        fd = node.eval(t, coeffs.GridPath(path.grid, dn), value - h * np.eye(n)[i])
        cols.append((fu - fd) / (2.0 * h))
    out = np.stack(cols, axis=-1)
    if not np.all(np.isfinite(out)):
        raise NumericalError("vertical finite difference failed")
    return out


def _fd_time(node, t, path, value, step=None):
    it = path.grid.index(t)
    frozen = path.values.copy()
    frozen[it:] = np.asarray(value, dtype=float)
    fpath = coeffs.GridPath(path.grid, frozen)
    t_end = path.grid.points[-1]
    h = step if step is not None else 0.5 * float(np.min(np.diff(path.grid.points)))
    lo, hi = max(t - h, 0.0), min(t + h, t_end)
    return (node.eval(hi, fpath, value) - node.eval(lo, fpath, value)) / (hi - lo)


@dataclass
class BracketNode:
    """Binary bracket tree over diffusion-column leaves."""

    left: object
    right: object

    def __post_init__(self):
        self.depth = max(getattr(self.left, "depth", 0), getattr(self.right, "depth", 0)) + 1

    def label(self):
        return f"[{self.left.label()},{self.right.label()}]"

    def eval(self, t, path, value):
        dl = self.left.vertical(t, path, value) if hasattr(self.left, "vertical") else _fd_vertical(self.left, t, path, value)
        dr = self.right.vertical(t, path, value) if hasattr(self.right, "vertical") else _fd_vertical(self.right, t, path, value)
        return dl @ self.right.eval(t, path, value) - dr @ self.left.eval(t, path, value)

    def vertical(self, t, path, value):
        return _fd_vertical(self, t, path, value)

    def time_derivative(self, t, path, value):
        return _fd_time(self, t, path, value)


def lie_bracket(v1, v2, t, path, value):
    """[V1, V2] = dv(V1) V2 - dv(V2) V1 at (t, stopped path, value)."""
    return BracketNode(v1, v2).eval(t, path, value)


# ---------------------------------------------------------------------------
# iterated bracket sets and spanning
# ---------------------------------------------------------------------------


def sigma_leaves(field):
    return [FieldVector(field, k) for k in range(field.d)]


def generate_sigma_sets(field, max_depth):
    """Sets Sigma_0 ... Sigma_J: Sigma_j brackets every sigma_k against
    Sigma_{j-1}; duplicates by structure are kept, |Sigma_j| = d^(j+1)."""
    total = sum(field.d ** (j + 1) for j in range(max_depth + 1))
    if total > _NODE_CAP:
        raise ResourceError(f"{total} bracket nodes exceed the cap of {_NODE_CAP}")
    levels = [sigma_leaves(field)]
    for _ in range(max_depth):
        prev = levels[-1]
        levels.append([BracketNode(v, leaf) for leaf in sigma_leaves(field) for v in prev])
    return levels


@dataclass
class HormanderReport:
    lambda_min: float
    spanning_depth: object
    theta_lower: float
    lambda_by_depth: list
    gram: np.ndarray


def span_check(field, t, path, value, max_depth=3, tol=None, nodes=None):
    """Cumulative bracket Gram matrix and its smallest eigenvalue.

    ``spanning_depth`` is the first depth whose Gram clears the (scale
    invariant) threshold; ``nodes`` restricts the check to an explicit
    family instead of the full iterated sets.
    """
    value = np.asarray(value, dtype=float)
    if nodes is not None:
        levels = [list(nodes)]
    else:
        levels = generate_sigma_sets(field, max_depth)
    n = field.n
    gram = np.zeros((n, n))
    lam_by_depth = []
    for level in levels:
        for v in level:
            vec = v.eval(t, path, value)
            gram += np.outer(vec, vec)
        lam_by_depth.append(float(np.linalg.eigvalsh(0.5 * (gram + gram.T))[0]))
    thr = tol if tol is not None else 1e-8 * max(np.trace(gram), 1e-300)
    depth = next((j for j, lam in enumerate(lam_by_depth) if lam > thr), None)
    theta = None
    if hasattr(field, "theta_lower"):
        theta = float(field.theta_lower(t, path, value))
    return HormanderReport(
        lambda_min=lam_by_depth[-1],
        spanning_depth=depth,
        theta_lower=theta,
        lambda_by_depth=lam_by_depth,
        gram=gram,
    )


# ---------------------------------------------------------------------------
# closed-form 3D example
# ---------------------------------------------------------------------------


def example3d_lambda_min(a, y1, y2):
    """Smallest eigenvalue of the 3-field Gram for the explicit 3D system."""
    c2 = (a + np.sin(y2)) ** 2
    s = c2 + y1**2 + 1.0
    return np.minimum(1.0, 2.0 * c2 / (s + np.sqrt(s * s - 4.0 * c2)))


def paper_example_3d(a, y):
    """Closed forms for the explicit pair A1 = e1, A2 = (0, a + sin y2, y1).

    Returns the bracket (0,0,-1), the determinant -(a + sin y2) of the
    three-field matrix, and the smallest Gram eigenvalue.
    """
    a = float(a)
    if a < 2.0:
        raise DomainError("the parameter must satisfy a >= 2")
    y = np.asarray(y, dtype=float).reshape(3)
    return {
        "bracket": np.array([0.0, 0.0, -1.0]),
        "det": -(a + np.sin(y[1])),
        "lambda_min": float(example3d_lambda_min(a, y[0], y[1])),
    }


# ---------------------------------------------------------------------------
# sampled certificate for the quantitative spanning bound
# ---------------------------------------------------------------------------


@dataclass
class CertificateReport:
    lambda_mins: np.ndarray
    min_lambda: float
    median_lambda: float
    inverse_moments: dict
    passed: bool
    tol: float


def a5_certificate(field, x0, measure, config, m_samples, max_depth=3, qs=(1, 2, 4), tol=1e-10):
    """Monte Carlo surrogate of the spanning lower bound along solution paths.

    Samples terminal states, runs the spanning check at each, and reports
    empirical inverse moments of lambda_min.  A failing certificate (some
    sampled state does not span) is reported, not raised.  Only visited
    states are covered; this is an empirical surrogate, not a proof.
    """
    grid = config.grid(measure)
    lams = np.zeros(m_samples)
    for m in range(m_samples):
        b = sample_brownian(grid, field.d, config.seed, "a5", m)
        bundle = flow.solve_sde(field, x0, np.diff(b, axis=0), grid)
        rep = span_check(field, config.tau, bundle.path(), bundle.X[grid.index(config.tau)], max_depth=max_depth)
        lams[m] = rep.lambda_min
    with np.errstate(over="ignore"):  # degenerate fields have infinite inverse moments
        inv = {q: float(np.mean(np.maximum(lams, 1e-300) ** (-float(q)))) for q in qs}
    return CertificateReport(
        lambda_mins=lams,
        min_lambda=float(lams.min()),
        median_lambda=float(np.median(lams)),
        inverse_moments=inv,
        passed=bool(lams.min() > tol),
        tol=tol,
    )
