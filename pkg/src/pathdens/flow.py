"""Path-dependent Euler solver, the lifted solution, Jacobian and inverse
flows on the discretized lift space, and the transfer operators J_{tau,s}.

The discretized lift space is R^{n(N+1)} + R^n (path slots then point block),
dimension D = n(N+2).  Every coefficient derivative is a rank-n operator
E_j C_j with E_j the lift embedding at step j (path slots >= j+1 plus the
point block) and C_j an n x D gradient row built from the step linearization,
so flows are applied matrix-free; dense matrices are materialized only on
demand for small certification runs.

Two representations of J_{tau,s} = Pi_n Y_tau Z_s coexist:

* ``inverse_grid`` evolves Z by its own Euler scheme, used for the
  Z_t Y_t - I consistency studies;
* ``FlowOperators.j_rows`` realizes Z_s as the exact inverse of the
  accumulated step factors (a single backward sweep), which agrees with
  directional variation propagation to rounding.
"""

from dataclasses import dataclass

import numpy as np

from . import coeffs, rng
from ._kernels import jrows_sweep
from .coeffs import GridPath, LiftedVector
from .errors import ConfigurationError, DivergenceError, DomainError

# ---------------------------------------------------------------------------
# solution bundle
# ---------------------------------------------------------------------------


@dataclass
class SolutionBundle:
    grid: object
    X: np.ndarray  # (K+1, n)
    noise: np.ndarray  # (K, d)
    field: object = None

    @property
    def n(self):
        return self.X.shape[1]

    def path(self):
        return GridPath(self.grid, self.X)

    def lifted_state(self, t):
        """(X^t, X(t)): the path frozen after t plus the current value."""
        i = self.grid.index(t)
        part = self.X.copy()
        part[i:] = self.X[i]
        return LiftedVector(part, self.X[i])


def solve_sde(field, x0, noise, grid):
    """Left-point Euler scheme for the path-dependent equation."""
    noise = np.atleast_2d(np.asarray(noise, dtype=float).T).T
    if noise.shape[0] != grid.n_steps:
        raise DomainError("noise must supply one increment per grid interval")
    n = field.n
    x = np.zeros((grid.n_points, n))
    x[0] = np.asarray(x0, dtype=float)
    path = GridPath(grid, x)
    dt = grid.dt
    for j in range(grid.n_steps):
        t = grid.points[j]
        inc = np.asarray(field.b(t, path, x[j])) * dt[j] + np.asarray(field.sigma(t, path, x[j])) @ noise[j]
        x[j + 1] = x[j] + inc
        if not np.all(np.isfinite(x[j + 1])):
            raise DivergenceError(f"non-finite state at step {j}", step=j)
    return SolutionBundle(grid=grid, X=x, noise=noise, field=field)


def lift_solution(bundle):
    """Per-time lifted states of a solved bundle."""
    return [bundle.lifted_state(t) for t in bundle.grid.points]


def solve_sde_batch(field, x0, grid, seed, labels, indices):
    """Euler paths for many Monte Carlo indices at once via the field's
    batch stepper; per-sample streams match the scalar route, values agree
    with it up to summation rounding.  Returns (paths (m,K+1,n), noise)."""
    from . import rng

    stepper = field.batch_stepper(grid, len(indices))
    if stepper is None:
        raise ConfigurationError("field does not provide a batch stepper")
    m = len(indices)
    k, n, d = grid.n_steps, field.n, field.d
    sq = np.sqrt(np.diff(grid.points))
    noise = np.empty((m, k, d))
    for i, idx in enumerate(indices):
        noise[i] = rng.stream(seed, "brownian", *labels, idx).standard_normal((k, d))
    noise *= sq[None, :, None]
    x = np.zeros((m, k + 1, n))
    x[:, 0] = np.asarray(x0, dtype=float)
    dt = grid.dt
    for j in range(k):
        b, s = stepper.step(j, x[:, j])
        inc = b * dt[j] + np.einsum("mnd,md->mn", s, noise[:, j])
        stepper.advance(j, x[:, j])
        x[:, j + 1] = x[:, j] + inc
        if not np.all(np.isfinite(x[:, j + 1])):
            raise DivergenceError(f"non-finite state at step {j}", step=j)
    return x, noise


def direct_lifted_solve(field, x0, noise, grid):
    """Solve the lifted equation coordinate-wise on the grid.

    Increments over [t_j, t_{j+1}) enter path slots from j+1 on (slot j is
    frozen at X(t_j)), which makes the result identical, float for float,
    to lifting the scalar solve.
    """
    noise = np.atleast_2d(np.asarray(noise, dtype=float).T).T
    n = field.n
    k = grid.n_steps
    states = np.zeros((k + 1, k + 1, n))
    x = np.zeros((k + 1, n))
    x[0] = np.asarray(x0, dtype=float)
    states[0, :] = x[0]
    cur = np.tile(np.asarray(x0, dtype=float), (k + 1, 1))
    path = GridPath(grid, x)
    dt = grid.dt
    for j in range(k):
        t = grid.points[j]
        inc = np.asarray(field.b(t, path, x[j])) * dt[j] + np.asarray(field.sigma(t, path, x[j])) @ noise[j]
        cur[j + 1 :] += inc
        x[j + 1] = x[j] + inc
        states[j + 1] = cur
    return states, x


# ---------------------------------------------------------------------------
# step linearization
# ---------------------------------------------------------------------------


@dataclass
class StepLinearization:
    """Per-step derivative tables of the coefficients along a solution.

    Coefficient slots are ordered [b, sigma_1, ..., sigma_d].  Modes:

    * ``factored``: value jacobians (K, 1+d, n, n) plus causal scalar
      features with fixed slot weights (K, 1+d, n, m) x (K+1, m, n);
    * ``dense``: explicit path-slot jacobians (K, 1+d, n, K+1, n);
    * ``callback``: no tables, derivatives via the field's oracles per
      direction (generic but slow; excluded from the fast sweeps).
    """

    mode: str
    field: object
    bundle: object
    point_jac: np.ndarray = None
    feat_jac: np.ndarray = None
    feat_w: np.ndarray = None
    dense_path: np.ndarray = None

    @property
    def n(self):
        return self.field.n

    @property
    def d(self):
        return self.field.d


def linearize(field, bundle, mode=None):
    """Build the step linearization, preferring the field's factored tables."""
    spec = field.linearization_spec(bundle)
    if spec is not None and mode in (None, "factored"):
        return StepLinearization(
            mode="factored",
            field=field,
            bundle=bundle,
            point_jac=np.asarray(spec["point_jac"], dtype=float),
            feat_jac=np.asarray(spec["feat_jac"], dtype=float),
            feat_w=np.asarray(spec["feat_w"], dtype=float),
        )
    if mode == "factored":
        raise ConfigurationError("field does not provide factored linearization tables")
    if mode == "dense":
        return _linearize_dense(field, bundle)
    return StepLinearization(mode="callback", field=field, bundle=bundle)


def _linearize_dense(field, bundle):
    grid, x = bundle.grid, bundle.X
    k, n, d = grid.n_steps, field.n, field.d
    point_jac = np.zeros((k, 1 + d, n, n))
    dense_path = np.zeros((k, 1 + d, n, k + 1, n))
    path = bundle.path()
    for j in range(k):
        t = grid.points[j]
        for i in range(n):
            ei = np.eye(n)[i]
            zero = np.zeros_like(x)
            point_jac[j, 0, :, i] = coeffs.directional_derivative(field, "b", t, path, x[j], zero, ei)
            ds = coeffs.directional_derivative(field, "sigma", t, path, x[j], zero, ei)
            point_jac[j, 1:, :, i] = ds.T
        for slot in range(j):  # causal: slots strictly before t contribute
            for i in range(n):
                dp = np.zeros_like(x)
                dp[slot, i] = 1.0
                zero_v = np.zeros(n)
                dense_path[j, 0, :, slot, i] = coeffs.directional_derivative(field, "b", t, path, x[j], dp, zero_v)
                ds = coeffs.directional_derivative(field, "sigma", t, path, x[j], dp, zero_v)
                dense_path[j, 1:, :, slot, i] = ds.T
    return StepLinearization(
        mode="dense", field=field, bundle=bundle, point_jac=point_jac, dense_path=dense_path
    )


# ---------------------------------------------------------------------------
# flow operators
# ---------------------------------------------------------------------------


def flat_dim(grid, n):
    return n * (grid.n_points + 1)


def flatten_lifted(v):
    return v.flat()


def unflatten(flat, grid, n):
    k1 = grid.n_points
    return LiftedVector(flat[: k1 * n].reshape(k1, n), flat[k1 * n :])


@dataclass
class JRows:
    """Rows of J_{tau,s} = Pi_n Y_tau Y_s^{-1} for every s up to tau.

    ``jl[s]`` applies J to vectors lifted at s; ``jslot[s]`` to the
    path-slot-s unit block.  In factored mode ``phi`` and ``gp`` let
    ``apply`` hit arbitrary lift-space vectors; dense mode stores the
    full rows.
    """

    tau_idx: int
    jl: np.ndarray
    jslot: np.ndarray
    gp: np.ndarray = None
    phi: np.ndarray = None
    feat_w: np.ndarray = None
    gfull: np.ndarray = None

    def apply(self, s_idx, vhat):
        path, point = vhat.path_part, vhat.point_part
        if self.gfull is not None:
            g = self.gfull[s_idx]
            return g[:, : path.size] @ path.reshape(-1) + g[:, path.size :] @ point
        k1 = path.shape[0]
        idx = np.clip(np.maximum(s_idx, np.arange(k1) + 1), None, self.tau_idx + 1)
        out = self.gp[s_idx] @ point
        out = out + np.einsum("inm,imb,ib->n", self.phi[idx], self.feat_w[:k1], path)
        return out


class FlowOperators:
    """Matrix-free Jacobian/inverse flows plus dense views on demand."""

    def __init__(self, field, bundle, lin=None):
        self.field = field
        self.bundle = bundle
        self.grid = bundle.grid
        self.lin = lin if lin is not None else linearize(field, bundle)
        self.n, self.d = field.n, field.d
        self.k = self.grid.n_steps
        self.D = flat_dim(self.grid, self.n)
        self._coef = np.concatenate([self.grid.dt[:, None], bundle.noise], axis=1)
        self._dense_y = {}
        self._dense_z = {}
        self._jrows = {}

    # -- step gradient rows ------------------------------------------------

    def _point_block(self, j):
        return np.einsum("c,cab->ab", self._coef[j], self.lin.point_jac[j])

    def _row_matrix(self, j):
        """Materialize gradient rows at step j as n x D matrices."""
        n, k1 = self.n, self.k + 1
        if self.lin.mode == "factored":
            pj = self.lin.point_jac[j]
            fj = self.lin.feat_jac[j]
            rows = np.zeros((1 + self.d, n, self.D))
            for c in range(1 + self.d):
                rows[c, :, k1 * n :] = pj[c]
                if np.any(fj[c]):
                    path_block = np.einsum("af,ifb->iab", fj[c], self.lin.feat_w[:j])
                    rows[c, :, : j * n] = np.moveaxis(path_block, 0, 1).reshape(n, j * n)
            return rows
        if self.lin.mode == "dense":
            pj = self.lin.point_jac[j]
            rows = np.zeros((1 + self.d, n, self.D))
            rows[:, :, k1 * n :] = pj
            rows[:, :, : k1 * n] = self.lin.dense_path[j].reshape(1 + self.d, n, k1 * n)
            return rows
        raise ConfigurationError("dense rows unavailable in callback mode")

    # -- matrix-free applications -------------------------------------------

    def _cdotv(self, j, v_point, feat):
        """C_j v for the combined step rows, given the causal feature of v."""
        pj = self.lin.point_jac[j]
        out = np.einsum("c,cab,b->a", self._coef[j], pj, v_point)
        if self.lin.mode == "factored":
            fj = self.lin.feat_jac[j]
            out = out + np.einsum("c,caf,f->a", self._coef[j], fj, feat)
        return out

    def apply_Y(self, idx, vhat):
        """Y_idx applied to a lift-space vector (Euler scheme flow)."""
        if self.lin.mode == "callback":
            raise ConfigurationError("operator application requires linearization tables")
        path = vhat.path_part.copy()
        point = vhat.point_part.copy()
        if self.lin.mode == "dense":
            flat = np.concatenate([path.reshape(-1), point])
            for j in range(idx):
                rows = self._row_matrix(j)
                inc = np.einsum("c,cad,d->a", self._coef[j], rows, flat)
                flat[(j + 1) * self.n : (self.k + 1) * self.n] += np.tile(inc, self.k - j)
                flat[(self.k + 1) * self.n :] += inc
            return unflatten(flat, self.grid, self.n)
        m = self.lin.feat_w.shape[1]
        feat = np.zeros(m)
        for j in range(idx):
            inc = self._cdotv(j, point, feat)
            feat = feat + self.lin.feat_w[j] @ path[j]
            path[j + 1 :] += inc
            point = point + inc
        return LiftedVector(path, point)

    def apply_Z(self, idx, vhat):
        """Scheme inverse flow Z_idx applied to a lift-space vector."""
        if self.lin.mode == "callback":
            raise ConfigurationError("operator application requires linearization tables")
        if self.lin.mode == "dense":
            z = self.dense_Z(idx)
            flat = z @ np.concatenate([vhat.path_part.reshape(-1), vhat.point_part])
            return unflatten(flat, self.grid, self.n)
        path = vhat.path_part.copy()
        point = vhat.point_part.copy()
        m = self.lin.feat_w.shape[1]
        feats = np.concatenate([np.zeros((1, m)), np.cumsum(np.einsum("ifb,ib->if", self.lin.feat_w[: self.k], vhat.path_part[: self.k]), axis=0)])
        for j in range(idx - 1, -1, -1):
            pj = self.lin.point_jac[j]
            fj = self.lin.feat_jac[j]
            lv = np.einsum("cab,b->ca", pj, point)
            if self.lin.mode == "factored":
                lv = lv + np.einsum("caf,f->ca", fj, feats[j])
            # varsigma rows: (L_b - sum_k L_k E_j L_k) dt + sum_k L_k dW
            inc = lv[0] * self._coef[j, 0]
            for kk in range(self.d):
                inc = inc - pj[1 + kk] @ lv[1 + kk] * self._coef[j, 0]
                inc = inc + lv[1 + kk] * self._coef[j, 1 + kk]
            path[j + 1 :] -= inc
            point = point - inc
        return LiftedVector(path, point)

    # -- dense views ---------------------------------------------------------

    def dense_Y(self, idx):
        if idx not in self._dense_y:
            y = np.eye(self.D)
            k1n = (self.k + 1) * self.n
            for j in range(idx):
                rows = self._row_matrix(j)
                c = np.einsum("c,cad->ad", self._coef[j], rows)
                inc = c @ y
                y[(j + 1) * self.n : k1n] += np.tile(inc, (self.k - j, 1))
                y[k1n:] += inc
            self._dense_y[idx] = y
        return self._dense_y[idx]

    def dense_Z(self, idx):
        if idx not in self._dense_z:
            z = np.eye(self.D)
            k1n = (self.k + 1) * self.n
            for j in range(idx):
                rows = self._row_matrix(j)
                lb = rows[0]
                ls = rows[1:]
                # varsigma = L_b - sum_k L_k E_j L_k acting through the embedding
                var = lb.copy()
                for kk in range(self.d):
                    lk_ej = ls[kk][:, k1n:].copy()
                    lk_ej += np.add.reduce(
                        ls[kk][:, (j + 1) * self.n : k1n].reshape(self.n, self.k - j, self.n), axis=1
                    )
                    var = var - lk_ej @ ls[kk]
                c = var * self.grid.dt[j]
                for kk in range(self.d):
                    c = c + ls[kk] * self._coef[j, 1 + kk]
                ze = z[:, k1n:].copy()
                ze += np.add.reduce(z[:, (j + 1) * self.n : k1n].reshape(self.D, self.k - j, self.n), axis=1)
                z = z - ze @ c
            self._dense_z[idx] = z
        return self._dense_z[idx]

    def inverse_residual(self, idx, probes=16, seed=0):
        """Probed weighted-2 operator norm of Z_idx Y_idx - I (scheme Z)."""
        gen = rng.stream(seed, "invres")
        w = np.concatenate([np.repeat(np.maximum(self.grid.weights, 0.0), self.n), np.ones(self.n)])
        sw = np.sqrt(w + 1e-300)
        best = 0.0
        for _ in range(probes):
            v = gen.standard_normal(self.D) / sw
            vhat = unflatten(v, self.grid, self.n)
            av = self.apply_Z(idx, self.apply_Y(idx, vhat)).flat() - v
            best = max(best, float(np.linalg.norm(av * sw) / np.linalg.norm(v * sw)))
        return best

    def op_norm_Y(self, idx, p=2.0, probes=16, seed=0):
        """Probed lower estimate of the lift-space operator norm of Y_idx."""
        from .timegrid import lifted_norm

        gen = rng.stream(seed, "opnorm")
        best = 0.0
        for _ in range(probes):
            v = gen.standard_normal(self.D)
            vhat = unflatten(v, self.grid, self.n)
            denom = lifted_norm(vhat.path_part, vhat.point_part, self.grid, p)
            yv = self.apply_Y(idx, vhat)
            best = max(best, lifted_norm(yv.path_part, yv.point_part, self.grid, p) / denom)
        return best

    # -- exact-inverse transfer rows -----------------------------------------

    def j_rows(self, tau_idx):
        """Backward sweep for J_{tau,s} rows; cached per tau."""
        if tau_idx in self._jrows:
            return self._jrows[tau_idx]
        if self.lin.mode == "factored":
            jl, jslot = jrows_sweep(
                self.lin.point_jac,
                self.lin.feat_jac,
                self.lin.feat_w,
                self.grid.dt,
                self.bundle.noise,
                tau_idx,
            )
            gp, phi = self._factored_gp_phi(tau_idx)
            rows = JRows(tau_idx=tau_idx, jl=jl, jslot=jslot, gp=gp, phi=phi, feat_w=self.lin.feat_w)
        else:
            rows = self._jrows_dense(tau_idx)
        self._jrows[tau_idx] = rows
        return rows

    def _factored_gp_phi(self, tau_idx):
        n, m = self.n, self.lin.feat_w.shape[1]
        gp = np.zeros((tau_idx + 1, n, n))
        phi = np.zeros((tau_idx + 2, n, m))
        h = np.zeros((n, n))
        gp[tau_idx] = np.eye(n)
        for t in range(tau_idx - 1, -1, -1):
            slot = phi[t + 1] @ self.lin.feat_w[t]
            km = gp[t + 1] + h
            cp = np.einsum("c,cab->ab", self._coef[t], self.lin.point_jac[t])
            th = np.einsum("c,caf->af", self._coef[t], self.lin.feat_jac[t])
            gp[t] = gp[t + 1] + km @ cp
            phi[t] = phi[t + 1] + km @ th
            h = h + slot
        return gp, phi

    def _jrows_dense(self, tau_idx):
        n, k1 = self.n, self.k + 1
        g = np.zeros((n, self.D))
        g[:, k1 * n :] = np.eye(n)
        gfull = np.zeros((tau_idx + 1, n, self.D))
        gfull[tau_idx] = g
        jl = np.zeros((tau_idx + 1, n, n))
        jslot = np.zeros((tau_idx + 1, n, n))
        jl[tau_idx] = np.eye(n)
        for t in range(tau_idx - 1, -1, -1):
            ge = g[:, k1 * n :].copy()
            ge += np.add.reduce(g[:, (t + 1) * n : k1 * n].reshape(n, self.k - t, n), axis=1)
            rows = self._row_matrix(t)
            c = np.einsum("c,cad->ad", self._coef[t], rows)
            g = g + ge @ c
            gfull[t] = g
            jslot[t] = g[:, t * n : (t + 1) * n]
            jl[t] = g[:, k1 * n :] + np.add.reduce(g[:, t * n : k1 * n].reshape(n, k1 - t, n), axis=1)
        return JRows(tau_idx=tau_idx, jl=jl, jslot=jslot, gfull=gfull)


def jacobian_grid(field, bundle, lin=None):
    """Flow operators exposing the Jacobian Y (matrix-free plus dense views)."""
    return FlowOperators(field, bundle, lin=lin)


def inverse_grid(field, bundle, lin=None):
    """Flow operators exposing the scheme inverse Z alongside Y."""
    return FlowOperators(field, bundle, lin=lin)


def j_tau_s(ops, tau, s, vhat):
    """Pi_n Y_tau Z_s applied to a lift-space vector, Z the exact inverse."""
    it, isx = ops.grid.index(tau), ops.grid.index(s)
    if isx > it:
        raise DomainError("need s <= tau")
    return ops.j_rows(it).apply(isx, vhat)


# ---------------------------------------------------------------------------
# directional variation propagation
# ---------------------------------------------------------------------------


def propagate_variation(field, bundle, s, v):
    """Linearized Euler flow started at time s with value v.

    Returns the grid path of the point part (zero strictly before s); the
    accumulated perturbation path enters the coefficient derivatives.
    """
    grid = bundle.grid
    isx = grid.index(s)
    n = field.n
    v = np.asarray(v, dtype=float).reshape(n)
    xi = np.zeros((grid.n_points, n))
    pert = np.zeros((grid.n_points, n))
    pert[isx:] = v
    xi[isx] = v
    path = bundle.path()
    dt = grid.dt
    cur = v.copy()
    for j in range(isx, grid.n_steps):
        t = grid.points[j]
        db = coeffs.directional_derivative(field, "b", t, path, bundle.X[j], pert, cur)
        ds = coeffs.directional_derivative(field, "sigma", t, path, bundle.X[j], pert, cur)
        inc = np.asarray(db) * dt[j] + np.asarray(ds) @ bundle.noise[j]
        cur = cur + inc
        pert[j + 1 :] += inc
        xi[j + 1] = cur
    return xi
