"""Grid verification of the lifted chain-rule identity for time-indexed
vector fields and of the transfer identity that moves bracket information
through the inverse flow, plus the scalar diagnostic quantities used by
oscillation (Norris-type) arguments.

Both identities are discretized with left-point / compensated left-point
sums on a Stratonovich second level; the Young term against the moving
indicator is evaluated through its exact telescoping form (one path slot
per step).  Residuals vanish identically at the window start and decay
under mesh refinement at the scheme rate.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import coeffs, flow
from ._kernels import holder_pair_max, lifted_holder_max, remainder_pair_max
from .coeffs import LiftedVector, lift
from .errors import ContractError, DomainError
from .hormander import BracketNode, FieldVector, FuncVector, _fd_vertical
from .roughpath import holder_norms, holder_roughness
from .timegrid import lifted_norm

# ---------------------------------------------------------------------------
# Stratonovich drift
# ---------------------------------------------------------------------------


def sigma0_point(field, t, path, value):
    """b minus half the vertical derivatives of the diffusion columns along
    themselves (the Stratonovich drift correction)."""
    value = np.asarray(value, dtype=float)
    sig = coeffs.eval_sigma(field, t, path, value)
    vert = coeffs.vertical_derivative(field, "sigma", t, path, value)  # (n, d, n)
    out = coeffs.eval_b(field, t, path, value).astype(float)
    for k in range(field.d):
        out = out - 0.5 * vert[:, k, :] @ sig[:, k]
    return out


def sigma0_hat(field, t, path, value):
    return lift(sigma0_point(field, t, path, value), t, path.grid)


# ---------------------------------------------------------------------------
# vector-field specs
# ---------------------------------------------------------------------------


def resolve_field_vector(spec, field):
    """Build the test map over a (possibly frozen) field.

    Specs: integer k for sigma_k, ("bracket", k, l) for [sigma_k, sigma_l],
    or a prebuilt node (used as is, no per-step freezing).
    """
    if isinstance(spec, int):
        return FieldVector(field, spec)
    if isinstance(spec, tuple) and spec and spec[0] == "bracket":
        return BracketNode(FieldVector(field, spec[1]), FieldVector(field, spec[2]))
    return spec


def _is_spec(spec):
    return isinstance(spec, int) or (isinstance(spec, tuple) and spec and spec[0] == "bracket")


@dataclass
class _StepData:
    v: np.ndarray  # V(t, X_t)
    dtv: np.ndarray  # time derivative of V
    v_sigma: np.ndarray  # (n, d): dv(V) sigma_k
    v_s0: np.ndarray  # dv(V) s0
    w: np.ndarray  # (n, d): dv(V) sigma_k - dv(sigma_k) V
    w2me: np.ndarray  # (d, d, n): bracket of w_k against sigma_l (transfer form)
    w2ito: np.ndarray  # (d, d, n): plain vertical of (dv(V) sigma_k) along sigma_l
    s0: np.ndarray
    drift_br: np.ndarray  # dv(V) s0 - dv(s0) V


def _step_tables(field, v_spec, bundle, i0, i1, need_ito=False, need_me=False):
    grid = bundle.grid
    path = bundle.path()
    n, d = field.n, field.d
    out = []
    v_orig = resolve_field_vector(v_spec, field)
    for j in range(i0, i1 + 1):
        t = grid.points[j]
        x = bundle.X[j]
        fr = field.freeze(t, path) if _is_spec(v_spec) else field
        vn = resolve_field_vector(v_spec, fr)
        sig = coeffs.eval_sigma(fr, t, path, x)
        vertsig = coeffs.vertical_derivative(fr, "sigma", t, path, x)
        vt = vn.eval(t, path, x)
        vertv = vn.vertical(t, path, x)
        s0 = coeffs.eval_b(fr, t, path, x).astype(float)
        for k in range(d):
            s0 = s0 - 0.5 * vertsig[:, k, :] @ sig[:, k]
        v_sigma = vertv @ sig
        w = v_sigma - np.stack([vertsig[:, k, :] @ vt for k in range(d)], axis=1)
        s0_map = FuncVector(lambda tt, pp, vv, _f=fr: sigma0_point(_f, tt, pp, vv), n, depth=1)
        v_s0 = vertv @ s0
        drift_br = v_s0 - s0_map.vertical(t, path, x) @ vt
        w2me = np.zeros((d, d, n))
        w2ito = np.zeros((d, d, n))
        if need_me or need_ito:
            for k in range(d):
                wk_map = BracketNode(vn, FieldVector(fr, k))
                gk_map = FuncVector(
                    lambda tt, pp, vv, _vn=vn, _f=fr, _k=k: _vn.vertical(tt, pp, vv)
                    @ coeffs.eval_sigma(_f, tt, pp, vv)[:, _k],
                    n,
                    depth=getattr(vn, "depth", 0) + 1,
                )
                vert_wk = wk_map.vertical(t, path, x) if need_me else None
                vert_gk = gk_map.vertical(t, path, x) if need_ito else None
                for l in range(d):
                    if need_me:
                        w2me[l, k] = vert_wk @ sig[:, l] - vertsig[:, l, :] @ wk_map.eval(t, path, x)
                    if need_ito:
                        w2ito[l, k] = vert_gk @ sig[:, l]
        dtv = np.asarray(v_orig.time_derivative(t, path, x), dtype=float)
        out.append(
            _StepData(
                v=vt, dtv=dtv, v_sigma=v_sigma, v_s0=v_s0, w=w, w2me=w2me, w2ito=w2ito, s0=s0, drift_br=drift_br
            )
        )
    return out


# ---------------------------------------------------------------------------
# lifted chain-rule check (unprojected)
# ---------------------------------------------------------------------------


@dataclass
class ItoCheckReport:
    residual_sup: float
    residuals: np.ndarray
    term_young: float
    term_ds: float
    term_rough: float


def rough_ito_check(field, v_spec, bundle, rp, window, p=1.4):
    """Residual of the lifted chain-rule identity over the window, in the
    lift-space norm, on a Stratonovich rough path sharing the grid.

    The Young indicator term enters through its telescoping closed form
    (slot i carries -V(s_i) once the window has passed it).
    """
    if rp.convention != "strat":
        raise ContractError("the chain-rule check integrates a Stratonovich lift")
    grid = bundle.grid
    if len(rp.times) != grid.n_points or np.max(np.abs(rp.times - grid.points)) > 1e-12:
        raise DomainError("rough path and bundle live on different grids")
    i0, i1 = grid.index(window[0]), grid.index(window[1])
    tabs = _step_tables(field, v_spec, bundle, i0, i1, need_ito=True)
    n = field.n
    k_steps = i1 - i0
    dt = grid.dt
    inc_ds = np.zeros((k_steps, n))
    inc_rough = np.zeros((k_steps, n))
    for jj in range(k_steps):
        j = i0 + jj
        td = tabs[jj]
        inc_ds[jj] = (td.dtv + td.v_s0) * dt[j]
        db = rp.values[j + 1] - rp.values[j]
        inc_rough[jj] = td.v_sigma @ db + np.einsum("lka,lk->a", td.w2ito, rp.second[j])
    prefix = np.concatenate([np.zeros((1, n)), np.cumsum(inc_ds + inc_rough, axis=0)])

    v_vals = np.stack([tabs[jj].v for jj in range(k_steps + 1)])
    residuals = np.zeros(k_steps + 1)
    for tt in range(k_steps + 1):
        res_path = np.zeros((grid.n_points, n))
        if tt:
            res_path[i0 : i0 + tt] = -(v_vals[0] - v_vals[:tt] + prefix[:tt])
        pt = v_vals[tt] - v_vals[0] - prefix[tt]
        res_path[i0 + tt :] = pt
        residuals[tt] = lifted_norm(res_path, pt, grid, p)
    term_young = float(np.max(np.abs(v_vals)))
    term_ds = float(np.max(np.abs(np.concatenate([np.zeros((1, n)), np.cumsum(inc_ds, axis=0)]))))
    term_rough = float(np.max(np.abs(np.concatenate([np.zeros((1, n)), np.cumsum(inc_rough, axis=0)]))))
    return ItoCheckReport(
        residual_sup=float(np.max(residuals)),
        residuals=residuals,
        term_young=term_young,
        term_ds=term_ds,
        term_rough=term_rough,
    )


# ---------------------------------------------------------------------------
# transfer identity (projected through J)
# ---------------------------------------------------------------------------


@dataclass
class MasterEqReport:
    residual_sup: float
    residuals: np.ndarray
    term_initial: float
    term_young: float
    term_drift: float
    term_rough: float
    mesh: float


def master_equation_residual(field, v_spec, bundle, rp, tau, tau0, ops=None):
    """Residual of the transfer identity J V-hat = initial + Young + ds + rough.

    All four right-hand terms are accumulated with left-point sums; the
    rough term integrates the first-order brackets against the Stratonovich
    lift with their own bracket-valued controlled derivative.
    """
    if rp.convention != "strat":
        raise ContractError("the transfer check integrates a Stratonovich lift")
    grid = bundle.grid
    i0, i1 = grid.index(tau0), grid.index(tau)
    if ops is None:
        ops = flow.FlowOperators(field, bundle)
    rows = ops.j_rows(i1)
    jl, jslot = rows.jl, rows.jslot
    tabs = _step_tables(field, v_spec, bundle, i0, i1, need_me=True)
    n = field.n
    k_steps = i1 - i0
    dt = grid.dt
    lhs = np.stack([jl[i0 + jj] @ tabs[jj].v for jj in range(k_steps + 1)])
    inc_young = np.zeros((k_steps, n))
    inc_ds = np.zeros((k_steps, n))
    inc_rough = np.zeros((k_steps, n))
    for jj in range(k_steps):
        j = i0 + jj
        td = tabs[jj]
        inc_young[jj] = -(jslot[j] @ td.v)
        inc_ds[jj] = jl[j] @ (td.dtv + td.drift_br) * dt[j]
        db = rp.values[j + 1] - rp.values[j]
        inc_rough[jj] = (jl[j] @ td.w) @ db + np.einsum("ab,lkb,lk->a", jl[j], td.w2me, rp.second[j])
    cum = lambda x: np.concatenate([np.zeros((1, n)), np.cumsum(x, axis=0)])
    rhs = lhs[0] + cum(inc_young) + cum(inc_ds) + cum(inc_rough)
    residuals = np.linalg.norm(lhs - rhs, axis=1)
    return MasterEqReport(
        residual_sup=float(residuals.max()),
        residuals=residuals,
        term_initial=float(np.linalg.norm(lhs[0])),
        term_young=float(np.abs(cum(inc_young)).max()),
        term_drift=float(np.abs(cum(inc_ds)).max()),
        term_rough=float(np.abs(cum(inc_rough)).max()),
        mesh=float(np.max(dt[i0:i1])),
    )


def rough_bracket_term_both_ways(field, v_spec, bundle, rp_ito, tau, tau0, ops=None):
    """The rough term against the Stratonovich lift vs the Ito lift plus the
    explicit half-trace correction; identical finite sums up to rounding."""
    from .roughpath import strat_from_ito

    grid = bundle.grid
    i0, i1 = grid.index(tau0), grid.index(tau)
    if ops is None:
        ops = flow.FlowOperators(field, bundle)
    rows = ops.j_rows(i1)
    tabs = _step_tables(field, v_spec, bundle, i0, i1, need_me=True)
    rp_strat = strat_from_ito(rp_ito)
    n = field.n
    strat = np.zeros(n)
    ito_corr = np.zeros(n)
    for jj in range(i1 - i0):
        j = i0 + jj
        td = tabs[jj]
        db = rp_ito.values[j + 1] - rp_ito.values[j]
        jlj = rows.jl[j]
        strat += (jlj @ td.w) @ db + np.einsum("ab,lkb,lk->a", jlj, td.w2me, rp_strat.second[j])
        ito_corr += (jlj @ td.w) @ db + np.einsum("ab,lkb,lk->a", jlj, td.w2me, rp_ito.second[j])
        ito_corr += 0.5 * grid.dt[j] * np.einsum("ab,kkb->a", jlj, td.w2me)
    return strat, ito_corr


# ---------------------------------------------------------------------------
# Norris-type diagnostic quantities
# ---------------------------------------------------------------------------


@dataclass
class NorrisQuantities:
    norm_I_sup: float
    norm_A_sup: float
    controlled_norm_A: float
    norm_C: float
    norm_D: float
    norm_phi_2alpha: float
    L_theta: float
    script_R: float = None


def norris_quantities(decomp, rp, theta, alpha, window=None, script_r=None):
    """Norms of a decomposition I = I_0 + int A dB + int C ds + int D dphi.

    ``decomp`` maps names {"I","A","A_prime","C","D"} to grid-indexed arrays;
    the D entry is the per-cell Young integrand normalized by the cell's
    lift-space indicator increment, phi's 2-alpha norm is computed from the
    grid measure (one, for atom-free windows).
    """
    times = rp.times
    sel = slice(None)
    if window is not None:
        i0 = int(np.searchsorted(times, window[0] - 1e-12))
        i1 = int(np.searchsorted(times, window[1] - 1e-12))
        sel = slice(i0, i1 + 1)
    t = times[sel]
    i_vals = np.atleast_2d(np.asarray(decomp["I"], dtype=float).T).T[sel]
    a_vals = np.asarray(decomp["A"], dtype=float)[sel]
    c_vals = np.atleast_2d(np.asarray(decomp["C"], dtype=float).T).T[sel]
    d_vals = np.atleast_2d(np.asarray(decomp["D"], dtype=float).T).T[sel]
    b_vals = rp.values[sel]
    norm_i = float(np.max(np.linalg.norm(i_vals, axis=1)))
    norm_a = float(np.max(np.linalg.norm(a_vals.reshape(a_vals.shape[0], -1), axis=1)))
    a_flat = a_vals.reshape(a_vals.shape[0], -1)
    ctrl = float(np.linalg.norm(a_flat[0]))
    if "A_prime" in decomp and decomp["A_prime"] is not None:
        ap = np.asarray(decomp["A_prime"], dtype=float)[sel]
        ap_flat = ap.reshape(ap.shape[0], -1)
        ctrl += float(np.max(np.linalg.norm(ap_flat, axis=1))) + float(holder_pair_max(ap_flat, t, alpha))
        ctrl += float(remainder_pair_max(a_flat, ap.reshape(ap.shape[0], -1, rp.d), b_vals, t, alpha))
    norm_c = float(np.max(np.linalg.norm(c_vals, axis=1))) + float(holder_pair_max(c_vals, t, alpha))
    norm_d = float(np.max(np.linalg.norm(d_vals, axis=1))) + float(holder_pair_max(d_vals, t, alpha))
    phi2a = _indicator_two_alpha(decomp.get("grid"), t, alpha)
    L = holder_roughness(rp.values, theta).L_theta
    return NorrisQuantities(
        norm_I_sup=norm_i,
        norm_A_sup=norm_a,
        controlled_norm_A=ctrl,
        norm_C=norm_c,
        norm_D=norm_d,
        norm_phi_2alpha=phi2a,
        L_theta=float(L),
        script_R=script_r,
    )


def _indicator_two_alpha(grid, times, alpha):
    if grid is None:
        return 1.0
    best = 0.0
    idx = [grid.index(t) for t in times]
    for a_pos, i in enumerate(idx):
        for j in idx[a_pos + 1 :]:
            dt = grid.points[j] - grid.points[i]
            if dt > 0:
                best = max(best, grid.mass_halfopen(i, j) ** (2 * alpha) / dt ** (2 * alpha))
    return best


def master_equation_decomposition(field, v_spec, bundle, rp, tau, tau0, z, ops=None):
    """The transfer identity for direction z as a Norris decomposition."""
    grid = bundle.grid
    i0, i1 = grid.index(tau0), grid.index(tau)
    if ops is None:
        ops = flow.FlowOperators(field, bundle)
    rows = ops.j_rows(i1)
    tabs = _step_tables(field, v_spec, bundle, i0, i1, need_me=True)
    z = np.asarray(z, dtype=float)
    k1 = i1 - i0 + 1
    i_vals = np.zeros(k1)
    a_vals = np.zeros((k1, 1, field.d))
    ap_vals = np.zeros((k1, 1, field.d, field.d))
    c_vals = np.zeros(k1)
    d_vals = np.zeros(k1)
    alpha = 1.0 / (2 * 1.4)
    for jj in range(k1):
        j = i0 + jj
        td = tabs[jj]
        i_vals[jj] = z @ (rows.jl[j] @ td.v)
        a_vals[jj, 0] = z @ (rows.jl[j] @ td.w)
        ap_vals[jj, 0] = np.einsum("a,ab,lkb->lk", z, rows.jl[j], td.w2me)
        c_vals[jj] = z @ (rows.jl[j] @ (td.dtv + td.drift_br))
        cell = grid.weights[j] if j < grid.n_points - 1 else grid.weights[-1]
        d_vals[jj] = (z @ (rows.jslot[j] @ td.v)) / max(cell, 1e-300) ** (2 * alpha)
    return {
        "I": i_vals,
        "A": a_vals,
        "A_prime": ap_vals,
        "C": c_vals,
        "D": d_vals,
        "grid": grid,
    }


# ---------------------------------------------------------------------------
# the summary quantity feeding the tail bound
# ---------------------------------------------------------------------------


def script_R(field, bundle, rp, tau, tau0, theta=0.55, p=1.4, ops=None, include_roughness=True, probes=6, stride=1):
    """2 + |x_0| + L_theta^{-1} + ||Y_tau|| + ||(B,BB)||_alpha + ||X||_alpha
    + ||Z||_alpha + ||R^X|| + ||R^Z||, every operator norm a probed grid
    surrogate on the discretized lift space.
    """
    grid = bundle.grid
    alpha = 1.0 / (2.0 * p)
    i0, i1 = grid.index(tau0), grid.index(tau)
    if ops is None:
        ops = flow.FlowOperators(field, bundle)
    total = 2.0 + float(np.linalg.norm(bundle.X[0]))
    if include_roughness:
        L = holder_roughness(rp.values, theta).L_theta
        total += 1.0 / max(L, 1e-300)
    total += ops.op_norm_Y(i1, p=p, probes=probes)
    nb, nbb = holder_norms(rp, alpha=alpha)
    total += nb + nbb

    x = bundle.X
    leb = np.append(grid.dt, 0.0)
    tail = np.array([grid.mass_from(i) for i in range(grid.n_points)])
    total += float(lifted_holder_max(x, leb, tail, grid.points, p, alpha, stride=stride))

    path = bundle.path()
    sig = np.stack(
        [coeffs.eval_sigma(field, grid.points[j], path, x[j]) for j in range(i0, i1 + 1)]
    )
    total += float(
        lifted_holder_max(
            x[i0 : i1 + 1],
            leb[i0 : i1 + 1],
            tail[i0 : i1 + 1],
            grid.points[i0 : i1 + 1],
            p,
            2 * alpha,
            sig=sig,
            b=rp.values[i0 : i1 + 1],
            stride=stride,
        )
    )
    total += _z_holder_and_remainder(ops, rp, i0, i1, alpha, probes, stride)
    return total


def _z_holder_and_remainder(ops, rp, i0, i1, alpha, probes, stride):
    from . import rng as _rng

    grid = ops.grid
    idx = list(range(i0, i1 + 1, max(1, (i1 - i0) // 16 * stride or 1)))
    if idx[-1] != i1:
        idx.append(i1)
    gen = _rng.stream(0, "zholder")
    w = np.concatenate([np.repeat(np.maximum(grid.weights, 0.0), ops.n), np.ones(ops.n)])
    sw = np.sqrt(w + 1e-300)
    zh = 0.0
    zr = 0.0
    for _ in range(probes):
        v = gen.standard_normal(ops.D)
        vhat = flow.unflatten(v, grid, ops.n)
        nv = float(np.linalg.norm(v * sw))
        zs = {i: ops.apply_Z(i, vhat).flat() for i in idx}
        dsig = {i: _apply_dsigma(ops, i, vhat) for i in idx[:-1]}
        for a_pos, i in enumerate(idx[:-1]):
            for j in idx[a_pos + 1 :]:
                dt = grid.points[j] - grid.points[i]
                diff = zs[j] - zs[i]
                zh = max(zh, float(np.linalg.norm(diff * sw)) / nv / dt**alpha)
                db = rp.values[j] - rp.values[i]
                corr = np.einsum("kf,k->f", dsig[i], db)
                rem = diff + ops.apply_Z(i, flow.unflatten(corr, grid, ops.n)).flat()
                zr = max(zr, float(np.linalg.norm(rem * sw)) / nv / dt ** (2 * alpha))
    return zh + zr


def _apply_dsigma(ops, j, vhat):
    """Rows of (d sigma-hat_k) v at step j, embedded in the lift space."""
    if ops.lin.mode == "callback":
        raise ContractError("linearization tables required")
    n, k1 = ops.n, ops.k + 1
    feat = np.einsum("ifb,ib->f", ops.lin.feat_w[:j], vhat.path_part[:j]) if ops.lin.mode == "factored" else None
    out = np.zeros((ops.d, ops.D))
    for kk in range(ops.d):
        if ops.lin.mode == "factored":
            lv = ops.lin.point_jac[j, 1 + kk] @ vhat.point_part + ops.lin.feat_jac[j, 1 + kk] @ feat
        else:
            rows = ops._row_matrix(j)
            lv = rows[1 + kk] @ np.concatenate([vhat.path_part.reshape(-1), vhat.point_part])
        emb = np.zeros(ops.D)
        emb[(j + 1) * n : k1 * n] = np.tile(lv, ops.k - j)
        emb[k1 * n :] = lv
        out[kk] = emb
    return out
