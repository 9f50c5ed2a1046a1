"""Hot numeric kernels, JIT-compiled with numba when available.

Every kernel has a pure-numpy fallback. Selection order:

* ``PATHDENS_NO_NUMBA=1`` in the environment forces the numpy path;
* otherwise numba is used when it imports cleanly.

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


def use_numba():
    if os.environ.get("PATHDENS_NO_NUMBA", "").strip() in ("1", "true", "yes"):
        return False
    return HAS_NUMBA


# ---------------------------------------------------------------------------
# pairwise Holder-type scans
# ---------------------------------------------------------------------------


@njit(cache=True)
def _holder_pair_max_nb(values, times, exponent):
    k = values.shape[0]
    best = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            dt = times[j] - times[i]
            if dt <= 0.0:
                continue
            acc = 0.0
            for f in range(values.shape[1]):
                d = values[j, f] - values[i, f]
                acc += d * d
            r = np.sqrt(acc) / dt**exponent
            if r > best:
                best = r
    return best


def _holder_pair_max_np(values, times, exponent):
    k = values.shape[0]
    best = 0.0
    for i in range(k - 1):
        d = values[i + 1 :] - values[i]
        dist = np.sqrt(np.sum(d * d, axis=1))
        dts = times[i + 1 :] - times[i]
        good = dts > 0
        if np.any(good):
            best = max(best, np.max(dist[good] / dts[good] ** exponent))
    return best


def holder_pair_max(values, times, exponent):
    """max over grid pairs s<t of ||v_t - v_s|| / (t-s)^exponent."""
    values = np.ascontiguousarray(np.atleast_2d(values.T).T, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    times = np.ascontiguousarray(times, dtype=np.float64)
    if use_numba():
        return _holder_pair_max_nb(values, times, float(exponent))
    return _holder_pair_max_np(values, times, float(exponent))


@njit(cache=True)
def _remainder_pair_max_nb(values, uprime, b, times, exponent):
    k = values.shape[0]
    f = values.shape[1]
    d = b.shape[1]
    best = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            dt = times[j] - times[i]
            if dt <= 0.0:
                continue
            acc = 0.0
            for a in range(f):
                r = values[j, a] - values[i, a]
                for c in range(d):
                    r -= uprime[i, a, c] * (b[j, c] - b[i, c])
                acc += r * r
            ratio = np.sqrt(acc) / dt ** (2.0 * exponent)
            if ratio > best:
                best = ratio
    return best


def _remainder_pair_max_np(values, uprime, b, times, exponent):
    k = values.shape[0]
    best = 0.0
    for i in range(k - 1):
        db = b[i + 1 :] - b[i]
        pred = np.einsum("ac,jc->ja", uprime[i], db)
        r = values[i + 1 :] - values[i] - pred
        dist = np.sqrt(np.sum(r * r, axis=1))
        dts = times[i + 1 :] - times[i]
        good = dts > 0
        if np.any(good):
            best = max(best, np.max(dist[good] / dts[good] ** (2.0 * exponent)))
    return best


def remainder_pair_max(values, uprime, b, times, exponent):
    """max over pairs of ||dU_{s,t} - U'_s dB_{s,t}|| / (t-s)^(2*exponent)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    uprime = np.ascontiguousarray(uprime, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    if use_numba():
        return _remainder_pair_max_nb(values, uprime, b, times, float(exponent))
    return _remainder_pair_max_np(values, uprime, b, times, float(exponent))


@njit(cache=True)
def _lifted_holder_max_nb(x, w, tail, times, p, exponent, sig, b, use_sig, stride):
    k = x.shape[0]
    n = x.shape[1]
    best = 0.0
    for s in range(0, k, stride):
        for t in range(s + 1, k, stride):
            dt = times[t] - times[s]
            if dt <= 0.0:
                continue
            c = np.zeros(n)
            if use_sig:
                for a in range(n):
                    for q in range(b.shape[1]):
                        c[a] += sig[s, a, q] * (b[t, q] - b[s, q])
            acc = 0.0
            for i in range(s, t):
                m2 = 0.0
                for a in range(n):
                    dd = x[i, a] - x[s, a] - c[a]
                    m2 += dd * dd
                acc += w[i] * m2 ** (0.5 * p)
            m2 = 0.0
            for a in range(n):
                dd = x[t, a] - x[s, a] - c[a]
                m2 += dd * dd
            acc += tail[t] * m2 ** (0.5 * p)
            norm = np.sqrt(acc ** (2.0 / p) + m2)
            r = norm / dt**exponent
            if r > best:
                best = r
    return best


def _lifted_holder_max_np(x, w, tail, times, p, exponent, sig, b, use_sig, stride):
    k = x.shape[0]
    best = 0.0
    for s in range(0, k, stride):
        diffs = x[s:] - x[s]
        dts = times[s:] - times[s]
        if not use_sig:
            m2 = np.sum(diffs * diffs, axis=1)
            mp = w[s:] * m2 ** (0.5 * p)
            pathp = np.concatenate([[0.0], np.cumsum(mp[:-1])])
            norms = np.sqrt((pathp + tail[s:] * m2 ** (0.5 * p)) ** (2.0 / p) + m2)
            good = dts > 0
            if np.any(good):
                best = max(best, float(np.max(norms[good] / dts[good] ** exponent)))
            continue
        for t in range(s + 1, k, stride):
            c = sig[s] @ (b[t] - b[s])
            d2 = np.sum((x[s:t] - x[s] - c) ** 2, axis=1)
            m2 = float(np.sum((x[t] - x[s] - c) ** 2))
            acc = float(np.sum(w[s:t] * d2 ** (0.5 * p))) + tail[t] * m2 ** (0.5 * p)
            r = np.sqrt(acc ** (2.0 / p) + m2) / (times[t] - times[s]) ** exponent
            best = max(best, float(r))
    return best


def lifted_holder_max(x, w, tail, times, p, exponent, sig=None, b=None, stride=1):
    """Holder-type max over pairs of lift-space norms of the state increments.

    With ``sig``/``b`` supplied, measures the controlled remainder
    dX_{s,t} - lift(sigma(s) dB_{s,t}, s) instead of the raw increment.
    The lift-space norm of (path, point) is (||path||_p^2 + |pt|^2)^(1/2).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    use_sig = sig is not None
    if not use_sig:
        sig = np.zeros((x.shape[0], x.shape[1], 1))
        b = np.zeros((x.shape[0], 1))
    sig = np.ascontiguousarray(sig, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    args = (
        x,
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(tail, dtype=np.float64),
        np.ascontiguousarray(times, dtype=np.float64),
        float(p),
        float(exponent),
        sig,
        b,
        use_sig,
        int(stride),
    )
    if use_numba():
        return _lifted_holder_max_nb(*args)
    return _lifted_holder_max_np(*args)


# ---------------------------------------------------------------------------
# Chen relation scan over all grid triples
# ---------------------------------------------------------------------------


@njit(cache=True)
def _chen_triple_max_nb(prefix, b):
    k = b.shape[0]
    d = b.shape[1]
    best = 0.0
    for s in range(k):
        for u in range(s + 1, k):
            for t in range(u + 1, k):
                for a in range(d):
                    dbsu = b[u, a] - b[s, a]
                    for c in range(d):
                        # B_{s,t} - B_{s,u} - B_{u,t} - dB_{s,u} x dB_{u,t}
                        bst = prefix[t, a, c] - prefix[s, a, c] - b[s, a] * (b[t, c] - b[s, c])
                        bsu = prefix[u, a, c] - prefix[s, a, c] - b[s, a] * (b[u, c] - b[s, c])
                        but = prefix[t, a, c] - prefix[u, a, c] - b[u, a] * (b[t, c] - b[u, c])
                        v = bst - bsu - but - dbsu * (b[t, c] - b[u, c])
                        if abs(v) > best:
                            best = abs(v)
    return best


def _chen_triple_max_np(prefix, b):
    k = b.shape[0]
    best = 0.0
    for u in range(1, k - 1):
        bs, bt, bu = b[:u], b[u + 1 :], b[u]
        # pair blocks composed from the level-two prefix
        self_term = np.einsum("sa,sc->sac", bs, bs)
        bst = (
            prefix[None, u + 1 :]
            - prefix[:u, None]
            - np.einsum("sa,tc->stac", bs, bt)
            + self_term[:, None]
        )
        bsu = prefix[u] - prefix[:u] - np.einsum("sa,c->sac", bs, bu) + self_term
        but = prefix[u + 1 :] - prefix[u] - np.einsum("a,tc->tac", bu, bt - bu)
        cross = np.einsum("sa,tc->stac", bu - bs, bt - bu)
        defect = bst - bsu[:, None] - but[None, :] - cross
        best = max(best, np.max(np.abs(defect)))
    return best


def chen_triple_max(prefix, b):
    """Largest |Chen defect| entry over all grid triples s<u<t.

    ``prefix[k]`` is the level-two block over [t_0, t_k]; ``b`` the path values.
    """
    prefix = np.ascontiguousarray(prefix, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if use_numba():
        return _chen_triple_max_nb(prefix, b)
    return _chen_triple_max_np(prefix, b)


# ---------------------------------------------------------------------------
# kernel density estimate and empirical characteristic function
# ---------------------------------------------------------------------------


@njit(cache=True)
def _kde_gauss_nb(samples, lattice, h):
    m, n = samples.shape
    l = lattice.shape[0]
    out = np.zeros(l)
    norm = 1.0
    for c in range(n):
        norm *= h[c] * np.sqrt(2.0 * np.pi)
    for i in range(l):
        acc = 0.0
        for j in range(m):
            e = 0.0
            for c in range(n):
                z = (lattice[i, c] - samples[j, c]) / h[c]
                e += z * z
            acc += np.exp(-0.5 * e)
        out[i] = acc / (m * norm)
    return out


def _kde_gauss_np(samples, lattice, h):
    m, n = samples.shape
    norm = m * np.prod(h * np.sqrt(2.0 * np.pi))
    out = np.zeros(lattice.shape[0])
    chunk = max(1, int(2e6 / max(m, 1)))
    for lo in range(0, lattice.shape[0], chunk):
        sl = lattice[lo : lo + chunk]
        z = (sl[:, None, :] - samples[None, :, :]) / h
        out[lo : lo + chunk] = np.exp(-0.5 * np.sum(z * z, axis=2)).sum(axis=1) / norm
    return out


def kde_gauss(samples, lattice, h):
    """Gaussian product-kernel density estimate on a lattice."""
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    lattice = np.ascontiguousarray(lattice, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if use_numba():
        return _kde_gauss_nb(samples, lattice, h)
    return _kde_gauss_np(samples, lattice, h)


@njit(cache=True)
def _charfn_abs_nb(samples, freqs):
    m = samples.shape[0]
    f = freqs.shape[0]
    out = np.zeros(f)
    for i in range(f):
        re = 0.0
        im = 0.0
        for j in range(m):
            ph = 0.0
            for c in range(samples.shape[1]):
                ph += freqs[i, c] * samples[j, c]
            re += np.cos(ph)
            im += np.sin(ph)
        out[i] = np.sqrt(re * re + im * im) / m
    return out


def _charfn_abs_np(samples, freqs):
    m = samples.shape[0]
    out = np.zeros(freqs.shape[0])
    chunk = max(1, int(2e6 / max(m, 1)))
    for lo in range(0, freqs.shape[0], chunk):
        ph = freqs[lo : lo + chunk] @ samples.T
        out[lo : lo + chunk] = np.abs(np.exp(1j * ph).mean(axis=1))
    return out


def charfn_abs(samples, freqs):
    """|empirical characteristic function| at the given frequency vectors."""
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    freqs = np.ascontiguousarray(freqs, dtype=np.float64)
    if use_numba():
        return _charfn_abs_nb(samples, freqs)
    return _charfn_abs_np(samples, freqs)


# ---------------------------------------------------------------------------
# Holder-roughness estimator scan
# ---------------------------------------------------------------------------


@njit(cache=True)
def _roughness_min_nb(proj, scales, theta):
    k, p = proj.shape
    best = np.inf
    for si in range(scales.shape[0]):
        eps = scales[si]
        denom = float(eps) ** theta
        for s in range(k):
            lo = max(0, s - eps)
            hi = min(k - 1, s + eps)
            for q in range(p):
                m = 0.0
                base = proj[s, q]
                for t in range(lo, hi + 1):
                    v = abs(proj[t, q] - base)
                    if v > m:
                        m = v
                r = m / denom
                if r < best:
                    best = r
    return best


def _roughness_min_np(proj, scales, theta):
    from scipy.ndimage import maximum_filter1d, minimum_filter1d

    best = np.inf
    for eps in scales:
        size = 2 * int(eps) + 1
        hi = maximum_filter1d(proj, size=size, axis=0, mode="nearest")
        lo = minimum_filter1d(proj, size=size, axis=0, mode="nearest")
        sup = np.maximum(hi - proj, proj - lo)
        best = min(best, np.min(sup) / float(eps) ** theta)
    return best


def roughness_min(proj, scales, theta):
    """min over anchors and directions of the windowed oscillation / eps^theta.

    ``proj`` holds <phi_q, B_t> per grid point and probe direction; ``scales``
    are window half-widths in mesh units.
    """
    proj = np.ascontiguousarray(proj, dtype=np.float64)
    scales = np.ascontiguousarray(scales, dtype=np.int64)
    if use_numba():
        return _roughness_min_nb(proj, scales, float(theta))
    return _roughness_min_np(proj, scales, float(theta))


# ---------------------------------------------------------------------------
# adjoint sweep for J_{tau,s} = Pi_n Y_tau Y_s^{-1} on the discretized lift
# ---------------------------------------------------------------------------


@njit(cache=True)
def _jrows_sweep_nb(point_jac, feat_jac, feat_w, dt, dw, tau_idx):
    n = point_jac.shape[2]
    m = feat_jac.shape[3]
    d = dw.shape[1]
    jl = np.zeros((tau_idx + 1, n, n))
    jslot = np.zeros((tau_idx + 1, n, n))
    gp = np.eye(n)
    h = np.zeros((n, n))
    phi = np.zeros((n, m))
    jl[tau_idx] = gp
    for t in range(tau_idx - 1, -1, -1):
        slot = phi @ feat_w[t]
        km = gp + h  # G_{t+1} applied to the step embedding (slots >= t+1 plus point)
        cp = point_jac[t, 0] * dt[t]
        th = feat_jac[t, 0] * dt[t]
        for k in range(d):
            cp = cp + point_jac[t, 1 + k] * dw[t, k]
            th = th + feat_jac[t, 1 + k] * dw[t, k]
        gp = gp + km @ cp
        phi = phi + km @ th
        h = h + slot
        jslot[t] = slot
        jl[t] = h + gp
    return jl, jslot


def _jrows_sweep_np(point_jac, feat_jac, feat_w, dt, dw, tau_idx):
    n = point_jac.shape[2]
    m = feat_jac.shape[3]
    jl = np.zeros((tau_idx + 1, n, n))
    jslot = np.zeros((tau_idx + 1, n, n))
    gp = np.eye(n)
    h = np.zeros((n, n))
    phi = np.zeros((n, m))
    jl[tau_idx] = gp
    coef = np.concatenate([dt[:, None], dw], axis=1)
    for t in range(tau_idx - 1, -1, -1):
        slot = phi @ feat_w[t]
        km = gp + h
        cp = np.einsum("j,jab->ab", coef[t], point_jac[t])
        th = np.einsum("j,jaf->af", coef[t], feat_jac[t])
        gp = gp + km @ cp
        phi = phi + km @ th
        h = h + slot
        jslot[t] = slot
        jl[t] = h + gp
    return jl, jslot


def jrows_sweep(point_jac, feat_jac, feat_w, dt, dw, tau_idx):
    """Backward sweep producing, for every grid time s <= tau,

    * ``jl[s]``  : the n x n matrix with J_{tau,s} applied to lifted vectors,
      J_{tau,s} lift(v, s) = jl[s] @ v;
    * ``jslot[s]``: J_{tau,s} applied to the path-slot-s unit block (the
      integrand of the Young indicator term).

    Path dependence of the coefficients must be causal (strictly before the
    evaluation time) and enter through scalar features with fixed per-slot
    weights: d(coef_j at step t) = point_jac[t,j] @ dvalue
    + feat_jac[t,j] @ (sum_{i<t} feat_w[i] @ dpath_i).
    """
    point_jac = np.ascontiguousarray(point_jac, dtype=np.float64)
    feat_jac = np.ascontiguousarray(feat_jac, dtype=np.float64)
    feat_w = np.ascontiguousarray(feat_w, dtype=np.float64)
    dt = np.ascontiguousarray(dt, dtype=np.float64)
    dw = np.ascontiguousarray(dw, dtype=np.float64)
    if use_numba():
        return _jrows_sweep_nb(point_jac, feat_jac, feat_w, dt, dw, int(tau_idx))
    return _jrows_sweep_np(point_jac, feat_jac, feat_w, dt, dw, int(tau_idx))
