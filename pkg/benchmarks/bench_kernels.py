"""Time the hot kernels on both execution paths: numba JIT vs pure numpy.

Run:  python benchmarks/bench_kernels.py
The numpy path is what PATHDENS_NO_NUMBA=1 selects at import time.
"""

import time

import numpy as np

from pathdens import _kernels as K


def bench(label, nb_fn, np_fn, args, repeat=3):
    nb_fn(*args)  # compile
    t0 = time.perf_counter()
    for _ in range(repeat):
        r_nb = nb_fn(*args)
    t_nb = (time.perf_counter() - t0) / repeat
    t0 = time.perf_counter()
    for _ in range(repeat):
        r_np = np_fn(*args)
    t_np = (time.perf_counter() - t0) / repeat
    gap = np.max(np.abs(np.asarray(r_nb, dtype=object) - np.asarray(r_np, dtype=object))) if not isinstance(r_nb, tuple) else max(
        np.max(np.abs(a - b)) for a, b in zip(r_nb, r_np)
    )
    print(f"{label:28s}  numba {t_nb*1e3:9.2f} ms   numpy {t_np*1e3:9.2f} ms   x{t_np/max(t_nb,1e-12):6.1f}   |gap| {float(gap):.2e}")


def main():
    gen = np.random.default_rng(0)
    print(f"numba available: {K.HAS_NUMBA}, active: {K.use_numba()}")

    k, n, d, m = 1024, 3, 2, 40000
    values = gen.standard_normal((k, n))
    times = np.linspace(0, 1, k)
    bench("holder_pair_max", K._holder_pair_max_nb, K._holder_pair_max_np, (values, times, 0.357))

    uprime = gen.standard_normal((k, n, d))
    b = gen.standard_normal((k, d)).cumsum(axis=0) * 0.02
    bench("remainder_pair_max", K._remainder_pair_max_nb, K._remainder_pair_max_np, (values * 0.05, uprime, b, times, 0.357))

    kk = 256
    bb = gen.standard_normal((kk + 1, d)).cumsum(axis=0) * 0.06
    prefix = np.zeros((kk + 1, d, d))
    inc = np.diff(bb, axis=0)
    for j in range(kk):
        prefix[j + 1] = prefix[j] + np.outer(bb[j] - bb[0], inc[j])
    bench("chen_triple_max", K._chen_triple_max_nb, K._chen_triple_max_np, (prefix, bb))

    samples = gen.standard_normal((m, 1))
    lattice = np.linspace(-4, 4, 401)[:, None]
    h = np.array([0.1])
    bench("kde_gauss", K._kde_gauss_nb, K._kde_gauss_np, (samples, lattice, h))

    freqs = np.linspace(0.1, 20, 200)[:, None]
    bench("charfn_abs", K._charfn_abs_nb, K._charfn_abs_np, (samples, freqs))

    proj = gen.standard_normal((2049, 64)).cumsum(axis=0) * 0.02
    scales = np.array([4, 8, 16, 32], dtype=np.int64)
    bench("roughness_min", K._roughness_min_nb, K._roughness_min_np, (proj, scales, 0.55))

    steps = 512
    pj = gen.standard_normal((steps, 1 + d, n, n)) * 0.3
    fj = gen.standard_normal((steps, 1 + d, n, 1)) * 0.2
    fw = gen.standard_normal((steps + 1, 1, n)) * 0.01
    dt = np.full(steps, 1.0 / steps)
    dw = gen.standard_normal((steps, d)) * np.sqrt(1.0 / steps)
    bench("jrows_sweep", K._jrows_sweep_nb, K._jrows_sweep_np, (pj, fj, fw, dt, dw, steps))

    x = gen.standard_normal((kk + 1, n)).cumsum(axis=0) * 0.05
    w = np.full(kk + 1, 1.0 / kk)
    w[-1] = 0.0
    tail = w[::-1].cumsum()[::-1].copy()
    tms = np.linspace(0, 1, kk + 1)
    sig = gen.standard_normal((kk + 1, n, d))
    bench(
        "lifted_holder_max",
        K._lifted_holder_max_nb,
        K._lifted_holder_max_np,
        (x, w, tail, tms, 1.4, 0.357, sig, bb, True, 1),
    )


if __name__ == "__main__":
    main()
