"""Scenario-driven command line: solve, analyze, and emit CSV/JSON artifacts.

Usage:
    pathdens <command> --scenario <file> --out <dir> [--workers K] [--mesh-doubling R]

Commands: simulate | malliavin | hormander | master-check | rough-check |
delay-lift | density.  A scenario is a single JSON file naming the
coefficient family, the measure, the run configuration, and per-command
options.  Outputs embed the scenario hash and seed; identical scenarios
produce byte-identical files for any worker count (per-sample counter-based
streams, ordered assembly, serialized writing).
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import coeffs, delay_lift, density, flow, hormander, malliavin, mastereq, rng, roughpath
from .errors import ConfigurationError, ContractError, DivergenceError, DomainError, ResourceError
from .timegrid import Config, MeasureSpec

COMMANDS = ("simulate", "malliavin", "hormander", "master-check", "rough-check", "delay-lift", "density")


def _load_scenario(path):
    with open(path) as fh:
        text = fh.read()
    scen = json.loads(text)
    scen["_hash"] = hashlib.sha256(text.encode()).hexdigest()[:16]
    return scen


def _build(scen):
    fam = scen.get("family", "constant")
    if fam not in coeffs.FAMILIES:
        raise ConfigurationError(f"unknown coefficient family '{fam}'")
    field = coeffs.make_field(fam, **scen.get("params", {}))
    mspec = scen.get("measure", {"horizon": 1.0})
    measure = MeasureSpec(horizon=mspec.get("horizon", 1.0), atoms=[tuple(a) for a in mspec.get("atoms", [])])
    cfg = Config(**scen.get("config", {}))
    cfg.validate(measure)
    return field, measure, cfg


def _write_csv(path, header_cols, rows, scen):
    with open(path, "w") as fh:
        fh.write(f"# scenario={scen['_hash']} seed={scen.get('config', {}).get('seed', 0)}\n")
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n")


def _write_summary(outdir, scen, payload):
    payload = {"scenario_hash": scen["_hash"], "seed": scen.get("config", {}).get("seed", 0), **payload}
    with open(Path(outdir) / "summary.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonify)
        fh.write("\n")
    return payload


def _jsonify(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON-serializable: {type(x)}")


def _scen_x0(field, scen):
    return np.asarray(scen.get("x0", np.zeros(field.n)), dtype=float)


def _solve(field, x0, measure, cfg, extra_points=()):
    grid = cfg.grid(measure, extra_points)
    b = roughpath.sample_brownian(grid, field.d, cfg.seed, "sim")
    return grid, flow.solve_sde(field, x0, np.diff(b, axis=0), grid)


# ---------------------------------------------------------------------------
# command drivers
# ---------------------------------------------------------------------------


def cmd_simulate(scen, outdir, opts):
    field, measure, cfg = _build(scen)
    grid, bundle = _solve(field, _scen_x0(field, scen), measure, cfg)
    jac = np.stack([flow.propagate_variation(field, bundle, 0.0, np.eye(field.n)[i]) for i in range(field.n)], axis=2)
    cols = ["t"] + [f"x{i+1}" for i in range(field.n)] + [f"jac{i+1}{j+1}" for i in range(field.n) for j in range(field.n)]
    rows = [
        [grid.points[k]] + list(bundle.X[k]) + [jac[k, i, j] for i in range(field.n) for j in range(field.n)]
        for k in range(grid.n_points)
    ]
    _write_csv(Path(outdir) / "path.csv", cols, rows, scen)
    return _write_summary(outdir, scen, {
        "terminal": bundle.X[-1],
        "terminal_jacobian": jac[-1].reshape(-1),
    })


def cmd_malliavin(scen, outdir, opts):
    field, measure, cfg = _build(scen)
    grid, bundle = _solve(field, _scen_x0(field, scen), measure, cfg)
    rep = malliavin.covariance(field, bundle, tau=cfg.tau, tau0=cfg.tau0, r_times=int(opts.get("r_times", 64)))
    rows = [
        [grid.points[j]] + list(rep.derivatives[k].reshape(-1))
        for k, j in enumerate(rep.r_indices)
    ]
    cols = ["r"] + [f"D{i+1}{q+1}" for i in range(field.n) for q in range(field.d)]
    _write_csv(Path(outdir) / "derivatives.csv", cols, rows, scen)
    return _write_summary(outdir, scen, {
        "gamma": rep.gamma,
        "gamma0": rep.gamma0,
        "lambda_min": rep.lambda_min,
        "lambda_min0": rep.lambda_min0,
    })


def cmd_hormander(scen, outdir, opts):
    field, measure, cfg = _build(scen)
    grid, bundle = _solve(field, _scen_x0(field, scen), measure, cfg)
    it = grid.index(cfg.tau)
    rep = hormander.span_check(
        field, cfg.tau, bundle.path(), bundle.X[it], max_depth=int(opts.get("max_depth", 3))
    )
    payload = {
        "lambda_min": rep.lambda_min,
        "spanning_depth": rep.spanning_depth,
        "lambda_by_depth": rep.lambda_by_depth,
        "theta_lower": rep.theta_lower,
    }
    if isinstance(field, coeffs.HormanderExample3D):
        a = field.a_param(cfg.tau, bundle.path())
        payload["paper_example"] = hormander.paper_example_3d(a, bundle.X[it])
    return _write_summary(outdir, scen, payload)


def _strat_lift_for(grid, cfg, field, kappa=8):
    tree = roughpath.brownian_tree(grid.points[-1], grid.n_steps * kappa, 0, field.d, cfg.seed, "sim-fine")
    fine = tree[0]
    rp = roughpath.strat_from_ito(roughpath.lift(fine, np.linspace(0.0, grid.points[-1], len(fine)), kappa))
    return rp


def cmd_master_check(scen, outdir, opts):
    field, measure, cfg = _build(scen)
    x0 = _scen_x0(field, scen)
    doublings = int(opts.get("mesh_doubling", 0))
    residuals = []
    meshes = []
    report = None
    for level in range(doublings + 1):
        c = Config(p=cfg.p, tau=cfg.tau, tau0=cfg.tau0, seed=cfg.seed, n_steps=cfg.n_steps * 2**level)
        grid = c.grid(measure)
        rp = _strat_lift_for(grid, c, field)
        bundle = flow.solve_sde(field, x0, np.diff(rp.values, axis=0), grid)
        rep = mastereq.master_equation_residual(field, int(opts.get("column", 0)), bundle, rp, cfg.tau, cfg.tau0)
        residuals.append(rep.residual_sup)
        meshes.append(c.n_steps)
        if level == 0:
            report = rep
            i0 = grid.index(cfg.tau0)
            rows = [[grid.points[i0 + k], rep.residuals[k]] for k in range(len(rep.residuals))]
            _write_csv(Path(outdir) / "residual.csv", ["t", "residual"], rows, scen)
    rate = None
    if len(residuals) > 1 and min(residuals) > 0:
        rate = float(-np.polyfit(np.log2(meshes), np.log2(residuals), 1)[0])
    return _write_summary(outdir, scen, {
        "residual_sup": report.residual_sup,
        "residual_at_start": report.residuals[0],
        "terms": {
            "initial": report.term_initial,
            "young": report.term_young,
            "drift": report.term_drift,
            "rough": report.term_rough,
        },
        "meshes": meshes,
        "residuals": residuals,
        "refinement_rate": rate,
    })


def cmd_rough_check(scen, outdir, opts):
    field, measure, cfg = _build(scen)
    x0 = _scen_x0(field, scen)
    grid = cfg.grid(measure)
    rp = _strat_lift_for(grid, cfg, field)
    bundle = flow.solve_sde(field, x0, np.diff(rp.values, axis=0), grid)
    rep = mastereq.rough_ito_check(field, int(opts.get("column", 0)), bundle, rp, (cfg.tau0, cfg.tau), p=cfg.p)
    i0 = grid.index(cfg.tau0)
    rows = [[grid.points[i0 + k], rep.residuals[k]] for k in range(len(rep.residuals))]
    _write_csv(Path(outdir) / "residual.csv", ["t", "residual"], rows, scen)
    return _write_summary(outdir, scen, {
        "residual_sup": rep.residual_sup,
        "term_young": rep.term_young,
        "term_ds": rep.term_ds,
        "term_rough": rep.term_rough,
    })


def cmd_delay_lift(scen, outdir, opts):
    field, measure, cfg = _build(scen)
    x0 = _scen_x0(field, scen)
    delays = [float(h) for h in opts.get("delays", [0.25])]
    dfield = delay_lift.linear_delay_field(**opts.get("delay_params", {}))
    system = delay_lift.build_lift(delays, measure.horizon, dfield.n)
    steps = cfg.n_steps
    mesh = measure.horizon / steps
    for h in system.shifts[1:]:
        if abs(round(h / mesh) * mesh - h) > 1e-9:
            raise DomainError(f"delay {h} not aligned with mesh 1/{steps}")
    grid = cfg.grid(measure)
    b = roughpath.sample_brownian(grid, dfield.d, cfg.seed, "sim")
    noise = np.diff(b, axis=0)
    vals = delay_lift.solve_lifted(system, dfield, x0[: dfield.n], noise, grid)
    direct = flow.solve_sde(
        delay_lift.DiscreteDelayCoefficient(dfield, system.base_delays, grid), x0[: dfield.n], noise, grid
    )
    gap = float(np.max(np.abs(vals[:, 0, :] - direct.X)))
    kappa = 8
    fine_grid_pts = np.linspace(0.0, measure.horizon, steps * kappa + 1)
    fine_b = roughpath.brownian_tree(measure.horizon, steps * kappa, 0, dfield.d, cfg.seed, "sim-fine")[0]
    ext = delay_lift.extended_lift(fine_b, fine_grid_pts, system.shifts, kappa)
    chen = roughpath.chen_defect_scan(ext)
    cols = ["t"] + [f"block{l}_x{i+1}" for l in range(system.n_blocks) for i in range(dfield.n)]
    rows = [[grid.points[k]] + list(vals[k].reshape(-1)) for k in range(grid.n_points)]
    _write_csv(Path(outdir) / "lifted.csv", cols, rows, scen)
    return _write_summary(outdir, scen, {
        "shifts": list(system.shifts),
        "block0_vs_direct": gap,
        "extended_chen_defect": chen,
    })


def cmd_density(scen, outdir, opts, workers=1):
    field, measure, cfg = _build(scen)
    x0 = _scen_x0(field, scen)
    m_samples = int(opts.get("samples", 2000))
    samples = density.sample_terminal(field, x0, measure, cfg, m_samples, workers=workers)
    decay = density.charfn_decay(samples)
    payload = {
        "samples": m_samples,
        "mean": samples.mean(axis=0),
        "std": samples.std(axis=0),
        "decay_slopes": decay.slopes,
        "non_decaying_directions": decay.non_decaying.astype(int),
        "noise_floor": decay.noise_floor,
    }
    if field.n == 1:
        vals, lattice, h = density.kde(samples)
        rows = [[lattice[i, 0], vals[i]] for i in range(len(vals))]
        _write_csv(Path(outdir) / "kde.csv", ["x", "density"], rows, scen)
        payload["bandwidth"] = h
    rows = []
    for q in range(decay.charfn.shape[0]):
        for f in range(decay.charfn.shape[1]):
            rows.append([q, decay.magnitudes[q, f], decay.charfn[q, f]])
    _write_csv(Path(outdir) / "charfn.csv", ["direction", "xi", "abs_phi"], rows, scen)
    return _write_summary(outdir, scen, payload)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pathdens", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--scenario", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--mesh-doubling", type=int, default=None)
    args = parser.parse_args(argv)

    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("PATHDENS_WORKERS", "1"))

    try:
        scen = _load_scenario(args.scenario)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        opts = dict(scen.get("options", {}))
        if args.mesh_doubling is not None:
            opts["mesh_doubling"] = args.mesh_doubling
        if args.command == "simulate":
            payload = cmd_simulate(scen, outdir, opts)
        elif args.command == "malliavin":
            payload = cmd_malliavin(scen, outdir, opts)
        elif args.command == "hormander":
            payload = cmd_hormander(scen, outdir, opts)
        elif args.command == "master-check":
            payload = cmd_master_check(scen, outdir, opts)
        elif args.command == "rough-check":
            payload = cmd_rough_check(scen, outdir, opts)
        elif args.command == "delay-lift":
            payload = cmd_delay_lift(scen, outdir, opts)
        else:
            payload = cmd_density(scen, outdir, opts, workers=workers)
        if not _finite_payload(payload):
            print("pathdens: non-finite results", file=sys.stderr)
            return 3
        brief = {k: v for k, v in payload.items() if isinstance(v, (int, float, str))}
        print(f"pathdens {args.command}: ok {brief}")
        return 0
    except DivergenceError as exc:
        print(f"pathdens: numerical divergence: {exc} (step {exc.step})", file=sys.stderr)
        return 3
    except (DomainError, ConfigurationError, ContractError, ResourceError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"pathdens: invalid scenario: {exc}", file=sys.stderr)
        return 2


def _finite_payload(payload):
    for v in payload.values():
        if isinstance(v, dict) and not _finite_payload(v):
            return False
        arr = np.asarray(v, dtype=object)
        for item in arr.reshape(-1):
            if isinstance(item, (float, np.floating)) and not (np.isfinite(item) or np.isposinf(item)):
                return False
    return True


if __name__ == "__main__":
    sys.exit(main())
