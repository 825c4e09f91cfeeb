"""Batch experiment driver.

Subcommands mirror the verification modules:

    hbubble verify-kernels --degree 2
    hbubble flow --lambda0 0.2 --tmax 5.0
    hbubble modulation --T 1e-6 --divZ -1.0 --curlZ 0.3
    hbubble c-system --T 1e-5 --Zbold 2.0 --k 0.5 --alpha1 0.2
    hbubble spectral --ell 2.2
    hbubble corrections
    hbubble constraints --sample 100
    hbubble run config.json

`run` executes a single JSON config (schema below, unknown keys rejected)
and writes CSV artifacts plus a manifest with checksums.  Exit codes:
0 all verdicts pass, 1 some verdict failed, 2 usage/config error.

Config schema (version 1):
    {"schema_version": 1, "experiment": "<name>", "seed": 0,
     "out_dir": "runs/x", "params": { ... experiment arguments ... }}

The output root can also be set with the HBUBBLE_OUT environment variable.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__

SCHEMA_VERSION = 1
EXPERIMENTS = ("verify-kernels", "flow", "modulation", "c-system", "spectral",
               "corrections", "constraints")


def _fmt(x):
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              else str(v) for v in row) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _verdict(name, ok, measured, expected):
    return {"name": name, "passed": bool(ok),
            "measured": measured, "expected": expected}


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def exp_verify_kernels(out, degree=1, resolutions=(200, 400, 800), seed=0):
    from . import grids, linearized

    verdicts = []
    rows = []
    sups = {}
    for n in resolutions:
        rho, _, _ = grids.log_radial_grid(1e-4, 200.0, n)
        theta = grids.theta_grid(32)
        for entry in linearized.kernel_catalog(degree, rho, theta):
            sups.setdefault(entry.label, []).append(
                linearized.residual_sup(entry.field, degree))
    for label, vals in sups.items():
        order = np.log(vals[0] / vals[-1]) / np.log(
            resolutions[-1] / resolutions[0])
        ok = 1.8 <= order <= 2.2
        verdicts.append(_verdict(f"kernel[{label}] order", ok, order,
                                 "[1.8, 2.2]"))
        rows.append([label] + [v for v in vals] + [order])
    write_csv(os.path.join(out, "kernel_residuals.csv"),
              ["label"] + [f"res_n{n}" for n in resolutions] + ["order"], rows)
    return verdicts


def exp_flow(out, lambda0=0.2, tmax=5.0, r_max=4.0, n=480, seed=0):
    from . import flow1d

    st = flow1d.init_near_bubble(lambda0, r_max=r_max, n=n)
    run = flow1d.FlowRun(st, dt_max=2e-4, dt_factor=0.02)
    hist = run.run(t_max=tmax, record_every=1, energy_every=200)
    lam = hist[:, 1]
    E = run.energy_trace
    rows = [[t, l] for t, l in hist]
    write_csv(os.path.join(out, "flow_lambda.csv"), ["t", "lambda_hat"], rows)
    write_csv(os.path.join(out, "flow_energy.csv"),
              ["t", "energy_D", "energy_V", "energy_total"],
              [list(r) for r in E])
    verdicts = [
        _verdict("lambda decayed one decade", lam[0] / lam[-1] >= 10.0,
                 lam[0] / lam[-1], ">= 10"),
        _verdict("energy non-increasing",
                 bool(np.all(np.diff(E[:, 3]) <= 1e-6 * np.abs(E[:-1, 3]))),
                 float(np.max(np.diff(E[:, 3]))), "<= 1e-6 relative"),
    ]
    sel = lam < 0.5 * lam[0]
    if sel.sum() >= 20:
        fit = flow1d.fit_type2(hist[sel, 0], lam[sel])
        verdicts.append(_verdict("type2 fit beats linear", fit.prefers_type2,
                                 fit.residual, f"<= {fit.linear_residual}"))
    return verdicts


def exp_modulation(out, T=1e-6, divZ=-1.0, curlZ=0.0, nodes_per_decade=200,
                   seed=0):
    from . import modulation as md

    data = md.DataZ(divZ, curlZ)
    traj = md.solve_lambda_gamma(data, T, md.TimeGrid(T, nodes_per_decade))
    r = traj.reports
    write_csv(os.path.join(out, "lambda_gamma.csv"),
              ["t", "re_p0", "im_p0", "lambda", "gamma"],
              [[t, p.real, p.imag, l, g] for t, p, l, g in
               zip(traj.grid.t, traj.p0, traj.lam, traj.gamma)])
    ll = np.log(abs(np.log(T))) / abs(np.log(T))
    return [
        _verdict("gamma matches arctan(curl/div)", r["gamma_gap"] <= 0.05,
                 r["gamma_gap"], "<= 0.05"),
        _verdict("abel residual scale", r["abel_residual_max"] <= 3.0 * ll,
                 r["abel_residual_max"], f"<= 3 loglog/log = {3.0 * ll:.4f}"),
    ]


def exp_c_system(out, T=1e-5, Zbold=2.0, k=0.5, alpha1=0.2,
                 nodes_per_decade=150, seed=0):
    from . import modulation as md

    data = md.DataZ(-Zbold / 2.0, 0.0)  # kappa = Zbold, gamma* = 0
    f = lambda t: md.lambda_star(t, T) ** (11.0 / 30.0)
    traj, rep = md.solve_c_system(f, data, T,
                                  md.TimeGrid(T, nodes_per_decade), k=k,
                                  alpha1=alpha1)
    if traj is None:
        return [_verdict("c-system contraction", False, rep["contraction"],
                         "< 0.9")]
    write_csv(os.path.join(out, "c_system.csv"),
              ["t", "re_p1", "im_p1", "re_c", "im_c"],
              [[t, p.real, p.imag, c.real, c.imag] for t, p, c in
               zip(traj.grid.t, traj.p1, traj.c)])
    return [
        _verdict("contraction <= 3/|log T|",
                 rep["contraction"] <= rep["contraction_bound"],
                 rep["contraction"], f"<= {rep['contraction_bound']:.4f}"),
        _verdict("|c| <= C lambda*^Theta", rep["c_constant"] <= 10.0,
                 rep["c_constant"], "<= 10"),
        _verdict("remainder constant", rep["remainder_constant"] <= 10.0,
                 rep["remainder_constant"], "<= 10"),
    ]


def exp_spectral(out, ell=2.2, seed=0):
    from . import spectral as spot

    basis = spot.SpectralBasis.build()
    r = basis.rho
    f = (r**3 / (1.0 + r**3)) * np.exp(-(r - 3.0) ** 2 / 1.28) * (r < 10.0)
    cont, disc = basis.transform(f)
    rec = basis.inverse(cont, disc)
    parseval = float(np.max(np.abs(rec - f)))
    xis = np.logspace(-3, 3, 13)
    dens = np.array([spot.spectral_density(x)[1] for x in xis])
    write_csv(os.path.join(out, "spectral_density.csv"), ["xi", "density"],
              [[x, d] for x, d in zip(xis, dens)])
    sub = basis.table[:: max(1, len(r) // 400)]
    write_csv(os.path.join(out, "phi0_table_sample.csv"),
              ["rho"] + [f"xi_{x:.3e}" for x in basis.xi[::200]],
              [[rv] + list(row[::200]) for rv, row in
               zip(r[:: max(1, len(r) // 400)], sub)])
    manifest_extra = {"density_normalization": basis.normalization,
                      "xi_d": basis.xi_d}
    verdicts = [
        _verdict("parseval round trip", parseval <= 1e-4, parseval, "<= 1e-4"),
        _verdict("density band", float(dens.max() / dens.min()) <= 10.0,
                 float(dens.max() / dens.min()), "<= 10"),
        _verdict("discrete eigenvalue negative", basis.xi_d < 0, basis.xi_d,
                 "< 0"),
    ]
    return verdicts, manifest_extra


def exp_corrections(out, T=1e-5, seed=0):
    from . import modulation as md
    from . import parabolic as pb

    theta = 11.0 / 30.0
    lam_fn = lambda t: md.lambda_star(t, T)
    c1 = lambda t: md.lambda_star(t, T) ** theta
    _, _, _, reps = pb.build_corrections(c1, c1, lam_fn, (0.0, T * (1 - 1e-3)),
                                         n_rho=250)
    rows = [[k, v.measured_norm, v.bound_constant, v.passed]
            for k, v in reps.items()]
    write_csv(os.path.join(out, "corrections.csv"),
              ["name", "measured", "elliptic_ref", "passed"], rows)
    return [_verdict(f"correction {k} within factor 3", v.passed,
                     v.measured_norm, f"within 3x of {v.bound_constant:.4f}")
            for k, v in reps.items()]


def exp_constraints(out, sample=0, seed=0):
    from . import constraints as cs

    point = cs.final_choice()
    rep = cs.check_all(point)
    rows = [[r.name, r.lhs, r.rhs, r.slack, r.passed] for r in rep.rows]
    write_csv(os.path.join(out, "constraints.csv"),
              ["name", "lhs", "rhs", "slack", "passed"], rows)
    verdicts = [_verdict("displayed feasible point", rep.passed,
                         "all rows", "pass")]
    if sample:
        ok = all(cs.check_all(cs.feasible_sample(seed=seed + i)).passed
                 for i in range(sample))
        verdicts.append(_verdict(f"{sample} sampled points", ok, ok, "pass"))
    return verdicts


RUNNERS = {
    "verify-kernels": exp_verify_kernels,
    "flow": exp_flow,
    "modulation": exp_modulation,
    "c-system": exp_c_system,
    "spectral": exp_spectral,
    "corrections": exp_corrections,
    "constraints": exp_constraints,
}


# ---------------------------------------------------------------------------
# config / manifest plumbing
# ---------------------------------------------------------------------------


def load_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    allowed = {"schema_version", "experiment", "seed", "out_dir", "params"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version must be 1")
    if cfg.get("experiment") not in EXPERIMENTS:
        raise ConfigError(
            f"experiment must be one of {EXPERIMENTS}; schema: "
            '{"schema_version":1,"experiment":...,"seed":0,'
            '"out_dir":...,"params":{...}}')
    if not isinstance(cfg.get("params", {}), dict):
        raise ConfigError("params must be an object")
    return cfg


class ConfigError(ValueError):
    pass


def run(config) -> dict:
    """Execute one experiment config; returns the manifest dict."""
    t0 = time.time()
    out_root = os.environ.get("HBUBBLE_OUT", ".")
    out = os.path.join(out_root, config.get("out_dir", "hbubble-run"))
    os.makedirs(out, exist_ok=True)
    params = dict(config.get("params", {}))
    params.setdefault("seed", config.get("seed", 0))
    name = config["experiment"]
    result = RUNNERS[name](out, **params)
    extra = {}
    if isinstance(result, tuple):
        verdicts, extra = result
    else:
        verdicts = result
    manifest = {
        "tool": "hbubble",
        "version": __version__,
        "experiment": name,
        "config_hash": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "wall_time_s": round(time.time() - t0, 3),
        "verdicts": verdicts,
        "all_passed": all(v["passed"] for v in verdicts),
        **extra,
    }
    files = {}
    for fn in sorted(os.listdir(out)):
        p = os.path.join(out, fn)
        if os.path.isfile(p) and fn != "manifest.json":
            files[fn] = _sha256(p)
    manifest["files"] = files
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return manifest


def _print_verdicts(manifest):
    for v in manifest["verdicts"]:
        flag = "PASS" if v["passed"] else "FAIL"
        print(f"[{flag}] {v['name']}: measured={v['measured']} "
              f"expected={v['expected']}")
    print("overall:", "PASS" if manifest["all_passed"] else "FAIL")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hbubble", description=__doc__)
    sub = parser.add_subparsers(dest="cmd")

    p = sub.add_parser("run", help="run a JSON config")
    p.add_argument("config")

    p = sub.add_parser("verify-kernels")
    p.add_argument("--degree", type=int, default=1)
    p = sub.add_parser("flow")
    p.add_argument("--lambda0", type=float, default=0.2)
    p.add_argument("--tmax", type=float, default=5.0)
    p = sub.add_parser("modulation")
    p.add_argument("--T", type=float, default=1e-6)
    p.add_argument("--divZ", type=float, default=-1.0)
    p.add_argument("--curlZ", type=float, default=0.0)
    p = sub.add_parser("c-system")
    p.add_argument("--T", type=float, default=1e-5)
    p.add_argument("--Zbold", type=float, default=2.0)
    p.add_argument("--k", type=float, default=0.5)
    p.add_argument("--alpha1", type=float, default=0.2)
    p = sub.add_parser("spectral")
    p.add_argument("--ell", type=float, default=2.2)
    sub.add_parser("corrections")
    p = sub.add_parser("constraints")
    p.add_argument("--sample", type=int, default=0)

    for sp in sub.choices.values():
        sp.add_argument("--out-dir", default=None)
        sp.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    if args.cmd is None:
        parser.print_help()
        return 2
    try:
        if args.cmd == "run":
            config = load_config(args.config)
        else:
            params = {k.replace("-", "_"): v for k, v in vars(args).items()
                      if k not in ("cmd", "out_dir", "seed") and v is not None}
            config = {"schema_version": 1, "experiment": args.cmd,
                      "seed": args.seed,
                      "out_dir": args.out_dir or f"hbubble-{args.cmd}",
                      "params": params}
        manifest = run(config)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    _print_verdicts(manifest)
    return 0 if manifest["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
