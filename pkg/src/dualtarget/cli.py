"""Command-line experiment runner.

    dualtarget dual    --config uvm_call.cfg
    dualtarget oracle  --depth 3 --a0 1,4
    dualtarget bsde | pde | verify | qv | suite

Every run writes its CSV outputs, the effective configuration
(``config.cfg``) and ``run_manifest.json`` into the output directory, and
prints ``key=value`` summary lines on standard output.

Exit codes: 0 success, 1 a check failed under ``--assert``, 2 invalid input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

COMMANDS = ("dual", "oracle", "bsde", "pde", "verify", "qv", "suite")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class CheckFailed(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (sectioned key = value text)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: $DUALTARGET_OUT or ./dualtarget_out)")
    common.add_argument("--seed", type=int, metavar="U64", help="override [run] seed")
    common.add_argument("--threads", type=int, metavar="N", help="cap worker threads of numerical libraries")
    common.add_argument("--assert", dest="check", action="store_true", help="exit 1 if the run's check fails")

    parser = argparse.ArgumentParser(prog="dualtarget", description="Dual formulation of second-order target problems.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("dual", parents=[common], help="dual value by dynamic programming on a lattice")
    p = sub.add_parser("oracle", parents=[common], help="brute-force sup over adapted controls on a tree")
    p.add_argument("--depth", type=int, help="override [tree] depth")
    p.add_argument("--branching", type=int, choices=(2, 3), help="override [tree] branching")
    p.add_argument("--a0", metavar="A,B,...", help="override [controls] A0")
    sub.add_parser("bsde", parents=[common], help="BSDE under one constant control")
    sub.add_parser("pde", parents=[common], help="finite-difference fully nonlinear PDE")
    sub.add_parser("verify", parents=[common], help="superhedging report on sampled paths")
    sub.add_parser("qv", parents=[common], help="realized quadratic variation and density estimate")
    p = sub.add_parser("suite", parents=[common], help="run the acceptance checks")
    p.add_argument("--only", metavar="N,M,...", help="comma-separated criterion numbers")
    return parser


# ---------------------------------------------------------------------------
# subcommands; each returns (summary dict, list of files written, check passed)


def run_dual(cfg, out: Path):
    from .dual import dual_value_dp, extract_K, lambda_bound, write_k_process, write_value_surface

    lat = cfg.lattice()
    gen, payoff, cc = cfg.generator(), cfg.payoff(), cfg.control_class()
    scheme = cfg.bsde_options()["scheme"]
    vf = dual_value_dp(lat, cc, gen, payoff, scheme)
    kf = extract_K(vf, vf.argmax_control(), gen, scheme)
    write_value_surface(vf, out / "value_surface.csv")
    write_k_process(vf, kf, out / "k_process.csv")
    summary = {
        "v0": vf.v0,
        "lambda0": lambda_bound(lat, cc, gen, payoff).lambda0,
        "n_space": lat.n_space,
        "n_time": lat.n_steps,
        "dx": lat.dx,
        "max_abs_dK": kf.max_abs,
    }
    return summary, ["value_surface.csv", "k_process.csv"], kf.max_abs <= 1e-8


def run_oracle(cfg, out: Path):
    import csv

    from .dual import dual_value_dp, dual_value_oracle
    from .lattice import control_count

    tree = cfg.tree()
    gen, payoff, cc = cfg.generator(), cfg.payoff(), cfg.control_class()
    idx = cc.admissible(gen)
    oracle = dual_value_oracle(tree, cc, gen, payoff)
    dp = dual_value_dp(tree, cc, gen, payoff).v0
    n = control_count(tree, len(idx))
    with (out / "oracle.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth", "branching", "n_controls", "oracle", "dp", "difference"])
        w.writerow([tree.depth, tree.branching, n, _fmt(oracle), _fmt(dp), _fmt(oracle - dp)])
    summary = {"oracle": oracle, "dp": dp, "difference": oracle - dp, "n_controls": n}
    return summary, ["oracle.csv"], abs(oracle - dp) <= 1e-12


def run_bsde(cfg, out: Path):
    import csv

    from .bsde import solve_regression_mc, solve_tree
    from .lattice import sample_control_paths

    opts = cfg.bsde_options()
    lat = cfg.lattice()
    gen, payoff, cc = cfg.generator(), cfg.payoff(), cfg.control_class()
    a = opts["a"] if opts["a"] is not None else cfg.a_max()
    if not bool(gen.in_domain_F(a)):
        cfg.fail("bsde", "a", f"a={a:g} lies outside D_F = {gen.domain_F}")
    sol = solve_tree(lat, a, gen, payoff, opts["scheme"], opts["picard_tol"])
    with (out / "bsde_solution.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "Y", "Z"])
        for k, t in enumerate(lat.times):
            zs = sol.z_field[k] if k < lat.n_steps else [None] * lat.n_space
            for x, y, z in zip(lat.x, sol.y_field[k], zs):
                w.writerow([_fmt(float(t)), _fmt(float(x)), _fmt(float(y)), "" if z is None else _fmt(float(z))])
    summary = {"y0": sol.y0, "a": a, "scheme": opts["scheme"]}
    files = ["bsde_solution.csv"]
    if opts["n_paths"]:
        if opts["n_paths"] < 1000:
            cfg.fail("bsde", "n_paths", "regression Monte Carlo needs at least 1000 paths")
        bundle = sample_control_paths(a, opts["n_paths"], lat.n_steps, cfg.seed)
        reg = solve_regression_mc(bundle, gen, payoff, opts["basis_degree"])
        summary.update({"y0_regression": reg.y0, "stderr_regression": reg.stderr})
        with (out / "bsde_regression.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y0", "stderr", "degree_used", "n_paths"])
            w.writerow([_fmt(reg.y0), _fmt(reg.stderr), reg.degree_used, opts["n_paths"]])
        files.append("bsde_regression.csv")
    return summary, files, True


def run_pde(cfg, out: Path):
    from .dual import dual_value_dp
    from .pde import solve_fully_nonlinear, write_surface

    grid = cfg.pde_grid()
    gen, payoff = cfg.generator(), cfg.payoff()
    sol = solve_fully_nonlinear(gen, payoff, grid, cfg.pde_a_grid())
    write_surface(sol, out / "pde_surface.csv")
    summary = {"u0": sol.u0, "n_space": grid.n_space, "n_time": grid.n_steps}
    ok = True
    if not any(cfg.has("pde", k) for k in ("x_max", "n_space", "n_time", "a_grid")):
        # shared grid and control set: the two recursions must coincide
        v0 = dual_value_dp(grid, cfg.control_class(), gen, payoff).v0
        summary["dual_minus_pde"] = v0 - sol.u0
        ok = abs(v0 - sol.u0) <= 1e-8
    return summary, ["pde_surface.csv"], ok


def run_verify(cfg, out: Path):
    from .dual import dual_value_dp
    from .lattice import Schedule
    from .primal import HedgeFields, default_tol, minimal_superhedge_price, superhedge_report, write_superhedge_report

    opts = cfg.verify_options()
    lat = cfg.lattice()
    gen, payoff, cc = cfg.generator(), cfg.payoff(), cfg.control_class()
    vf = dual_value_dp(lat, cc, gen, payoff)
    hedge = HedgeFields.from_value_field(vf)
    vals = sorted(cc.A0[i] for i in vf.admissible)
    family = [vals[0], vals[-1]]
    if len(vals) > 1:
        family.append(Schedule((0.0, 0.5), (vals[0], vals[-1])))
    y0 = opts["y0"] if opts["y0"] is not None else vf.v0 + opts["margin"]
    tol = opts["tol"] if opts["tol"] is not None else default_tol(lat)
    rep = superhedge_report(y0, hedge, gen, payoff, family, opts["n_paths"], cfg.seed, tol, opts["mode"], opts["threshold"])
    write_superhedge_report(rep, out / "superhedge_report.csv")
    summary = {"v0": vf.v0, "y0": y0, "tol": tol, "overall": rep.overall, "mixture": rep.mixture, "clamped": rep.clamped, "passed": rep.passed}
    if opts["bisect"]:
        price = minimal_superhedge_price(
            hedge, gen, payoff, family, vf.v0 - 0.1, max(y0, vf.v0) + 0.2,
            opts["n_paths"], cfg.seed, tol, opts["mode"], opts["threshold"], xtol=1e-3,
        )
        summary["min_price"] = price
        summary["min_price_minus_v0"] = price - vf.v0
    return summary, ["superhedge_report.csv"], rep.passed


def run_qv(cfg, out: Path):
    import math

    import numpy as np

    from .lattice import gaussian_stream
    from .paths import SamplePath, density_estimate, quadratic_variation, write_csv

    opts = cfg.qv_options()
    n = opts["n_steps"]
    grid = np.linspace(0.0, 1.0, n + 1)
    x = np.concatenate([[0.0], np.cumsum(math.sqrt(opts["a"] / n) * gaussian_stream(cfg.seed, 0, n))])
    path = SamplePath(grid, x)
    qv = quadratic_variation(path)
    ahat = density_estimate(qv, opts["window"])
    write_csv(path, out / "path.csv")
    write_csv(SamplePath(grid, np.column_stack([qv.values[:, 0, 0], ahat.values[:, 0, 0]]), anchored=False), out / "qv.csv")
    qv1, a1 = float(qv.values[-1, 0, 0]), float(ahat.values[-1, 0, 0])
    summary = {"qv1": qv1, "ahat1": a1, "a": opts["a"], "n_steps": n, "window": opts["window"]}
    ok = abs(qv1 / opts["a"] - 1) <= 0.05 and abs(a1 / opts["a"] - 1) <= 0.05
    return summary, ["path.csv", "qv.csv"], ok


def run_suite(cfg, out: Path, only=None):
    import csv

    from .suite import run_all

    results = run_all(only)
    with (out / "acceptance.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["criterion", "name", "passed", "value", "detail"])
        for r in results:
            print(r.line(), flush=True)
            w.writerow([r.number, r.name, int(r.passed), _fmt(r.value), r.detail])
    n_pass = sum(r.passed for r in results)
    summary = {"passed": n_pass, "failed": len(results) - n_pass}
    return summary, ["acceptance.csv"], n_pass == len(results)


RUNNERS = {
    "dual": run_dual,
    "oracle": run_oracle,
    "bsde": run_bsde,
    "pde": run_pde,
    "verify": run_verify,
    "qv": run_qv,
    "suite": run_suite,
}


# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg, files, threads) -> None:
    import numpy as np

    from . import __version__

    manifest = {
        "command": command,
        "config_sha256": cfg.digest,
        "config_source": cfg.source,
        "seed": cfg.seed,
        "threads": threads,
        "versions": {"dualtarget": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "outputs": {f: _sha256(out / f) for f in files},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be at least 1")
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)

    from . import config as C
    from .bsde import BsdeError
    from .dual import DualError
    from .generators import GeneratorError
    from .lattice import LatticeError
    from .paths import PathError
    from .pde import PdeError
    from .primal import PrimalError

    input_errors = (C.ConfigError, BsdeError, DualError, GeneratorError, LatticeError, PathError, PdeError, PrimalError)
    try:
        cfg = C.load(args.config) if args.config else C.default()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise C.ConfigError("--seed must lie in [0, 2^64)")
            cfg.set("run", "seed", args.seed)
        extra = {}
        if args.command == "oracle":
            if args.depth is not None:
                cfg.set("tree", "depth", args.depth)
            if args.branching is not None:
                cfg.set("tree", "branching", args.branching)
            if args.a0 is not None:
                cfg.set("controls", "A0", f"[{args.a0}]")
        if args.command == "suite" and args.only:
            try:
                extra["only"] = {int(s) for s in args.only.split(",")}
            except ValueError:
                raise C.ConfigError(f"--only expects comma-separated criterion numbers, got {args.only!r}") from None
        cfg.validate()
        out = Path(args.out or os.environ.get("DUALTARGET_OUT") or "dualtarget_out")
        out.mkdir(parents=True, exist_ok=True)
        summary, files, ok = RUNNERS[args.command](cfg, out, **extra)
    except input_errors as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    (out / "config.cfg").write_text(cfg.render())
    write_manifest(out, args.command, cfg, files + ["config.cfg"], args.threads)
    for key, val in summary.items():
        print(f"{key}={_fmt(val)}")
    print(f"check={'pass' if ok else 'fail'}")
    if args.check and not ok:
        print("error: check failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
