"""Command line: ``thermobingham run|theta0|sweep CONFIG [options]``.

CONFIG is a ``key = value`` file or the name of a preset (experiment1,
experiment2, alpha_sweep).
"""
import argparse
import os
import sys

import numpy as np

from . import config as cfgmod
from .assembly import AssemblyError
from .linalg import LinearSolveError
from .output import write_snapshot
from .ssn import MaxIterationsExceeded
from .stepper import run, solve_theta0

EXIT_CONFIG = 2
EXIT_SOLVER = 3

SWEEP_COLUMNS = ("alpha", "g_max", "g_min", "mu_max", "mu_min", "u_h1_final", "u_h1_max", "avg_ssn_iters")


def _load(args):
    src = args.config_path or args.config
    if src is None:
        raise cfgmod.ValidationError("no configuration given (positional CONFIG or --config)")
    if os.path.isfile(src):
        cfg = cfgmod.load_config(src)
    elif src in cfgmod.PRESETS:
        cfg = cfgmod.preset(src)
    else:
        raise cfgmod.ValidationError(f"{src!r} is neither a file nor a preset name")
    over = {}
    if args.mesh_n is not None:
        over["mesh_n"] = args.mesh_n
    if args.gamma is not None:
        over["gamma"] = args.gamma
    if getattr(args, "snapshot_every", None) is not None:
        over["snapshot_every"] = args.snapshot_every
    if args.output_dir is not None:
        over["output_dir"] = args.output_dir
    return cfg.with_overrides(**over) if over else cfg


def _print_progress(rec):
    print(f"step {rec.step:5d}  t = {rec.t:.5f}  ssn = {rec.ssn_iters:2d}  "
          f"|u|_H1 = {rec.u_h1:.6e}  active = {rec.active_fraction:.3f}", flush=True)


def command_run(args):
    cfg = _load(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    res = run(cfg, output_dir=cfg.output_dir, progress=None if args.quiet else _print_progress)
    print(f"{len(res.records)} records written to {cfg.output_dir}; "
          f"average SSN iterations {res.average_iterations:.2f}")
    return 0


def command_theta0(args):
    cfg = _load(args)
    mesh = cfg.mesh()
    theta0 = solve_theta0(mesh, cfg.physical)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "theta0.vtk")
    write_snapshot(path, mesh, theta=theta0, title="initial temperature")
    with open(os.path.join(cfg.output_dir, "config.echo"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.echo(cfg))
    k = int(np.argmax(theta0))
    print(f"theta0 in [{theta0.min():.6g}, {theta0.max():.6g}], max at ({mesh.nodes[k, 0]:.4g}, {mesh.nodes[k, 1]:.4g}); wrote {path}")
    return 0


def _alpha_list(text):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None
    if not vals or any(a < 0 for a in vals):
        raise argparse.ArgumentTypeError("alpha values must be non-negative")
    return vals


def sweep_row(alpha, result):
    recs = result.records
    return (
        alpha,
        max(r.g_max for r in recs),
        min(r.g_min for r in recs),
        max(r.mu_max for r in recs),
        min(r.mu_min for r in recs),
        recs[-1].u_h1,
        max(r.u_h1 for r in recs),
        result.average_iterations,
    )


def command_sweep(args):
    cfg = _load(args)
    alphas = args.alpha or [1.0, 10.0, 100.0]
    base = cfg.output_dir
    os.makedirs(base, exist_ok=True)
    summary = os.path.join(base, "sweep_summary.csv")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
    for a in alphas:
        sub = os.path.join(base, f"alpha_{a:g}")
        one = cfg.with_overrides(alpha=a, output_dir=sub)
        os.makedirs(sub, exist_ok=True)
        res = run(one, output_dir=sub)
        row = sweep_row(a, res)
        with open(summary, "a", encoding="utf-8") as fh:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
        print(f"alpha = {a:g}: max g = {row[1]:.6g}, final |u|_H1 = {row[5]:.6g}")
    print(f"wrote {summary}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="thermobingham", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config_path", nargs="?", metavar="CONFIG", help="config file or preset name")
        p.add_argument("--config", help="config file or preset name")
        p.add_argument("--output-dir", help="output directory (overrides the config)")
        p.add_argument("--mesh-n", type=int, help="quads per side")
        p.add_argument("--gamma", type=float, help="Huber regularization parameter")
        return p

    p = common(sub.add_parser("run", help="full time integration"))
    p.add_argument("--snapshot-every", type=int, help="write every N-th record as VTK (0: default cadence)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=command_run)

    p = common(sub.add_parser("theta0", help="solve and write the initial temperature only"))
    p.set_defaults(func=command_theta0)

    p = common(sub.add_parser("sweep", help="one run per heat-sink coefficient alpha"))
    p.add_argument("--alpha", type=_alpha_list, help="comma-separated alpha values (default 1,10,100)")
    p.add_argument("--snapshot-every", type=int)
    p.set_defaults(func=command_sweep)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (cfgmod.ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (LinearSolveError, MaxIterationsExceeded, AssemblyError) as err:
        print(f"solver error ({type(err).__name__}): {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
