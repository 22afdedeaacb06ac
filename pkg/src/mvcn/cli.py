"""Command-line entry point.

Subcommands: simulate | experiment | wasserstein | models.  Every run
writes a manifest.json first; a manifest is sufficient to reproduce the
run byte-for-byte (all randomness flows from --seed).

Exit codes: 0 success/pass, 1 configuration error, 2 blow-up,
3 experiment fail, 4 experiment inconclusive.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import __version__
from . import experiments as exp
from .simulate import (
    BlowUpError,
    SimConfig,
    simulate as run_simulation,
    write_trajectory_csvs,
)
from .measure import MeasureError, load_ensemble_csv, load_measure_csv, nested_wasserstein, wasserstein_p
from .model import BUILTIN_MODELS, ModelDefinitionError, get_model, model_from_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BLOWUP = 2
EXIT_FAIL = 3
EXIT_INCONCLUSIVE = 4

EXPERIMENTS = ("moments", "contraction", "invariant", "semigroup", "poc", "converge-invariant")


def _out_root(flag_value):
    return flag_value or os.environ.get("MVCN_OUT_DIR", ".")


def _load_model(args):
    if getattr(args, "config", None):
        return model_from_config(args.config)
    if not args.model:
        raise ModelDefinitionError(
            f"no model given; builtins: {', '.join(sorted(BUILTIN_MODELS))}"
        )
    return get_model(args.model)


def _sim_config(args, require=True) -> SimConfig:
    missing = [f for f in ("particles", "blocks", "dt", "t_end") if getattr(args, f.replace("-", "_")) is None]
    if missing and require:
        raise ValueError(f"missing required flags: {', '.join('--' + m for m in missing)}")
    return SimConfig(
        dt=args.dt, t_end=args.t_end, particles=args.particles, blocks=args.blocks,
        seed=args.seed, taming=not args.no_taming, record_every=args.record_every,
        snapshot_times=tuple(float(t) for t in (args.snapshot_times or "").split(",") if t),
        initial_law=args.init, threads=args.threads,
    )


def _write_manifest(outdir, command, args, model, cfg: SimConfig, extra=None):
    os.makedirs(outdir, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "model": model.name,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "output_dir": str(outdir),
        "argv": sys.argv[1:],
    }
    if getattr(args, "config", None):
        manifest["model_config_path"] = args.config
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest, path


def _finalize_manifest(path, t0):
    with open(path) as fh:
        manifest = json.load(fh)
    manifest["wall_clock_seconds"] = time.time() - t0
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)


def cmd_simulate(args) -> int:
    t0 = time.time()
    try:
        if args.from_manifest:
            with open(args.from_manifest) as fh:
                manifest = json.load(fh)
            model = (model_from_config(manifest["model_config_path"])
                     if "model_config_path" in manifest else get_model(manifest["model"]))
            cfg = SimConfig(**manifest["config"])
            outdir = args.out or manifest["output_dir"]
        else:
            model = _load_model(args)
            cfg = _sim_config(args)
            outdir = os.path.join(_out_root(args.out_root), args.out or f"sim_{model.name}")
    except (ModelDefinitionError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    _, mpath = _write_manifest(outdir, "simulate", args, model, cfg)
    try:
        rec = run_simulation(model, cfg)
    except BlowUpError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.record is not None:
            write_trajectory_csvs(e.record, outdir)
        return EXIT_BLOWUP
    write_trajectory_csvs(rec, outdir)
    _finalize_manifest(mpath, t0)
    print(outdir)
    return EXIT_OK


def cmd_experiment(args) -> int:
    t0 = time.time()
    try:
        model = _load_model(args)
        cfg = _sim_config(args)
        outdir = os.path.join(_out_root(args.out_root),
                              args.out or f"exp_{args.exp}_{model.name}")
        if args.exp == "moments":
            runner = lambda: exp.run_moment_bound(model, cfg)
        elif args.exp == "contraction":
            runner = lambda: exp.run_contraction(model, cfg, args.init_a, args.init_b)
        elif args.exp == "invariant":
            inits = (args.init_list or "gauss:10,1;gauss:2,1;gauss:-2,1").split(";")
            runner = lambda: exp.run_invariant(model, cfg, inits, outdir=outdir)
        elif args.exp == "semigroup":
            runner = lambda: exp.run_semigroup(model, cfg, args.s, args.t)
        elif args.exp == "poc":
            n_list = [int(n) for n in args.n_list.split(",")]
            runner = lambda: exp.run_poc(model, cfg, args.q, n_list, args.n_ref)
            exp.eps_theory(n_list, model.dim, model.constants.p, args.q)
            if not 2 <= args.q < model.constants.p:
                raise ValueError(f"need 2 <= q < p (q={args.q}, p={model.constants.p})")
        else:
            runner = lambda: exp.run_convergence_to_invariant(
                model, cfg, args.q, [int(n) for n in args.n_list.split(",")],
                args.invariant_dir)
    except (ModelDefinitionError, ValueError, OSError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    _, mpath = _write_manifest(outdir, f"experiment:{args.exp}", args, model, cfg)
    try:
        report = runner()
    except BlowUpError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BLOWUP
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    report.write(outdir)
    _finalize_manifest(mpath, t0)
    print(f"{report.name}: {report.verdict}  ({outdir})")
    for k, v in report.fitted.items():
        print(f"  {k} = {v}")
    if report.verdict == exp.PASS:
        return EXIT_OK
    return EXIT_FAIL if report.verdict == exp.FAIL else EXIT_INCONCLUSIVE


def cmd_wasserstein(args) -> int:
    try:
        if args.nested:
            A = load_ensemble_csv(args.a)
            B = load_ensemble_csv(args.b)
            val = nested_wasserstein(A, B, args.p)
        else:
            mu = load_measure_csv(args.a)
            nu = load_measure_csv(args.b)
            val = wasserstein_p(mu, nu, args.p)
    except (MeasureError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{val:.12g}")
    return EXIT_OK


def cmd_models(args) -> int:
    for name in sorted(BUILTIN_MODELS):
        m = BUILTIN_MODELS[name]()
        c = m.constants
        print(f"{name}: d={m.dim}  c1={c.c1:g} c2={c.c2:g} c3={c.c3:g} c4={c.c4:g} "
              f"l={c.l:g} p={c.p:g}")
    return EXIT_OK


def _add_sim_flags(p):
    p.add_argument("--model", help="builtin model name")
    p.add_argument("--config", help="model JSON config file")
    p.add_argument("--particles", "-N", type=int, help="particles per block")
    p.add_argument("--blocks", "-M", type=int, help="number of common-noise blocks")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--t-end", type=float, help="end time")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", default="point:0", help="initial law: point:.. | gauss:m,s | csv:PATH")
    p.add_argument("--no-taming", action="store_true", help="disable drift taming")
    p.add_argument("--record-every", type=int, default=10, help="steps between records")
    p.add_argument("--snapshot-times", help="comma-separated times to store full states")
    p.add_argument("--threads", type=int, default=1,
                   help="internal parallelism cap (results never depend on it)")
    p.add_argument("--out", help="output directory name")
    p.add_argument("--out-root", help="output root (default $MVCN_OUT_DIR or .)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvcn", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="run the particle system, emit CSVs")
    _add_sim_flags(ps)
    ps.add_argument("--from-manifest", help="replay a previous run from its manifest.json")
    ps.set_defaults(func=cmd_simulate)

    pe = sub.add_parser("experiment", help="run a verification experiment")
    _add_sim_flags(pe)
    pe.add_argument("--exp", required=True, choices=EXPERIMENTS)
    pe.add_argument("--init-a", default="gauss:10,1")
    pe.add_argument("--init-b", default="gauss:-2,1")
    pe.add_argument("--init-list", help="semicolon-separated initial laws (invariant)")
    pe.add_argument("--q", type=float, default=2.0)
    pe.add_argument("--n-list", default="16,64,256", help="comma-separated particle counts")
    pe.add_argument("--n-ref", type=int, default=4096)
    pe.add_argument("--s", type=float, default=1.0, help="restart time (semigroup)")
    pe.add_argument("--t", type=float, default=3.0, help="comparison time (semigroup)")
    pe.add_argument("--invariant-dir", help="directory with stored invariant estimate")
    pe.set_defaults(func=cmd_experiment)

    pw = sub.add_parser("wasserstein", help="W_p between two point CSVs")
    pw.add_argument("--a", required=True)
    pw.add_argument("--b", required=True)
    pw.add_argument("--p", type=float, default=2.0)
    pw.add_argument("--nested", action="store_true",
                    help="treat files as block ensembles (block_id column)")
    pw.set_defaults(func=cmd_wasserstein)

    pm = sub.add_parser("models", help="list builtin models and constants")
    pm.set_defaults(func=cmd_models)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
