"""Command line entry point: ``dshdp {simulate,fit,eval,describe-config}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .presets import PRESETS, SIMULATIONS, preset_config, simulate_preset


def _cmd_simulate(args):
    simulate_preset(args.preset, args.out, seed=args.seed, T=args.T, states=args.states)
    print(f"wrote train.csv, test.csv, truth.csv, truth_params.json, config.yaml to {args.out}")


def _cmd_fit(args):
    from .runner import run
    config = load_config(args.config)
    changes = {k: v for k, v in (("iterations", args.iterations), ("burn_in", args.burn_in),
                                 ("chains", args.chains), ("seed", args.seed)) if v is not None}
    if changes:
        config = config.replace(**changes)
    if args.out:
        config.paths.output = args.out
    summary = run(config, workers=args.workers, resume=args.resume, figures=not args.no_figures)
    med = summary["posterior_median"]
    print("chain,status,snapshots,mean_nll,mean_hamming")
    for ch in summary["chains"]:
        print(",".join(str(ch[k]) for k in ("chain", "status", "snapshots", "mean_nll", "mean_hamming")))
    print("median alpha={alpha} gamma={gamma} rho1={rho1} rho2={rho2}".format(**med))
    print(f"results in {config.paths.output}")
    return 0 if all(ch["status"] == "ok" for ch in summary["chains"]) else 3


def _cmd_eval(args):
    from .runner import evaluate
    rows = evaluate(args.run, args.test, args.truth)
    print(f"evaluated {len(rows)} snapshots; wrote {Path(args.run) / 'eval.csv'}")


def _cmd_describe(args):
    if args.preset:
        config = preset_config(args.preset)
    elif args.config:
        config = load_config(args.config)
    else:
        config = RunConfig()
    sys.stdout.write(config.to_yaml())


def build_parser():
    p = argparse.ArgumentParser(prog="dshdp", description="Disentangled sticky HDP-HMM inference.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset and matching config")
    s.add_argument("--preset", choices=sorted(SIMULATIONS), default="scenario1")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--T", type=int)
    s.add_argument("--states", type=int)
    s.set_defaults(func=_cmd_simulate)

    f = sub.add_parser("fit", help="run the sampler chains described by a config file")
    f.add_argument("config")
    f.add_argument("--out", help="output folder (overrides the config)")
    f.add_argument("--workers", type=int, help="parallel chains (default: DSHDP_WORKERS or CPU count)")
    f.add_argument("--resume", action="store_true", help="continue from per-chain checkpoints")
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", dest="burn_in", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--no-figures", action="store_true")
    f.set_defaults(func=_cmd_fit)

    e = sub.add_parser("eval", help="held-out NLL / Hamming distance from stored snapshots")
    e.add_argument("run", help="output folder of a finished fit")
    e.add_argument("--test")
    e.add_argument("--truth")
    e.set_defaults(func=_cmd_eval)

    d = sub.add_parser("describe-config", help="print a fully resolved config")
    g = d.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=PRESETS)
    g.add_argument("--config")
    d.set_defaults(func=_cmd_describe)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
