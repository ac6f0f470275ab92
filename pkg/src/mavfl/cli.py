"""Command line: ``mavfl run|sweep|theory <config>``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from mavfl import harness, outputs
from mavfl.config import ConfigError, apply_overrides, load_config
from mavfl.selection import Policy


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mavfl", description="Mobility-aware vehicular federated learning simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", type=Path, help="YAML experiment config")
    common.add_argument("--policy")
    common.add_argument("--seed", type=int)
    common.add_argument("--velocity-kmh", type=float)
    common.add_argument("--rounds", type=int)
    common.add_argument("--k0", type=int)
    common.add_argument("--task", choices=["quadratic", "logistic", "tiny_mlp"])
    common.add_argument("--out", type=Path, help="output directory")

    sub.add_parser("run", parents=[common], help="single experiment")
    sw = sub.add_parser("sweep", parents=[common], help="paired-seed policy comparison")
    sw.add_argument("--seeds", type=int, default=10, help="number of seeds, starting at --seed or 0")
    sw.add_argument("--policies", default=",".join(harness.ALL_POLICIES))
    sw.add_argument("--jobs", type=int, default=1)
    th = sub.add_parser("theory", parents=[common], help="convergence-bound checks")
    th.add_argument("--trials", type=int, default=100_000, help="Monte-Carlo draws for the identity check")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, policy=args.policy, seed=args.seed, velocity_kmh=args.velocity_kmh,
                              rounds=args.rounds, k0=args.k0, task=args.task, out=args.out)
        if args.command == "sweep":
            if args.seeds < 1:
                raise ConfigError("--seeds must be >= 1")
            policies = [Policy.parse(p.strip()).value for p in args.policies.split(",") if p.strip()]
            if not policies:
                raise ConfigError("--policies is empty")
    except ValueError as exc:  # ConfigError and bad policy names
        print(f"mavfl: config error: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg.output_dir)
    if args.command == "run":
        summary = harness.run_and_write(cfg)
        print(json.dumps(summary.to_json(), indent=2))
    elif args.command == "sweep":
        seeds = list(range(cfg.seed, cfg.seed + args.seeds))
        report = harness.write_sweep(cfg, seeds, policies, args.jobs)
        for p, row in report["policies"].items():
            print(f"{p:>7}  median delay to 90% of best: {row['median_delay_to_90pct_best_s']}  "
                  f"reached {row['reached_target']}/{len(seeds)}")
    else:
        report = harness.theory_report(cfg, identity_trials=args.trials)
        outputs.write_theory(report, out / "theory.json")
        print(json.dumps({k: report[k] for k in ("drift_bound", "rate_bound")}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
