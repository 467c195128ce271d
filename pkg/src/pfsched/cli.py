"""Command-line interface.

Subcommands:
  run           run a sweep experiment from a config file and write CSV
  fixed-point   solve the ensemble fixed point for exponential-SNR users
  policy        export / import precomputed dispatch policies (JSON)
  trace         export a generated channel trace as CSV
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace


from . import __version__
from .channel import ChannelConfig, generate_trace, trace_to_csv
from .ensemble import (
    RateDistribution,
    load_policy,
    save_policy,
    solve_ensemble_discrete,
    solve_fixed_point,
)
from .harness import apply_scale, load_config, run_experiment


def _add_run(sub):
    p = sub.add_parser("run", help="run a sweep experiment")
    p.add_argument("--config", required=True, help="experiment config (.json or .toml)")
    p.add_argument("--seed", type=int, default=None, help="override base seed")
    p.add_argument("--replications", type=int, default=None, help="override replication count")
    p.add_argument("--out", default=None, help="override output CSV path")
    p.add_argument("--skip-warmup", action="store_true", help="drop partial-window slots from the fairness average")
    p.add_argument("--scale", choices=("desk", "paper"), default=None,
                   help="replication/duration preset (applied before explicit overrides)")


def _add_fixed_point(sub):
    p = sub.add_parser("fixed-point", help="solve the ensemble fixed point")
    p.add_argument("--mean-snr-db", type=float, nargs="+", required=True,
                   help="per-user mean SNR in dB")
    p.add_argument("--subcarriers", type=int, default=16)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--out", default=None, help="also write the policy JSON here")


def _add_policy(sub):
    p = sub.add_parser("policy", help="export or import policy files")
    mode = p.add_subparsers(dest="mode", required=True)

    exp = mode.add_parser("export", help="solve a policy and write it to JSON")
    exp.add_argument("--out", required=True)
    exp.add_argument("--subcarriers", type=int, default=16)
    exp.add_argument("--mean-snr-db", type=float, nargs="+", default=None,
                     help="continuous path: per-user mean SNR in dB")
    exp.add_argument("--discrete-rates", default=None,
                     help="discrete path: per-user comma-joined rates, users separated by ';'")
    exp.add_argument("--discrete-probs", default=None,
                     help="discrete path: probabilities, same layout as --discrete-rates")
    exp.add_argument("--tol", type=float, default=1e-6)

    imp = mode.add_parser("import", help="load a policy JSON and print a summary")
    imp.add_argument("--in", dest="path", required=True)


def _add_trace(sub):
    p = sub.add_parser("trace", help="channel trace tools")
    mode = p.add_subparsers(dest="mode", required=True)
    exp = mode.add_parser("export", help="generate a trace and write it as CSV")
    exp.add_argument("--out", required=True)
    exp.add_argument("--users", type=int, default=4)
    exp.add_argument("--subcarriers", type=int, default=16)
    exp.add_argument("--doppler-hz", type=float, default=30.0)
    exp.add_argument("--rms-delay-spread", type=float, default=216.5e-9)
    exp.add_argument("--mean-snr-db", type=float, nargs="+", default=None,
                     help="per-user mean SNR in dB (default: 13 dB for every user)")
    exp.add_argument("--duration", type=float, default=0.2)
    exp.add_argument("--symbol-duration", type=float, default=4e-6)
    exp.add_argument("--slot-duration", type=float, default=1e-3)
    exp.add_argument("--seed", type=int, default=0)


def _parse_user_groups(text: str) -> list[list[float]]:
    return [[float(x) for x in group.split(",")] for group in text.split(";")]


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.scale:
        cfg = apply_scale(cfg, args.scale)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.replications is not None:
        cfg = replace(cfg, replications=args.replications)
    if args.out is not None:
        cfg = replace(cfg, output_path=args.out)
    if args.skip_warmup:
        cfg = replace(cfg, skip_warmup=True)
    if cfg.output_path is None:
        raise ValueError("no output path: set output_path in the config or pass --out")
    result = run_experiment(cfg)
    print(f"wrote {len(result.rows)} result rows to {cfg.output_path}")
    return 0


def _cmd_fixed_point(args) -> int:
    dists = [RateDistribution.from_mean_snr_db(db) for db in args.mean_snr_db]
    policy = solve_fixed_point(dists, args.subcarriers, tol=args.tol, damping=args.damping)
    print("expected_throughputs:", " ".join(format(t, ".9g") for t in policy.expected_throughputs))
    print(f"residual: {policy.residual:.3e}")
    print(f"provenance: {policy.provenance}")
    if args.out:
        save_policy(policy, args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_policy(args) -> int:
    if args.mode == "import":
        policy, table = load_policy(args.path)
        print(f"users: {policy.num_users}")
        print("expected_throughputs:", " ".join(format(t, ".9g") for t in policy.expected_throughputs))
        print(f"residual: {policy.residual:.3e}")
        print(f"provenance: {policy.provenance}")
        print(f"allocation table entries: {0 if table is None else len(table)}")
        return 0
    # export
    if args.mean_snr_db is not None:
        dists = [RateDistribution.from_mean_snr_db(db) for db in args.mean_snr_db]
        policy = solve_fixed_point(dists, args.subcarriers, tol=args.tol)
        save_policy(policy, args.out)
    elif args.discrete_rates is not None and args.discrete_probs is not None:
        rates = _parse_user_groups(args.discrete_rates)
        probs = _parse_user_groups(args.discrete_probs)
        if len(rates) != len(probs):
            raise ValueError("--discrete-rates and --discrete-probs disagree on user count")
        dists = [RateDistribution.discrete(r, p) for r, p in zip(rates, probs)]
        policy, table = solve_ensemble_discrete(dists, args.subcarriers)
        save_policy(policy, args.out, allocation_table=table)
    else:
        raise ValueError("export needs --mean-snr-db or both --discrete-rates and --discrete-probs")
    print(f"wrote {args.out}")
    return 0


def _cmd_trace(args) -> int:
    snr = args.mean_snr_db if args.mean_snr_db is not None else [13.0] * args.users
    cfg = ChannelConfig(
        num_users=args.users,
        num_subcarriers=args.subcarriers,
        doppler_hz=args.doppler_hz,
        rms_delay_spread=args.rms_delay_spread,
        mean_snr_db=tuple(snr),
        duration=args.duration,
        symbol_duration=args.symbol_duration,
        slot_duration=args.slot_duration,
        seed=args.seed,
    )
    trace = generate_trace(cfg)
    trace_to_csv(trace, args.out)
    print(f"wrote {trace.num_slots} slots x {args.users} users x {args.subcarriers} subcarriers to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pfsched",
        description="Proportional-fair scheduling experiments on simulated OFDM channels",
    )
    parser.add_argument("--version", action="version", version=f"pfsched {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_fixed_point(sub)
    _add_policy(sub)
    _add_trace(sub)
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "fixed-point": _cmd_fixed_point,
        "policy": _cmd_policy,
        "trace": _cmd_trace,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
