"""Experiment runner: parameter sweeps over seeded fading replications.

One experiment sweeps a single axis (window length, Doppler, or RMS delay
spread), runs every configured scheduler over the same channel traces at each
sweep point (paired comparison), and collects system throughput, fairness,
and per-user throughput per replication, plus mean/CI aggregates.

Replication ``r`` uses seed ``base_seed + r``, so results are reproducible
bit for bit from the configuration alone.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, generate_trace
from .ensemble import EnsemblePolicy, RateDistribution, solve_fixed_point
from .metrics import ThroughputSeries, aggregate, jain_index, system_throughput
from .scheduling import SchedulerKind, WindowState, schedule_slot, update_state

__all__ = [
    "SCHEDULER_NAMES",
    "SWEEP_AXES",
    "ExperimentConfig",
    "ExperimentRow",
    "ExperimentResult",
    "run_experiment",
    "emit_csv",
    "load_config",
    "apply_scale",
]

SCHEDULER_NAMES = ("pf_w1", "pf_lookback", "pf_infinite", "max_throughput", "maxmin_lookback")
SWEEP_AXES = ("window_slots", "doppler_hz", "rms_delay_spread")

CSV_HEADER = "sweep_axis,sweep_value,scheduler,replication,system_throughput,jain_index,user_throughputs"

# desk scale keeps trend checks in minutes; paper scale is the full
# publication-grade budget (100 replications of 1-second runs)
SCALES = {
    "desk": {"replications": 10, "duration": 0.2},
    "paper": {"replications": 100, "duration": 1.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelConfig
    schedulers: tuple[str, ...]
    sweep_axis: str
    sweep_values: tuple[float, ...]
    window_slots: int = 200
    replications: int = 10
    base_seed: int = 0
    skip_warmup: bool = False
    output_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "schedulers", tuple(self.schedulers))
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in self.sweep_values))
        unknown = [s for s in self.schedulers if s not in SCHEDULER_NAMES]
        if unknown:
            raise ValueError(f"unknown schedulers {unknown}; choose from {SCHEDULER_NAMES}")
        if not self.schedulers:
            raise ValueError("at least one scheduler is required")
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep_axis must be one of {SWEEP_AXES}")
        if not self.sweep_values:
            raise ValueError("sweep_values must be non-empty")
        if self.sweep_axis == "window_slots":
            if any(v < 1 or v != int(v) for v in self.sweep_values):
                raise ValueError("window sweep values must be positive integers")
        elif any(v < 0 for v in self.sweep_values):
            raise ValueError("sweep values must be non-negative")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.window_slots < 1:
            raise ValueError("window_slots must be >= 1")


@dataclass
class ExperimentRow:
    sweep_value: float
    scheduler: str
    replication: int
    system_throughput: float
    jain_index: float
    user_throughputs: np.ndarray
    failed: bool = False


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[ExperimentRow] = field(default_factory=list)

    def select(self, sweep_value=None, scheduler=None) -> list[ExperimentRow]:
        out = self.rows
        if sweep_value is not None:
            out = [r for r in out if r.sweep_value == float(sweep_value)]
        if scheduler is not None:
            out = [r for r in out if r.scheduler == scheduler]
        return out

    def aggregates(self, sweep_value, scheduler):
        rows = [r for r in self.select(sweep_value, scheduler) if not r.failed]
        samples = [
            {
                "system_throughput": r.system_throughput,
                "jain_index": r.jain_index,
                "user_throughputs": r.user_throughputs,
            }
            for r in rows
        ]
        return aggregate(samples)


def _channel_at(cfg: ExperimentConfig, sweep_value: float, seed: int) -> ChannelConfig:
    channel = cfg.channel
    if cfg.sweep_axis == "doppler_hz":
        channel = replace(channel, doppler_hz=float(sweep_value))
    elif cfg.sweep_axis == "rms_delay_spread":
        channel = replace(channel, rms_delay_spread=float(sweep_value))
    return replace(channel, seed=seed)


def _window_at(cfg: ExperimentConfig, sweep_value: float) -> int:
    if cfg.sweep_axis == "window_slots":
        return int(sweep_value)
    return cfg.window_slots


def _build_policy(cfg: ExperimentConfig) -> EnsemblePolicy | None:
    """Fixed-point policy from the per-user mean SNRs (marginals do not vary
    along any sweep axis, so one policy serves the whole experiment)."""
    if "pf_infinite" not in cfg.schedulers:
        return None
    dists = [RateDistribution.from_mean_snr_db(db) for db in cfg.channel.mean_snr_db]
    return solve_fixed_point(dists, cfg.channel.num_subcarriers)


def _make_kind(name: str, window: int, policy: EnsemblePolicy | None) -> SchedulerKind:
    if name == "pf_w1":
        return SchedulerKind.pf_w1()
    if name == "pf_lookback":
        return SchedulerKind.pf_lookback(window)
    if name == "pf_infinite":
        return SchedulerKind.pf_infinite(policy)
    if name == "max_throughput":
        return SchedulerKind.max_throughput()
    return SchedulerKind.maxmin_lookback(window)


def run_scheduler_on_trace(kind: SchedulerKind, rates: np.ndarray, window: int) -> np.ndarray:
    """Drive one scheduler over a full trace; returns per-slot throughputs (N, U)."""
    n_slots, num_users, _ = rates.shape
    state = WindowState(num_users, window_slots=window)
    throughputs = np.empty((n_slots, num_users))
    for n in range(n_slots):
        allocation = schedule_slot(kind, state, rates[n])
        update_state(state, allocation, rates[n])
        throughputs[n] = (allocation.airtime * rates[n]).sum(axis=1)
    return throughputs


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run the full sweep.  On error, partial results are flushed to the
    configured output with a failure marker row, then the error re-raises."""
    policy = _build_policy(cfg)
    result = ExperimentResult(config=cfg)
    try:
        for sweep_value in cfg.sweep_values:
            window = _window_at(cfg, sweep_value)
            for rep in range(cfg.replications):
                channel = _channel_at(cfg, sweep_value, seed=cfg.base_seed + rep)
                trace = generate_trace(channel)
                for name in cfg.schedulers:
                    kind = _make_kind(name, window, policy)
                    throughputs = run_scheduler_on_trace(kind, trace.rates, window)
                    series = ThroughputSeries(throughputs, window_slots=window)
                    result.rows.append(
                        ExperimentRow(
                            sweep_value=float(sweep_value),
                            scheduler=name,
                            replication=rep,
                            system_throughput=system_throughput(series),
                            jain_index=jain_index(series, skip_warmup=cfg.skip_warmup),
                            user_throughputs=throughputs.mean(axis=0),
                        )
                    )
    except Exception:
        if cfg.output_path:
            result.rows.append(
                ExperimentRow(
                    sweep_value=float("nan"),
                    scheduler="failed",
                    replication=-1,
                    system_throughput=float("nan"),
                    jain_index=float("nan"),
                    user_throughputs=np.full(cfg.channel.num_users, np.nan),
                    failed=True,
                )
            )
            emit_csv(result, cfg.output_path)
        raise
    if cfg.output_path:
        emit_csv(result, cfg.output_path)
    return result


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _user_list(values) -> str:
    return ";".join(_fmt(v) for v in np.atleast_1d(values))


def emit_csv(result: ExperimentResult, path: str | Path) -> None:
    """Write data rows in (sweep, scheduler, replication) order, each group
    followed by its ``mean`` and ``ci95`` aggregate rows."""
    cfg = result.config
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER.split(","))
        for sweep_value in cfg.sweep_values:
            for name in cfg.schedulers:
                rows = [r for r in result.select(sweep_value, name)]
                for row in sorted(rows, key=lambda r: r.replication):
                    writer.writerow(
                        [
                            cfg.sweep_axis,
                            _fmt(row.sweep_value),
                            row.scheduler,
                            row.replication,
                            _fmt(row.system_throughput),
                            _fmt(row.jain_index),
                            _user_list(row.user_throughputs),
                        ]
                    )
                clean = [r for r in rows if not r.failed]
                if len(clean) >= 2:
                    agg = result.aggregates(sweep_value, name)
                    writer.writerow(
                        [
                            cfg.sweep_axis, _fmt(sweep_value), name, "mean",
                            _fmt(agg["system_throughput"].mean),
                            _fmt(agg["jain_index"].mean),
                            _user_list(agg["user_throughputs"].mean),
                        ]
                    )
                    writer.writerow(
                        [
                            cfg.sweep_axis, _fmt(sweep_value), name, "ci95",
                            _fmt(agg["system_throughput"].ci95_halfwidth),
                            _fmt(agg["jain_index"].ci95_halfwidth),
                            _user_list(agg["user_throughputs"].ci95_halfwidth),
                        ]
                    )
        failed = [r for r in result.rows if r.failed]
        for row in failed:
            writer.writerow(
                [cfg.sweep_axis, "nan", row.scheduler, row.replication, "nan", "nan", "nan"]
            )


def _load_raw(path: Path) -> dict:
    if path.suffix == ".json":
        with open(path) as fh:
            return json.load(fh)
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    raise ValueError(f"config must be .json or .toml, got {path.suffix!r}")


def load_config(path: str | Path) -> ExperimentConfig:
    """Load an experiment config from a JSON or TOML file.

    Expected layout: a ``channel`` table with the ChannelConfig fields and
    top-level experiment fields (schedulers, sweep_axis, sweep_values,
    window_slots, replications, base_seed, skip_warmup, output_path).
    """
    raw = _load_raw(Path(path))
    try:
        ch = dict(raw["channel"])
        channel = ChannelConfig(
            num_users=int(ch["num_users"]),
            num_subcarriers=int(ch["num_subcarriers"]),
            doppler_hz=float(ch["doppler_hz"]),
            rms_delay_spread=float(ch["rms_delay_spread"]),
            mean_snr_db=tuple(float(x) for x in ch["mean_snr_db"]),
            duration=float(ch["duration"]),
            symbol_duration=float(ch.get("symbol_duration", 4e-6)),
            slot_duration=float(ch.get("slot_duration", 1e-3)),
            seed=int(ch.get("seed", 0)),
        )
        return ExperimentConfig(
            channel=channel,
            schedulers=tuple(raw["schedulers"]),
            sweep_axis=str(raw["sweep_axis"]),
            sweep_values=tuple(float(v) for v in raw["sweep_values"]),
            window_slots=int(raw.get("window_slots", 200)),
            replications=int(raw.get("replications", 10)),
            base_seed=int(raw.get("base_seed", 0)),
            skip_warmup=bool(raw.get("skip_warmup", False)),
            output_path=raw.get("output_path"),
        )
    except KeyError as exc:
        raise ValueError(f"config is missing required key: {exc}") from exc


def apply_scale(cfg: ExperimentConfig, scale: str) -> ExperimentConfig:
    """Override replication count and duration with a named preset."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {tuple(SCALES)}")
    preset = SCALES[scale]
    return replace(
        cfg,
        replications=preset["replications"],
        channel=replace(cfg.channel, duration=preset["duration"]),
    )
