"""Shared fixtures: the three sweep experiments backing the trend checks.

Desk scale (10 replications of 200 slots) keeps the whole suite in minutes;
the experiments are deterministic for the pinned base seed.
"""

import numpy as np
import pytest

from pfsched.channel import ChannelConfig
from pfsched.harness import ExperimentConfig, run_experiment

ALL_SCHEDULERS = ("pf_w1", "pf_lookback", "pf_infinite", "max_throughput", "maxmin_lookback")
WINDOW_SWEEP = (1, 50, 200, 1000)  # normalized Doppler 0.03 / 1.5 / 6 / 30 at 30 Hz, 1 ms slots
BASE_SEED = 1000


def homogeneous_channel(**overrides):
    base = dict(
        num_users=4,
        num_subcarriers=16,
        doppler_hz=30.0,
        rms_delay_spread=216.5e-9,
        mean_snr_db=(13.0, 13.0, 13.0, 13.0),
        duration=0.2,
    )
    base.update(overrides)
    return ChannelConfig(**base)


@pytest.fixture(scope="session")
def fig12_result():
    cfg = ExperimentConfig(
        channel=homogeneous_channel(),
        schedulers=ALL_SCHEDULERS,
        sweep_axis="window_slots",
        sweep_values=WINDOW_SWEEP,
        replications=10,
        base_seed=BASE_SEED,
    )
    return run_experiment(cfg)


@pytest.fixture(scope="session")
def fig34_result():
    cfg = ExperimentConfig(
        channel=homogeneous_channel(mean_snr_db=(10.0, 12.0, 14.0, 16.0)),
        schedulers=ALL_SCHEDULERS,
        sweep_axis="window_slots",
        sweep_values=WINDOW_SWEEP,
        replications=10,
        base_seed=BASE_SEED,
    )
    return run_experiment(cfg)


@pytest.fixture(scope="session")
def fig56_result():
    cfg = ExperimentConfig(
        channel=homogeneous_channel(),
        schedulers=ALL_SCHEDULERS,
        sweep_axis="rms_delay_spread",
        sweep_values=(0.0, 216.5e-9, 1083e-9),
        window_slots=200,  # normalized Doppler fixed at 6
        replications=10,
        base_seed=BASE_SEED,
    )
    return run_experiment(cfg)


def mean_metric(result, sweep_value, scheduler, metric="system_throughput"):
    agg = result.aggregates(sweep_value, scheduler)
    return float(agg[metric].mean)


def replication_values(result, sweep_value, scheduler, metric="system_throughput"):
    rows = result.select(sweep_value, scheduler)
    return np.array([getattr(r, metric) for r in sorted(rows, key=lambda r: r.replication)])
