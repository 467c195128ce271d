"""Correlated OFDM fading channel simulator.

Generates per-user, per-subcarrier rate traces for a frequency-selective
Rayleigh channel.  Taps follow an exponential power delay profile pinned to a
configured RMS delay spread; each tap evolves in time as a sum of equal-power
complex sinusoids whose Doppler shifts are drawn from the classic isotropic
scattering model, so the tap autocorrelation approaches J0(2*pi*fd*tau).
Per-subcarrier gains are the DFT of the taps, and rates follow the Shannon
map ``log2(1 + SNR)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ChannelConfig",
    "ChannelTrace",
    "DelayProfileError",
    "tap_delay_profile",
    "generate_trace",
    "normalized_doppler",
    "trace_to_csv",
    "trace_from_csv",
]

# sinusoids per tap in the sum-of-sinusoids fading model
NUM_SINUSOIDS = 16

# taps are dropped once the residual tail of the (untruncated) profile
# falls below this fraction of total power
TAIL_POWER_CUTOFF = 1e-3


class DelayProfileError(ValueError):
    """RMS delay spread not representable with the available taps."""


@dataclass(frozen=True)
class ChannelConfig:
    """Physical and simulation parameters for one trace.

    ``mean_snr_db`` holds one entry per user.  ``duration`` is the simulated
    wall-clock length; the trace has ``floor(duration / slot_duration)``
    slots.
    """

    num_users: int
    num_subcarriers: int
    doppler_hz: float
    rms_delay_spread: float
    mean_snr_db: tuple[float, ...]
    duration: float
    symbol_duration: float = 4e-6
    slot_duration: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mean_snr_db", tuple(float(x) for x in self.mean_snr_db))
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        s = self.num_subcarriers
        if s < 1 or (s & (s - 1)) != 0:
            raise ValueError("num_subcarriers must be a positive power of two")
        if self.doppler_hz < 0:
            raise ValueError("doppler_hz must be >= 0")
        if self.rms_delay_spread < 0:
            raise ValueError("rms_delay_spread must be >= 0")
        if self.duration <= 0 or self.slot_duration <= 0 or self.symbol_duration <= 0:
            raise ValueError("durations must be positive")
        if len(self.mean_snr_db) != self.num_users:
            raise ValueError("mean_snr_db needs exactly one entry per user")

    @property
    def num_slots(self) -> int:
        return int(math.floor(self.duration / self.slot_duration))

    @property
    def sample_period(self) -> float:
        """Tap spacing: one OFDM sample, symbol_duration / num_subcarriers."""
        return self.symbol_duration / self.num_subcarriers


@dataclass
class ChannelTrace:
    """Sequence of per-slot rate matrices, shape (num_slots, U, S), bits/symbol.

    ``freq_response`` carries the complex subcarrier gains for generated
    traces (unit mean power); traces imported from CSV have none.
    """

    rates: np.ndarray
    config: ChannelConfig
    freq_response: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        if self.rates.ndim != 3:
            raise ValueError("rates must have shape (num_slots, num_users, num_subcarriers)")
        n, u, s = self.rates.shape
        if (u, s) != (self.config.num_users, self.config.num_subcarriers):
            raise ValueError("rates shape does not match config")
        if n != self.config.num_slots:
            raise ValueError("slot count does not match config duration")
        if (self.rates < 0).any():
            raise ValueError("rates must be non-negative")

    @property
    def num_slots(self) -> int:
        return self.rates.shape[0]


def tap_delay_profile(rms_delay_spread: float, sample_period: float, max_taps: int) -> np.ndarray:
    """Tap powers of an exponential delay profile with the requested RMS width.

    Taps sit at integer multiples of ``sample_period``.  The decay constant is
    solved numerically so that the RMS delay of the truncated, renormalized
    profile equals ``rms_delay_spread``; truncation keeps taps until the tail
    holds less than 0.1% of the power, never more than ``max_taps``.

    Raises
    ------
    DelayProfileError
        If no decay constant achieves the requested RMS width with
        ``max_taps`` taps (profile too wide for the sampling grid).
    """
    if rms_delay_spread == 0.0:
        return np.array([1.0])

    target = rms_delay_spread / sample_period

    def profile(decay_samples: float) -> np.ndarray:
        rho = math.exp(-1.0 / decay_samples)
        if rho == 0.0:
            return np.array([1.0])
        taps = math.ceil(math.log(TAIL_POWER_CUTOFF) / math.log(rho))
        taps = min(max(taps, 1), max_taps)
        p = rho ** np.arange(taps)
        return p / p.sum()

    def rms_of(decay_samples: float) -> float:
        p = profile(decay_samples)
        lags = np.arange(len(p))
        mean = float(p @ lags)
        return math.sqrt(float(p @ (lags - mean) ** 2))

    lo, hi = 1e-9, 1e9
    if rms_of(hi) < target:
        raise DelayProfileError(
            f"rms_delay_spread={rms_delay_spread:g}s exceeds what {max_taps} taps "
            f"spaced {sample_period:g}s apart can represent"
        )
    # rms_of is increasing in the decay constant (up to tap-count jumps)
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if rms_of(mid) < target:
            lo = mid
        else:
            hi = mid
    return profile(math.sqrt(lo * hi))


def generate_trace(cfg: ChannelConfig) -> ChannelTrace:
    """Generate one seeded channel trace.

    Users are generated independently.  For each user, every tap is a sum of
    ``NUM_SINUSOIDS`` unit sinusoids with Doppler shifts ``fd*cos(theta)``,
    angles and phases uniform per tap, scaled so the total tap power is one.
    Subcarrier gains are the S-point DFT of the taps and therefore have unit
    mean power; ``SNR[i,k] = mean_snr_linear[i] * |H[i,k]|**2``.
    """
    powers = tap_delay_profile(cfg.rms_delay_spread, cfg.sample_period, cfg.num_subcarriers)
    num_taps = len(powers)
    n_slots = cfg.num_slots
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(n_slots) * cfg.slot_duration

    freq_response = np.empty((n_slots, cfg.num_users, cfg.num_subcarriers), dtype=complex)
    amplitude = np.sqrt(powers / NUM_SINUSOIDS)
    for i in range(cfg.num_users):
        theta = rng.uniform(0.0, 2.0 * np.pi, size=(num_taps, NUM_SINUSOIDS))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(num_taps, NUM_SINUSOIDS))
        omega = 2.0 * np.pi * cfg.doppler_hz * np.cos(theta)
        # taps[n, l] = amplitude_l * sum_m exp(j (omega_{l,m} t_n + phase_{l,m}))
        arg = omega[None, :, :] * t[:, None, None] + phase[None, :, :]
        taps = amplitude[None, :] * np.exp(1j * arg).sum(axis=2)
        freq_response[:, i, :] = np.fft.fft(taps, n=cfg.num_subcarriers, axis=1)

    mean_snr_linear = 10.0 ** (np.asarray(cfg.mean_snr_db) / 10.0)
    snr = mean_snr_linear[None, :, None] * np.abs(freq_response) ** 2
    rates = np.log2(1.0 + snr)
    return ChannelTrace(rates=rates, config=cfg, freq_response=freq_response)


def normalized_doppler(cfg: ChannelConfig, window_slots: int) -> float:
    """Window-normalized Doppler: doppler_hz * window_slots * slot_duration."""
    if window_slots < 1:
        raise ValueError("window_slots must be >= 1")
    return cfg.doppler_hz * window_slots * cfg.slot_duration


def trace_to_csv(trace: ChannelTrace, path: str | Path) -> None:
    """Write one row per (slot, user, subcarrier) with 9-significant-digit rates."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "user", "subcarrier", "rate_bits_per_symbol"])
        n_slots, num_users, num_subc = trace.rates.shape
        for n in range(n_slots):
            for i in range(num_users):
                for k in range(num_subc):
                    writer.writerow([n, i, k, format(trace.rates[n, i, k], ".9g")])


def trace_from_csv(path: str | Path, config: ChannelConfig | None = None) -> ChannelTrace:
    """Read a trace written by :func:`trace_to_csv`.

    Without an explicit ``config`` the physical metadata is unknown, so a
    placeholder config carrying only the dimensions is attached.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["slot", "user", "subcarrier", "rate_bits_per_symbol"]:
            raise ValueError(f"unexpected trace CSV header: {header}")
        entries = [(int(r[0]), int(r[1]), int(r[2]), float(r[3])) for r in reader]
    if not entries:
        raise ValueError("empty trace CSV")
    n_slots = max(e[0] for e in entries) + 1
    num_users = max(e[1] for e in entries) + 1
    num_subc = max(e[2] for e in entries) + 1
    rates = np.full((n_slots, num_users, num_subc), np.nan)
    for n, i, k, b in entries:
        rates[n, i, k] = b
    if np.isnan(rates).any():
        raise ValueError("trace CSV is missing (slot, user, subcarrier) rows")
    if config is None:
        config = ChannelConfig(
            num_users=num_users,
            num_subcarriers=num_subc,
            doppler_hz=0.0,
            rms_delay_spread=0.0,
            mean_snr_db=(0.0,) * num_users,
            duration=n_slots * 1e-3,
        )
    return ChannelTrace(rates=rates, config=config)
