import numpy as np
import pytest
from scipy.special import j0

from pfsched.channel import (
    ChannelConfig,
    DelayProfileError,
    generate_trace,
    normalized_doppler,
    tap_delay_profile,
    trace_from_csv,
    trace_to_csv,
)


def make_config(**overrides):
    base = dict(
        num_users=4,
        num_subcarriers=16,
        doppler_hz=30.0,
        rms_delay_spread=216.5e-9,
        mean_snr_db=(13.0, 13.0, 13.0, 13.0),
        duration=0.05,
        seed=123,
    )
    base.update(overrides)
    return ChannelConfig(**base)


class TestChannelConfig:
    def test_rejects_non_power_of_two_subcarriers(self):
        with pytest.raises(ValueError):
            make_config(num_subcarriers=12)

    def test_rejects_snr_list_of_wrong_length(self):
        with pytest.raises(ValueError):
            make_config(mean_snr_db=(13.0, 13.0))

    def test_rejects_negative_doppler(self):
        with pytest.raises(ValueError):
            make_config(doppler_hz=-1.0)

    def test_slot_count(self):
        assert make_config(duration=0.0505).num_slots == 50


class TestDelayProfile:
    @pytest.mark.parametrize("rms", [50e-9, 216.5e-9, 1083e-9])
    def test_rms_matches_target(self, rms):
        ts = 4e-6 / 16
        powers = tap_delay_profile(rms, ts, 16)
        lags = np.arange(len(powers))
        mean = powers @ lags
        got = np.sqrt(powers @ (lags - mean) ** 2) * ts
        assert got == pytest.approx(rms, rel=1e-6)
        assert powers.sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_rms_is_single_tap(self):
        assert tap_delay_profile(0.0, 250e-9, 16).tolist() == [1.0]

    def test_unrepresentable_profile_rejected(self):
        with pytest.raises(DelayProfileError):
            tap_delay_profile(3e-6, 250e-9, 16)


class TestGenerateTrace:
    def test_deterministic_given_seed(self):
        a = generate_trace(make_config())
        b = generate_trace(make_config())
        assert np.array_equal(a.rates, b.rates)

    def test_seed_changes_trace(self):
        a = generate_trace(make_config())
        b = generate_trace(make_config(seed=124))
        assert not np.array_equal(a.rates, b.rates)

    def test_rates_non_negative(self):
        assert (generate_trace(make_config()).rates >= 0).all()

    def test_flat_fading_is_exactly_frequency_flat(self):
        trace = generate_trace(make_config(rms_delay_spread=0.0))
        spread = trace.rates.max(axis=2) - trace.rates.min(axis=2)
        assert spread.max() == 0.0

    def test_selective_fading_is_not_flat(self):
        trace = generate_trace(make_config())
        spread = trace.rates.max(axis=2) - trace.rates.min(axis=2)
        assert spread.max() > 0.1

    def test_power_normalization_one_second_trace(self):
        # reference setup: 4 users at 13 dB, 1 s, fd = 30 Hz
        trace = generate_trace(make_config(duration=1.0))
        mean_power = float(np.mean(np.abs(trace.freq_response) ** 2))
        assert abs(mean_power - 1.0) <= 0.05

    def test_monotone_rate_map(self):
        trace = generate_trace(make_config(duration=0.01))
        snr = 2.0 ** trace.rates - 1.0
        order = np.argsort(snr.ravel())
        assert (np.diff(trace.rates.ravel()[order]) >= 0).all()


class TestTemporalCorrelation:
    def test_autocorrelation_matches_clarke_model(self):
        # averaged over 100 independent 2-user traces; lags up to 10 ms
        cfg0 = make_config(num_users=2, mean_snr_db=(13.0, 13.0), duration=0.04)
        max_lag = 10
        acc = np.zeros(max_lag + 1, dtype=complex)
        count = 0
        for seed in range(100):
            trace = generate_trace(make_config(
                num_users=2, mean_snr_db=(13.0, 13.0), duration=0.04, seed=seed,
            ))
            h = trace.freq_response
            for lag in range(max_lag + 1):
                acc[lag] += np.mean(h[lag:] * np.conj(h[: h.shape[0] - lag]))
            count += 1
        corr = (acc / count).real / (acc[0].real / count)
        lags_s = np.arange(max_lag + 1) * cfg0.slot_duration
        expected = j0(2 * np.pi * 30.0 * lags_s)
        assert np.abs(corr - expected).max() <= 0.1


class TestFrequencyCorrelation:
    def test_adjacent_subcarrier_correlation_decreases_with_delay_spread(self):
        values = []
        for rms in (0.0, 216.5e-9, 1083e-9):
            per_trace = []
            for seed in range(100):
                trace = generate_trace(make_config(
                    num_users=1, mean_snr_db=(13.0,), duration=0.03, rms_delay_spread=rms, seed=seed,
                ))
                mag = np.abs(trace.freq_response[:, 0, :])
                left = mag[:, :-1].ravel()
                right = mag[:, 1:].ravel()
                per_trace.append(np.corrcoef(left, right)[0, 1])
            values.append(float(np.mean(per_trace)))
        assert values[0] > values[1] > values[2]


class TestNormalizedDoppler:
    def test_reference_operating_point(self):
        assert normalized_doppler(make_config(), 200) == pytest.approx(6.0)

    def test_zero_doppler(self):
        assert normalized_doppler(make_config(doppler_hz=0.0), 1234) == 0.0

    def test_single_slot_window(self):
        assert normalized_doppler(make_config(), 1) == pytest.approx(0.03)

    def test_rejects_zero_window(self):
        with pytest.raises(ValueError):
            normalized_doppler(make_config(), 0)


class TestTraceCsv:
    def test_round_trip(self, tmp_path):
        trace = generate_trace(make_config(duration=0.003))
        path = tmp_path / "trace.csv"
        trace_to_csv(trace, path)
        loaded = trace_from_csv(path)
        assert loaded.rates.shape == trace.rates.shape
        # 9 significant digits on the way out
        assert np.abs(loaded.rates - trace.rates).max() <= 1e-7 * max(1.0, trace.rates.max())

    def test_header(self, tmp_path):
        trace = generate_trace(make_config(duration=0.002))
        path = tmp_path / "trace.csv"
        trace_to_csv(trace, path)
        first = path.read_text().splitlines()[0]
        assert first == "slot,user,subcarrier,rate_bits_per_symbol"

    def test_rejects_missing_rows(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "slot,user,subcarrier,rate_bits_per_symbol\n0,0,0,1.0\n0,0,2,1.0\n"
        )
        with pytest.raises(ValueError):
            trace_from_csv(path)
