"""Ensemble-average proportional fairness for delay-tolerant traffic.

When the application window is effectively unbounded, the PF objective is the
log-sum of *expected* per-user throughputs over the stationary rate law, and
the whole policy can be precomputed offline:

* Discrete rate laws: every joint rate realization of the user/channel matrix
  becomes a "virtual channel" whose per-user rate is the realized rate times
  the realization probability.  The resulting deterministic PF program is
  solved once, yielding a lookup table from realization to airtime split.
* Continuous rate laws (rates ``log2(1+SNR)`` with exponentially distributed
  SNR): channel sharing has probability zero, so the optimal policy is
  "give each channel to the user with the largest rate-to-expected-throughput
  ratio".  The expected throughputs solve the fixed-point system

      T_i = S * integral b f_i(b) prod_{j != i} F_j(b T_j / T_i) db,

  evaluated here by adaptive Gauss-Legendre quadrature on the SNR axis and a
  damped Picard iteration with step backtracking.

Runtime dispatch is then a table lookup (discrete) or an argmax (continuous).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss

from .solver import Allocation, SlotProblem, solve_pf_slot

__all__ = [
    "RateDistribution",
    "VirtualChannel",
    "EnsemblePolicy",
    "StateSpaceError",
    "FixedPointError",
    "build_virtual_channels",
    "solve_ensemble_discrete",
    "solve_fixed_point",
    "ensemble_dispatch",
    "max_rate_dispatch",
    "save_policy",
    "load_policy",
    "realization_key",
]

# joint realizations allowed in the discrete (virtual-channel) path
STATE_SPACE_CAP = 10_000

# exponential-SNR integrals are truncated at the 1 - 1e-9 quantile
_TAIL_QUANTILE = 1e-9


class StateSpaceError(ValueError):
    """Discrete joint state space exceeds the supported size."""


class FixedPointError(RuntimeError):
    """Fixed-point iteration failed to reach tolerance; carries the residual."""

    def __init__(self, message: str, throughputs: np.ndarray, residual: float):
        super().__init__(message)
        self.throughputs = throughputs
        self.residual = residual


@dataclass(frozen=True)
class RateDistribution:
    """Marginal per-slot rate law of one user on one channel.

    Either a finite set of (rate, probability) pairs, or the continuous law
    induced by ``rate = log2(1 + SNR)`` with SNR exponentially distributed
    with the given linear mean.
    """

    kind: str
    rates: np.ndarray | None = None
    probs: np.ndarray | None = None
    mean_snr: float | None = None

    @classmethod
    def discrete(cls, rates, probs) -> "RateDistribution":
        rates = np.asarray(rates, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if rates.ndim != 1 or rates.shape != probs.shape or rates.size < 1:
            raise ValueError("rates and probs must be matching non-empty vectors")
        if (rates < 0).any():
            raise ValueError("rates must be non-negative")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        return cls(kind="discrete", rates=rates, probs=probs)

    @classmethod
    def exponential_snr(cls, mean_snr: float) -> "RateDistribution":
        if mean_snr <= 0:
            raise ValueError("mean_snr must be positive")
        return cls(kind="continuous", mean_snr=float(mean_snr))

    @classmethod
    def from_mean_snr_db(cls, mean_snr_db: float) -> "RateDistribution":
        return cls.exponential_snr(10.0 ** (mean_snr_db / 10.0))

    @property
    def num_rates(self) -> int:
        if self.kind != "discrete":
            raise ValueError("num_rates is defined for discrete distributions only")
        return int(self.rates.size)

    def rate_cdf(self, x) -> np.ndarray:
        """P(rate <= x)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "discrete":
            return (self.probs[None, :] * (self.rates[None, :] <= x[..., None])).sum(axis=-1)
        # rate <= x  <=>  snr <= 2**x - 1
        with np.errstate(over="ignore"):
            out = -np.expm1(-np.expm1(x * math.log(2.0)) / self.mean_snr)
        return np.where(x < 0, 0.0, out)

    def mean_rate(self) -> float:
        if self.kind == "discrete":
            return float(self.rates @ self.probs)
        upper = self.mean_snr * math.log(1.0 / _TAIL_QUANTILE)
        mu = self.mean_snr

        def integrand(snr):
            return np.log2(1.0 + snr) * np.exp(-snr / mu) / mu

        return _adaptive_gauss_legendre(integrand, 0.0, upper, 1e-12)


@dataclass(frozen=True)
class VirtualChannel:
    """One (physical channel, joint rate realization) pair.

    ``virtual_rates[i]`` is the realized rate of user i on this physical
    channel weighted by the realization probability.
    """

    physical_channel: int
    realization: np.ndarray          # (U, S) realized rate matrix
    probability: float
    virtual_rates: np.ndarray        # (U,)
    rate_indices: tuple[tuple[int, ...], ...]  # (U, S) indices into each user's rate list


@dataclass(frozen=True)
class EnsemblePolicy:
    """Precomputed expected throughputs driving the runtime argmax dispatch."""

    expected_throughputs: np.ndarray
    residual: float
    provenance: str

    def __post_init__(self):
        t = np.asarray(self.expected_throughputs, dtype=float)
        if (t <= 0).any():
            raise ValueError("expected throughputs must be positive")
        object.__setattr__(self, "expected_throughputs", t)

    @property
    def num_users(self) -> int:
        return self.expected_throughputs.size


def realization_key(rate_indices) -> str:
    """Canonical table key: user-major, comma-joined rate indices."""
    flat = [str(int(idx)) for row in rate_indices for idx in np.atleast_1d(row)]
    return ",".join(flat)


def build_virtual_channels(
    dists: list[RateDistribution], num_subcarriers: int
) -> list[VirtualChannel]:
    """Enumerate all joint realizations as virtual channels.

    Users and physical channels are assumed independent; each user's marginal
    applies identically to every physical channel.  The joint state space has
    ``prod_i M_i ** S`` realizations and each contributes one virtual channel
    per physical channel.
    """
    if any(d.kind != "discrete" for d in dists):
        raise ValueError("virtual channels require discrete distributions")
    num_users = len(dists)
    sizes = [d.num_rates for d in dists]
    n_realizations = int(np.prod([m ** num_subcarriers for m in sizes], dtype=object))
    if n_realizations > STATE_SPACE_CAP:
        raise StateSpaceError(
            f"{n_realizations} joint realizations exceed the cap of {STATE_SPACE_CAP}"
        )

    per_entry = [range(m) for m in sizes for _ in range(num_subcarriers)]
    channels: list[VirtualChannel] = []
    for combo in itertools.product(*per_entry):
        idx = np.asarray(combo, dtype=int).reshape(num_users, num_subcarriers)
        realization = np.empty((num_users, num_subcarriers))
        prob = 1.0
        for i, dist in enumerate(dists):
            realization[i] = dist.rates[idx[i]]
            prob *= float(np.prod(dist.probs[idx[i]]))
        key_idx = tuple(tuple(int(v) for v in row) for row in idx)
        for k in range(num_subcarriers):
            channels.append(
                VirtualChannel(
                    physical_channel=k,
                    realization=realization,
                    probability=prob,
                    virtual_rates=realization[:, k] * prob,
                    rate_indices=key_idx,
                )
            )
    return channels


def solve_ensemble_discrete(
    dists: list[RateDistribution],
    num_subcarriers: int,
    tol: float = 1e-9,
) -> tuple[EnsemblePolicy, dict[str, np.ndarray]]:
    """Solve the discrete ensemble PF program exactly.

    Returns the policy (expected throughputs are the optimal per-user totals
    over all virtual channels) together with the dispatch table mapping each
    realization key to its airtime matrix.
    """
    channels = build_virtual_channels(dists, num_subcarriers)
    num_users = len(dists)
    virtual_rates = np.column_stack([vc.virtual_rates for vc in channels])
    report = solve_pf_slot(SlotProblem(rates=virtual_rates), tol=tol)
    airtime = report.allocation.airtime

    expected = (airtime * virtual_rates).sum(axis=1)
    table: dict[str, np.ndarray] = {}
    for col, vc in enumerate(channels):
        key = realization_key(vc.rate_indices)
        if key not in table:
            table[key] = np.zeros((num_users, num_subcarriers))
        table[key][:, vc.physical_channel] = airtime[:, col]
    policy = EnsemblePolicy(
        expected_throughputs=expected,
        residual=report.kkt_residual,
        provenance="discrete-exact",
    )
    return policy, table


# 24-point panels; adaptivity by interval halving
_GL_NODES, _GL_WEIGHTS = leggauss(24)


def _panel(f, lo: float, hi: float) -> float:
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    return half * float(_GL_WEIGHTS @ f(mid + half * _GL_NODES))


def _adaptive_gauss_legendre(f, lo: float, hi: float, tol: float) -> float:
    """Adaptive Gauss-Legendre: split panels until the halved estimate agrees."""
    stack = [(lo, hi, _panel(f, lo, hi))]
    total = 0.0
    while stack:
        a, b, whole = stack.pop()
        mid = 0.5 * (a + b)
        left = _panel(f, a, mid)
        right = _panel(f, mid, b)
        if abs(left + right - whole) <= tol * max(1.0, abs(left + right)) or (b - a) < 1e-12:
            total += left + right
        else:
            stack.append((a, mid, left))
            stack.append((mid, b, right))
    return total


def solve_fixed_point(
    dists: list[RateDistribution],
    num_subcarriers: int,
    tol: float = 1e-6,
    damping: float = 0.5,
    max_iter: int = 1000,
    quad_tol: float = 1e-10,
) -> EnsemblePolicy:
    """Expected throughputs under the continuous-rate argmax policy.

    Damped Picard iteration on ``T <- (1-damping) T + damping G(T)``; the map
    has strong negative feedback in each coordinate, so the applied step is
    halved whenever the residual grows (plain damping can oscillate when user
    mean SNRs are far apart).  Convergence is declared at relative residual
    ``max_i |G_i(T)-T_i| / T_i <= tol``.
    """
    if any(d.kind != "continuous" for d in dists):
        raise ValueError("fixed point requires continuous distributions")
    if tol <= 0 or not 0 < damping <= 1:
        raise ValueError("tol must be positive and damping in (0, 1]")
    num_users = len(dists)
    means = np.array([d.mean_snr for d in dists])

    def gain_map(t: np.ndarray) -> np.ndarray:
        out = np.empty(num_users)
        for i in range(num_users):
            mu = means[i]
            upper = mu * math.log(1.0 / _TAIL_QUANTILE)

            def integrand(snr, i=i, mu=mu):
                rate = np.log2(1.0 + snr)
                value = rate * np.exp(-snr / mu) / mu
                for j in range(num_users):
                    if j != i:
                        value = value * dists[j].rate_cdf(rate * t[j] / t[i])
                return value

            out[i] = num_subcarriers * _adaptive_gauss_legendre(integrand, 0.0, upper, quad_tol)
        return out

    t = np.array([num_subcarriers * d.mean_rate() / num_users for d in dists])
    step = damping
    gains = gain_map(t)
    residual = float(np.max(np.abs(gains - t) / t))
    iterations = 0
    while residual > tol:
        if iterations >= max_iter:
            raise FixedPointError(
                f"residual {residual:.3e} > tol {tol:.3e} after {max_iter} iterations",
                throughputs=t,
                residual=residual,
            )
        candidate = (1.0 - step) * t + step * gains
        gains_new = gain_map(candidate)
        residual_new = float(np.max(np.abs(gains_new - candidate) / candidate))
        iterations += 1
        if residual_new > residual and step > 1e-3:
            step *= 0.5
            continue
        t, gains, residual = candidate, gains_new, residual_new
    return EnsemblePolicy(
        expected_throughputs=t, residual=residual, provenance="continuous-fixed-point"
    )


def _argmax_split(scores: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Per channel, all airtime to the maximal score; exact ties split evenly."""
    scores = np.where(active[:, None], scores, -np.inf)
    top = scores.max(axis=0)
    winners = scores == top[None, :]
    return winners / winners.sum(axis=0)[None, :]


def _active_mask(num_users: int, active_set) -> np.ndarray:
    if active_set is None:
        return np.ones(num_users, dtype=bool)
    mask = np.zeros(num_users, dtype=bool)
    mask[np.asarray(list(active_set), dtype=int)] = True
    if not mask.any():
        raise ValueError("active_set must be non-empty")
    return mask


def ensemble_dispatch(policy: EnsemblePolicy, rates_now: np.ndarray, active_set=None) -> Allocation:
    """Per channel, serve the user maximizing rate / expected throughput."""
    rates_now = np.asarray(rates_now, dtype=float)
    if not np.isfinite(rates_now).all():
        raise ValueError("rates must be finite")
    if rates_now.shape[0] != policy.num_users:
        raise ValueError("rates row count does not match policy users")
    active = _active_mask(rates_now.shape[0], active_set)
    scores = rates_now / policy.expected_throughputs[:, None]
    return Allocation(_argmax_split(scores, active))


def max_rate_dispatch(rates_now: np.ndarray, active_set=None) -> Allocation:
    """Per channel, serve the user with the highest instantaneous rate."""
    rates_now = np.asarray(rates_now, dtype=float)
    if not np.isfinite(rates_now).all():
        raise ValueError("rates must be finite")
    active = _active_mask(rates_now.shape[0], active_set)
    return Allocation(_argmax_split(rates_now, active))


def save_policy(
    policy: EnsemblePolicy,
    path: str | Path,
    allocation_table: dict[str, np.ndarray] | None = None,
) -> None:
    """Serialize a policy (and optional discrete dispatch table) to JSON."""
    payload = {
        "expected_throughputs": [float(x) for x in policy.expected_throughputs],
        "provenance": policy.provenance,
        "residual": float(policy.residual),
    }
    if allocation_table is not None:
        payload["allocation_table"] = {
            key: [float(x) for x in np.asarray(matrix).ravel()]
            for key, matrix in allocation_table.items()
        }
        any_matrix = next(iter(allocation_table.values()), None)
        if any_matrix is not None:
            payload["table_shape"] = list(np.asarray(any_matrix).shape)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_policy(path: str | Path) -> tuple[EnsemblePolicy, dict[str, np.ndarray] | None]:
    with open(path) as fh:
        payload = json.load(fh)
    policy = EnsemblePolicy(
        expected_throughputs=np.asarray(payload["expected_throughputs"], dtype=float),
        residual=float(payload["residual"]),
        provenance=str(payload["provenance"]),
    )
    table = None
    if "allocation_table" in payload:
        shape = tuple(payload.get("table_shape", (policy.num_users, -1)))
        table = {
            key: np.asarray(values, dtype=float).reshape(shape)
            for key, values in payload["allocation_table"].items()
        }
    return policy, table
