"""Per-slot proportional-fair airtime optimization.

Maximizes ``sum_i log(baseline_i + (1/divisor_i) * sum_k P[i,k] * rates[i,k])``
over the product of per-channel simplices (each channel's airtime fractions
sum to one).  The gradient of the objective is the per-user, per-channel
shadow price ``rates[i,k] / (divisor_i * baseline_i + sum_k P[i,k]*rates[i,k])``;
at the optimum every channel's airtime is held only by users whose shadow
price on that channel is maximal, which is the certificate checked here.

The solver itself is cyclic exact coordinate ascent over channels: with all
other channels fixed, the optimal split of one channel is a water-filling
problem with a closed-form solution.  Each pass equalizes shadow prices
exactly on the channel it touches, so support identification is exact and
convergence to the certificate tolerance is fast.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SlotProblem",
    "Allocation",
    "SolveReport",
    "SolverConvergenceError",
    "shadow_price",
    "shadow_price_matrix",
    "kkt_residual",
    "pf_utility",
    "solve_pf_slot",
    "solve_pf_w1",
    "brute_force_pf",
    "simplex_grid",
]

SUPPORT_EPS = 1e-9
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000


class SolverConvergenceError(RuntimeError):
    """Raised when the iteration cap is hit; carries the best-so-far report."""

    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SlotProblem:
    """One slot's PF program.

    ``window_divisor`` is the smoothing divisor min(n, W); a scalar applies to
    every user, a sequence gives per-user divisors (per-user window lengths).
    ``active_set`` restricts the optimization to a subset of users; everyone
    else receives zero airtime.
    """

    rates: np.ndarray
    baseline: np.ndarray | None = None
    window_divisor: float | np.ndarray = 1.0
    active_set: tuple[int, ...] | None = None

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 2:
            raise ValueError("rates must be a (num_users, num_channels) matrix")
        if (rates < 0).any() or not np.isfinite(rates).all():
            raise ValueError("rates must be finite and non-negative")
        object.__setattr__(self, "rates", rates)
        num_users = rates.shape[0]

        baseline = np.zeros(num_users) if self.baseline is None else np.asarray(self.baseline, dtype=float)
        if baseline.shape != (num_users,):
            raise ValueError("baseline must have one entry per user")
        if (baseline < 0).any():
            raise ValueError("baseline must be non-negative")
        object.__setattr__(self, "baseline", baseline)

        divisor = np.broadcast_to(np.asarray(self.window_divisor, dtype=float), (num_users,)).copy()
        if (divisor < 1).any():
            raise ValueError("window_divisor must be >= 1")
        object.__setattr__(self, "window_divisor", divisor)

        if self.active_set is None:
            active = tuple(range(num_users))
        else:
            active = tuple(sorted(set(int(i) for i in self.active_set)))
            if not active:
                raise ValueError("active_set must be non-empty")
            if active[0] < 0 or active[-1] >= num_users:
                raise ValueError("active_set contains out-of-range user indices")
        object.__setattr__(self, "active_set", active)

    @property
    def num_users(self) -> int:
        return self.rates.shape[0]

    @property
    def num_channels(self) -> int:
        return self.rates.shape[1]


@dataclass
class Allocation:
    """Airtime-fraction matrix P, one column per channel summing to one."""

    airtime: np.ndarray

    def __post_init__(self):
        self.airtime = np.asarray(self.airtime, dtype=float)
        if self.airtime.ndim != 2:
            raise ValueError("airtime must be a (num_users, num_channels) matrix")

    def check_feasible(self, active_set=None, atol: float = 1e-9) -> None:
        """Raise if entries are negative, columns do not sum to one, or
        inactive users hold airtime."""
        if (self.airtime < 0).any():
            raise ValueError("airtime has negative entries")
        col = self.airtime.sum(axis=0)
        if np.abs(col - 1.0).max() > atol:
            raise ValueError(f"column sums deviate from 1 by {np.abs(col - 1.0).max():.2e}")
        if active_set is not None:
            inactive = np.setdiff1d(np.arange(self.airtime.shape[0]), np.asarray(active_set))
            if inactive.size and np.abs(self.airtime[inactive]).max() > 0:
                raise ValueError("inactive users hold airtime")


@dataclass
class SolveReport:
    allocation: Allocation
    utility: float
    kkt_residual: float
    iterations: int


def _denominators(prob: SlotProblem, airtime: np.ndarray) -> np.ndarray:
    """Per-user ``divisor*baseline + sum_k P*rates`` (the shadow-price denominator)."""
    return prob.window_divisor * prob.baseline + (airtime * prob.rates).sum(axis=1)


def pf_utility(prob: SlotProblem, allocation: Allocation, active=None) -> float:
    """Objective value ``sum log(baseline + weighted_rate/divisor)`` over active users."""
    active = list(prob.active_set if active is None else active)
    denom = _denominators(prob, allocation.airtime)[active]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(denom) - np.log(prob.window_divisor[active])))


def shadow_price(prob: SlotProblem, allocation: Allocation, user: int, channel: int) -> float:
    """Marginal utility of user's airtime on a channel.

    Raises ZeroDivisionError when the user has zero baseline and currently
    zero weighted rate (the log utility is unbounded there).
    """
    denom = float(_denominators(prob, allocation.airtime)[user])
    if denom == 0.0:
        raise ZeroDivisionError(f"user {user} has zero baseline and zero allocated rate")
    return float(prob.rates[user, channel]) / denom


def shadow_price_matrix(prob: SlotProblem, airtime: np.ndarray) -> np.ndarray:
    denom = _denominators(prob, airtime)
    with np.errstate(divide="ignore", invalid="ignore"):
        prices = prob.rates / denom[:, None]
    # zero-rate entries price at 0 even for degenerate denominators
    prices[prob.rates == 0.0] = 0.0
    return prices


def kkt_residual(prob: SlotProblem, airtime: np.ndarray, support_eps: float = SUPPORT_EPS) -> float:
    """Max over channels of (best shadow price) - (worst supported shadow price).

    Zero residual means every channel is held only by maximal-price users,
    which for this concave program certifies global optimality.
    """
    active = list(prob.active_set)
    prices = shadow_price_matrix(prob, airtime)[active]
    sub = airtime[active]
    supported = sub > support_eps
    worst = np.where(supported, prices, np.inf).min(axis=0)
    best = prices.max(axis=0)
    has_support = supported.any(axis=0)
    gaps = np.where(has_support, best - worst, 0.0)
    return float(max(gaps.max(initial=0.0), 0.0))


def _waterfill_channel(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Maximize ``sum_i log(alpha_i + beta_i x_i)`` over the simplex.

    Closed form: active users receive ``1/lam - alpha_i/beta_i`` with the
    water level lam chosen so the shares sum to one.  Users with beta == 0
    get nothing (unless every beta is zero, where the split is immaterial
    and a uniform one is returned).
    """
    num = alpha.shape[0]
    x = np.zeros(num)
    pos = beta > 0
    if not pos.any():
        return np.full(num, 1.0 / num)
    idx = np.nonzero(pos)[0]
    rho = alpha[idx] / beta[idx]
    order = np.argsort(rho, kind="stable")
    rho_sorted = rho[order]
    cumulative = np.cumsum(rho_sorted)
    count = np.arange(1, idx.size + 1)
    level = count / (1.0 + cumulative)
    included = rho_sorted < 1.0 / level
    last = int(np.nonzero(included)[0].max())
    lam = level[last]
    shares = np.maximum(1.0 / lam - rho_sorted, 0.0)
    shares[last + 1:] = 0.0
    x[idx[order]] = shares
    return x


def _waterfill_channel_py(alpha: list, beta: list, num: int) -> list:
    """Scalar-arithmetic twin of :func:`_waterfill_channel` for small user
    counts, where numpy call overhead dominates the solve."""
    pairs = sorted((alpha[i] / beta[i], i) for i in range(num) if beta[i] > 0)
    if not pairs:
        return [1.0 / num] * num
    cumulative = 0.0
    lam = None
    last = 0
    for j, (rho, _) in enumerate(pairs, start=1):
        cumulative += rho
        level = j / (1.0 + cumulative)
        if rho < 1.0 / level:
            lam = level
            last = j
    inv = 1.0 / lam
    x = [0.0] * num
    for j in range(last):
        rho, i = pairs[j]
        share = inv - rho
        if share > 0.0:
            x[i] = share
    return x


def solve_pf_slot(
    prob: SlotProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SolveReport:
    """Solve the slot PF program to a KKT residual of at most ``tol``.

    Users in the active set with zero baseline and all-zero rates cannot be
    optimized (their utility is -inf for every allocation); they are dropped
    with a warning and receive no airtime.

    Raises
    ------
    SolverConvergenceError
        If the residual is still above ``tol`` after ``max_iter`` sweeps; the
        exception carries the best-so-far report.
    ValueError
        If every active user is degenerate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    active = np.array(prob.active_set, dtype=int)
    degenerate = [
        int(i) for i in active
        if prob.baseline[i] == 0.0 and not (prob.rates[i] > 0).any()
    ]
    if degenerate:
        warnings.warn(
            f"dropping degenerate users {degenerate} (zero baseline, all-zero rates)",
            stacklevel=2,
        )
        active = np.array([i for i in active if i not in degenerate], dtype=int)
        if active.size == 0:
            raise ValueError("no optimizable users: all active users are degenerate")

    rates = prob.rates[active]
    offsets = (prob.window_divisor * prob.baseline)[active]
    num_active, num_channels = rates.shape

    reduced = SlotProblem(
        rates=rates,
        baseline=prob.baseline[active],
        window_divisor=prob.window_divisor[active],
    )
    airtime_sub, sweeps, residual = _coordinate_ascent(
        reduced, rates, offsets, tol, max_iter
    )

    airtime = np.zeros((prob.num_users, num_channels))
    airtime[active] = airtime_sub
    report = SolveReport(
        allocation=Allocation(airtime),
        utility=pf_utility(prob, Allocation(airtime), active=active),
        kkt_residual=residual,
        iterations=sweeps,
    )
    if residual > tol:
        raise SolverConvergenceError(
            f"KKT residual {residual:.3e} > tol {tol:.3e} after {max_iter} sweeps", report
        )
    return report


def _check_cadence(sweep: int) -> bool:
    """Residual checks cost as much as a sweep; thin them out as sweeps grow."""
    return sweep <= 10 or sweep % 5 == 0


def _worst_pair(reduced: SlotProblem, airtime: np.ndarray) -> tuple[int, int] | None:
    """Users straddling the largest per-channel certificate violation."""
    prices = shadow_price_matrix(reduced, airtime)
    supported = airtime > SUPPORT_EPS
    worst = np.where(supported, prices, np.inf).min(axis=0)
    gaps = np.where(supported.any(axis=0), prices.max(axis=0) - worst, 0.0)
    channel = int(np.argmax(gaps))
    if gaps[channel] <= 0.0:
        return None
    high = int(prices[:, channel].argmax())
    low_prices = np.where(supported[:, channel], prices[:, channel], np.inf)
    low = int(low_prices.argmin())
    if high == low:
        return None
    return high, low


def _resolve_pair(rates, offsets, airtime, first: int, second: int) -> None:
    """Exactly re-split the combined airtime of two users across all channels.

    With everyone else fixed, the two-user subproblem is solved by sorting
    channels on the rate ratio: the higher-ratio side goes entirely to the
    first user, the lower side to the second, and at most one boundary
    channel is split (closed form).  This removes the slow pairwise exchange
    that cyclic per-channel updates exhibit when several channels carry
    nearly proportional rates for the same pair.
    """
    budget = airtime[first] + airtime[second]
    own = rates[first]
    other = rates[second]
    live = budget > 0.0

    to_first = live & (own > 0.0) & (other <= 0.0)
    to_second = live & (other > 0.0) & (own <= 0.0)
    contested = live & (own > 0.0) & (other > 0.0)

    base_first = offsets[first] + float((budget[to_first] * own[to_first]).sum())
    base_second = offsets[second] + float((budget[to_second] * other[to_second]).sum())

    idx = np.nonzero(contested)[0]
    if idx.size == 0:
        airtime[first, to_first] = budget[to_first]
        airtime[second, to_first] = 0.0
        airtime[second, to_second] = budget[to_second]
        airtime[first, to_second] = 0.0
        return
    order = idx[np.argsort(-(own[idx] / other[idx]), kind="stable")]
    gain_first = budget[order] * own[order]
    gain_second = budget[order] * other[order]
    # prefix[m]: first user fully holds channels before the split position m
    prefix = np.concatenate([[0.0], np.cumsum(gain_first)])
    suffix = np.concatenate([np.cumsum(gain_second[::-1])[::-1], [0.0]])

    c = own[order]
    d = other[order]
    s = budget[order]
    u_first_base = base_first + prefix[:-1]
    u_second_base = base_second + suffix[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        split = (c * (u_second_base + d * s) - d * u_first_base) / (2.0 * c * d)
    split = np.clip(split, 0.0, s)
    u_first = u_first_base + c * split
    u_second = u_second_base + d * (s - split)
    with np.errstate(divide="ignore"):
        values = np.log(u_first) + np.log(u_second)
    if not np.isfinite(values).any():
        return
    best = int(np.argmax(values))

    shares = np.where(np.arange(order.size) < best, s, 0.0)
    shares[best] = split[best]
    airtime[first, to_first] = budget[to_first]
    airtime[second, to_first] = 0.0
    airtime[second, to_second] = budget[to_second]
    airtime[first, to_second] = 0.0
    airtime[first, order] = shares
    airtime[second, order] = s - shares


def _coordinate_ascent(reduced, rates, offsets, tol, max_iter):
    """Cyclic exact per-channel water-filling until the certificate holds."""
    num_active, num_channels = rates.shape
    if num_active <= 8:
        return _coordinate_ascent_py(reduced, rates, offsets, tol, max_iter)
    airtime = np.full((num_active, num_channels), 1.0 / num_active)
    denom = offsets + (airtime * rates).sum(axis=1)
    sweeps = 0
    residual = np.inf
    for sweeps in range(1, max_iter + 1):
        for k in range(num_channels):
            column = rates[:, k]
            alpha = denom - airtime[:, k] * column
            airtime[:, k] = _waterfill_channel(alpha, column)
            denom = alpha + airtime[:, k] * column
        if _check_cadence(sweeps) or sweeps == max_iter:
            # refresh against incremental rounding drift
            denom = offsets + (airtime * rates).sum(axis=1)
            residual = kkt_residual(reduced, airtime)
            if residual <= tol:
                break
            pair = _worst_pair(reduced, airtime)
            if pair is not None:
                _resolve_pair(rates, offsets, airtime, *pair)
                denom = offsets + (airtime * rates).sum(axis=1)
    return airtime, sweeps, residual


def _coordinate_ascent_py(reduced, rates, offsets, tol, max_iter):
    """Scalar-arithmetic sweeps; identical iteration to the numpy path."""
    num_active, num_channels = rates.shape
    columns = rates.T.tolist()
    share_cols = [[1.0 / num_active] * num_active for _ in range(num_channels)]
    offs = offsets.tolist()
    denom = [
        offs[i] + sum(columns[k][i] * share_cols[k][i] for k in range(num_channels))
        for i in range(num_active)
    ]
    sweeps = 0
    residual = np.inf
    for sweeps in range(1, max_iter + 1):
        for k in range(num_channels):
            beta = columns[k]
            shares = share_cols[k]
            alpha = [denom[i] - shares[i] * beta[i] for i in range(num_active)]
            new = _waterfill_channel_py(alpha, beta, num_active)
            share_cols[k] = new
            for i in range(num_active):
                denom[i] = alpha[i] + new[i] * beta[i]
        if _check_cadence(sweeps) or sweeps == max_iter:
            airtime = np.asarray(share_cols).T.copy()
            residual = kkt_residual(reduced, airtime)
            if residual <= tol:
                return airtime, sweeps, residual
            pair = _worst_pair(reduced, airtime)
            if pair is not None:
                _resolve_pair(rates, offsets, airtime, *pair)
                share_cols = airtime.T.tolist()
            # refresh against incremental rounding drift
            denom = (offsets + (airtime * rates).sum(axis=1)).tolist()
    airtime = np.asarray(share_cols).T.copy()
    return airtime, sweeps, kkt_residual(reduced, airtime)


def solve_pf_w1(rates: np.ndarray, tol: float = DEFAULT_TOL) -> SolveReport:
    """Single-slot PF with no throughput history (window of one slot)."""
    return solve_pf_slot(SlotProblem(rates=rates), tol=tol)


def simplex_grid(num_users: int, step: float) -> np.ndarray:
    """All splits of one channel among ``num_users`` at resolution ``step``.

    Returns an array of shape (num_points, num_users) whose rows sum to one.
    """
    if not 0 < step <= 0.5:
        raise ValueError("step must be in (0, 0.5]")
    ticks = int(round(1.0 / step))
    if num_users == 1:
        return np.array([[1.0]])
    if num_users == 2:
        first = np.arange(ticks + 1, dtype=float)
        return np.column_stack([first, ticks - first]) / ticks
    combos = []
    for parts in itertools.product(range(ticks + 1), repeat=num_users - 1):
        rest = ticks - sum(parts)
        if rest >= 0:
            combos.append(parts + (rest,))
    return np.asarray(combos, dtype=float) / ticks


# memory ceiling for the exhaustive search (number of candidate points)
_BRUTE_FORCE_CAP = 2 * 10**8


def brute_force_pf(prob: SlotProblem, grid_step: float) -> SolveReport:
    """Exhaustive search over the discretized product of simplices.

    Testing oracle: independent of the iterative solver.  Restricted to at
    most 3 users and 3 channels, and rejects grids whose candidate count
    exceeds an internal memory cap.
    """
    values, best_idx, grids, count = _grid_search(prob, grid_step, objective="pf")
    airtime = np.zeros((prob.num_users, prob.num_channels))
    active = list(prob.active_set)
    for k, grid in enumerate(grids):
        airtime[active, k] = grid[best_idx[k]]
    alloc = Allocation(airtime)
    return SolveReport(
        allocation=alloc,
        utility=pf_utility(prob, alloc),
        kkt_residual=kkt_residual(prob, airtime),
        iterations=count,
    )


def _grid_search(prob: SlotProblem, grid_step: float, objective: str):
    """Shared enumeration for the grid oracles; returns best value and indices."""
    active = list(prob.active_set)
    num_active = len(active)
    num_channels = prob.num_channels
    if num_active > 3 or num_channels > 3:
        raise ValueError("brute force is capped at 3 users and 3 channels")
    if not 0 < grid_step <= 0.5:
        raise ValueError("grid_step must be in (0, 0.5]")
    ticks = int(round(1.0 / grid_step))
    per_channel = ticks + 1 if num_active == 2 else (ticks + 1) * (ticks + 2) // 2
    if num_active == 1:
        per_channel = 1
    if per_channel ** num_channels > _BRUTE_FORCE_CAP:
        raise ValueError(f"grid of {per_channel ** num_channels} candidates exceeds the size cap")
    grids = [simplex_grid(num_active, grid_step) for _ in range(num_channels)]
    total = int(np.prod([g.shape[0] for g in grids]))

    offsets = (prob.window_divisor * prob.baseline)[active]
    rates = prob.rates[active]
    if num_active == 2 and num_channels == 2:
        best_val, best_flat = _grid_search_2x2(prob, grids, offsets, rates, active, objective)
        return best_val, best_flat, grids, total
    # per-channel candidate contributions to each user's weighted rate
    contribs = [grids[k] * rates[:, k][None, :] for k in range(num_channels)]

    # broadcast the sum of contributions across the candidate product,
    # chunked on the first channel's axis to bound memory
    chunk = max(1, int(2e7 // max(1, total // grids[0].shape[0])))
    best_val = -np.inf
    best_flat = None
    shape_rest = tuple(g.shape[0] for g in grids[1:])
    for start in range(0, grids[0].shape[0], chunk):
        part = contribs[0][start:start + chunk]
        total_rate = part.reshape(part.shape[0], *([1] * len(shape_rest)), num_active)
        for k in range(1, num_channels):
            expand = [1] * (num_channels - 1)
            expand[k - 1] = grids[k].shape[0]
            total_rate = total_rate + contribs[k].reshape(1, *expand, num_active)
        denom = offsets + total_rate
        if objective == "pf":
            with np.errstate(divide="ignore"):
                vals = np.log(denom).sum(axis=-1)
        else:
            vals = (denom / prob.window_divisor[active]).min(axis=-1)
        flat = int(np.argmax(vals))
        val = float(vals.flat[flat])
        if val > best_val:
            best_val = val
            idx = np.unravel_index(flat, vals.shape)
            best_flat = (idx[0] + start,) + tuple(idx[1:])
    return best_val, best_flat, grids, total


def _grid_search_2x2(prob, grids, offsets, rates, active, objective):
    """Two-user, two-channel enumeration with in-place accumulation (the
    fine-step oracle grids get large; the generic path's temporaries dominate)."""
    first = grids[0][:, 0]
    second = grids[1][:, 0]
    div = prob.window_divisor[list(active)]
    best_val = -np.inf
    best_flat = None
    chunk = max(1, int(4e6 // second.size))
    for start in range(0, first.size, chunk):
        s1 = first[start:start + chunk][:, None]
        u_a = s1 * rates[0, 0] + second[None, :] * rates[0, 1]
        u_a += offsets[0]
        u_b = (1.0 - s1) * rates[1, 0] + (1.0 - second[None, :]) * rates[1, 1]
        u_b += offsets[1]
        if objective == "pf":
            with np.errstate(divide="ignore"):
                np.log(u_a, out=u_a)
                np.log(u_b, out=u_b)
            u_a += u_b
            vals = u_a
        else:
            u_a /= div[0]
            u_b /= div[1]
            vals = np.minimum(u_a, u_b, out=u_a)
        flat = int(np.argmax(vals))
        val = float(vals.flat[flat])
        if val > best_val:
            best_val = val
            idx = np.unravel_index(flat, vals.shape)
            best_flat = (idx[0] + start, idx[1])
    return best_val, best_flat
