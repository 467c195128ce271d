"""Slot-by-slot scheduling policies over a sliding throughput window.

Five policies share one driving loop: call :func:`schedule_slot` with the
current rate matrix and backlog flags, apply the returned allocation, then
:func:`update_state` with the realized per-slot throughputs.

The smoothing convention throughout is ``min(n, W)``: at slot ``n`` (1-based)
a user's baseline is the sum of its stored past throughputs divided by
``min(n, W)``, and the current slot's weighted rate enters with the same
divisor, so the smoothed throughput is a true average during warm-up.  With
per-user windows each user gets its own divisor.

Backlog handling comes in three modes: ``saturated`` (everyone always has
data), ``credit`` (idle slots count as zero throughput, so idle users build
credit), and ``busy_period`` (smoothing restarts at each busy period's first
slot).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .ensemble import EnsemblePolicy, ensemble_dispatch, max_rate_dispatch
from .solver import Allocation, SlotProblem, _grid_search, solve_pf_slot

__all__ = [
    "BacklogMode",
    "SchedulerKind",
    "BusyTrace",
    "WindowState",
    "schedule_slot",
    "update_state",
    "maxmin_slot",
    "solve_maxmin",
    "brute_force_maxmin",
]

UNBOUNDED = None  # window marker for infinite-window bookkeeping


class BacklogMode(str, enum.Enum):
    SATURATED = "saturated"
    CREDIT = "credit"
    BUSY_PERIOD = "busy_period"


@dataclass(frozen=True)
class SchedulerKind:
    """Scheduling policy selector.

    Use the constructors: ``pf_w1()``, ``pf_lookback(W)``,
    ``pf_infinite(policy)``, ``max_throughput()``, ``maxmin_lookback(W)``.
    """

    name: str
    window_slots: int | None = None
    policy: EnsemblePolicy | None = None
    backlog_mode: BacklogMode = BacklogMode.SATURATED

    def __post_init__(self):
        if self.name in ("pf_lookback", "maxmin_lookback"):
            if self.window_slots is None or self.window_slots < 1:
                raise ValueError(f"{self.name} requires window_slots >= 1")
        if self.name == "pf_infinite" and self.policy is None:
            raise ValueError("pf_infinite requires a precomputed EnsemblePolicy")

    @classmethod
    def pf_w1(cls, backlog_mode=BacklogMode.SATURATED) -> "SchedulerKind":
        return cls("pf_w1", backlog_mode=BacklogMode(backlog_mode))

    @classmethod
    def pf_lookback(cls, window_slots: int, backlog_mode=BacklogMode.SATURATED) -> "SchedulerKind":
        return cls("pf_lookback", window_slots=window_slots, backlog_mode=BacklogMode(backlog_mode))

    @classmethod
    def pf_infinite(cls, policy: EnsemblePolicy) -> "SchedulerKind":
        return cls("pf_infinite", policy=policy)

    @classmethod
    def max_throughput(cls) -> "SchedulerKind":
        return cls("max_throughput")

    @classmethod
    def maxmin_lookback(cls, window_slots: int, backlog_mode=BacklogMode.SATURATED) -> "SchedulerKind":
        return cls("maxmin_lookback", window_slots=window_slots, backlog_mode=BacklogMode(backlog_mode))


class BusyTrace:
    """Per-user backlog history and busy-period starts.

    ``busy_start[i]`` is the first slot of the maximal run of backlogged
    slots containing the current slot (undefined while idle).
    """

    def __init__(self, num_users: int):
        self.num_users = num_users
        self.busy_start = np.zeros(num_users, dtype=int)
        self.prev_backlogged = np.zeros(num_users, dtype=bool)
        self._seen_slot = 0

    def observe(self, slot: int, backlogged: np.ndarray) -> None:
        """Record slot's backlog flags; starts a busy period on idle->busy edges."""
        if slot == self._seen_slot:
            return  # already recorded (schedule_slot called again before update)
        newly_busy = backlogged & ~self.prev_backlogged
        self.busy_start[newly_busy] = slot
        self.prev_backlogged = backlogged.copy()
        self._seen_slot = slot


class WindowState:
    """Per-user sliding history of realized per-slot throughputs.

    ``window_slots`` may be a single int, a per-user sequence, or ``None``
    for unbounded (full-history averaging, used for infinite-window
    bookkeeping).  The buffer keeps at most ``W - 1`` past entries per user.
    """

    def __init__(self, num_users: int, window_slots=None):
        if num_users < 1:
            raise ValueError("num_users must be >= 1")
        self.num_users = num_users
        if window_slots is None or isinstance(window_slots, int):
            windows = [window_slots] * num_users
        else:
            windows = list(window_slots)
            if len(windows) != num_users:
                raise ValueError("window_slots must have one entry per user")
        for w in windows:
            if w is not None and w < 1:
                raise ValueError("window lengths must be >= 1")
        self.window_slots = windows
        self.slot_index = 1  # slot currently being scheduled, 1-based
        self._buffers = [
            deque(maxlen=(None if w is None else max(w - 1, 0))) for w in windows
        ]
        self.busy = BusyTrace(num_users)

    def divisor(self, user: int, mode: BacklogMode = BacklogMode.SATURATED) -> float:
        """Smoothing divisor min(n, W) (or the busy-period variant)."""
        n = self.slot_index
        w = self.window_slots[user]
        if mode is BacklogMode.BUSY_PERIOD:
            length = n - int(self.busy.busy_start[user]) + 1
            return float(min(length, n if w is None else min(w, n), n))
        return float(n if w is None else min(w, n))

    def baseline(self, user: int, mode: BacklogMode = BacklogMode.SATURATED) -> float:
        """Average past throughput a_i entering the slot's objective."""
        n = self.slot_index
        w = self.window_slots[user]
        buf = self._buffers[user]
        if mode is BacklogMode.BUSY_PERIOD:
            start = max(int(self.busy.busy_start[user]), 1 if w is None else n - w + 1)
            # buffer entry j holds the throughput of slot n - len(buf) + j
            first_slot = n - len(buf)
            total = sum(v for j, v in enumerate(buf) if first_slot + j >= start)
            return total / self.divisor(user, mode)
        return sum(buf) / self.divisor(user, mode)

    def record(self, throughputs: np.ndarray) -> None:
        """Append slot throughputs and advance to the next slot."""
        throughputs = np.asarray(throughputs, dtype=float)
        if throughputs.shape != (self.num_users,):
            raise ValueError("throughputs must have one entry per user")
        for i in range(self.num_users):
            if self._buffers[i].maxlen is None or self._buffers[i].maxlen > 0:
                self._buffers[i].append(float(throughputs[i]))
        self.slot_index += 1

    def past_window(self, user: int) -> list[float]:
        return list(self._buffers[user])


def _active_users(num_users: int, backlog) -> tuple[int, ...]:
    if backlog is None:
        return tuple(range(num_users))
    flags = np.asarray(backlog, dtype=bool)
    if flags.shape != (num_users,):
        raise ValueError("backlog must have one flag per user")
    active = tuple(int(i) for i in np.nonzero(flags)[0])
    if not active:
        raise ValueError("no backlogged users to schedule")
    return active


def _slot_problem(state: WindowState, rates_now: np.ndarray, active, mode: BacklogMode) -> SlotProblem:
    num_users = state.num_users
    baseline = np.zeros(num_users)
    divisor = np.ones(num_users)
    for i in active:
        baseline[i] = state.baseline(i, mode)
        divisor[i] = state.divisor(i, mode)
    return SlotProblem(
        rates=rates_now, baseline=baseline, window_divisor=divisor, active_set=active
    )


def schedule_slot(
    kind: SchedulerKind,
    state: WindowState,
    rates_now: np.ndarray,
    backlog=None,
    tol: float = 1e-6,
) -> Allocation:
    """Compute the slot's airtime allocation under the given policy.

    Only backlogged users are scheduled (``backlog=None`` means saturated).
    The slot's backlog flags are also recorded in the state's busy trace so
    busy-period smoothing can locate period starts.
    """
    rates_now = np.asarray(rates_now, dtype=float)
    if rates_now.shape[0] != state.num_users:
        raise ValueError("rates row count does not match state users")
    active = _active_users(state.num_users, backlog)
    flags = np.zeros(state.num_users, dtype=bool)
    flags[list(active)] = True
    state.busy.observe(state.slot_index, flags)

    if kind.name == "max_throughput":
        return max_rate_dispatch(rates_now, active_set=active)
    if kind.name == "pf_infinite":
        return ensemble_dispatch(kind.policy, rates_now, active_set=active)
    if kind.name == "pf_w1":
        prob = SlotProblem(rates=rates_now, active_set=active)
        return solve_pf_slot(prob, tol=tol).allocation
    if kind.name == "pf_lookback":
        scoped = _with_window(state, kind.window_slots)
        prob = _slot_problem(scoped, rates_now, active, kind.backlog_mode)
        return solve_pf_slot(prob, tol=tol).allocation
    if kind.name == "maxmin_lookback":
        scoped = _with_window(state, kind.window_slots)
        prob = _slot_problem(scoped, rates_now, active, kind.backlog_mode)
        allocation, _ = solve_maxmin(prob, tol=tol)
        return allocation
    raise ValueError(f"unknown scheduler kind {kind.name!r}")


def _with_window(state: WindowState, window_slots: int) -> WindowState:
    """State view; the window length must match how the state was built."""
    if any(w is not None and w != window_slots for w in state.window_slots):
        raise ValueError(
            "scheduler window does not match the WindowState's configured window"
        )
    return state


def update_state(state: WindowState, allocation: Allocation, rates_now: np.ndarray) -> WindowState:
    """Realize the slot: per-user throughput is the airtime-weighted rate sum."""
    rates_now = np.asarray(rates_now, dtype=float)
    throughputs = (allocation.airtime * rates_now).sum(axis=1)
    state.record(throughputs)
    return state


def solve_maxmin(prob: SlotProblem, tol: float = 1e-9) -> tuple[Allocation, float]:
    """Maximize the minimum smoothed throughput over the active users.

    The objective ``min_i (baseline_i + weighted_rate_i / divisor_i)`` with
    per-channel simplex constraints is a linear program; it is solved exactly
    (HiGHS), so ``tol`` only caps the accepted constraint violation, it is
    not an iteration target.  Returns the allocation and the achieved minimum.
    """
    active = list(prob.active_set)
    num_active = len(active)
    num_channels = prob.num_channels
    rates = prob.rates[active]
    baseline = prob.baseline[active]
    divisor = prob.window_divisor[active]

    # variables: airtime fractions (user-major), then the min-throughput t
    n_vars = num_active * num_channels + 1
    cost = np.zeros(n_vars)
    cost[-1] = -1.0
    a_ub = np.zeros((num_active, n_vars))
    b_ub = np.zeros(num_active)
    for row, _ in enumerate(active):
        a_ub[row, row * num_channels:(row + 1) * num_channels] = -rates[row] / divisor[row]
        a_ub[row, -1] = 1.0
        b_ub[row] = baseline[row]
    a_eq = np.zeros((num_channels, n_vars))
    for k in range(num_channels):
        a_eq[k, k:num_active * num_channels:num_channels] = 1.0
    result = linprog(
        cost,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=np.ones(num_channels),
        bounds=[(0, None)] * (n_vars - 1) + [(None, None)],
        method="highs",
        options={
            "primal_feasibility_tolerance": max(tol, 1e-10),
            "dual_feasibility_tolerance": max(tol, 1e-10),
        },
    )
    if not result.success:
        raise RuntimeError(f"max-min LP failed: {result.message}")
    sub = np.clip(result.x[:-1].reshape(num_active, num_channels), 0.0, None)
    # clipping can leave column sums a hair off one
    sub = sub / sub.sum(axis=0)[None, :]
    airtime = np.zeros((prob.num_users, num_channels))
    airtime[active] = sub
    value = float((baseline + (sub * rates).sum(axis=1) / divisor).min())
    return Allocation(airtime), value


def maxmin_slot(
    state: WindowState,
    rates_now: np.ndarray,
    backlog=None,
    tol: float = 1e-9,
    backlog_mode: BacklogMode = BacklogMode.SATURATED,
) -> Allocation:
    """Max-min fair allocation for the current slot (look-back smoothing)."""
    rates_now = np.asarray(rates_now, dtype=float)
    active = _active_users(state.num_users, backlog)
    flags = np.zeros(state.num_users, dtype=bool)
    flags[list(active)] = True
    state.busy.observe(state.slot_index, flags)
    prob = _slot_problem(state, rates_now, active, backlog_mode)
    allocation, _ = solve_maxmin(prob, tol=tol)
    return allocation


def brute_force_maxmin(prob: SlotProblem, grid_step: float) -> tuple[Allocation, float]:
    """Grid-enumeration oracle for the max-min objective (independent of the LP)."""
    value, best_idx, grids, _ = _grid_search(prob, grid_step, objective="maxmin")
    airtime = np.zeros((prob.num_users, prob.num_channels))
    active = list(prob.active_set)
    for k, grid in enumerate(grids):
        airtime[active, k] = grid[best_idx[k]]
    return Allocation(airtime), float(value)
