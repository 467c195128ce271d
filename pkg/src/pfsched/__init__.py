"""Proportional-fair airtime scheduling over multi-channel time-varying links.

Subpackages cover the full experiment pipeline: a correlated OFDM fading
simulator (:mod:`pfsched.channel`), the per-slot PF optimizer with KKT
certification (:mod:`pfsched.solver`), the precomputable ensemble-average
policy for delay-tolerant traffic (:mod:`pfsched.ensemble`), slot-driven
schedulers (:mod:`pfsched.scheduling`), throughput/fairness metrics
(:mod:`pfsched.metrics`), and the replication harness (:mod:`pfsched.harness`).
"""

from .channel import (
    ChannelConfig,
    ChannelTrace,
    DelayProfileError,
    generate_trace,
    normalized_doppler,
    trace_from_csv,
    trace_to_csv,
)
from .ensemble import (
    EnsemblePolicy,
    FixedPointError,
    RateDistribution,
    StateSpaceError,
    VirtualChannel,
    build_virtual_channels,
    ensemble_dispatch,
    load_policy,
    max_rate_dispatch,
    save_policy,
    solve_ensemble_discrete,
    solve_fixed_point,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    ExperimentRow,
    emit_csv,
    load_config,
    run_experiment,
)
from .metrics import ThroughputSeries, aggregate, jain_index, system_throughput
from .scheduling import (
    BacklogMode,
    BusyTrace,
    SchedulerKind,
    WindowState,
    brute_force_maxmin,
    maxmin_slot,
    schedule_slot,
    solve_maxmin,
    update_state,
)
from .solver import (
    Allocation,
    SlotProblem,
    SolveReport,
    SolverConvergenceError,
    brute_force_pf,
    kkt_residual,
    pf_utility,
    shadow_price,
    solve_pf_slot,
    solve_pf_w1,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
