"""Online service hosting at the edge: retro-renting policies, offline optima,
adversarial instances, workload generators and bound evaluators."""

from .core import (
    UNBOUNDED,
    ConfigError,
    CostBreakdown,
    CostParams,
    HostingSchedule,
    Instance,
    LevelTable,
    ServiceModel,
    Violation,
    evaluate_schedule,
    read_trace,
    validate,
    write_ledger,
    write_trace,
)
from .offline import brute_force_schedule, min_hosting_run, optimal_schedule
from .policies import (
    ERR,
    RR,
    TTL,
    AlphaRR,
    DeltaState,
    PolicyDecision,
    RetroWindow,
    Static,
    TtlConfig,
    alpha_rr_step,
    err_step,
    make_policy,
    parse_policy,
    rr_step,
    run_policy,
    static_policy,
    ttl_step,
)

__version__ = "0.1.0"
