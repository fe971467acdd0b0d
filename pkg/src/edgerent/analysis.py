"""Closed-form bounds, empirical ratios, stochastic efficiency, histograms."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .core import ConfigError, CostParams, HostingSchedule, Instance, ServiceModel, evaluate_schedule
from .generators import StochasticParams, make_instance, stochastic_params
from .offline import optimal_schedule
from .policies import Policy, make_policy, parse_policy

log = logging.getLogger(__name__)

# -- worst-case bounds ----------------------------------------------------


def rr_cr_upper(M: float, kappa: float, c_min: float) -> float:
    """Competitive-ratio upper bound for RR / E-RR."""
    if not kappa > c_min:
        raise ConfigError(f"bound needs kappa > c_min (kappa={kappa}, c_min={c_min})")
    if M <= 0:
        raise ConfigError("M must be > 0")
    if kappa == math.inf:
        return math.inf
    return 4 + 2 * (kappa - c_min) / M - 3 * c_min / kappa


def rr_cr_applicable(params: CostParams) -> bool:
    """The RR bound assumes c_max <= M + kappa and kappa > c_min."""
    return params.kappa > params.c_min and params.c_max <= params.M + params.kappa


def alpha_rr_cr_upper(M: float, alpha: float, g_alpha: float) -> float:
    """Competitive-ratio upper bound for alpha-RR with single-request slots."""
    return max(4 + 2 / M, 4 + 1 / M + max(1 / M, (1 - g_alpha) / (M * alpha)))


def alpha_rr_six_applies(M: float, alpha: float, g_alpha: float) -> bool:
    """Whether the alpha-RR bound is at most 6, i.e. (1-g)/alpha <= 2M-1."""
    return M >= 1 and (1 - g_alpha) / alpha <= 2 * M - 1


def online_lb(M: float, kappa: float, c_min: float, c_max: float, branch: str = "not_hosting_first") -> float:
    """Lower bound on any deterministic online policy's competitive ratio.

    branch "not_hosting_first": the policy starts unhosted (fetch probe).
    branch "hosting_first": the policy starts hosted (evict probe).
    """
    if branch == "not_hosting_first":
        if kappa >= c_min * (c_min + M) / M:
            return 1 + kappa / (c_min + M)
        return kappa / c_min
    if branch == "hosting_first":
        return 1 + (kappa + c_max - c_min) / (c_min + M)
    raise ConfigError(f"unknown branch {branch!r}")


def ttl_case_of(M: float, kappa: float, c_max: float, L: int) -> str:
    if kappa < M + c_max:
        return "i"
    return "ii" if L * c_max > M else "iii"


def ttl_lb(M: float, kappa: float, c_max: float, L: int, case: str | None = None) -> float:
    """Lower bound on TTL's competitive ratio; `case` overrides the automatic case choice.

    Case "iii" is a supremum over the number of bursts; finite constructions
    reach it only when L*c_max = M.
    """
    if L < 1:
        raise ConfigError("L must be >= 1")
    case = case or ttl_case_of(M, kappa, c_max, L)
    if case == "i":
        return 1 + M + L * c_max
    if case == "ii":
        return (kappa + M + L * c_max) / (M + c_max)
    if case == "iii":
        return (kappa + L * c_max + M) / (L * c_max + c_max)
    raise ConfigError(f"unknown TTL case {case!r}")


def opt_on_lower(params: CostParams, stoch: StochasticParams, flavor: str = "two_level") -> float:
    """Per-slot expected-cost lower bound for any causal policy.

    two_level:   min{c + nu - mu, nu}
    alpha_level: min over table levels of a*c + g(a)*mu + (nu - mu); with
                 single-request slots (mu = nu = p) and three levels this is
                 min{c, alpha*c + g(alpha)*p, p}.
    """
    nu, mu, c = stoch.nu, stoch.mu, stoch.c
    if flavor == "two_level":
        return min(c + nu - mu, nu)
    if flavor == "alpha_level":
        a = params.levels.fractions
        g = params.levels.forward_costs
        return float(np.min(a * c + g * mu) + (nu - mu))
    raise ConfigError(f"unknown flavor {flavor!r}")


def ttl_stochastic_gap(M: float, c: float, mu: float, p0: float, L: int, t: int) -> float:
    """Per-slot expected-cost excess of TTL over the causal optimum at slot t."""
    k = min(L, t - 1)
    q = p0**k
    return M * (1 - p0) * q + (c - mu) * (1 - q)


@dataclass(frozen=True)
class GapBound:
    value: float
    lam: float | None
    branch: str  # "mu>c", "mu<c" or "vacuous"


def _gap_mu_gt_c(lam, M, kappa, c_min, c_max, mu, c, nu):
    w = (kappa + c_max - c_min) ** 2
    d = mu - c
    r = math.exp(-2 * d * d / w)
    head = math.ceil(lam * M / d) * math.exp(-2 * d * d * (M / c) / kappa**2) / (1 - r)
    tail = math.exp(-2 * (lam - 1) ** 2 * M * d / (lam * w))
    return c + nu - mu + (M + mu) * (head + tail)


def _gap_mu_lt_c(lam, M, kappa, c_min, c_max, mu, c, nu):
    w = (kappa + c_max - c_min) ** 2
    d = c - mu
    r = math.exp(-2 * d * d / w)
    first = math.exp(-2 * (lam - 1) ** 2 * d * M / (lam * w))
    second = (c + M) * math.ceil(2 * lam * M / d) * math.exp(-2 * d * d * (M / (kappa - c)) / w) / (1 - r)
    return nu + first + second


def rr_stochastic_gap_bound(M, kappa, c_min, c_max, mu, c, nu) -> GapBound:
    """Upper bound on RR's expected per-slot cost under i.i.d. arrivals and rents,
    minimised over the free parameter lam > 1 (grid 1.01..50 step 0.01, then a
    bounded local refinement)."""
    if mu == c:
        return GapBound(math.inf, None, "vacuous")
    if mu > c:
        f, branch = _gap_mu_gt_c, "mu>c"
    else:
        if not kappa > c:
            return GapBound(math.inf, None, "vacuous")
        f, branch = _gap_mu_lt_c, "mu<c"
    args = (M, kappa, c_min, c_max, mu, c, nu)

    def h(lam):
        try:
            return f(lam, *args)
        except (OverflowError, ZeroDivisionError):
            return math.inf

    grid = np.round(np.arange(1.01, 50.0 + 1e-9, 0.01), 2)
    vals = np.array([h(x) for x in grid])
    i = int(np.argmin(vals))
    best_lam, best = float(grid[i]), float(vals[i])
    lo, hi = float(grid[max(i - 1, 0)]), float(grid[min(i + 1, len(grid) - 1)])
    if hi > lo:
        r = optimize.minimize_scalar(h, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
        if r.success and r.fun < best:
            best_lam, best = float(r.x), float(r.fun)
    return GapBound(best, best_lam, branch)


def bounds_report(params: CostParams, L: int | None = None) -> dict:
    """Every closed-form bound applicable to these parameters."""
    M, k, lo, hi = params.M, params.kappa, params.c_min, params.c_max
    out: dict = {"M": M, "kappa": "unbounded" if k == math.inf else k, "c_min": lo, "c_max": hi}
    if k > lo:
        out["rr_cr_upper"] = rr_cr_upper(M, k, lo)
        out["rr_cr_applicable"] = rr_cr_applicable(params)
    if k != math.inf:
        out["online_lb_not_hosting_first"] = online_lb(M, k, lo, hi, "not_hosting_first")
        out["online_lb_hosting_first"] = online_lb(M, k, lo, hi, "hosting_first")
        if L is not None:
            out["ttl_lb"] = ttl_lb(M, k, hi, L)
            out["ttl_case"] = ttl_case_of(M, k, hi, L)
    if len(params.levels) == 3:
        alpha, g = params.levels.entries[1]
        out["alpha"] = alpha
        out["g_alpha"] = g
        out["alpha_rr_cr_upper"] = alpha_rr_cr_upper(M, alpha, g)
        out["alpha_rr_six_applies"] = alpha_rr_six_applies(M, alpha, g)
        out["intermediate_level_unused"] = alpha + g >= 1
    return out


# -- empirical ratios -----------------------------------------------------


@dataclass(frozen=True)
class RatioReport:
    policy: str
    policy_cost: float
    reference: str
    reference_cost: float
    empirical_ratio: float | None
    bound: float | None
    bound_kind: str
    instance_digest: str
    passed: bool | None = None  # None when no applicable bound or ratio undefined
    note: str = ""

    def row(self) -> dict:
        return {
            "instance_digest": self.instance_digest,
            "policy": self.policy,
            "cost": self.policy_cost,
            "reference_cost": self.reference_cost,
            "ratio": self.empirical_ratio,
            "bound": self.bound,
            "pass": self.passed,
        }


RATIO_COLUMNS = ["instance_digest", "policy", "cost", "reference_cost", "ratio", "bound", "pass"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def ratio_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RATIO_COLUMNS)
    for r in reports:
        row = r.row()
        w.writerow([_cell(row[k]) for k in RATIO_COLUMNS])
    return buf.getvalue()


def upper_bound_for(policy_name: str, params: CostParams) -> tuple[float | None, str]:
    """Applicable worst-case upper bound for a policy, as (value, kind)."""
    try:
        kind, _ = parse_policy(policy_name)
    except ConfigError:
        return None, "none"
    if kind in ("err", "rr") and rr_cr_applicable(params) and params.kappa != math.inf:
        return rr_cr_upper(params.M, params.kappa, params.c_min), "rr_cr_upper"
    # the alpha-RR bound is stated for single-request slots (kappa = 1)
    if kind == "alpha-rr" and len(params.levels) == 3 and params.kappa == 1:
        alpha, g = params.levels.entries[1]
        if alpha + g < 1:
            return alpha_rr_cr_upper(params.M, alpha, g), "alpha_rr_cr_upper"
    return None, "none"


def empirical_ratio(
    policy: Policy,
    reference,
    instance: Instance,
    params: CostParams,
    model: ServiceModel | None = None,
    bound: tuple[float | None, str] | None = None,
) -> RatioReport:
    """Ratio of policy cost to reference cost on one instance.

    `reference` is "opt" for the offline optimum or another Policy. The bound
    defaults to the policy's worst-case upper bound when one applies.
    """
    model = model or ServiceModel.model1()
    pol = evaluate_schedule(policy.run(instance), instance, params, model).total
    if isinstance(reference, str):
        if reference != "opt":
            raise ConfigError(f"unknown reference {reference!r}")
        ref_name = "opt"
        ref = optimal_schedule(instance, params)[1].total
    else:
        ref_name = reference.name
        ref = evaluate_schedule(reference.run(instance), instance, params, model).total
    b, kind = bound if bound is not None else upper_bound_for(policy.name, params)
    digest = instance.digest()
    if ref <= 0:
        return RatioReport(policy.name, pol, ref_name, ref, None, b, kind, digest, None, "reference cost is zero")
    ratio = pol / ref
    passed = None if b is None else ratio <= b * (1 + 1e-9)
    return RatioReport(policy.name, pol, ref_name, ref, ratio, b, kind, digest, passed)


# -- stochastic efficiency ------------------------------------------------


@dataclass(frozen=True)
class EfficiencyReport:
    """sigma_hat is an upper estimate: its denominator lower-bounds OPT-ON."""

    policy: str
    T: int
    mean_policy_cost: float  # total over the horizon, averaged over replications
    se_policy_cost: float
    lower_bound_opt_on: float  # per slot
    sigma_hat: float
    se_sigma_hat: float
    replications: int
    seed: int

    @property
    def per_slot_cost(self) -> float:
        return self.mean_policy_cost / self.T

    def to_dict(self):
        return asdict(self)


def replication_streams(seed: int, replications: int):
    """Per replication: (instance seed, service-model seed)."""
    out = []
    for ss in np.random.SeedSequence(seed).spawn(replications):
        inst_ss, m_ss = ss.spawn(2)
        out.append((inst_ss, int(m_ss.generate_state(1, np.uint64)[0])))
    return out


def _replicate(args):
    spec, arr, rent, params, T, model, (inst_ss, m_seed) = args
    inst = make_instance(arr, rent, T, inst_ss, (params.c_min, params.c_max))
    sched = make_policy(spec, params).run(inst)
    return evaluate_schedule(sched, inst, params, ServiceModel.from_number(model, m_seed)).total


def replicate_costs(spec, arrival_gen, rent_gen, params, T, replications, seed, model=1, jobs=1) -> np.ndarray:
    """Total cost of `spec` on independent seeded replications, in replication order."""
    tasks = [(spec, arrival_gen, rent_gen, params, T, model, st) for st in replication_streams(seed, replications)]
    if jobs > 1 and replications > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return np.array(list(ex.map(_replicate, tasks, chunksize=max(1, replications // (4 * jobs)))))
    return np.array([_replicate(t) for t in tasks])


def efficiency_mc(
    policy: str,
    arrival_gen,
    rent_gen,
    params: CostParams,
    T: int,
    replications: int,
    seed: int,
    model: int = 1,
    jobs: int = 1,
    flavor: str | None = None,
) -> EfficiencyReport:
    stoch = stochastic_params(arrival_gen, rent_gen, params.kappa)
    flavor = flavor or ("two_level" if params.two_level else "alpha_level")
    lb = opt_on_lower(params, stoch, flavor)
    if lb <= 0:
        raise ConfigError("OPT-ON lower bound is zero; efficiency ratio undefined")
    costs = replicate_costs(policy, arrival_gen, rent_gen, params, T, replications, seed, model, jobs)
    mean = float(costs.mean())
    se = float(costs.std(ddof=1) / math.sqrt(len(costs))) if len(costs) > 1 else 0.0
    return EfficiencyReport(policy, T, mean, se, lb, mean / (T * lb), se / (T * lb), replications, seed)


# -- histograms -----------------------------------------------------------


@dataclass(frozen=True)
class HostingHistogram:
    counts: tuple[int, ...]

    @property
    def T(self) -> int:
        return sum(self.counts)

    def as_dict(self):
        return {f"level{i}": n for i, n in enumerate(self.counts)}


def hosting_histogram(schedule: HostingSchedule, n_levels: int | None = None) -> HostingHistogram:
    idx = schedule.level_index
    K = n_levels or (int(idx.max()) + 1 if len(idx) else 1)
    return HostingHistogram(tuple(int(v) for v in np.bincount(idx, minlength=K)))


def to_json(obj) -> str:
    """Deterministic JSON (sorted keys, trailing newline)."""

    def default(o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if hasattr(o, "to_dict"):
            return o.to_dict()
        raise TypeError(type(o))

    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return str(o)
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(obj), indent=2, sort_keys=True, default=default) + "\n"
