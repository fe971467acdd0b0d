"""Arrival and rent processes, trace ingestion, and adversarial instance builders."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats

from .core import (
    ConfigError,
    CostParams,
    HostingSchedule,
    Instance,
    evaluate_schedule,
    read_trace,
)
from .policies import Policy

# -- arrival processes ----------------------------------------------------


def _prob(name, v):
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"{name} must be a probability, got {v}")


def _rate(name, v):
    if not v >= 0:
        raise ConfigError(f"{name} must be >= 0, got {v}")


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        _prob("p", self.p)


@dataclass(frozen=True)
class Poisson:
    lam: float

    def __post_init__(self):
        _rate("lam", self.lam)


@dataclass(frozen=True)
class GilbertElliotConfig:
    """Two-state Markov chain modulating the arrival intensity."""

    p_high_to_low: float
    p_low_to_high: float
    rate_high: float
    rate_low: float
    emission: str = "poisson"  # or "bernoulli" (rates are then probabilities)

    def __post_init__(self):
        _prob("p_high_to_low", self.p_high_to_low)
        _prob("p_low_to_high", self.p_low_to_high)
        _rate("rate_high", self.rate_high)
        _rate("rate_low", self.rate_low)
        if self.emission not in ("poisson", "bernoulli"):
            raise ConfigError(f"emission must be poisson or bernoulli, got {self.emission!r}")
        if self.emission == "bernoulli":
            _prob("rate_high", self.rate_high)
            _prob("rate_low", self.rate_low)

    @property
    def stationary_high(self) -> float:
        s = self.p_high_to_low + self.p_low_to_high
        return 0.5 if s == 0 else self.p_low_to_high / s


@dataclass(frozen=True)
class Deterministic:
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if any(v < 0 for v in self.values):
            raise ConfigError("deterministic arrivals must be non-negative")


def gen_arrivals(kind, T: int, seed: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if isinstance(kind, Bernoulli):
        return (rng.random(T) < kind.p).astype(np.int64)
    if isinstance(kind, Poisson):
        return rng.poisson(kind.lam, T).astype(np.int64)
    if isinstance(kind, GilbertElliotConfig):
        return _gilbert_elliot(kind, T, rng)
    if isinstance(kind, Deterministic):
        if len(kind.values) != T:
            raise ConfigError(f"deterministic arrivals have length {len(kind.values)}, horizon is {T}")
        return np.array(kind.values, dtype=np.int64)
    if isinstance(kind, Trace):
        x = read_trace(kind.path).arrivals
        if len(x) < T:
            raise ConfigError(f"trace {kind.path} has {len(x)} slots, need {T}")
        return x[:T].copy()
    raise ConfigError(f"unknown arrival kind {kind!r}")


def _gilbert_elliot(cfg: GilbertElliotConfig, T, rng) -> np.ndarray:
    # state in slot 1 is drawn from the stationary law; emit, then transition
    u = rng.random(T)
    high = np.empty(T, dtype=bool)
    h = rng.random() < cfg.stationary_high
    for t in range(T):
        high[t] = h
        h = (u[t] >= cfg.p_high_to_low) if h else (u[t] < cfg.p_low_to_high)
    rate = np.where(high, cfg.rate_high, cfg.rate_low)
    if cfg.emission == "poisson":
        return rng.poisson(rate).astype(np.int64)
    return (rng.random(T) < rate).astype(np.int64)


# -- rent processes -------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    c: float


@dataclass(frozen=True)
class Uniform:
    c_min: float
    c_max: float

    def __post_init__(self):
        if not self.c_min <= self.c_max:
            raise ConfigError("uniform rents need c_min <= c_max")


@dataclass(frozen=True)
class ArmaRentConfig:
    """c_t = mean + ARMA(p, q) noise, clamped to [lo, hi]."""

    ar_coeffs: tuple[float, ...] = ()
    ma_coeffs: tuple[float, ...] = ()
    mean_c: float = 0.0
    innovation_sd: float = 1.0
    clamp: tuple[float, float] = (0.0, math.inf)
    seed: int | None = None
    burn_in: int = 200

    def __post_init__(self):
        object.__setattr__(self, "ar_coeffs", tuple(float(v) for v in self.ar_coeffs))
        object.__setattr__(self, "ma_coeffs", tuple(float(v) for v in self.ma_coeffs))
        object.__setattr__(self, "clamp", tuple(float(v) for v in self.clamp))
        if self.innovation_sd < 0:
            raise ConfigError("innovation_sd must be >= 0")
        if not self.clamp[0] <= self.clamp[1]:
            raise ConfigError("ARMA clamp must satisfy lo <= hi")
        if not self.is_stationary():
            warnings.warn(
                f"AR coefficients {self.ar_coeffs} are not stationary (a root of the AR polynomial lies on or inside the unit circle)",
                RuntimeWarning,
                stacklevel=3,
            )

    def is_stationary(self) -> bool:
        if not self.ar_coeffs:
            return True
        # 1 - phi_1 z - ... - phi_p z^p; numpy wants highest degree first
        poly = np.r_[[-v for v in self.ar_coeffs[::-1]], 1.0]
        return bool(np.all(np.abs(np.roots(poly)) > 1.0))

    def _filter(self):
        return np.r_[1.0, self.ma_coeffs], np.r_[1.0, [-v for v in self.ar_coeffs]]

    def stationary_sd(self, n=5000) -> float:
        b, a = self._filter()
        imp = np.zeros(n)
        imp[0] = 1.0
        psi = signal.lfilter(b, a, imp)
        return self.innovation_sd * float(np.sqrt(np.sum(psi**2)))

    def clamped_mean(self) -> float:
        """Mean of the stationary marginal after clamping (exact for Gaussian innovations)."""
        lo, hi = self.clamp
        sd = self.stationary_sd()
        m = self.mean_c
        if sd == 0:
            return float(min(max(m, lo), hi))
        dist = stats.norm(m, sd)
        # E[clip(Y, lo, hi)] = lo P(Y<lo) + hi P(Y>hi) + E[Y; lo<=Y<=hi]
        za, zb = (lo - m) / sd, (hi - m) / sd
        inner = m * (stats.norm.cdf(zb) - stats.norm.cdf(za)) + sd * (stats.norm.pdf(za) - stats.norm.pdf(zb))
        below = lo * dist.cdf(lo) if lo > -math.inf else 0.0
        above = hi * dist.sf(hi) if hi < math.inf else 0.0
        return float(below + inner + above)


@dataclass(frozen=True)
class DeterministicRents:
    values: tuple[float, ...]


@dataclass(frozen=True)
class Trace:
    """A `t,x,c` CSV; usable as an arrival source or a rent source."""

    path: str


# Illustrative ARMA(4,2) coefficients for rent traces. Not fitted to any data.
ILLUSTRATIVE_ARMA = dict(ar_coeffs=(0.5, 0.2, -0.1, 0.05), ma_coeffs=(0.3, 0.1), innovation_sd=0.05)


def gen_rents(kind, T: int, seed: int | None = None, clamp: tuple[float, float] | None = None) -> np.ndarray:
    """Rent sequence of length T. `clamp` (c_min, c_max) is enforced on traces."""
    if isinstance(kind, Constant):
        return np.full(T, float(kind.c))
    if isinstance(kind, Uniform):
        return np.random.default_rng(seed).uniform(kind.c_min, kind.c_max, T)
    if isinstance(kind, ArmaRentConfig):
        rng = np.random.default_rng(kind.seed if kind.seed is not None else seed)
        b, a = kind._filter()
        eps = rng.normal(0.0, kind.innovation_sd, T + kind.burn_in)
        y = signal.lfilter(b, a, eps)[kind.burn_in :]
        return np.clip(kind.mean_c + y, *kind.clamp)
    if isinstance(kind, DeterministicRents):
        if len(kind.values) != T:
            raise ConfigError(f"deterministic rents have length {len(kind.values)}, horizon is {T}")
        return np.array(kind.values, dtype=np.float64)
    if isinstance(kind, Trace):
        inst = read_trace(kind.path)
        if len(inst.rents) < T:
            raise ConfigError(f"trace {kind.path} has {len(inst.rents)} slots, need {T}")
        c = inst.rents[:T].copy()
        if clamp and (c.min() < clamp[0] or c.max() > clamp[1]):
            raise ConfigError(f"trace {kind.path} rents leave [{clamp[0]}, {clamp[1]}]")
        return c
    raise ConfigError(f"unknown rent kind {kind!r}")


def make_instance(arrival_gen, rent_gen, T: int, seed, clamp=None) -> Instance:
    """Draw one instance; `seed` is an int or a SeedSequence split into arrival and rent streams."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    a_seed, r_seed = ss.spawn(2)
    x = gen_arrivals(arrival_gen, T, a_seed)
    c = gen_rents(rent_gen, T, r_seed, clamp)
    return Instance(x, c)


# -- stochastic summaries -------------------------------------------------


@dataclass(frozen=True)
class StochasticParams:
    nu: float  # E[X]
    mu: float  # E[min(X, kappa)]
    c: float  # E[rent]
    p: float | None = None  # arrival probability, Bernoulli case

    def __post_init__(self):
        if not (0 <= self.mu <= self.nu + 1e-12):
            raise ConfigError(f"need 0 <= mu <= nu, got mu={self.mu}, nu={self.nu}")


def _capped_poisson_mean(lam, kappa):
    if kappa == math.inf:
        return lam
    k = np.arange(int(kappa))
    # E[min(X, kappa)] = sum_{k<kappa} P(X > k)
    return float(stats.poisson.sf(k, lam).sum())


def arrival_moments(kind, kappa: float) -> tuple[float, float]:
    """(nu, mu) = (E[X], E[min(X, kappa)]) for a stationary arrival process."""
    if isinstance(kind, Bernoulli):
        return kind.p, kind.p if kappa >= 1 else 0.0
    if isinstance(kind, Poisson):
        return kind.lam, _capped_poisson_mean(kind.lam, kappa)
    if isinstance(kind, GilbertElliotConfig):
        w = kind.stationary_high
        if kind.emission == "bernoulli":
            m = w * kind.rate_high + (1 - w) * kind.rate_low
            return m, m
        nu = w * kind.rate_high + (1 - w) * kind.rate_low
        mu = w * _capped_poisson_mean(kind.rate_high, kappa) + (1 - w) * _capped_poisson_mean(kind.rate_low, kappa)
        return nu, mu
    raise ConfigError(f"no stationary moments for {kind!r}")


def rent_mean(kind) -> float:
    if isinstance(kind, Constant):
        return kind.c
    if isinstance(kind, Uniform):
        return 0.5 * (kind.c_min + kind.c_max)
    if isinstance(kind, ArmaRentConfig):
        return kind.clamped_mean()
    raise ConfigError(f"no stationary mean for {kind!r}")


def stochastic_params(arrivals, rents, kappa: float) -> StochasticParams:
    nu, mu = arrival_moments(arrivals, kappa)
    p = arrivals.p if isinstance(arrivals, Bernoulli) else None
    return StochasticParams(nu, mu, rent_mean(rents), p)


# -- adversarial builders -------------------------------------------------


@dataclass
class AdversarialInstance:
    instance: Instance
    alt_schedule: HostingSchedule
    event_slot: int | None  # t_fetch / t_evict; None when the policy never acted
    flagged: bool = False  # policy never acted within T_max
    note: str = ""
    case: str = ""

    def ratio(self, policy: Policy, params: CostParams) -> float | None:
        """Policy cost over ALT cost; None when ALT costs nothing."""
        alt = evaluate_schedule(self.alt_schedule, self.instance, params).total
        pol = evaluate_schedule(policy.run(self.instance), self.instance, params).total
        return pol / alt if alt > 0 else None


def default_probe_horizon(params: CostParams) -> int:
    if not params.kappa > params.c_min:
        return 100
    return 10 * math.ceil(params.M / (params.kappa - params.c_min)) + 100


def _finite_kappa(params):
    if params.kappa == math.inf:
        raise ConfigError("adversarial builders need a finite kappa")
    return int(params.kappa)


def adversary_fetch_probe(policy: Policy, params: CostParams, T_max: int | None = None) -> AdversarialInstance:
    """Feed kappa arrivals at rent c_min until the policy first hosts fully.

    The emitted instance repeats that prefix and appends one empty slot, so the
    policy pays rent for the slot it fetched into. The comparison schedule hosts
    slots 1..t_fetch. If the policy never fetches, the instance is T_max slots of
    demand and the comparison schedule hosts throughout.
    """
    kappa = _finite_kappa(params)
    T_max = T_max or default_probe_horizon(params)
    policy.reset()
    if policy.level != 0:
        raise ConfigError("fetch probe needs a policy that starts unhosted")
    top = params.levels.top
    t_fetch = None
    for t in range(1, T_max + 1):
        policy.observe(kappa, params.c_min)
        if policy.level == top:
            t_fetch = t
            break
    if t_fetch is None:
        inst = Instance([kappa] * T_max, [params.c_min] * T_max)
        alt = HostingSchedule(np.full(T_max, top))
        return AdversarialInstance(inst, alt, None, True, "policy never fetched")
    inst = Instance([kappa] * t_fetch + [0], [params.c_min] * (t_fetch + 1))
    alt = HostingSchedule(np.r_[np.full(t_fetch, top), 0])
    return AdversarialInstance(inst, alt, t_fetch)


def adversary_evict_probe(policy: Policy, params: CostParams, T_max: int | None = None) -> AdversarialInstance:
    """Policy hosts in slot 1; feed empty slots at c_max until it evicts,
    then one slot of kappa arrivals at c_min. The comparison schedule hosts only
    that last slot."""
    kappa = _finite_kappa(params)
    T_max = T_max or default_probe_horizon(params)
    policy.reset()
    top = params.levels.top
    if policy.level != top:
        raise ConfigError("evict probe needs a policy that starts hosted")
    t_evict = None
    for t in range(1, T_max + 1):
        policy.observe(0, params.c_max)
        if policy.level != top:
            t_evict = t
            break
    if t_evict is None:
        inst = Instance([0] * T_max, [params.c_max] * T_max)
        alt = HostingSchedule(np.zeros(T_max, dtype=np.int64))
        return AdversarialInstance(inst, alt, None, True, "policy never evicted")
    inst = Instance([0] * t_evict + [kappa], [params.c_max] * t_evict + [params.c_min])
    alt = HostingSchedule(np.r_[np.zeros(t_evict, dtype=np.int64), top])
    return AdversarialInstance(inst, alt, t_evict)


def ttl_case(params: CostParams, L: int) -> str:
    if params.kappa < params.M + params.c_max:
        return "i"
    if L * params.c_max > params.M:
        return "ii"
    return "iii"


def adversary_ttl(params: CostParams, L: int, case_selector: str | None = None, u: int = 10) -> AdversarialInstance:
    """Instance that makes TTL with timeout L pay for every fetch.

    (i)   one request, then L empty slots; the comparison never hosts.
    (ii)  a kappa-burst, then L empty slots; the comparison hosts slot 1.
    (iii) u kappa-bursts spaced L+1 apart, horizon u(L+1); the comparison hosts
          from slot 1 through the last burst.
    Rent is c_max in every slot.
    """
    case = case_selector or ttl_case(params, L)
    kappa = _finite_kappa(params)
    top = params.levels.top
    if case == "i":
        T = L + 1
        x = [1] + [0] * L
        alt = np.zeros(T, dtype=np.int64)
    elif case == "ii":
        T = L + 1
        x = [kappa] + [0] * L
        alt = np.r_[top, np.zeros(L, dtype=np.int64)]
    elif case == "iii":
        if u < 1:
            raise ConfigError("u must be >= 1")
        T = u * (L + 1)
        x = np.zeros(T, dtype=np.int64)
        x[:: L + 1] = kappa
        last = (u - 1) * (L + 1) + 1
        alt = np.r_[np.full(last, top), np.zeros(T - last, dtype=np.int64)]
    else:
        raise ConfigError(f"unknown TTL case {case!r}")
    return AdversarialInstance(Instance(x, [params.c_max] * T), HostingSchedule(alt), None, case=case)
