"""Online hosting policies.

Every policy observes slot t's (x_t, c_t) after serving it and picks the level
for slot t+1. The pure ``*_step`` functions mirror each rule one slot at a time;
the policy classes keep the same rule as mutable state and add fast batch loops.
Two-level policies (E-RR, RR, TTL, never) run on any table using its bottom and
top entries.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, CostParams, HostingSchedule, Instance

log = logging.getLogger(__name__)

# Tolerance used for threshold comparisons (E-RR/RR ties, alpha-RR argmin ties),
# scaled by max(1, M). Keeps decisions stable against summation-order rounding.
TIE_EPS = 1e-9


def _eps(params: CostParams) -> float:
    return TIE_EPS * max(1.0, params.M)


@dataclass(frozen=True)
class PolicyDecision:
    next_level_index: int
    diagnostic: str | None = None


@dataclass(frozen=True)
class DeltaState:
    delta: float = 0.0


@dataclass(frozen=True)
class RetroWindow:
    """Observations (x_bar, c) for slots t_recent+1 .. t."""

    t_recent: int = 0
    pairs: tuple[tuple[float, float], ...] = ()

    @property
    def t(self) -> int:
        return self.t_recent + len(self.pairs)

    def push(self, xbar: float, c: float) -> "RetroWindow":
        return RetroWindow(self.t_recent, self.pairs + ((xbar, c),))

    def reset(self) -> "RetroWindow":
        return RetroWindow(self.t, ())


@dataclass(frozen=True)
class TtlConfig:
    L: int

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ConfigError(f"TTL L must be a positive integer, got {self.L}")


def _require_two_level(params: CostParams):
    if not params.two_level:
        raise ConfigError("this rule needs the two-level table [(0,1),(1,0)]")


# -- pure step functions --------------------------------------------------


def err_step(state: DeltaState, x_t: int, c_t: float, params: CostParams, current_level: int):
    """One E-RR update: clamp delta + x_bar - c into [0, M]; M fetches, 0 evicts."""
    _require_two_level(params)
    M, eps = params.M, _eps(params)
    d = state.delta + min(x_t, params.kappa) - c_t
    if d >= M - eps:
        return DeltaState(M), PolicyDecision(1, "delta reached M")
    if d <= eps:
        return DeltaState(0.0), PolicyDecision(0, "delta reached 0")
    return DeltaState(d), PolicyDecision(current_level)


def rr_step(window: RetroWindow, x_t: int, c_t: float, params: CostParams, current_level: int):
    """RetroRenting by direct scan of the window since the last change.

    Fetch when some suffix of the window had forwarded demand >= rent + M;
    evict when some suffix had rent >= forwarded demand + M.
    """
    _require_two_level(params)
    w = window.push(float(min(x_t, params.kappa)), float(c_t))
    M, eps = params.M, _eps(params)
    gain = 0.0  # sum over suffix of (x_bar - c)
    for xbar, c in reversed(w.pairs):
        gain += xbar - c
        if current_level == 0 and gain >= M - eps:
            return w.reset(), PolicyDecision(1, "hosting would have been cheaper")
        if current_level == 1 and -gain >= M - eps:
            return w.reset(), PolicyDecision(0, "forwarding would have been cheaper")
    return w, PolicyDecision(current_level)


def _slot_costs(params: CostParams, xbar: float, c: float) -> np.ndarray:
    """Model-1 cost of one slot at every level, without the overflow term."""
    return params.levels.fractions * c + params.levels.forward_costs * xbar


def _pick_level(excess: np.ndarray, current: int, fractions: np.ndarray, eps: float) -> int:
    """Apply the argmin tie rule to per-level excess cost over staying put."""
    best = excess.min()
    if best >= -eps:
        return current
    tied = np.flatnonzero(excess <= best + eps)
    return int(tied[np.argmax(fractions[tied])])


def alpha_rr_window_costs(pairs, current_level: int, params: CostParams) -> np.ndarray:
    """Direct O(window * K) hindsight cost per level over the window.

    For each level i: the cheapest hypothetical that stays at the current level
    up to some change point tau, pays M*|a_i - a_cur| once, then holds i to the
    end of the window. Overflow terms are included even though they cancel.
    """
    a = params.levels.fractions
    g = params.levels.forward_costs
    K = len(a)
    out = np.empty(K)
    n = len(pairs)
    for i in range(K):
        if i == current_level:
            out[i] = sum(a[i] * c + g[i] * x for x, c in pairs)
            continue
        best = np.inf
        for tau in range(n):
            cost = params.M * abs(a[i] - a[current_level])
            for l, (x, c) in enumerate(pairs):
                lvl = current_level if l < tau else i
                cost += a[lvl] * c + g[lvl] * x
            best = min(best, cost)
        out[i] = best
    return out


def alpha_rr_step(window: RetroWindow, x_t: int, c_t: float, params: CostParams, current_level: int):
    """alpha-RR (multi-level RetroRenting) by direct recomputation over the window."""
    if len(params.levels) < 2:
        raise ConfigError("alpha-RR needs at least two levels")
    w = window.push(float(min(x_t, params.kappa)), float(c_t))
    costs = alpha_rr_window_costs(w.pairs, current_level, params)
    nxt = _pick_level(costs - costs[current_level], current_level, params.levels.fractions, _eps(params))
    if nxt != current_level:
        return w.reset(), PolicyDecision(nxt, "hindsight prefers another level")
    return w, PolicyDecision(current_level)


def ttl_step(cfg: TtlConfig, countdown: int, x_t: int, current_level: int, top: int = 1):
    """Cache on a request, evict after cfg.L consecutive request-free slots."""
    if x_t >= 1:
        return cfg.L, PolicyDecision(top, "request seen")
    if countdown > 0:
        countdown -= 1
        if countdown == 0:
            return 0, PolicyDecision(0, "ttl expired")
    return countdown, PolicyDecision(current_level)


# -- stateful policies ----------------------------------------------------


class Policy:
    """Streaming policy: ``level`` is the level for the upcoming slot."""

    name = "policy"
    deterministic = True

    def __init__(self, params: CostParams, initial_level: int = 0):
        self.params = params
        self.top = params.levels.top
        if not 0 <= initial_level <= self.top:
            raise ConfigError(f"initial level {initial_level} outside table")
        self.initial_level = initial_level
        self.reset()

    def reset(self):
        self.level = self.initial_level

    def observe(self, x_t: int, c_t: float) -> PolicyDecision:
        raise NotImplementedError

    def run(self, instance: Instance) -> HostingSchedule:
        """Reset, then replay the instance; returns the level used in every slot."""
        self.reset()
        out = np.empty(instance.T, dtype=np.int64)
        for t, (x, c) in enumerate(zip(instance.arrivals.tolist(), instance.rents.tolist())):
            out[t] = self.level
            self.observe(x, c)
        return HostingSchedule(out)

    def __repr__(self):
        return f"<{self.name}>"


class ERR(Policy):
    """E-RR: clamped running sum of (x_bar - c)."""

    name = "err"

    def __init__(self, params, initial_level=0, initial_delta=None):
        self.initial_delta = initial_delta
        super().__init__(params, initial_level)

    def reset(self):
        super().reset()
        hosted = self.level == self.top
        self.delta = self.initial_delta if self.initial_delta is not None else (self.params.M if hosted else 0.0)

    def observe(self, x_t, c_t):
        M, eps = self.params.M, _eps(self.params)
        d = self.delta + min(x_t, self.params.kappa) - c_t
        if d >= M - eps:
            self.delta = M
            self.level = self.top
        elif d <= eps:
            self.delta = 0.0
            self.level = 0
        else:
            self.delta = d
        return PolicyDecision(self.level)

    def run(self, instance):
        self.reset()
        M, kappa, top = self.params.M, self.params.kappa, self.top
        eps = _eps(self.params)
        hi = M - eps
        d, lvl = self.delta, self.level
        out = []
        for x, c in zip(instance.arrivals.tolist(), instance.rents.tolist()):
            out.append(lvl)
            d += (x if x < kappa else kappa) - c
            if d >= hi:
                d, lvl = M, top
            elif d <= eps:
                d, lvl = 0.0, 0
        self.delta, self.level = d, lvl
        return HostingSchedule(np.array(out, dtype=np.int64))


class RR(Policy):
    """RetroRenting over the window since the last change.

    Keeps the running window sum P and its running min/max over window
    prefixes, so the "exists a suffix" tests are O(1) per slot.
    """

    name = "rr"

    def reset(self):
        super().reset()
        self.window = RetroWindow(0, ())
        self._p = self._lo = self._hi = 0.0
        self._t = 0

    def observe(self, x_t, c_t):
        self._t += 1
        M, eps = self.params.M, _eps(self.params)
        self._p += min(x_t, self.params.kappa) - c_t
        p = self._p
        changed = False
        if self.level == 0 and p - self._lo >= M - eps:
            self.level, changed = self.top, True
        elif self.level == self.top and self._hi - p >= M - eps:
            self.level, changed = 0, True
        if changed:
            self._p = self._lo = self._hi = 0.0
            self.window = RetroWindow(self._t, ())
        else:
            self._lo = min(self._lo, p)
            self._hi = max(self._hi, p)
        return PolicyDecision(self.level)

    def run(self, instance):
        self.reset()
        M, kappa, top = self.params.M, self.params.kappa, self.top
        thr = M - _eps(self.params)
        lvl = self.level
        p = lo = hi = 0.0
        out = []
        for x, c in zip(instance.arrivals.tolist(), instance.rents.tolist()):
            out.append(lvl)
            p += (x if x < kappa else kappa) - c
            if lvl == 0:
                if p - lo >= thr:
                    lvl, p, lo, hi = top, 0.0, 0.0, 0.0
                    continue
            elif hi - p >= thr:
                lvl, p, lo, hi = 0, 0.0, 0.0, 0.0
                continue
            if p < lo:
                lo = p
            elif p > hi:
                hi = p
        self.level = lvl
        return HostingSchedule(np.array(out, dtype=np.int64))


class AlphaRR(Policy):
    """Multi-level RetroRenting.

    For each level i, S[i] is the minimum over change points of the summed
    per-slot cost difference (level i minus current level) from the change
    point to now. Moving to i would have cost M*|a_i - a_cur| + S[i] more than
    staying. With ``debug=True`` the O(window) direct recomputation runs too
    and the two are asserted to agree.
    """

    name = "alpha-rr"

    def __init__(self, params, initial_level=0, debug=False):
        self.debug = debug
        self._a = params.levels.fractions
        self._g = params.levels.forward_costs
        super().__init__(params, initial_level)

    def reset(self):
        super().reset()
        self._clear()
        self._t = 0

    def _clear(self):
        self._S = np.full(len(self._a), np.inf)
        self._switch = self.params.M * np.abs(self._a - self._a[self.level])
        self._pairs = []

    def observe(self, x_t, c_t):
        self._t += 1
        xbar = float(min(x_t, self.params.kappa))
        cur = self.level
        diff = (self._a - self._a[cur]) * c_t + (self._g - self._g[cur]) * xbar
        self._S = np.minimum(self._S, 0.0) + diff
        excess = self._switch + self._S
        excess[cur] = 0.0
        eps = _eps(self.params)
        nxt = _pick_level(excess, cur, self._a, eps)
        if self.debug:
            self._pairs.append((xbar, float(c_t)))
            direct = alpha_rr_window_costs(self._pairs, cur, self.params)
            ref = _pick_level(direct - direct[cur], cur, self._a, eps)
            assert abs(direct[ref] - direct[nxt]) <= 10 * eps, (
                f"slot {self._t}: incremental picked {nxt}, direct picked {ref}"
            )
        if nxt != cur:
            self.level = nxt
            self._clear()
            return PolicyDecision(nxt, "hindsight prefers another level")
        return PolicyDecision(cur)

    def run(self, instance):
        if self.debug or len(self._a) != 3:
            return super().run(instance)
        return self._run3(instance)

    def _run3(self, instance):
        # Scalar unrolled loop for the common three-level table.
        self.reset()
        a, g = self._a.tolist(), self._g.tolist()
        M, kappa = self.params.M, self.params.kappa
        eps = _eps(self.params)
        inf = float("inf")
        lvl = self.level
        S = [inf, inf, inf]
        out = []
        for x, c in zip(instance.arrivals.tolist(), instance.rents.tolist()):
            out.append(lvl)
            xb = x if x < kappa else kappa
            ac, gc = a[lvl], g[lvl]
            best, nxt = -eps, lvl
            ex = [0.0, 0.0, 0.0]
            for i in (0, 1, 2):
                if i == lvl:
                    continue
                s = S[i]
                S[i] = (s if s < 0.0 else 0.0) + (a[i] - ac) * c + (g[i] - gc) * xb
                ex[i] = M * abs(a[i] - ac) + S[i]
            m = min(ex)
            if m < -eps:
                # largest fraction among near-minimal candidates
                for i in (2, 1, 0):
                    if i != lvl and ex[i] <= m + eps:
                        nxt = i
                        break
                lvl = nxt
                S = [inf, inf, inf]
        self.level = lvl
        return HostingSchedule(np.array(out, dtype=np.int64))


class TTL(Policy):
    name = "ttl"

    def __init__(self, params, L: int, initial_level=0):
        self.cfg = TtlConfig(L)
        self.name = f"ttl:L={L}"
        super().__init__(params, initial_level)

    def reset(self):
        super().reset()
        self.countdown = self.cfg.L if self.level else 0

    def observe(self, x_t, c_t):
        self.countdown, dec = ttl_step(self.cfg, self.countdown, x_t, self.level, self.top)
        self.level = dec.next_level_index
        return dec


class Static(Policy):
    """Constant level from slot 1 onward (pays the fetch into slot 1)."""

    def __init__(self, params, level: int):
        if not 0 <= level <= params.levels.top:
            raise ConfigError(f"static level {level} outside table of {len(params.levels)} levels")
        self.name = "never" if level == 0 else f"always:{level}"
        super().__init__(params, level)

    def observe(self, x_t, c_t):
        return PolicyDecision(self.level)

    def run(self, instance):
        return HostingSchedule(np.full(instance.T, self.level, dtype=np.int64))


def static_policy(params: CostParams, level: int) -> Static:
    return Static(params, level)


class Replay(Policy):
    """Replays a fixed schedule; used to score offline schedules through the policy path."""

    deterministic = True

    def __init__(self, params, schedule: HostingSchedule, name="replay"):
        self.schedule = schedule
        self.name = name
        super().__init__(params, int(schedule.level_index[0]) if schedule.T else 0)

    def reset(self):
        super().reset()
        self._t = 0

    def observe(self, x_t, c_t):
        self._t += 1
        s = self.schedule.level_index
        if self._t < len(s):
            self.level = int(s[self._t])
        return PolicyDecision(self.level)

    def run(self, instance):
        return self.schedule


# -- spec strings ---------------------------------------------------------

_SPEC = re.compile(r"^(err|rr|alpha-rr|multi-rr|never|ttl:L=(\d+)|always:(\d+))$")


def parse_policy(spec: str) -> tuple[str, int | None]:
    """Split a policy string into (kind, argument). Raises ConfigError if malformed."""
    m = _SPEC.match(spec.strip())
    if not m:
        raise ConfigError(
            f"bad policy {spec!r}; expected err, rr, alpha-rr, multi-rr, ttl:L=<int>, always:<idx> or never"
        )
    s = m.group(1)
    if m.group(2):
        return "ttl", int(m.group(2))
    if m.group(3):
        return "always", int(m.group(3))
    return s, None


def make_policy(spec: str, params: CostParams, initial_level: int = 0, **kw) -> Policy:
    kind, arg = parse_policy(spec)
    if kind == "err":
        return ERR(params, initial_level, **kw)
    if kind == "rr":
        return RR(params, initial_level)
    if kind in ("alpha-rr", "multi-rr"):
        if kind == "alpha-rr" and len(params.levels) > 3:
            raise ConfigError("alpha-rr takes a table of at most three levels; use multi-rr")
        p = AlphaRR(params, initial_level, **kw)
        p.name = kind
        return p
    if kind == "ttl":
        return TTL(params, arg, initial_level)
    if kind == "never":
        return Static(params, 0)
    return Static(params, arg)


def run_policy(policy: Policy | str, instance: Instance, params: CostParams | None = None) -> HostingSchedule:
    if isinstance(policy, str):
        policy = make_policy(policy, params)
    return policy.run(instance)
