"""Domain types and the cost-accounting engine.

Costs per slot t at hosting fraction a:
  fetch    M * (a_next - a)^+  (booked in row t; the fetch into slot 1 is booked in row 1)
  rent     a * c_t
  service  g(a) * min(x_t, kappa) + overflow
"""

from __future__ import annotations

import csv
import io
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

UNBOUNDED = math.inf


class ConfigError(ValueError):
    """Raised when parameters or inputs break a model invariant."""


@dataclass(frozen=True)
class LevelTable:
    """Ordered (fraction, forward_cost) pairs, from (0, 1) up to (1, 0)."""

    entries: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "entries", tuple((float(a), float(g)) for a, g in self.entries)
        )

    @classmethod
    def two_level(cls) -> "LevelTable":
        return cls(((0.0, 1.0), (1.0, 0.0)))

    @classmethod
    def three_level(cls, alpha: float, g_alpha: float) -> "LevelTable":
        return cls(((0.0, 1.0), (alpha, g_alpha), (1.0, 0.0)))

    def __len__(self):
        return len(self.entries)

    @property
    def fractions(self) -> np.ndarray:
        return np.array([a for a, _ in self.entries])

    @property
    def forward_costs(self) -> np.ndarray:
        return np.array([g for _, g in self.entries])

    @property
    def top(self) -> int:
        return len(self.entries) - 1

    def violations(self) -> list["Violation"]:
        out = []
        e = self.entries
        if len(e) < 2:
            return [Violation("error", "level table needs at least two entries")]
        if e[0] != (0.0, 1.0):
            out.append(Violation("error", f"first level must be (0, 1), got {e[0]}"))
        if e[-1] != (1.0, 0.0):
            out.append(Violation("error", f"last level must be (1, 0), got {e[-1]}"))
        for (a0, g0), (a1, g1) in zip(e, e[1:]):
            if not a1 > a0:
                out.append(Violation("error", f"fractions not strictly increasing at {a0} -> {a1}"))
            if not g1 < g0:
                out.append(Violation("error", f"forward costs not strictly decreasing at {g0} -> {g1}"))
        for a, g in e:
            if not (0.0 <= a <= 1.0 and 0.0 <= g <= 1.0):
                out.append(Violation("error", f"level ({a}, {g}) outside [0,1]^2"))
        return out


@dataclass(frozen=True)
class Violation:
    severity: str  # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.severity}: {self.message}"


@dataclass(frozen=True)
class CostParams:
    M: float
    kappa: float  # positive integer or UNBOUNDED
    c_min: float
    c_max: float
    levels: LevelTable = field(default_factory=LevelTable.two_level)

    @property
    def two_level(self) -> bool:
        return len(self.levels) == 2

    def check(self) -> "CostParams":
        """Raise ConfigError on any error-grade violation; return self."""
        errs = [v for v in validate(self) if v.severity == "error"]
        if errs:
            raise ConfigError("; ".join(str(v) for v in errs))
        return self

    def replace(self, **kw) -> "CostParams":
        from dataclasses import replace

        return replace(self, **kw)


def validate(params: CostParams) -> list[Violation]:
    """Return every invariant violation; M <= 1 is only a warning."""
    out = []
    if not params.c_min > 0:
        out.append(Violation("error", f"c_min must be > 0, got {params.c_min}"))
    if not params.c_min <= params.c_max:
        out.append(Violation("error", f"c_min {params.c_min} exceeds c_max {params.c_max}"))
    k = params.kappa
    if not (k == UNBOUNDED or (k >= 1 and float(k).is_integer())):
        out.append(Violation("error", f"kappa must be a positive integer or unbounded, got {k}"))
    if not params.M > 0:
        out.append(Violation("error", f"M must be > 0, got {params.M}"))
    elif params.M <= 1:
        out.append(Violation("warning", f"M = {params.M} <= 1; fetching is assumed costlier than one request"))
    out.extend(params.levels.violations())
    return out


@dataclass(frozen=True)
class Instance:
    arrivals: np.ndarray
    rents: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.arrivals, dtype=np.int64)
        c = np.asarray(self.rents, dtype=np.float64)
        if x.ndim != 1 or c.ndim != 1 or len(x) != len(c):
            raise ConfigError(f"arrivals and rents must be equal-length 1-D sequences ({x.shape} vs {c.shape})")
        if (x < 0).any():
            raise ConfigError("arrivals must be non-negative")
        x.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "arrivals", x)
        object.__setattr__(self, "rents", c)

    @property
    def T(self) -> int:
        return len(self.arrivals)

    def check(self, params: CostParams) -> "Instance":
        if self.T == 0:
            raise ConfigError("empty instance")
        lo, hi = self.rents.min(), self.rents.max()
        if lo < params.c_min or hi > params.c_max:
            raise ConfigError(
                f"rents span [{lo}, {hi}], outside [c_min, c_max] = [{params.c_min}, {params.c_max}]"
            )
        return self

    def capped(self, kappa: float) -> tuple[np.ndarray, np.ndarray]:
        """(x_bar, overflow) as float arrays."""
        x = self.arrivals.astype(np.float64)
        xbar = np.minimum(x, kappa)
        return xbar, x - xbar

    def reversed(self) -> "Instance":
        return Instance(self.arrivals[::-1], self.rents[::-1])

    def digest(self) -> str:
        return hashlib.sha256(trace_csv(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class HostingSchedule:
    level_index: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.level_index, dtype=np.int64)
        s.setflags(write=False)
        object.__setattr__(self, "level_index", s)

    @property
    def T(self) -> int:
        return len(self.level_index)

    def __eq__(self, other):
        return isinstance(other, HostingSchedule) and np.array_equal(self.level_index, other.level_index)

    def __hash__(self):
        return hash(self.level_index.tobytes())

    def fetched_fractions(self, levels: LevelTable) -> np.ndarray:
        """Fraction fetched at each boundary 0->1, 1->2, ..., (T-1)->T; length T."""
        a = levels.fractions[self.level_index]
        prev = np.concatenate(([0.0], a[:-1]))
        return np.maximum(a - prev, 0.0)

    def changes(self) -> int:
        prev = np.concatenate(([0], self.level_index[:-1]))
        return int((prev != self.level_index).sum())


@dataclass(frozen=True)
class ServiceModel:
    """Model 1 is deterministic (kind="deterministic"); Model 2 forwards each request at random."""

    kind: str = "deterministic"
    rng_seed: int | None = None

    @classmethod
    def model1(cls):
        return cls("deterministic")

    @classmethod
    def model2(cls, seed: int):
        return cls("randomized", int(seed))

    @classmethod
    def from_number(cls, model: int, seed: int = 0):
        if model == 1:
            return cls.model1()
        if model == 2:
            return cls.model2(seed)
        raise ConfigError(f"model must be 1 or 2, got {model}")


@dataclass(frozen=True)
class CostBreakdown:
    fetch_total: float
    rent_total: float
    service_total: float
    per_slot: np.ndarray  # structured rows: t, level, fetch, rent, service

    @property
    def total(self) -> float:
        return self.fetch_total + self.rent_total + self.service_total

    def rows(self):
        for r in self.per_slot:
            yield int(r["t"]), float(r["level"]), float(r["fetch"]), float(r["rent"]), float(r["service"])


LEDGER_DTYPE = np.dtype(
    [("t", np.int64), ("level", np.float64), ("fetch", np.float64), ("rent", np.float64), ("service", np.float64)]
)


def evaluate_schedule(
    schedule: HostingSchedule,
    instance: Instance,
    params: CostParams,
    model: ServiceModel | None = None,
) -> CostBreakdown:
    model = model or ServiceModel.model1()
    if schedule.T != instance.T:
        raise ConfigError(f"horizon mismatch: schedule {schedule.T}, instance {instance.T}")
    idx = schedule.level_index
    K = len(params.levels)
    if len(idx) and (idx.min() < 0 or idx.max() >= K):
        raise ConfigError(f"level index outside [0, {K - 1}]")
    instance.check(params)

    a = params.levels.fractions[idx]
    g = params.levels.forward_costs[idx]
    xbar, over = instance.capped(params.kappa)

    # fetch at the end of slot t (into slot t+1) is booked in row t;
    # the fetch into slot 1 is booked in row 1 as well
    up = np.maximum(np.diff(a, append=a[-1]), 0.0)
    up[0] += a[0]
    fetch = params.M * up
    rent = a * instance.rents
    if model.kind == "deterministic":
        service = g * xbar + over
    elif model.kind == "randomized":
        rng = np.random.default_rng(model.rng_seed)
        forwarded = rng.binomial(xbar.astype(np.int64), g)
        service = forwarded + over
    else:
        raise ConfigError(f"unknown service model {model.kind!r}")

    rows = np.empty(instance.T, dtype=LEDGER_DTYPE)
    rows["t"] = np.arange(1, instance.T + 1)
    rows["level"] = a
    rows["fetch"] = fetch
    rows["rent"] = rent
    rows["service"] = service
    rows.setflags(write=False)
    return CostBreakdown(float(fetch.sum()), float(rent.sum()), float(service.sum()), rows)


def total_cost(schedule, instance, params) -> float:
    return evaluate_schedule(schedule, instance, params).total


# -- CSV io ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def trace_csv(instance: Instance) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "c"])
    for t, (x, c) in enumerate(zip(instance.arrivals, instance.rents), 1):
        w.writerow([t, int(x), _fmt(c)])
    return buf.getvalue()


def write_trace(instance: Instance, path) -> None:
    Path(path).write_text(trace_csv(instance), encoding="utf-8", newline="")


def read_trace(path) -> Instance:
    """Read a `t,x,c` trace. Raises ConfigError on malformed content, OSError if unreadable."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["t", "x", "c"]:
        raise ConfigError(f"{path}: header must be t,x,c")
    xs, cs = [], []
    for n, row in enumerate(reader, 1):
        try:
            t, x, c = int(row["t"]), int(row["x"]), float(row["c"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{path}: bad row {n}: {e}") from None
        if t != n:
            raise ConfigError(f"{path}: row {n} has t={t}; slots must be 1, 2, ...")
        xs.append(x)
        cs.append(c)
    if not xs:
        raise ConfigError(f"{path}: no rows")
    return Instance(xs, cs)


def ledger_csv(breakdown: CostBreakdown) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "level", "fetch", "rent", "service"])
    for t, lvl, f, r, s in breakdown.rows():
        w.writerow([t, _fmt(lvl), _fmt(f), _fmt(r), _fmt(s)])
    return buf.getvalue()


def write_ledger(breakdown: CostBreakdown, path) -> None:
    Path(path).write_text(ledger_csv(breakdown), encoding="utf-8", newline="")


def as_schedule(levels: Sequence[int]) -> HostingSchedule:
    return HostingSchedule(np.asarray(levels, dtype=np.int64))
