"""Experiment configuration: JSON schema, loading, and construction of domain objects."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .core import ConfigError, CostParams, LevelTable, validate
from .generators import (
    ArmaRentConfig,
    Bernoulli,
    Constant,
    Deterministic,
    DeterministicRents,
    GilbertElliotConfig,
    Poisson,
    Trace,
    Uniform,
)
from .policies import make_policy

_num = {"type": "number"}
_prob = {"type": "number", "minimum": 0, "maximum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


def _kind(name, props, required=()):
    return _obj({"kind": {"const": name}, **props}, ("kind", *required))


SCHEMA = _obj(
    {
        "params": _obj(
            {
                "M": _num,
                "kappa": {"oneOf": [{"type": "integer", "minimum": 1}, {"const": "unbounded"}]},
                "c_min": _num,
                "c_max": _num,
                "levels": {
                    "type": "array",
                    "minItems": 2,
                    "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                },
            },
            ("M", "kappa", "c_min", "c_max"),
        ),
        "arrivals": {
            "oneOf": [
                _kind("bernoulli", {"p": _prob}, ("p",)),
                _kind("poisson", {"lam": {"type": "number", "minimum": 0}}, ("lam",)),
                _kind(
                    "gilbert_elliot",
                    {
                        "p_high_to_low": _prob,
                        "p_low_to_high": _prob,
                        "rate_high": _num,
                        "rate_low": _num,
                        "emission": {"enum": ["poisson", "bernoulli"]},
                    },
                    ("p_high_to_low", "p_low_to_high", "rate_high", "rate_low"),
                ),
                _kind("deterministic", {"values": {"type": "array", "items": {"type": "integer", "minimum": 0}}}, ("values",)),
                _kind("trace", {"path": {"type": "string"}}, ("path",)),
            ]
        },
        "rents": {
            "oneOf": [
                _kind("constant", {"c": _num}, ("c",)),
                _kind("uniform", {}),
                _kind(
                    "arma",
                    {
                        "ar_coeffs": {"type": "array", "items": _num},
                        "ma_coeffs": {"type": "array", "items": _num},
                        "mean_c": _num,
                        "innovation_sd": {"type": "number", "minimum": 0},
                    },
                    ("mean_c",),
                ),
                _kind("deterministic", {"values": {"type": "array", "items": _num}}, ("values",)),
                _kind("trace", {"path": {"type": "string"}}, ("path",)),
            ]
        },
        "policies": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "model": {"enum": [1, 2]},
        "T": {"type": "integer", "minimum": 1},
        "replications": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "sweep": _obj(
            {"param": {"type": "string"}, "values": {"type": "array", "items": _num, "minItems": 1}},
            ("param", "values"),
        ),
        "output": _obj({"dir": {"type": "string"}}),
    },
    ("params", "arrivals", "rents", "policies", "T"),
)


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    @property
    def T(self) -> int:
        return self.raw["T"]

    @property
    def policies(self) -> list[str]:
        return self.raw["policies"]

    @property
    def model(self) -> int:
        return self.raw.get("model", 1)

    @property
    def replications(self) -> int:
        return self.raw.get("replications", 1)

    @property
    def seed(self) -> int:
        return self.raw.get("seed", 0)

    @property
    def sweep(self) -> dict | None:
        return self.raw.get("sweep")

    @property
    def out_dir(self) -> str | None:
        return self.raw.get("output", {}).get("dir")

    def cost_params(self) -> CostParams:
        p = self.raw["params"]
        kappa = math.inf if p["kappa"] == "unbounded" else int(p["kappa"])
        levels = LevelTable(tuple(map(tuple, p["levels"]))) if "levels" in p else LevelTable.two_level()
        return CostParams(float(p["M"]), kappa, float(p["c_min"]), float(p["c_max"]), levels)

    def _path(self, s):
        q = Path(s)
        return q if q.is_absolute() else self.base_dir / q

    def arrival_gen(self):
        a = self.raw["arrivals"]
        k = a["kind"]
        if k == "bernoulli":
            return Bernoulli(a["p"])
        if k == "poisson":
            return Poisson(a["lam"])
        if k == "gilbert_elliot":
            return GilbertElliotConfig(
                a["p_high_to_low"], a["p_low_to_high"], a["rate_high"], a["rate_low"], a.get("emission", "poisson")
            )
        if k == "deterministic":
            return Deterministic(a["values"])
        return Trace(str(self._path(a["path"])))

    def rent_gen(self):
        r = self.raw["rents"]
        k = r["kind"]
        p = self.raw["params"]
        if k == "constant":
            return Constant(r["c"])
        if k == "uniform":
            return Uniform(p["c_min"], p["c_max"])
        if k == "arma":
            return ArmaRentConfig(
                r.get("ar_coeffs", ()),
                r.get("ma_coeffs", ()),
                r["mean_c"],
                r.get("innovation_sd", 1.0),
                (p["c_min"], p["c_max"]),
            )
        if k == "deterministic":
            return DeterministicRents(tuple(r["values"]))
        return Trace(str(self._path(r["path"])))

    def with_value(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with one entry replaced, addressed like "params.M" or "params.levels.1.1"."""
        raw = copy.deepcopy(self.raw)
        keys = dotted.split(".")
        node = raw
        try:
            for k in keys[:-1]:
                node = node[int(k)] if isinstance(node, list) else node[k]
            last = keys[-1]
            if isinstance(node, list):
                node[int(last)] = value
            else:
                if last not in node and not _known_key(keys):
                    raise KeyError(last)
                node[last] = value
        except (KeyError, IndexError, ValueError, TypeError):
            raise ConfigError(f"sweep parameter {dotted!r} does not address a config entry") from None
        if isinstance(value, float) and value.is_integer() and keys[-1] in ("T", "kappa"):
            node[keys[-1]] = int(value)
        return check(ExperimentConfig(raw, self.base_dir))


def _known_key(keys):
    return keys[0] in ("params", "arrivals", "rents") and len(keys) == 2


def check(cfg: ExperimentConfig) -> ExperimentConfig:
    """Validate schema and domain invariants; raises ConfigError."""
    try:
        jsonschema.validate(cfg.raw, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {e.message}") from None
    params = cfg.cost_params()
    errs = [str(v) for v in validate(params) if v.severity == "error"]
    if errs:
        raise ConfigError("; ".join(errs))
    for spec in cfg.policies:
        make_policy(spec, params)
    cfg.arrival_gen()
    cfg.rent_gen()
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate. OSError propagates for unreadable files."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return check(ExperimentConfig(raw, p.parent))
