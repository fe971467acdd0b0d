"""Command-line experiment runner.

Exit codes: 0 ok, 1 a bound was violated, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import (
    RatioReport,
    alpha_rr_cr_upper,
    alpha_rr_six_applies,
    hosting_histogram,
    online_lb,
    opt_on_lower,
    ratio_csv,
    replicate_costs,
    replication_streams,
    rr_cr_applicable,
    rr_cr_upper,
    to_json,
    ttl_case_of,
    ttl_lb,
    upper_bound_for,
)
from .config import ExperimentConfig, load_config
from .core import (
    ConfigError,
    CostParams,
    LevelTable,
    ServiceModel,
    evaluate_schedule,
    ledger_csv,
    trace_csv,
    validate,
)
from .generators import (
    adversary_evict_probe,
    adversary_fetch_probe,
    adversary_ttl,
    make_instance,
    stochastic_params,
)
from .offline import optimal_schedule
from .policies import make_policy, parse_policy

log = logging.getLogger("edgerent")

EXIT_OK, EXIT_BOUND, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _slug(spec: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "_", spec)


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    d = args.out or (cfg.out_dir if cfg else None)
    if not d:
        raise ConfigError("no output directory: pass --out or set output.dir in the config")
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8", newline="")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
    if args.policy:
        cfg.raw["policies"] = args.policy
        from .config import check

        check(cfg)
    return cfg


# -- simulate -------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load(args)
    params = cfg.cost_params()
    out = _out_dir(args, cfg)
    inst_ss, m_seed = replication_streams(cfg.seed, 1)[0]
    inst = make_instance(cfg.arrival_gen(), cfg.rent_gen(), cfg.T, inst_ss, (params.c_min, params.c_max))
    inst.check(params)
    model = ServiceModel.from_number(cfg.model, m_seed)
    _write(out / "instance.csv", trace_csv(inst))
    summary = {"instance_digest": inst.digest(), "T": inst.T, "seed": cfg.seed, "model": cfg.model, "policies": {}}
    for spec in cfg.policies:
        sched = make_policy(spec, params).run(inst)
        br = evaluate_schedule(sched, inst, params, model)
        _write(out / f"ledger_{_slug(spec)}.csv", ledger_csv(br))
        summary["policies"][spec] = {
            "fetch": br.fetch_total,
            "rent": br.rent_total,
            "service": br.service_total,
            "total": br.total,
            "per_slot": br.total / inst.T,
            "changes": sched.changes(),
            "histogram": hosting_histogram(sched, len(params.levels)).as_dict(),
        }
        log.info("%s: total %.6g", spec, br.total)
    _write(out / "summary.json", to_json(summary))
    return EXIT_OK


# -- compare --------------------------------------------------------------


def _compare_one(task) -> list[RatioReport]:
    raw, base, (inst_ss, m_seed) = task
    cfg = ExperimentConfig(raw, base)
    params = cfg.cost_params()
    inst = make_instance(cfg.arrival_gen(), cfg.rent_gen(), cfg.T, inst_ss, (params.c_min, params.c_max))
    inst.check(params)
    model = ServiceModel.from_number(cfg.model, m_seed)
    opt_sched, _ = optimal_schedule(inst, params)
    ref = evaluate_schedule(opt_sched, inst, params, model).total
    digest = inst.digest()
    rows = []
    for spec in ["opt", *cfg.policies]:
        sched = opt_sched if spec == "opt" else make_policy(spec, params).run(inst)
        cost = evaluate_schedule(sched, inst, params, model).total
        # worst-case bounds concern deterministic (Model 1) costs only
        b, kind = upper_bound_for(spec, params) if spec != "opt" and cfg.model == 1 else (None, "none")
        if ref <= 0:
            rows.append(RatioReport(spec, cost, "opt", ref, None, b, kind, digest, None, "reference cost is zero"))
            continue
        r = cost / ref
        passed = None if b is None else r <= b * (1 + 1e-9)
        rows.append(RatioReport(spec, cost, "opt", ref, r, b, kind, digest, passed))
    return rows


def _pool_map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    tasks = [(cfg.raw, cfg.base_dir, st) for st in replication_streams(cfg.seed, cfg.replications)]
    reports = [r for rows in _pool_map(_compare_one, tasks, args.jobs) for r in rows]
    _write(out / "ratios.csv", ratio_csv(reports))
    summary = {"seed": cfg.seed, "replications": cfg.replications, "T": cfg.T, "policies": {}}
    failed = False
    for spec in ["opt", *cfg.policies]:
        mine = [r for r in reports if r.policy == spec]
        ratios = [r.empirical_ratio for r in mine if r.empirical_ratio is not None]
        violations = sum(r.passed is False for r in mine)
        failed |= violations > 0
        summary["policies"][spec] = {
            "mean_cost": sum(r.policy_cost for r in mine) / len(mine),
            "max_ratio": max(ratios) if ratios else None,
            "mean_ratio": sum(ratios) / len(ratios) if ratios else None,
            "bound": mine[0].bound,
            "bound_kind": mine[0].bound_kind,
            "violations": violations,
            "undefined": sum(r.empirical_ratio is None for r in mine),
        }
    _write(out / "summary.json", to_json(summary))
    if failed:
        log.error("a competitive-ratio bound was violated; see ratios.csv")
        return EXIT_BOUND
    return EXIT_OK


# -- sweep ----------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    if not cfg.sweep:
        raise ConfigError("config has no sweep section")
    name, values = cfg.sweep["param"], cfg.sweep["values"]
    header = [name] + [s for p in cfg.policies for s in (p, f"{p}_se")] + ["opt_on_lower"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    points = []
    for v in values:
        point = cfg.with_value(name, v)
        params = point.cost_params()
        row = [repr(v) if isinstance(v, float) else str(v)]
        stats_out = {}
        for spec in point.policies:
            costs = replicate_costs(
                spec, point.arrival_gen(), point.rent_gen(), params, point.T,
                point.replications, point.seed, point.model, args.jobs,
            ) / point.T
            mean = float(costs.mean())
            se = float(costs.std(ddof=1) / math.sqrt(len(costs))) if len(costs) > 1 else 0.0
            row += [repr(mean), repr(se)]
            stats_out[spec] = {"mean_per_slot": mean, "se": se}
        try:
            flavor = "two_level" if params.two_level else "alpha_level"
            lb = opt_on_lower(params, stochastic_params(point.arrival_gen(), point.rent_gen(), params.kappa), flavor)
            row.append(repr(lb))
        except ConfigError:
            lb = None
            row.append("")
        w.writerow(row)
        points.append({"value": v, "policies": stats_out, "opt_on_lower": lb})
    _write(out / "sweep.csv", buf.getvalue())
    _write(out / "summary.json", to_json({"param": name, "seed": cfg.seed, "points": points}))
    return EXIT_OK


# -- adversarial ----------------------------------------------------------


def _flag_params(args) -> CostParams:
    kappa = math.inf if args.kappa == "unbounded" else int(args.kappa)
    levels = LevelTable.two_level()
    if args.alpha is not None:
        levels = LevelTable.three_level(args.alpha, args.g_alpha)
    params = CostParams(args.M, kappa, args.c_min, args.c_max if args.c_max is not None else args.c_min, levels)
    for v in validate(params):
        if v.severity == "warning":
            log.warning("%s", v.message)
    return params.check()


def cmd_adversarial(args) -> int:
    params = _flag_params(args)
    out = _out_dir(args)
    spec = args.policy[0] if args.policy else "err"
    kind, L = parse_policy(spec)
    probe = args.probe or ("ttl" if kind == "ttl" else "fetch")
    if probe == "ttl":
        if kind != "ttl":
            raise ConfigError("the TTL construction needs a ttl:L=<int> policy")
        adv = adversary_ttl(params, L, args.ttl_case, args.u)
        bound, bound_kind = ttl_lb(params.M, params.kappa, params.c_max, L, adv.case), f"ttl_lb_{adv.case}"
        policy = make_policy(spec, params)
    elif probe == "fetch":
        policy = make_policy(spec, params)
        adv = adversary_fetch_probe(policy, params, args.t_max)
        bound, bound_kind = online_lb(params.M, params.kappa, params.c_min, params.c_max, "not_hosting_first"), "online_lb_not_hosting_first"
    else:
        policy = make_policy(spec, params, initial_level=params.levels.top)
        adv = adversary_evict_probe(policy, params, args.t_max)
        bound, bound_kind = online_lb(params.M, params.kappa, params.c_min, params.c_max, "hosting_first"), "online_lb_hosting_first"

    inst = adv.instance
    cost = evaluate_schedule(policy.run(inst), inst, params).total
    alt = evaluate_schedule(adv.alt_schedule, inst, params).total
    ratio = cost / alt if alt > 0 else None
    passed = None if adv.flagged or ratio is None else ratio >= bound - 1e-9
    report = RatioReport(spec, cost, "alt", alt, ratio, bound, bound_kind, inst.digest(), passed, adv.note)
    _write(out / "instance.csv", trace_csv(inst))
    _write(out / "ratios.csv", ratio_csv([report]))
    summary = {
        "policy": spec,
        "probe": probe,
        "case": adv.case or None,
        "event_slot": adv.event_slot,
        "flagged": adv.flagged,
        "note": adv.note,
        "policy_cost": cost,
        "reference_cost": alt,
        "ratio": ratio,
        "bound": bound,
        "bound_kind": bound_kind,
        "pass": passed,
    }
    _write(out / "report.json", to_json(summary))
    print(to_json(summary), end="")
    if passed is False:
        return EXIT_BOUND
    return EXIT_OK


# -- bounds ---------------------------------------------------------------


def cmd_bounds(args) -> int:
    M = args.M
    kappa = math.inf if args.kappa == "unbounded" else float(args.kappa)
    if M <= 0:
        raise ConfigError("M must be > 0")
    out: dict = {"M": M, "kappa": args.kappa}
    c_min, c_max = args.c_min, args.c_max
    if c_min is not None:
        if c_min <= 0:
            raise ConfigError("c_min must be > 0")
        c_max = c_min if c_max is None else c_max
        if c_max < c_min:
            raise ConfigError("c_max must be >= c_min")
        out.update(c_min=c_min, c_max=c_max)
        if kappa > c_min:
            out["rr_cr_upper"] = rr_cr_upper(M, kappa, c_min)
            out["rr_cr_applicable"] = c_max <= M + kappa
        if kappa != math.inf:
            out["online_lb_not_hosting_first"] = online_lb(M, kappa, c_min, c_max, "not_hosting_first")
            out["online_lb_hosting_first"] = online_lb(M, kappa, c_min, c_max, "hosting_first")
    if args.L is not None and c_max is not None and kappa != math.inf:
        out["ttl_case"] = ttl_case_of(M, kappa, c_max, args.L)
        out["ttl_lb"] = ttl_lb(M, kappa, c_max, args.L)
    if args.alpha is not None:
        if args.g_alpha is None:
            raise ConfigError("--alpha needs --g-alpha")
        if not (0 < args.alpha < 1 and 0 < args.g_alpha < 1):
            raise ConfigError("alpha and g_alpha must lie in (0, 1)")
        out.update(alpha=args.alpha, g_alpha=args.g_alpha)
        out["alpha_rr_cr_upper"] = alpha_rr_cr_upper(M, args.alpha, args.g_alpha)
        out["alpha_rr_six_applies"] = alpha_rr_six_applies(M, args.alpha, args.g_alpha)
        out["intermediate_level_unused"] = args.alpha + args.g_alpha >= 1
    text = to_json(out)
    if args.out:
        _write(_out_dir(args) / "bounds.json", text)
    print(text, end="")
    return EXIT_OK


# -- entry point ----------------------------------------------------------


def _kappa(s: str):
    if s == "unbounded":
        return s
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError("kappa must be a positive integer or 'unbounded'") from None
    if v < 1:
        raise argparse.ArgumentTypeError("kappa must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edgerent", description="Edge service hosting simulator.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--policy", action="append", help="policy spec; repeat to run several")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")

    common(sub.add_parser("simulate", help="run policies on one seeded instance, write ledgers"))
    common(sub.add_parser("compare", help="policies against the offline optimum over replications"))
    common(sub.add_parser("sweep", help="mean per-slot cost per policy across a parameter sweep"))

    def param_flags(p, kappa_required):
        p.add_argument("--M", type=float, required=True)
        p.add_argument("--kappa", type=_kappa, required=kappa_required, default=None if kappa_required else 2)
        p.add_argument("--alpha", type=float)
        p.add_argument("--g-alpha", type=float)

    adv = sub.add_parser("adversarial", help="build a lower-bound instance for a policy")
    common(adv, config=False)
    param_flags(adv, kappa_required=False)
    adv.set_defaults(M=10.0)
    adv.add_argument("--c-min", type=float, default=0.5)
    adv.add_argument("--c-max", type=float, default=1.0)
    adv.add_argument("--probe", choices=["fetch", "evict", "ttl"])
    adv.add_argument("--ttl-case", choices=["i", "ii", "iii"])
    adv.add_argument("--u", type=int, default=10, help="bursts in the TTL case (iii) construction")
    adv.add_argument("--t-max", type=int, help="probe horizon cap")
    for a in adv._actions:
        if a.dest == "M":
            a.required = False

    b = sub.add_parser("bounds", help="print closed-form bounds as JSON")
    param_flags(b, kappa_required=True)
    b.add_argument("--c-min", type=float)
    b.add_argument("--c-max", type=float)
    b.add_argument("--L", type=int)
    b.add_argument("--out", help="also write bounds.json here")
    return ap


COMMANDS = {
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "adversarial": cmd_adversarial,
    "bounds": cmd_bounds,
}


def main(argv=None) -> int:
    level = os.environ.get("EDGERENT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        args.jobs = 1
    try:
        return COMMANDS[args.cmd](args)
    except ConfigError as e:
        print(f"edgerent: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"edgerent: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
