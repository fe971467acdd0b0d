import math

import numpy as np
import pytest
from conftest import params_and_instance, random_three_level, random_two_level, regime_workload
from hypothesis import given, settings

from edgerent import (
    ConfigError,
    CostParams,
    Instance,
    LevelTable,
    brute_force_schedule,
    evaluate_schedule,
    make_policy,
    min_hosting_run,
    optimal_schedule,
    validate,
)
from edgerent.core import as_schedule
from edgerent.offline import hosting_runs, level_change_run_bound, two_level_run_bound


def test_never_host_is_optimal_for_cheap_forwarding():
    p = CostParams(2, 1, 0.4, 0.4)
    inst = Instance([1, 1, 1], [0.4] * 3)
    s, b = optimal_schedule(inst, p)
    assert s.level_index.tolist() == [0, 0, 0] and b.total == 3
    assert brute_force_schedule(inst, p)[1].total == 3


def test_all_zero_arrivals():
    s, b = optimal_schedule(Instance([0] * 7, [0.5] * 7), CostParams(2, 1, 0.5, 0.5))
    assert s.level_index.tolist() == [0] * 7 and b.total == 0


def test_single_slot_hand_enumeration():
    p = CostParams(1, 5, 0.2, 0.2)
    inst = Instance([5], [0.2])
    for fn in (optimal_schedule, brute_force_schedule):
        s, b = fn(inst, p)
        assert s.level_index.tolist() == [1] and b.total == pytest.approx(1.2)


def test_tie_breaks_to_lower_level_then_later_fetch():
    # hosting slots 2-3 or forwarding both costs the same; the lower level wins
    p = CostParams(1, 1, 0.5, 0.5)
    s, _ = optimal_schedule(Instance([0, 1, 1], [0.5] * 3), p)
    assert s.level_index.tolist() == [0, 0, 0]
    # equal-cost fetch times: the later fetch wins
    p = CostParams(2, 2, 1.0, 1.0)
    s, b = optimal_schedule(Instance([1, 2, 2, 2], [1.0] * 4), p)
    # host from slot 1: 2 + 4 = 6; from slot 2: 1 + 2 + 3 = 6; never: 7
    assert b.total == 6
    assert s.level_index.tolist() == [0, 1, 1, 1]


def test_empty_and_oversized():
    with pytest.raises(ConfigError):
        optimal_schedule(Instance([], []), CostParams(2, 1, 0.5, 0.5))
    with pytest.raises(ConfigError):
        brute_force_schedule(Instance([1] * 30, [0.5] * 30), CostParams(2, 1, 0.5, 0.5))


@settings(max_examples=300, deadline=None)
@given(params_and_instance(max_T=9, levels=3))
def test_dp_matches_brute_force_three_levels(pi):
    params, inst = pi
    if any(v.severity == "error" for v in validate(params)):
        return
    a = optimal_schedule(inst, params)[1].total
    b = brute_force_schedule(inst, params)[1].total
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


def test_optimal_is_no_worse_than_any_policy(rng):
    for _ in range(200):
        params = random_three_level(rng)
        inst = regime_workload(rng, int(rng.integers(1, 120)), 1, params.c_min, params.c_max)
        opt = optimal_schedule(inst, params)[1].total
        for spec in ["err", "rr", "alpha-rr", "ttl:L=2", "never", "always:1", "always:2"]:
            cost = evaluate_schedule(make_policy(spec, params).run(inst), inst, params).total
            assert opt <= cost + 1e-9


def test_reversal_preserves_two_level_optimum(rng):
    for _ in range(300):
        params = random_two_level(rng, M_range=(1.2, 6))
        T = int(rng.integers(1, 9))
        inst = regime_workload(rng, T, int(params.kappa), params.c_min, params.c_max)
        fwd = brute_force_schedule(inst, params)[1].total
        bwd = brute_force_schedule(inst.reversed(), params)[1].total
        assert fwd == pytest.approx(bwd, rel=1e-9, abs=1e-12)


def test_adding_a_level_never_hurts(rng):
    for _ in range(200):
        params = random_two_level(rng, M_range=(1.5, 10), kappa_range=(1, 3))
        inst = regime_workload(rng, int(rng.integers(1, 60)), int(params.kappa), params.c_min, params.c_max)
        a, g = float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.01, 0.99))
        richer = params.replace(levels=LevelTable.three_level(a, g))
        assert optimal_schedule(inst, richer)[1].total <= optimal_schedule(inst, params)[1].total + 1e-9


def test_no_intermediate_at_optimum(rng):
    for _ in range(300):
        params = random_three_level(rng, intermediate_ok=False)
        inst = regime_workload(rng, int(rng.integers(1, 100)), 1, params.c_min, params.c_max)
        assert 1 not in optimal_schedule(inst, params)[0].level_index


def test_min_hosting_run_conventions():
    assert min_hosting_run(as_schedule([0, 0, 0])) == 4
    assert min_hosting_run(as_schedule([0, 1, 1, 0, 1, 0])) == 1
    assert hosting_runs(as_schedule([1, 2, 2, 0, 1])) == [(1, 1, 1), (2, 2, 2), (5, 1, 1)]


def test_run_length_bound_example():
    p = CostParams(4, 2, 1, 1)
    assert two_level_run_bound(p) == 4
    rng = np.random.default_rng(4)
    hosted = 0
    for _ in range(1000):
        T = int(rng.integers(1, 80))
        params = CostParams(4, 2, 1.0, float(rng.uniform(1, 3)))
        inst = regime_workload(rng, T, 2, params.c_min, params.c_max)
        s, _ = optimal_schedule(inst, params)
        if s.level_index.any():
            hosted += 1
            assert min_hosting_run(s) >= 4
    assert hosted > 100


def test_level_change_bound_formula():
    p = CostParams(10, 1, 0.2, 0.6, LevelTable.three_level(0.4, 0.3))
    assert level_change_run_bound(p, 0, 1) == math.ceil(4 / (0.7 - 0.08)) == 7
    assert level_change_run_bound(p, 0, 2) == two_level_run_bound(p) == math.ceil(10 / 0.8)


def test_alpha_runs_entered_from_zero_are_long(rng):
    p = CostParams(10, 1, 0.2, 0.6, LevelTable.three_level(0.4, 0.3))
    seen = 0
    for _ in range(400):
        inst = regime_workload(rng, int(rng.integers(10, 200)), 1, p.c_min, p.c_max)
        s = optimal_schedule(inst, p)[0].level_index.tolist()
        for start, n, lvl in hosting_runs(optimal_schedule(inst, p)[0]):
            before = s[start - 2] if start > 1 else 0
            end = start - 1 + n
            after = s[end] if end < len(s) else 0
            if lvl == 1 and before == 0 and after == 0:
                seen += 1
                assert n >= 7
    assert seen > 0
