import logging

import numpy as np
import pytest
from conftest import params_and_instance, random_three_level, random_two_level, regime_workload
from hypothesis import given, settings
from hypothesis import strategies as st

from edgerent import (
    ERR,
    RR,
    TTL,
    AlphaRR,
    ConfigError,
    CostParams,
    DeltaState,
    Instance,
    LevelTable,
    RetroWindow,
    TtlConfig,
    alpha_rr_step,
    err_step,
    evaluate_schedule,
    make_policy,
    parse_policy,
    rr_step,
    static_policy,
    ttl_step,
)

log = logging.getLogger(__name__)


def p3(M=3, kappa=1, c=0.5):
    return CostParams(M, kappa, c, c)


def steps(fn, state, xs, cs, params, level=0):
    out = []
    for x, c in zip(xs, cs):
        state, d = fn(state, x, c, params, level)
        level = d.next_level_index
        out.append((state, level))
    return out


def test_err_no_demand_stays():
    s, d = err_step(DeltaState(0.0), 0, 0.5, p3(), 0)
    assert s.delta == 0 and d.next_level_index == 0


def test_err_unrolled_fetch_after_six_slots():
    trace = steps(err_step, DeltaState(), [1] * 8, [0.5] * 8, p3())
    assert [s.delta for s, _ in trace[:6]] == [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
    assert [lvl for _, lvl in trace] == [0, 0, 0, 0, 0, 1, 1, 1]


def test_err_evicts_after_six_empty_slots():
    trace = steps(err_step, DeltaState(3.0), [0] * 7, [0.5] * 7, p3(), level=1)
    assert [lvl for _, lvl in trace] == [1, 1, 1, 1, 1, 0, 0]
    assert trace[5][0].delta == 0


def test_err_rejects_multi_level():
    with pytest.raises(ConfigError):
        err_step(DeltaState(), 1, 0.5, CostParams(3, 1, 0.5, 0.5, LevelTable.three_level(0.4, 0.3)), 0)


def test_rr_step_hand_examples():
    trace = steps(rr_step, RetroWindow(), [1] * 7, [0.5] * 7, p3())
    assert [lvl for _, lvl in trace] == [0, 0, 0, 0, 0, 1, 1]
    # window resets on the change
    assert trace[5][0].pairs == () and trace[5][0].t_recent == 6
    assert all(lvl == 0 for _, lvl in steps(rr_step, RetroWindow(), [0] * 200, [0.5] * 200, p3()))


def test_rr_step_matches_stateful_rr(rng):
    for _ in range(200):
        params = random_two_level(rng, M_range=(2, 10))
        inst = regime_workload(rng, int(rng.integers(1, 120)), int(params.kappa), params.c_min, params.c_max)
        lv = [lvl for _, lvl in steps(rr_step, RetroWindow(), inst.arrivals.tolist(), inst.rents.tolist(), params)]
        assert RR(params).run(inst).level_index[1:].tolist() == lv[:-1]


def test_err_step_matches_stateful_err(rng):
    for _ in range(200):
        params = random_two_level(rng, M_range=(2, 10))
        inst = regime_workload(rng, int(rng.integers(1, 120)), int(params.kappa), params.c_min, params.c_max)
        trace = steps(err_step, DeltaState(), inst.arrivals.tolist(), inst.rents.tolist(), params)
        assert ERR(params).run(inst).level_index[1:].tolist() == [lvl for _, lvl in trace][:-1]
        assert all(0 <= s.delta <= params.M for s, _ in trace)


def test_streaming_and_batch_paths_agree(rng):
    for _ in range(100):
        params = random_three_level(rng)
        inst = regime_workload(rng, int(rng.integers(1, 150)), 1, params.c_min, params.c_max)
        for spec in ["err", "rr", "alpha-rr", "ttl:L=3"]:
            pol = make_policy(spec, params)
            batch = pol.run(inst).level_index.tolist()
            pol.reset()
            stream = []
            for x, c in zip(inst.arrivals.tolist(), inst.rents.tolist()):
                stream.append(pol.level)
                pol.observe(x, c)
            assert batch == stream, spec


@settings(max_examples=300, deadline=None)
@given(params_and_instance(max_T=60, kappa_max=4))
def test_rr_equals_err(pi):
    params, inst = pi
    assert ERR(params).run(inst) == RR(params).run(inst)


@settings(max_examples=200, deadline=None)
@given(params_and_instance(max_T=40))
def test_delta_stays_in_range(pi):
    params, inst = pi
    pol = ERR(params)
    for x, c in zip(inst.arrivals.tolist(), inst.rents.tolist()):
        pol.observe(x, c)
        assert 0 <= pol.delta <= params.M


def test_alpha_rr_incremental_matches_direct(rng):
    for _ in range(150):
        params = random_three_level(rng, M_range=(1.5, 8))
        inst = regime_workload(rng, int(rng.integers(1, 80)), 1, params.c_min, params.c_max)
        fast = AlphaRR(params).run(inst)
        checked = AlphaRR(params, debug=True).run(inst)  # asserts per slot
        assert fast == checked


def test_alpha_rr_pure_step_matches_policy(rng):
    for _ in range(60):
        params = random_three_level(rng, M_range=(1.5, 6))
        inst = regime_workload(rng, int(rng.integers(1, 50)), 1, params.c_min, params.c_max)
        lv = [lvl for _, lvl in steps(alpha_rr_step, RetroWindow(), inst.arrivals.tolist(), inst.rents.tolist(), params)]
        assert AlphaRR(params).run(inst).level_index[1:].tolist() == lv[:-1]


def test_multi_level_incremental_matches_direct(rng):
    for _ in range(60):
        K = int(rng.integers(4, 7))
        a = np.sort(rng.uniform(0.05, 0.95, K - 2))
        g = np.sort(rng.uniform(0.01, 0.99, K - 2))[::-1]
        table = LevelTable(((0, 1), *zip(a, g), (1, 0)))
        params = CostParams(float(rng.uniform(1.5, 8)), 2, 0.3, 1.2, table)
        inst = regime_workload(rng, int(rng.integers(1, 80)), 2, 0.3, 1.2)
        assert make_policy("multi-rr", params).run(inst) == AlphaRR(params, debug=True).run(inst)


def test_alpha_rr_evicts_under_high_rent_and_no_demand():
    params = CostParams(5, 1, 2.0, 2.0, LevelTable.three_level(0.4, 0.5))
    sched = AlphaRR(params, initial_level=2).run(Instance([0] * 10, [2.0] * 10))
    # after n slots: level 0 would have saved 2n - 5, level alpha 1.2n - 3;
    # at n = 3 these are 1 and 0.6, so the policy drops to 0
    assert sched.level_index.tolist() == [2, 2, 2] + [0] * 7


def test_alpha_rr_never_emits_intermediate_when_not_worth_it(rng):
    for _ in range(300):
        params = random_three_level(rng, intermediate_ok=False)
        a, g = params.levels.entries[1]
        assert a + g >= 1
        inst = regime_workload(rng, int(rng.integers(1, 200)), 1, params.c_min, params.c_max)
        assert 1 not in AlphaRR(params).run(inst).level_index


def test_two_level_alpha_rr_versus_err_exploratory(rng):
    # decision identity is not guaranteed (tie semantics differ); mismatches are logged
    mismatches = 0
    for _ in range(1000):
        params = random_two_level(rng, kappa_range=(1, 1))
        T = int(rng.integers(1, 200))
        inst = Instance(rng.integers(0, 2, T), rng.uniform(params.c_min, params.c_max, T))
        if ERR(params).run(inst) != AlphaRR(params).run(inst):
            mismatches += 1
    log.info("two-level alpha-RR vs E-RR mismatches: %d / 1000", mismatches)
    assert mismatches == 0


def test_window_reset_uses_only_post_change_slots():
    # after fetching at slot 6, the eviction test must ignore slots 1..6
    params = p3()
    xs = [1] * 6 + [0] * 6
    lv = ERR(params).run(Instance(xs, [0.5] * 12)).level_index.tolist()
    assert lv[6] == 1
    # 6 empty slots at 0.5 = 3 = M, evicts after slot 12
    rr = RR(params)
    for x in xs:
        rr.observe(x, 0.5)
    assert rr.level == 0 and rr.window.t_recent == 12


def test_policies_are_causal(rng):
    params = random_three_level(rng)
    inst = regime_workload(rng, 300, 1, params.c_min, params.c_max)
    for spec in ["err", "rr", "alpha-rr", "ttl:L=4"]:
        full = make_policy(spec, params).run(inst).level_index
        cut = int(rng.integers(1, 300))
        prefix = make_policy(spec, params).run(Instance(inst.arrivals[:cut], inst.rents[:cut])).level_index
        assert np.array_equal(full[:cut], prefix)


def test_ttl_hand_examples():
    params = p3()
    assert TTL(params, 2).run(Instance([1, 0, 0, 0], [0.5] * 4)).level_index.tolist() == [0, 1, 1, 0]
    s = TTL(params, 3).run(Instance([2] * 10, [0.5] * 10))
    assert s.level_index.tolist() == [0] + [1] * 9
    assert evaluate_schedule(s, Instance([2] * 10, [0.5] * 10), params).fetch_total == 3
    u = 7
    s = TTL(params, 1).run(Instance([1, 0] * u, [0.5] * 2 * u))
    assert evaluate_schedule(s, Instance([1, 0] * u, [0.5] * 2 * u), params).fetch_total == u * params.M


def test_ttl_step_and_config():
    cfg = TtlConfig(2)
    n, d = ttl_step(cfg, 0, 3, 0)
    assert (n, d.next_level_index) == (2, 1)
    n, d = ttl_step(cfg, n, 0, 1)
    assert (n, d.next_level_index) == (1, 1)
    n, d = ttl_step(cfg, n, 0, 1)
    assert (n, d.next_level_index) == (0, 0)
    with pytest.raises(ConfigError):
        TtlConfig(0)


def test_static_policies():
    params = CostParams(4, 2, 0.1, 1.0)
    inst = Instance([0, 3, 1, 5], [0.2, 0.4, 0.6, 0.8])
    never = static_policy(params, 0)
    assert evaluate_schedule(never.run(inst), inst, params).total == 9
    always = static_policy(params, 1)
    assert evaluate_schedule(always.run(inst), inst, params).total == pytest.approx(4 + 2.0 + 1 + 3)
    with pytest.raises(ConfigError):
        static_policy(params, 2)


@pytest.mark.parametrize(
    "spec,expected",
    [("err", ("err", None)), ("ttl:L=12", ("ttl", 12)), ("always:2", ("always", 2)), ("multi-rr", ("multi-rr", None))],
)
def test_parse_policy(spec, expected):
    assert parse_policy(spec) == expected


@pytest.mark.parametrize("spec", ["ttl", "ttl:L=", "always", "foo", "ttl:L=-1"])
def test_parse_policy_rejects(spec):
    with pytest.raises(ConfigError):
        parse_policy(spec)


def test_alpha_rr_rejects_large_tables():
    table = LevelTable(((0, 1), (0.3, 0.8), (0.6, 0.4), (1, 0)))
    with pytest.raises(ConfigError):
        make_policy("alpha-rr", CostParams(5, 1, 0.5, 0.5, table))
    assert make_policy("multi-rr", CostParams(5, 1, 0.5, 0.5, table)).name == "multi-rr"


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_two_level_policies_on_three_level_table_use_endpoints(L, xs):
    params = CostParams(3, 1, 0.5, 0.5, LevelTable.three_level(0.4, 0.3))
    inst = Instance(xs, [0.5] * len(xs))
    for spec in ["err", "rr", f"ttl:L={L}", "never"]:
        assert set(make_policy(spec, params).run(inst).level_index.tolist()) <= {0, 2}
