import numpy as np
import pytest

from avcsim.controllers import (
    DroopParams,
    DroopPolicy,
    NoControlPolicy,
    OpfPolicy,
    RandomPolicy,
    droop_q,
    droop_rollout,
    make_policy,
    no_control,
    opf_solve,
)
from avcsim.env import EnvConfig, VoltageControlEnv
from avcsim.powerflow import InjectionSet, solve_power_flow
from avcsim.profiles import load_bundle
from avcsim.reward import BarrierSpec, RewardSpec
from conftest import two_bus_case, write_two_bus_bundle


def test_no_control_zero_vector():
    assert np.all(no_control(6) == 0.0)


def test_no_control_policy(env33_factory):
    env = env33_factory()
    obs = env.reset(seed=1)
    policy = NoControlPolicy()
    actions = policy.act(env, obs)
    np.testing.assert_array_equal(actions, np.zeros(6))
    result = env.step(actions)
    np.testing.assert_array_equal(result.info["q_pv_mvar"], np.zeros(6))


# -- droop law -----------------------------------------------------------------


def test_droop_zero_at_setpoint():
    assert droop_q(1.0, 0.0, 1.0, DroopParams()) == 0.0


def test_droop_hand_value():
    # q_max = 0.5, default slope = 0.5 / 0.05 = 10, v deviation +0.02
    q = droop_q(1.02, 0.0, 0.5, DroopParams())
    assert q == pytest.approx(-0.2, rel=1e-9)


def test_droop_saturates_far_from_setpoint():
    q = droop_q(1.2, 0.0, 0.5, DroopParams())
    assert q == -0.5
    q = droop_q(0.8, 0.0, 0.5, DroopParams())
    assert q == 0.5


def test_droop_sign_rule():
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(7)))
    params = DroopParams()
    for _ in range(500):
        v = rng.uniform(0.8, 1.2)
        p = rng.uniform(0.0, 1.0)
        s = rng.uniform(p + 1e-6, 2.0)
        q = droop_q(v, p, s, params)
        assert q * (v - 1.0) <= 1e-15


def test_droop_continuity_on_fine_grid():
    params = DroopParams(deadband_halfwidth=0.01)
    s_max, p = 1.0, 0.4
    slope = np.sqrt(s_max**2 - p**2) / 0.05
    grid = np.linspace(0.85, 1.15, 6001)
    values = np.array([droop_q(v, p, s_max, params) for v in grid])
    step = grid[1] - grid[0]
    assert np.max(np.abs(np.diff(values))) <= slope * step * 1.001


def test_droop_deadband_and_zero_headroom():
    params = DroopParams(deadband_halfwidth=0.03)
    assert droop_q(1.02, 0.0, 1.0, params) == 0.0
    assert droop_q(0.98, 0.0, 1.0, params) == 0.0
    # zero headroom: full active output leaves no reactive capability
    assert droop_q(1.1, 1.0, 1.0, DroopParams()) == 0.0


def _two_bus_env(tmp_path, load, pv, *, s_max=None, pr=2.5, barrier="l1"):
    write_two_bus_bundle(tmp_path, load, pv, penetration_ratio=pr)
    case = two_bus_case(with_pv=True, s_max=s_max or 1.0)
    store, case = load_bundle(case, tmp_path)
    if s_max is not None:
        case = case.with_pv_capacities({0: s_max})
    config = EnvConfig(
        case=case,
        store=store,
        reward=RewardSpec(barrier=BarrierSpec(barrier)),
        episode_length=60,
        data_noise_sigma=0.0,
        offset_mode="fixed",
        seed=0,
    )
    return VoltageControlEnv(config)


def test_droop_rollout_improves_overvoltage(tmp_path):
    # high PV, light load: droop absorbs and shrinks the deviation
    steps = 480
    load = np.full(steps, 0.02) + 0.01 * np.sin(np.arange(steps) / 40.0) ** 2
    pv = np.full(steps, 0.9) + 0.05 * np.cos(np.arange(steps) / 60.0) ** 2
    env = _two_bus_env(tmp_path / "hi_pv", load, pv)

    results_droop = droop_rollout(env, DroopParams(), seed=0)
    v_droop = np.array(
        [abs(r.info["grid_state"].v[1] - 1.0) for r in results_droop]
    )
    env2 = _two_bus_env(tmp_path / "hi_pv2", load, pv)
    obs = env2.reset(seed=0)
    v_none = []
    for _ in range(len(results_droop)):
        r = env2.step([0.0])
        v_none.append(abs(r.info["grid_state"].v[1] - 1.0))
        if r.terminated:
            break
    assert v_droop[-1] <= v_none[-1] + 1e-12
    assert v_droop.mean() < np.mean(v_none)


def test_droop_inside_deadband_matches_no_control(tmp_path):
    steps = 480
    load = np.full(steps, 0.02)
    pv = np.full(steps, 0.03)
    env = _two_bus_env(tmp_path / "mild", load, pv)
    wide = DroopParams(deadband_halfwidth=0.5)
    results = droop_rollout(env, wide, seed=3)
    for r in results:
        np.testing.assert_array_equal(r.info["q_pv_mvar"], np.zeros(1))


def test_droop_zero_headroom_matches_no_control(tmp_path):
    # PV pinned at its rating: q_max = 0 at every step
    steps = 480
    load = np.full(steps, 0.02)
    pv = np.full(steps, 0.5)
    write_two_bus_bundle(tmp_path / "flat", np.asarray(load), np.asarray(pv))
    case = two_bus_case(with_pv=True, s_max=1.0)
    store, case = load_bundle(case, tmp_path / "flat")
    peak = store.profile(store.pv_active[0]).values.max()
    case = case.with_pv_capacities({0: float(peak)})
    env = VoltageControlEnv(
        EnvConfig(
            case=case,
            store=store,
            reward=RewardSpec(barrier=BarrierSpec("l1")),
            episode_length=30,
            data_noise_sigma=0.0,
            offset_mode="fixed",
        )
    )
    results = droop_rollout(env, DroopParams(), seed=0)
    for r in results:
        np.testing.assert_array_equal(r.info["q_pv_mvar"], np.zeros(1))


def test_droop_fixed_point_settles_overvoltage(tmp_path):
    steps = 480
    load = np.full(steps, 0.02)
    pv = np.full(steps, 1.0)
    env = _two_bus_env(tmp_path / "fp", load, pv, s_max=2.0)
    results = droop_rollout(env, DroopParams(), seed=0, fixed_point=True)
    v_terminal = results[-1].info["grid_state"].v[1]
    assert abs(v_terminal - 1.0) < 0.05


# -- OPF -----------------------------------------------------------------------


def brute_force_two_bus(case, inj, q_cap, resolution=1e-4):
    """Vectorized exhaustive search over the single reactive setpoint.

    Independent of Newton-Raphson: solves each candidate with the exact
    2-bus fixed-point relation.
    """
    br = case.branches[0]
    z = complex(br.r, br.x)
    p_net = inj.p_load.get(1, 0.0) - inj.p_pv.get(1, 0.0)
    q_grid = np.arange(-q_cap, q_cap + resolution / 2, resolution)
    q_net = inj.q_load.get(1, 0.0) - q_grid
    v1 = np.ones_like(q_grid, dtype=complex)
    s = p_net + 1j * q_net
    for _ in range(400):
        v1 = 1.0 - z * np.conj(s / v1)
    current = (1.0 - v1) / z
    p0 = (1.0 * np.conj(current)).real
    return q_grid, p0


def test_opf_two_bus_matches_reactive_load():
    # with voltage constraints inactive the optimum cancels the reactive load
    case = two_bus_case(r=0.05, x=0.08, with_pv=True, s_max=1.0)
    inj = InjectionSet(p_pv={1: 0.4}, p_load={1: 0.3}, q_load={1: 0.12})
    solution = opf_solve(case, inj)
    assert solution.feasible
    assert abs(solution.q_pv[0] - 0.12) <= 1e-3


def test_opf_two_bus_matches_exhaustive_grid():
    case = two_bus_case(r=0.05, x=0.08, with_pv=True, s_max=0.55)
    inj = InjectionSet(p_pv={1: 0.45}, p_load={1: 0.25}, q_load={1: 0.1})
    solution = opf_solve(case, inj)
    q_cap = np.sqrt(0.55**2 - 0.45**2)
    q_grid, p0 = brute_force_two_bus(case, inj, q_cap)
    assert solution.objective / case.base_power <= p0.min() + 1e-6
    assert abs(solution.q_pv[0]) <= q_cap  # capacity respected exactly


def test_opf_zero_capacity_is_no_control():
    case = two_bus_case(r=0.05, x=0.08, with_pv=True, s_max=0.4)
    inj = InjectionSet(p_pv={1: 0.4}, p_load={1: 0.2}, q_load={1: 0.08})
    solution = opf_solve(case, inj)
    assert solution.q_pv[0] == 0.0
    reference = solve_power_flow(case, inj)
    assert solution.objective == pytest.approx(reference.slack_p, abs=1e-9)


def test_opf_infeasible_reports_violation(tmp_path):
    # tiny capacity cannot cure the overvoltage: slack_violation > 0
    case = two_bus_case(r=0.12, x=0.1, with_pv=True, s_max=1.01)
    inj = InjectionSet(p_pv={1: 1.0}, p_load={1: 0.0}, q_load={1: 0.0})
    solution = opf_solve(case, inj)
    assert not solution.feasible
    assert solution.slack_violation > 0.01


def test_opf_policy_acts_on_33_bus(env33_factory):
    env = env33_factory(episode_length=4)
    obs = env.reset(seed=9)
    policy = OpfPolicy(max_sweeps=40)
    actions = policy.act(env, obs)
    assert actions.shape == (6,)
    assert np.all(np.abs(actions) <= 0.8 + 1e-12)
    result = env.step(actions)
    assert not result.info["safety_violation"]


def test_make_policy_names():
    assert isinstance(make_policy("none"), NoControlPolicy)
    assert isinstance(make_policy("droop"), DroopPolicy)
    assert isinstance(make_policy("opf"), OpfPolicy)
    assert isinstance(make_policy("random", seed=1), RandomPolicy)
    with pytest.raises(ValueError):
        make_policy("magic")
