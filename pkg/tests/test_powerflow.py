import numpy as np
import pytest

from avcsim.network import ValidationError
from avcsim.powerflow import (
    InjectionSet,
    mismatch,
    solve_power_flow,
    total_loss,
    two_bus_power_loss,
    two_bus_voltage_drop,
    zero_deviation_reactive,
)
from conftest import fixed_point_two_bus, two_bus_case


def random_injections(case, rng, load_scale=1.0, pv_scale=1.0):
    """Random but physically plausible injections for a case."""
    p_load, q_load, p_pv, q_pv = {}, {}, {}, {}
    for ld in case.loads:
        p = rng.uniform(0.0, 0.12) * load_scale
        p_load[ld.bus] = p
        q_load[ld.bus] = p * rng.uniform(0.2, 0.6)
    for u in case.agents():
        p = rng.uniform(0.0, 0.8) * pv_scale
        p_pv[u.bus] = p_pv.get(u.bus, 0.0) + p
        q_pv[u.bus] = q_pv.get(u.bus, 0.0) + rng.uniform(-0.5, 0.5) * pv_scale
    return InjectionSet(p_pv=p_pv, q_pv=q_pv, p_load=p_load, q_load=q_load)


def test_flat_no_load_solution():
    case = two_bus_case()
    state = solve_power_flow(case, InjectionSet())
    assert state.converged
    assert state.iterations == 1
    np.testing.assert_array_equal(state.v, [1.0, 1.0])
    np.testing.assert_array_equal(state.theta, [0.0, 0.0])
    assert state.total_loss == 0.0


def test_two_bus_against_fixed_point_oracle():
    case = two_bus_case(r=0.1, x=0.1)
    inj = InjectionSet(p_load={1: 0.1}, q_load={1: 0.05})
    state = solve_power_flow(case, inj)
    assert state.converged
    oracle = fixed_point_two_bus(0.1, 0.1, 0.1, 0.05)
    assert abs(state.v[1] - abs(oracle)) <= 1e-6


def test_overload_has_no_solution():
    case = two_bus_case(r=0.1, x=0.1)
    inj = InjectionSet(p_load={1: 10.0}, q_load={1: 5.0})  # 100x beyond loadability
    state = solve_power_flow(case, inj)
    assert not state.converged


def test_mismatch_flat_zero():
    case = two_bus_case()
    state = solve_power_flow(case, InjectionSet())
    np.testing.assert_allclose(mismatch(case, state), 0.0, atol=1e-15)


def test_mismatch_of_converged_state_below_tolerance(case33_raw):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(5)))
    inj = random_injections(case33_raw, rng)
    state = solve_power_flow(case33_raw, inj)
    assert state.converged
    assert np.abs(mismatch(case33_raw, state)).max() <= 1e-8


def test_mismatch_flat_state_with_load():
    # flat voltages serve no load: P-residual equals the unserved -0.1 pu
    case = two_bus_case()
    flat = solve_power_flow(case, InjectionSet())
    from dataclasses import replace

    state = replace(flat, injections=InjectionSet(p_load={1: 0.1}))
    residual = mismatch(case, state)
    assert residual[0] == pytest.approx(-0.1, rel=1e-12)  # P row, bus 1
    assert residual[1] == pytest.approx(0.0, abs=1e-15)  # Q row, bus 1


def test_total_loss_matches_closed_form_and_balance():
    case = two_bus_case(r=0.1, x=0.1)
    inj = InjectionSet(p_load={1: 0.1}, q_load={1: 0.05})
    state = solve_power_flow(case, inj)
    loss = total_loss(case, state)
    closed = two_bus_power_loss(0.1, 0.1, 0.05, 0.0, 0.0, 1.0)
    # first-order formula is accurate to O(dv^2)
    assert loss == pytest.approx(closed, abs=5e-5)
    balance = state.slack_p - 0.1 - loss
    assert abs(balance) <= 1e-6


def test_loss_increases_with_resistance():
    inj = InjectionSet(p_load={1: 0.1}, q_load={1: 0.05})
    losses = []
    for r in (0.05, 0.1, 0.2):
        state = solve_power_flow(two_bus_case(r=r, x=0.1), inj)
        losses.append(state.total_loss)
    assert losses[0] < losses[1] < losses[2]


def test_total_loss_requires_convergence():
    case = two_bus_case()
    state = solve_power_flow(case, InjectionSet(p_load={1: 50.0}))
    assert not state.converged
    with pytest.raises(ValidationError, match="converged"):
        total_loss(case, state)


def test_power_balance_on_33_bus(case33_raw):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(17)))
    for _ in range(20):
        inj = random_injections(case33_raw, rng)
        state = solve_power_flow(case33_raw, inj)
        assert state.converged
        p_in = state.slack_p + sum(inj.p_pv.values()) - sum(inj.p_load.values())
        assert abs(p_in - state.total_loss) <= 1e-6
        # reactive side balances against series branch vars
        from avcsim.network import branch_admittance

        voltage = state.v * np.exp(1j * state.theta)
        q_branch = 0.0
        for br in case33_raw.branches:
            g, b = branch_admittance(br)
            y = complex(g, b)
            vf = voltage[case33_raw.bus_position(br.from_bus)] / br.tap_ratio
            vt = voltage[case33_raw.bus_position(br.to_bus)]
            current = (vf - vt) * y
            q_branch += float((current * np.conj(current)).real) * br.x
        q_in = state.slack_q + sum(inj.q_pv.values()) - sum(inj.q_load.values())
        assert abs(q_in - q_branch) <= 1e-6
        assert state.total_loss >= 0.0


def test_determinism_bit_identical(case33_raw):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(23)))
    inj = random_injections(case33_raw, rng)
    a = solve_power_flow(case33_raw, inj)
    b = solve_power_flow(case33_raw, inj)
    assert np.array_equal(a.v, b.v)
    assert np.array_equal(a.theta, b.theta)
    assert a.slack_p == b.slack_p
    assert a.total_loss == b.total_loss


def test_33_bus_reference_solution(case33_raw):
    # nominal static loading of this feeder has a well-known solution:
    # minimum voltage 0.9131 pu at bus 18, series losses 202.7 kW
    loads = {
        2: (100, 60), 3: (90, 40), 4: (120, 80), 5: (60, 30), 6: (60, 20),
        7: (200, 100), 8: (200, 100), 9: (60, 20), 10: (60, 20), 11: (45, 30),
        12: (60, 35), 13: (60, 35), 14: (120, 80), 15: (60, 10), 16: (60, 20),
        17: (60, 20), 18: (90, 40), 19: (90, 40), 20: (90, 40), 21: (90, 40),
        22: (90, 40), 23: (90, 50), 24: (420, 200), 25: (420, 200),
        26: (60, 25), 27: (60, 25), 28: (60, 20), 29: (120, 70),
        30: (200, 600), 31: (150, 70), 32: (210, 100), 33: (60, 40),
    }
    inj = InjectionSet(
        p_load={b: p / 1000 for b, (p, q) in loads.items()},
        q_load={b: q / 1000 for b, (p, q) in loads.items()},
    )
    state = solve_power_flow(case33_raw, inj)
    assert state.converged
    labels = case33_raw.bus_labels()
    assert labels[int(np.argmin(state.v))] == 18
    assert state.v.min() == pytest.approx(0.9131, abs=2e-4)
    assert state.total_loss == pytest.approx(0.2027, abs=2e-4)


def test_transformer_tap_shifts_voltage():
    case = two_bus_case()
    from dataclasses import replace as dc_replace

    tap_branch = dc_replace(case.branches[0], tap_ratio=0.95)
    tapped = dc_replace(case, branches=(tap_branch,))
    state = solve_power_flow(tapped, InjectionSet(p_load={1: 0.05}))
    assert state.converged
    assert state.v[1] > 1.0  # boost transformer raises the secondary side


# -- two-bus closed forms ------------------------------------------------------


def test_voltage_drop_zero_injections():
    assert two_bus_voltage_drop(0.1, 0.1, 0.0, 0.0, 0.0, 0.0, 1.0) == 0.0


def test_voltage_drop_hand_value():
    # (0.1*0.1 + 0.1*0.05) / 1.0
    drop = two_bus_voltage_drop(0.1, 0.1, 0.1, 0.05, 0.0, 0.0, 1.0)
    assert drop == pytest.approx(0.015, rel=1e-12)


def test_voltage_drop_balanced_injection():
    assert two_bus_voltage_drop(0.1, 0.1, 0.2, 0.1, 0.2, 0.1, 0.97) == 0.0


def test_power_loss_hand_value():
    loss = two_bus_power_loss(0.1, 0.1, 0.05, 0.0, 0.0, 1.0)
    assert loss == pytest.approx(0.00125, rel=1e-12)


def test_power_loss_balanced():
    assert two_bus_power_loss(0.1, 0.3, 0.2, 0.3, 0.2, 1.0) == 0.0


def test_power_loss_minimized_at_q_load():
    q_l = 0.17
    best = two_bus_power_loss(0.1, 0.2, q_l, 0.1, q_l, 1.0)
    for delta in (-0.05, -0.01, 0.01, 0.05):
        assert best <= two_bus_power_loss(0.1, 0.2, q_l, 0.1, q_l + delta, 1.0)


def test_zero_deviation_reactive_values():
    assert zero_deviation_reactive(0.1, 0.1, 0.3, 0.3, 0.07) == pytest.approx(0.07)
    # r/x = 1: (0.1 - 0.5) + 0.05
    assert zero_deviation_reactive(0.1, 0.1, 0.1, 0.5, 0.05) == pytest.approx(
        -0.35, rel=1e-12
    )


def test_zero_deviation_reactive_cancels_drop():
    r, x, p_l, p_pv, q_l = 0.08, 0.11, 0.2, 0.45, 0.06
    q_pv = zero_deviation_reactive(r, x, p_l, p_pv, q_l)
    drop = two_bus_voltage_drop(r, x, p_l, q_l, p_pv, q_pv, 1.0)
    assert drop == pytest.approx(0.0, abs=1e-15)


def test_quadratic_accuracy_of_drop_formula():
    # halving injections shrinks the first-order error by ~4x
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(424242)))
    for _ in range(100):
        r = rng.uniform(0.02, 0.12)
        x = rng.uniform(0.02, 0.12)
        p = rng.uniform(0.02, 0.25)
        q = rng.uniform(0.01, 0.12)
        if abs(x * p - r * q) < 0.004:  # error vanishes when xp ~ rq
            q = q + 0.08
        errors = []
        for scale in (1.0, 0.5):
            v1 = abs(fixed_point_two_bus(r, x, p * scale, q * scale))
            exact = 1.0 - v1
            approx = two_bus_voltage_drop(r, x, p * scale, q * scale, 0.0, 0.0, v1)
            errors.append(abs(exact - approx))
        ratio = errors[0] / errors[1]
        assert 3.5 <= ratio <= 4.5
