from __future__ import annotations

import numpy as np
import pytest

from gridloop.feeders import synthetic_feeder
from gridloop.netmodel import load_network
from gridloop.plant import PowerFlowError, solve_power_flow, true_quantities

from oracles import newton_power_flow, one_branch_voltage


def test_no_load_flat_solution(net33):
    sol = solve_power_flow(net33, np.zeros(32), np.zeros(32))
    assert sol.converged
    assert np.allclose(sol.v_mag, 1.0, atol=1e-14)
    assert sol.p_slack == pytest.approx(0.0, abs=1e-12)
    assert sol.q_slack == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(true_quantities(sol), 1.0)


def test_two_bus_matches_closed_form(twobus_json):
    net = load_network(twobus_json)
    sol = solve_power_flow(net, np.array([-0.1]), np.array([-0.05]))
    expected = one_branch_voltage(1.0, complex(0.01, 0.02), -0.1, -0.05)
    assert sol.converged
    assert sol.v_mag[0] == pytest.approx(expected, abs=1e-12)
    assert true_quantities(sol)[0] == pytest.approx(expected, abs=1e-12)


def test_ieee33_matches_newton_oracle(net33):
    sol = solve_power_flow(net33, net33.p0, net33.q0)
    assert sol.converged
    v_oracle = np.abs(newton_power_flow(net33, net33.p0, net33.q0))
    assert np.abs(sol.v_mag - v_oracle).max() < 1e-8
    # Published profile: minimum voltage ~0.9131 pu at the last main-feeder bus.
    assert sol.v_mag.min() == pytest.approx(0.9131, abs=1e-3)
    assert int(np.argmin(sol.v_mag)) == 16


def test_random_loadings_match_newton_oracle(net33):
    rng = np.random.default_rng(42)
    for _ in range(10):
        scale_p = rng.uniform(0.2, 1.3, size=32)
        scale_q = rng.uniform(0.2, 1.3, size=32)
        p = net33.p0 * scale_p
        q = net33.q0 * scale_q
        sol = solve_power_flow(net33, p, q)
        assert sol.converged
        v_oracle = np.abs(newton_power_flow(net33, p, q))
        assert np.abs(sol.v_mag - v_oracle).max() < 1e-8


def test_energy_consistency(net33):
    # Slack injection covers total load plus line losses.
    sol = solve_power_flow(net33, net33.p0, net33.q0)
    v = sol.v_mag * np.exp(1j * sol.v_ang)
    full_v = np.concatenate(([net33.v0], v))
    losses = 0.0
    for ln in net33.lines:
        i_line = (full_v[ln.from_bus] - full_v[ln.to_bus]) / ln.z
        losses += (abs(i_line) ** 2 * ln.z).real
    assert sol.p_slack == pytest.approx(-net33.p0.sum() + losses, abs=1e-9)


def test_voltage_monotone_in_load(net33):
    # Raising the load magnitude at one node weakly lowers its own voltage.
    node = 17
    prev = np.inf
    for scale in [0.5, 1.0, 1.5, 2.0, 2.5]:
        p = net33.p0.copy()
        p[node] = net33.p0[node] * scale
        sol = solve_power_flow(net33, p, net33.q0)
        assert sol.converged
        assert sol.v_mag[node] <= prev + 1e-12
        prev = sol.v_mag[node]


def test_shunt_enters_as_current_injection(tmp_path):
    import json

    path = tmp_path / "shunted.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [{"id": 0}, {"id": 1, "shunt_g": 0.1, "shunt_b": -0.3}],
                "lines": [{"from": 0, "to": 1, "r": 0.01, "x": 0.02}],
            }
        )
    )
    net = load_network(path)
    sol = solve_power_flow(net, np.zeros(1), np.zeros(1))
    assert sol.converged
    v = np.abs(newton_power_flow(net, np.zeros(1), np.zeros(1)))
    assert sol.v_mag[0] == pytest.approx(v[0], abs=1e-10)


def test_nonconvergence_diagnostic(twobus_json):
    net = load_network(twobus_json)
    # Far beyond maximum loadability for this branch: must report failure.
    sol = solve_power_flow(net, np.array([-40.0]), np.array([-20.0]), max_iter=80)
    assert not sol.converged
    assert len(sol.residual_history) >= 1
    with pytest.raises(PowerFlowError):
        true_quantities(sol)


def test_level_sweep_agrees_with_dense_path():
    import gridloop.plant as plant_mod

    net = synthetic_feeder(300, seed=5)
    sol_dense = solve_power_flow(net, net.p0, net.q0)
    plant_mod._structure.cache_clear()
    old = plant_mod._DENSE_LIMIT
    plant_mod._DENSE_LIMIT = 1
    try:
        sol_level = solve_power_flow(net, net.p0, net.q0)
    finally:
        plant_mod._DENSE_LIMIT = old
        plant_mod._structure.cache_clear()
    assert sol_dense.converged and sol_level.converged
    assert np.abs(sol_dense.v_mag - sol_level.v_mag).max() < 1e-12


def test_true_quantities_shape(net33):
    sol = solve_power_flow(net33, 0.8 * net33.p0, 0.8 * net33.q0)
    assert true_quantities(sol).shape == (32,)
