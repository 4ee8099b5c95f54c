from __future__ import annotations

import json

import numpy as np
import pytest

from gridloop.linearizer import (
    eval_linear,
    from_json,
    jacobian_linearize,
    lindistflow,
    linearize,
    to_json,
)
from gridloop.netmodel import load_network
from gridloop.plant import solve_power_flow


def test_lindistflow_two_bus(twobus_json):
    net = load_network(twobus_json)
    m = lindistflow(net)
    assert m.A[0, 0] == pytest.approx(0.01)
    assert m.B[0, 0] == pytest.approx(0.02)
    assert m.r0[0] == pytest.approx(1.0)


def test_lindistflow_shared_branch_coupling(tmp_path):
    # Two leaves behind a common branch z_c: off-diagonal entries equal r_c.
    path = tmp_path / "fork.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [{"id": 0}, {"id": 1}, {"id": 2}, {"id": 3}],
                "lines": [
                    {"from": 0, "to": 1, "r": 0.04, "x": 0.08},
                    {"from": 1, "to": 2, "r": 0.01, "x": 0.02},
                    {"from": 1, "to": 3, "r": 0.02, "x": 0.03},
                ],
            }
        )
    )
    net = load_network(path)
    m = lindistflow(net)
    assert m.A[1, 2] == pytest.approx(0.04)
    assert m.A[2, 1] == pytest.approx(0.04)
    assert m.B[1, 2] == pytest.approx(0.08)


def test_lindistflow_entrywise_nonnegative(net33):
    m = lindistflow(net33)
    assert (m.A >= 0).all()
    assert (m.B >= 0).all()
    assert np.allclose(m.A, m.A.T)


def test_jacobian_matches_lindistflow_at_no_load(twobus_json):
    net = load_network(twobus_json)
    m = jacobian_linearize(net, np.zeros(1), np.zeros(1))
    assert m.A[0, 0] == pytest.approx(0.01, abs=1e-4)
    assert m.B[0, 0] == pytest.approx(0.02, abs=1e-4)


def test_jacobian_vs_lindistflow_33bus(net33):
    lin = lindistflow(net33)
    jac = jacobian_linearize(net33, np.zeros(32), np.zeros(32))
    assert np.abs(lin.A - jac.A).max() < 1e-3
    assert np.abs(lin.B - jac.B).max() < 1e-3


def test_jacobian_intercept_reproduces_base_point(net33):
    m = jacobian_linearize(net33, net33.p0, net33.q0)
    sol = solve_power_flow(net33, net33.p0, net33.q0)
    assert np.abs(eval_linear(m, net33.p0, net33.q0) - sol.v_mag).max() < 1e-12


def test_eval_linear_at_zero_injections(net33):
    m = lindistflow(net33)
    assert np.allclose(eval_linear(m, np.zeros(32), np.zeros(32)), 1.0)


def test_eval_linear_two_bus_value(twobus_json):
    net = load_network(twobus_json)
    m = lindistflow(net)
    r = eval_linear(m, np.array([-0.1]), np.array([-0.05]))
    assert r[0] == pytest.approx(0.998)


def test_eval_linear_is_linear(net33):
    m = lindistflow(net33)
    rng = np.random.default_rng(1)
    p = rng.normal(size=32) * 0.05
    q = rng.normal(size=32) * 0.05
    base = eval_linear(m, p, q) - m.r0
    scaled = eval_linear(m, 2.5 * p, 2.5 * q) - m.r0
    assert np.allclose(scaled, 2.5 * base, atol=1e-14)


def test_eval_linear_dimension_mismatch(net33):
    m = lindistflow(net33)
    with pytest.raises(ValueError):
        eval_linear(m, np.zeros(5), np.zeros(5))


def test_linearization_accuracy_regime(net33):
    # Injections uniform within +/-150% of nominal magnitude (either sign,
    # covering curtailment and reverse flow); LinDistFlow stays within 1e-2.
    m = lindistflow(net33)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        p = rng.uniform(-1.5, 1.5, 32) * np.abs(net33.p0)
        q = rng.uniform(-1.5, 1.5, 32) * np.abs(net33.q0)
        sol = solve_power_flow(net33, p, q)
        assert sol.converged
        worst = max(worst, np.abs(eval_linear(m, p, q) - sol.v_mag).max())
    assert worst <= 0.01


def test_linearize_dispatch(net33):
    assert linearize(net33, "lindistflow").method == "lindistflow"
    assert linearize(net33, "jacobian").method == "jacobian"
    with pytest.raises(ValueError):
        linearize(net33, "nope")


def test_json_roundtrip(tmp_path, net33):
    m = jacobian_linearize(net33, net33.p0, net33.q0)
    path = tmp_path / "model.json"
    to_json(m, path)
    back = from_json(path)
    assert back.method == m.method
    assert np.array_equal(back.A, m.A)
    assert np.array_equal(back.B, m.B)
    assert np.array_equal(back.r0, m.r0)
    assert np.array_equal(back.base_point[0], m.base_point[0])
