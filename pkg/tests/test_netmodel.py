from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridloop.netmodel import (
    FeasibleSet,
    NetworkError,
    build_admittance,
    load_network,
    path_sum_matrix,
    project_feasible,
)


def test_load_minimal_two_bus(twobus_json):
    net = load_network(twobus_json)
    assert net.n == 1
    assert net.v0 == 1.0
    assert net.lines[0].z == complex(0.01, 0.02)
    assert net.nodes[1].p0 == -0.1 and net.nodes[1].q0 == -0.05


def test_load_ieee33_counts_and_depth(net33):
    # Published 33-bus feeder: 32 PQ nodes, 32 branches, main feeder 17 deep.
    assert net33.n == 32
    assert len(net33.lines) == 32
    assert net33.depth.max() == 17
    assert net33.p0.sum() == pytest.approx(-0.3715)
    assert net33.q0.sum() == pytest.approx(-0.23)


def test_loop_edge_rejected(tmp_path):
    path = tmp_path / "loop.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [{"id": 0}, {"id": 1}, {"id": 2}],
                "lines": [
                    {"from": 0, "to": 1, "r": 0.01, "x": 0.01},
                    {"from": 1, "to": 2, "r": 0.01, "x": 0.01},
                    {"from": 2, "to": 0, "r": 0.01, "x": 0.01},
                ],
            }
        )
    )
    with pytest.raises(NetworkError, match="non-radial"):
        load_network(path)


def test_dangling_endpoint_rejected(tmp_path):
    path = tmp_path / "dangling.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [{"id": 0}, {"id": 1}],
                "lines": [{"from": 0, "to": 9, "r": 0.01, "x": 0.01}],
            }
        )
    )
    with pytest.raises(NetworkError, match="unknown node 9"):
        load_network(path)


def test_empty_feasible_set_rejected(tmp_path):
    path = tmp_path / "bad_box.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [
                    {"id": 0},
                    {"id": 1, "p0": 0.0, "q0": 0.0, "pmin": 0.2, "pmax": 0.1,
                     "qmin": 0, "qmax": 0, "smax": None},
                ],
                "lines": [{"from": 0, "to": 1, "r": 0.01, "x": 0.01}],
            }
        )
    )
    with pytest.raises(NetworkError, match="empty feasible set at node 1"):
        load_network(path)


def test_zero_impedance_rejected(tmp_path):
    path = tmp_path / "zero_z.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [{"id": 0}, {"id": 1}],
                "lines": [{"from": 0, "to": 1, "r": 0.0, "x": 0.0}],
            }
        )
    )
    with pytest.raises(NetworkError, match="zero impedance"):
        load_network(path)


def test_csv_pair_roundtrip(tmp_path):
    (tmp_path / "buses.csv").write_text(
        "id,p0,q0,pmin,pmax,qmin,qmax,smax\n"
        "0,0,0,,,,,\n"
        "1,-0.1,-0.05,-0.1,0,-0.05,0,\n"
    )
    (tmp_path / "branches.csv").write_text("from,to,r,x\n0,1,0.01,0.02\n")
    net = load_network(tmp_path)
    assert net.n == 1
    assert net.feasible[0].p_max == 0.0


def test_line_orientation_normalized(tmp_path):
    path = tmp_path / "reversed.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [{"id": 0}, {"id": 1}, {"id": 2}],
                "lines": [
                    {"from": 1, "to": 0, "r": 0.01, "x": 0.01},
                    {"from": 2, "to": 1, "r": 0.01, "x": 0.01},
                ],
            }
        )
    )
    net = load_network(path)
    assert [(ln.from_bus, ln.to_bus) for ln in net.lines] == [(0, 1), (1, 2)]


# ---------------------------------------------------------------------------
# Admittance


def test_admittance_two_bus(twobus_json):
    net = load_network(twobus_json)
    y = 1.0 / complex(0.01, 0.02)
    Y, y_bar, y00 = build_admittance(net)
    assert Y.toarray()[0, 0] == pytest.approx(y)
    assert y_bar[0] == pytest.approx(-y)
    assert y00 == pytest.approx(y)


def test_admittance_three_bus_chain_with_shunt(tmp_path):
    # Hand expansion: Y_11 = y_01 + y_12 + y_shunt at node 1.
    path = tmp_path / "chain.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [
                    {"id": 0},
                    {"id": 1, "shunt_g": 0.5, "shunt_b": -0.25},
                    {"id": 2},
                ],
                "lines": [
                    {"from": 0, "to": 1, "r": 0.01, "x": 0.02},
                    {"from": 1, "to": 2, "r": 0.03, "x": 0.01},
                ],
            }
        )
    )
    net = load_network(path)
    y01 = 1.0 / complex(0.01, 0.02)
    y12 = 1.0 / complex(0.03, 0.01)
    Y, y_bar, y00 = build_admittance(net)
    dense = Y.toarray()
    assert dense[0, 0] == pytest.approx(y01 + y12 + complex(0.5, -0.25))
    assert dense[0, 1] == dense[1, 0] == pytest.approx(-y12)
    assert dense[1, 1] == pytest.approx(y12)
    assert y_bar[0] == pytest.approx(-y01)


def test_admittance_row_consistency_no_shunts(net33):
    Y, y_bar, _ = build_admittance(net33)
    rows = np.asarray(Y.sum(axis=1)).ravel() + y_bar
    assert np.abs(rows).max() < 1e-12


def test_admittance_symmetry(net33):
    Y, _, _ = build_admittance(net33)
    d = (Y - Y.T).toarray()
    assert np.abs(d).max() == 0.0


def test_path_sum_matrix_shared_root_branch(tmp_path):
    # Two leaves behind a common branch: off-diagonal = shared branch weight.
    path = tmp_path / "fork.json"
    path.write_text(
        json.dumps(
            {
                "v0": 1.0,
                "nodes": [{"id": 0}, {"id": 1}, {"id": 2}, {"id": 3}],
                "lines": [
                    {"from": 0, "to": 1, "r": 0.05, "x": 0.1},
                    {"from": 1, "to": 2, "r": 0.02, "x": 0.1},
                    {"from": 1, "to": 3, "r": 0.03, "x": 0.1},
                ],
            }
        )
    )
    net = load_network(path)
    R = path_sum_matrix(net, net.branch_z.real)
    assert R[1, 2] == pytest.approx(0.05)
    assert R[2, 1] == pytest.approx(0.05)
    assert R[1, 1] == pytest.approx(0.07)
    assert R[2, 2] == pytest.approx(0.08)
    assert R[0, 1] == R[0, 2] == pytest.approx(0.05)


# ---------------------------------------------------------------------------
# Projection


BOX = FeasibleSet(p_min=0.0, p_max=1.0, q_min=0.0, q_max=1.0)


def test_projection_interior_point_unchanged():
    assert project_feasible(0.5, 0.5, BOX) == (0.5, 0.5)


def test_projection_clamps_to_box():
    assert project_feasible(2.0, 0.0, BOX) == (1.0, 0.0)


def test_projection_radial_scaling_onto_disk():
    fs = FeasibleSet(p_min=0.0, p_max=2.0, q_min=0.0, q_max=2.0, s_max=1.0)
    p, q = project_feasible(1.0, 1.0, fs)
    assert p == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
    assert q == pytest.approx(math.sqrt(2) / 2, abs=1e-12)


def test_projection_box_and_disk_both_active():
    fs = FeasibleSet(p_min=0.0, p_max=0.3, q_min=-2.0, q_max=2.0, s_max=1.0)
    p, q = project_feasible(2.0, 2.0, fs)
    assert p == pytest.approx(0.3, abs=1e-11)
    assert math.hypot(p, q) <= 1.0 + 1e-11
    # True projection: p clamped, q on the disk arc.
    assert q == pytest.approx(math.sqrt(1 - 0.3**2), abs=1e-9)


@given(
    st.floats(-3, 3), st.floats(-3, 3),
    st.floats(-3, 3), st.floats(-3, 3),
)
@settings(max_examples=200, deadline=None)
def test_projection_nonexpansive_box_disk(p1, q1, p2, q2):
    fs = FeasibleSet(p_min=-1.0, p_max=0.6, q_min=-0.8, q_max=1.0, s_max=1.2)
    a = np.array(project_feasible(p1, q1, fs))
    b = np.array(project_feasible(p2, q2, fs))
    assert np.linalg.norm(a - b) <= math.hypot(p1 - p2, q1 - q2) + 1e-9


def test_projection_nonexpansive_bulk():
    rng = np.random.default_rng(7)
    fs = FeasibleSet(p_min=-1.0, p_max=0.6, q_min=-0.8, q_max=1.0, s_max=1.2)
    pts = rng.uniform(-3, 3, size=(10_000, 4))
    for p1, q1, p2, q2 in pts:
        a = np.array(project_feasible(p1, q1, fs))
        b = np.array(project_feasible(p2, q2, fs))
        assert np.linalg.norm(a - b) <= math.hypot(p1 - p2, q1 - q2) + 1e-9


def test_projection_idempotent_exactly():
    rng = np.random.default_rng(3)
    fs = FeasibleSet(p_min=-1.0, p_max=0.6, q_min=-0.8, q_max=1.0, s_max=1.2)
    for p, q in rng.uniform(-3, 3, size=(300, 2)):
        once = project_feasible(p, q, fs)
        twice = project_feasible(*once, fs)
        assert twice == once


def test_unknown_format_rejected(twobus_json):
    with pytest.raises(NetworkError, match="unknown network format"):
        load_network(twobus_json, format="yaml")
