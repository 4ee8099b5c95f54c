from __future__ import annotations

import numpy as np
import pytest

from gridloop.linearizer import lindistflow
from gridloop.sensing import (
    MeasurementPlan,
    build_linear_measurement_model,
    make_plan,
    place_sensors,
    sample_measurements,
)


def _plan33(net, sensors=(5, 17), sensor_sigma=0.01, pseudo_sigma=0.5, seed=99, **kw):
    return make_plan(
        n=net.n,
        sensor_nodes=sensors,
        sensor_fraction=None,
        placement_seed=0,
        sensor_sigma=sensor_sigma,
        pseudo_sigma=pseudo_sigma,
        pseudo_base=(net.p0, net.q0),
        seed=seed,
        **kw,
    )


def test_noiseless_batch_reads_truth_and_base(net33):
    plan = _plan33(net33, sensor_sigma=0.0, pseudo_sigma=0.0)
    truth_v = np.linspace(0.95, 1.0, 32)
    batch = sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=3)
    assert batch.y[0] == truth_v[4]
    assert batch.y[1] == truth_v[16]
    assert np.array_equal(batch.y[2:34], net33.p0)
    assert np.array_equal(batch.y[34:], net33.q0)
    assert (batch.sigma > 0).all()


def test_determinism_same_seed_and_iteration(net33):
    plan = _plan33(net33)
    truth_v = np.full(32, 0.98)
    a = sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=7)
    b = sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=7)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.sigma, b.sigma)
    c = sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=8)
    assert not np.array_equal(a.y, c.y)
    d = sample_measurements(plan.with_seed(100), truth_v, net33.p0, net33.q0, iter=7)
    assert not np.array_equal(a.y, d.y)


def test_pseudo_fixed_reuses_iteration_zero_noise(net33):
    plan = _plan33(net33, pseudo_fixed=True)
    truth_v = np.full(32, 1.0)
    a = sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=0)
    b = sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=5)
    ns = len(plan.sensor_nodes)
    assert np.array_equal(a.y[ns:], b.y[ns:])
    assert not np.array_equal(a.y[:ns], b.y[:ns])


def test_sensor_channel_statistics(net33):
    # 1e5 draws of one sensor channel at truth 1.0 with 1% relative noise.
    plan = _plan33(net33, sensors=(1,), sensor_sigma=0.01, pseudo_sigma=0.5)
    truth_v = np.ones(32)
    vals = np.array(
        [
            sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=k).y[0]
            for k in range(100_000)
        ]
    )
    assert abs(vals.mean() - 1.0) < 1e-4
    assert abs(vals.std() - 0.01) < 0.01 * 0.02


def test_channel_cross_correlation(net33):
    plan = _plan33(net33, sensors=(3, 9), sensor_sigma=0.01, pseudo_sigma=0.5)
    truth_v = np.ones(32)
    draws = np.array(
        [
            sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=k).y[:6]
            for k in range(10_000)
        ]
    )
    corr = np.corrcoef(draws, rowvar=False)
    off = corr[~np.eye(6, dtype=bool)]
    assert np.abs(off).max() <= 0.03


def test_noise_independent_across_iterations(net33):
    plan = _plan33(net33, sensors=(3,), sensor_sigma=0.01, pseudo_sigma=0.5)
    truth_v = np.ones(32)
    series = np.array(
        [
            sample_measurements(plan, truth_v, net33.p0, net33.q0, iter=k).y[0]
            for k in range(10_000)
        ]
    )
    lagged = np.corrcoef(series[:-1], series[1:])[0, 1]
    assert abs(lagged) <= 0.03


def test_pseudo_floor_guards_zero_load_nodes(net33):
    p0 = net33.p0.copy()
    p0[5] = 0.0
    plan = make_plan(
        n=32, sensor_nodes=(), sensor_fraction=None, placement_seed=0,
        sensor_sigma=0.0, pseudo_sigma=0.5, pseudo_base=(p0, net33.q0), seed=1,
    )
    batch = sample_measurements(plan, np.ones(32), p0, net33.q0, iter=0)
    assert batch.sigma[5] == pytest.approx(0.5 * 0.01)


def test_place_sensors_fraction():
    nodes = place_sensors(32, 0.036, placement_seed=4)
    assert len(nodes) == 1
    assert 1 <= nodes[0] <= 32
    assert place_sensors(32, 0.036, placement_seed=4) == nodes
    many = place_sensors(1000, 0.036, placement_seed=4)
    assert len(many) == 36
    assert len(set(many)) == 36


def test_plan_validation(net33):
    with pytest.raises(ValueError, match="sensor nodes"):
        _plan33(net33, sensors=(0,))
    with pytest.raises(ValueError, match="sensor nodes"):
        _plan33(net33, sensors=(33,))
    with pytest.raises(ValueError, match="nonnegative"):
        _plan33(net33, sensor_sigma=-0.1)


def test_linear_measurement_model_structure(net33):
    model = lindistflow(net33)
    plan = _plan33(net33, sensors=(7,))
    H, W = build_linear_measurement_model(plan, model)
    assert H.shape == (1 + 64, 64)
    assert np.array_equal(H[0, :32], model.A[6, :])
    assert np.array_equal(H[0, 32:], model.B[6, :])
    assert np.array_equal(H[1:, :], np.eye(64))
    w = W.diagonal()
    assert w[0] == pytest.approx((0.01 * 1.0) ** -2)


def test_no_sensor_model_is_pure_selector(net33):
    model = lindistflow(net33)
    plan = make_plan(
        n=32, sensor_nodes=(), sensor_fraction=None, placement_seed=0,
        sensor_sigma=0.01, pseudo_sigma=0.5, pseudo_base=(net33.p0, net33.q0), seed=1,
    )
    H, W = build_linear_measurement_model(plan, model)
    assert np.array_equal(H, np.eye(64))


def test_observability_normal_matrix(net33):
    # H^T W H must be positive definite with finite condition number.
    model = lindistflow(net33)
    plan = _plan33(net33, sensors=tuple(place_sensors(32, 0.1, 2)))
    H, W = build_linear_measurement_model(plan, model)
    normal = H.T @ (W @ H)
    eigvals = np.linalg.eigvalsh(normal)
    assert eigvals.min() > 0
    assert eigvals.max() / eigvals.min() < 1e12
