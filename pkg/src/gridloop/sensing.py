"""Measurement generation: sparse voltage sensors plus injection pseudo-measurements.

Each iteration produces one stacked vector y = [sensor voltages; pseudo p;
pseudo q]. Sensor noise is relative to the instantaneous true voltage; pseudo
channels read the configured nominal base injections corrupted by noise whose
standard deviation is relative to the base magnitude (floored at 0.01 pu so no
channel has zero variance). Randomness comes from a counter-based Philox4x64
stream keyed by (seed, iteration), making trials reproducible and independent
of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linearizer import LinearFlowModel

# Relative pseudo noise is taken against at least this magnitude, and recorded
# channel deviations are floored so the WLS weight matrix always exists. The
# floor also bounds the weight spread across channels, keeping the factorized
# normal equations inside double-precision headroom when some channels are
# configured noiseless.
PSEUDO_MAGNITUDE_FLOOR = 0.01
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class MeasurementPlan:
    """Where sensors sit and how noisy every channel is.

    ``pseudo_base`` holds the per-node injections used as pseudo-measurement
    means (normally the nominal load pattern). With ``pseudo_fixed`` the
    pseudo noise drawn at iteration 0 is reused every iteration.
    """

    n: int
    sensor_nodes: tuple[int, ...]
    sensor_sigma: float
    pseudo_sigma: float
    pseudo_base: tuple[tuple[float, ...], tuple[float, ...]]
    seed: int
    pseudo_fixed: bool = False

    def __post_init__(self) -> None:
        if any(not (1 <= s <= self.n) for s in self.sensor_nodes):
            raise ValueError(f"sensor nodes must lie in 1..{self.n}: {self.sensor_nodes}")
        if len(set(self.sensor_nodes)) != len(self.sensor_nodes):
            raise ValueError("duplicate sensor nodes")
        if self.sensor_sigma < 0 or self.pseudo_sigma < 0:
            raise ValueError("noise levels must be nonnegative")
        if len(self.pseudo_base[0]) != self.n or len(self.pseudo_base[1]) != self.n:
            raise ValueError("pseudo_base must provide (p, q) for every node")

    @property
    def n_channels(self) -> int:
        return len(self.sensor_nodes) + 2 * self.n

    def with_seed(self, seed: int) -> "MeasurementPlan":
        return MeasurementPlan(
            n=self.n,
            sensor_nodes=self.sensor_nodes,
            sensor_sigma=self.sensor_sigma,
            pseudo_sigma=self.pseudo_sigma,
            pseudo_base=self.pseudo_base,
            seed=seed,
            pseudo_fixed=self.pseudo_fixed,
        )


@dataclass(frozen=True)
class MeasurementBatch:
    """One sampled measurement vector with per-channel deviations.

    ``channel_map[i]`` is ("v"|"p"|"q", node). ``sigma`` carries the absolute
    standard deviations the sampler used (floored to stay positive), which is
    what the estimator's weights and variance analytics consume.
    """

    y: np.ndarray
    sigma: np.ndarray
    channel_map: tuple[tuple[str, int], ...]

    def sensor_values(self, n_sensors: int) -> np.ndarray:
        return self.y[:n_sensors]


def make_plan(
    n: int,
    sensor_nodes: tuple[int, ...] | None,
    sensor_fraction: float | None,
    placement_seed: int,
    sensor_sigma: float,
    pseudo_sigma: float,
    pseudo_base: tuple[np.ndarray, np.ndarray],
    seed: int,
    pseudo_fixed: bool = False,
) -> MeasurementPlan:
    """Build a plan from either an explicit sensor set or a random placement
    of round(fraction * n) sensors (at least one)."""
    if sensor_nodes is None:
        if sensor_fraction is None:
            raise ValueError("either sensor_nodes or sensor_fraction is required")
        sensor_nodes = place_sensors(n, sensor_fraction, placement_seed)
    return MeasurementPlan(
        n=n,
        sensor_nodes=tuple(sorted(int(s) for s in sensor_nodes)),
        sensor_sigma=float(sensor_sigma),
        pseudo_sigma=float(pseudo_sigma),
        pseudo_base=(tuple(map(float, pseudo_base[0])), tuple(map(float, pseudo_base[1]))),
        seed=int(seed),
        pseudo_fixed=bool(pseudo_fixed),
    )


def place_sensors(n: int, fraction: float, placement_seed: int) -> tuple[int, ...]:
    """Randomly pick round(fraction * n) distinct nodes, at least one."""
    count = max(1, int(round(fraction * n)))
    if count > n:
        raise ValueError(f"sensor fraction {fraction} exceeds the network size")
    rng = np.random.Generator(np.random.Philox(key=placement_seed))
    nodes = rng.choice(np.arange(1, n + 1), size=count, replace=False)
    return tuple(sorted(int(v) for v in nodes))


def _normals(seed: int, lane: int, k: int, count: int) -> np.ndarray:
    """Standard normals from the Philox4x64 stream keyed by (seed, lane) with
    the iteration index in the top counter word, so streams for different
    iterations never overlap."""
    gen = np.random.Generator(np.random.Philox(counter=[0, 0, 0, k], key=[seed, lane]))
    return gen.standard_normal(count)


def sample_measurements(
    plan: MeasurementPlan,
    truth_v: np.ndarray,
    truth_p: np.ndarray,
    truth_q: np.ndarray,
    iter: int,
) -> MeasurementBatch:
    """Draw the iteration-k measurement vector.

    Sensor channels read truth_v[node] * (1 + sensor_sigma * xi); pseudo
    channels read the plan's base injections plus absolute noise (the
    instantaneous truth_p/truth_q are accepted for interface completeness but
    pseudo means deliberately track the configured base pattern). Identical
    (plan.seed, iter) always yields a bit-identical batch.
    """
    del truth_p, truth_q
    n = plan.n
    sensors = np.array(plan.sensor_nodes, dtype=int)
    ns = sensors.size

    v_true = np.asarray(truth_v, dtype=float)[sensors - 1]
    sensor_std = plan.sensor_sigma * np.abs(v_true)
    xi_v = _normals(plan.seed, 0, iter, ns) if ns else np.empty(0)
    y_v = v_true * (1.0 + plan.sensor_sigma * xi_v)

    base_p = np.array(plan.pseudo_base[0])
    base_q = np.array(plan.pseudo_base[1])
    pseudo_std = plan.pseudo_sigma * np.maximum(
        np.abs(np.concatenate([base_p, base_q])), PSEUDO_MAGNITUDE_FLOOR
    )
    k_pseudo = 0 if plan.pseudo_fixed else iter
    xi_z = _normals(plan.seed, 1, k_pseudo, 2 * n)
    y_z = np.concatenate([base_p, base_q]) + pseudo_std * xi_z

    channel_map = tuple(
        [("v", int(s)) for s in sensors]
        + [("p", i) for i in range(1, n + 1)]
        + [("q", i) for i in range(1, n + 1)]
    )
    return MeasurementBatch(
        y=np.concatenate([y_v, y_z]),
        sigma=np.maximum(np.concatenate([sensor_std, pseudo_std]), SIGMA_FLOOR),
        channel_map=channel_map,
    )


def plan_reference_sigmas(plan: MeasurementPlan, model: LinearFlowModel) -> np.ndarray:
    """Per-channel deviations at the nominal reference (sensor noise taken
    against the intercept voltage). These weights are iteration-independent,
    so the estimator's factorizations can be cached per plan."""
    sensors = np.array(plan.sensor_nodes, dtype=int)
    sensor_std = plan.sensor_sigma * np.abs(model.r0[sensors - 1])
    base = np.abs(np.concatenate([plan.pseudo_base[0], plan.pseudo_base[1]]))
    pseudo_std = plan.pseudo_sigma * np.maximum(base, PSEUDO_MAGNITUDE_FLOOR)
    return np.maximum(np.concatenate([sensor_std, pseudo_std]), SIGMA_FLOOR)


def build_linear_measurement_model(
    plan: MeasurementPlan, model: LinearFlowModel
) -> tuple[np.ndarray, sp.dia_matrix]:
    """Explicit (H, W) for the state z = (p, q).

    Sensor rows are the voltage rows [A_i, B_i] of the linear model (the r0
    intercept is folded into y by the caller subtracting it); pseudo rows are
    unit selectors. W is the diagonal inverse-variance weight matrix built
    from the plan's reference deviations. Full column rank is structural: the
    pseudo rows form an identity over the whole state, so the observability
    requirement holds for every plan with finite pseudo noise.
    """
    n = plan.n
    sensors = np.array(plan.sensor_nodes, dtype=int)
    H = np.vstack(
        [
            np.hstack([model.A[sensors - 1, :], model.B[sensors - 1, :]]),
            np.eye(2 * n),
        ]
    )
    sigma = plan_reference_sigmas(plan, model)
    if not (sigma > 0).all():
        raise ValueError("every channel needs positive deviation for W to exist")
    W = sp.diags(sigma**-2.0)
    return H, W
