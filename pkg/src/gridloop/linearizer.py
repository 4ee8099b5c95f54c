"""Linear voltage models r = A p + B q + r0 for radial feeders.

Two constructions are provided: the LinDistFlow common-path model, whose
squared-magnitude sensitivities are rescaled by 1/(2 v0) onto voltage
magnitude (so |v| ~ v0 + (R p + X q)/v0), and a numerical Jacobian of the
nonlinear plant around an operating point. Models are immutable and fixed for
the duration of a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netmodel import NetworkModel, path_sum_matrix
from .plant import solve_power_flow


@dataclass(frozen=True)
class LinearFlowModel:
    """Sensitivities of voltage magnitude to injections plus intercept."""

    A: np.ndarray
    B: np.ndarray
    r0: np.ndarray
    method: str
    base_point: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def n(self) -> int:
        return self.r0.shape[0]


def lindistflow(net: NetworkModel) -> LinearFlowModel:
    """LinDistFlow model: A_ij sums branch resistance over the shared
    substation path of nodes i and j (B_ij the reactance), scaled by 1/v0."""
    z = net.branch_z
    A = path_sum_matrix(net, z.real) / net.v0
    B = path_sum_matrix(net, z.imag) / net.v0
    r0 = np.full(net.n, float(net.v0))
    for m in (A, B, r0):
        m.setflags(write=False)
    return LinearFlowModel(A=A, B=B, r0=r0, method="lindistflow")


def jacobian_linearize(
    net: NetworkModel,
    p_star: np.ndarray,
    q_star: np.ndarray,
    h: float = 1e-5,
) -> LinearFlowModel:
    """Central-difference Jacobian of the plant's voltage magnitudes at
    (p*, q*); the intercept reproduces the plant exactly at the base point."""
    p_star = np.asarray(p_star, dtype=float)
    q_star = np.asarray(q_star, dtype=float)
    n = net.n
    base = _solved_v(net, p_star, q_star)
    A = np.empty((n, n))
    B = np.empty((n, n))
    for j in range(n):
        dp = np.zeros(n)
        dp[j] = h
        A[:, j] = (_solved_v(net, p_star + dp, q_star) - _solved_v(net, p_star - dp, q_star)) / (2 * h)
        B[:, j] = (_solved_v(net, p_star, q_star + dp) - _solved_v(net, p_star, q_star - dp)) / (2 * h)
    r0 = base - A @ p_star - B @ q_star
    for m in (A, B, r0):
        m.setflags(write=False)
    return LinearFlowModel(
        A=A, B=B, r0=r0, method="jacobian", base_point=(p_star.copy(), q_star.copy())
    )


def _solved_v(net: NetworkModel, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    sol = solve_power_flow(net, p, q)
    if not sol.converged:
        raise RuntimeError(
            f"power flow diverged while linearizing at a perturbed point "
            f"(residual {sol.residual:.3e})"
        )
    return sol.v_mag


def eval_linear(model: LinearFlowModel, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Evaluate r = A p + B q + r0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (model.n,) or q.shape != (model.n,):
        raise ValueError(f"expected injection vectors of length {model.n}")
    return model.A @ p + model.B @ q + model.r0


def linearize(net: NetworkModel, method: str = "lindistflow") -> LinearFlowModel:
    """Build the configured model; the Jacobian variant expands around the
    network's nominal injections."""
    if method == "lindistflow":
        return lindistflow(net)
    if method == "jacobian":
        return jacobian_linearize(net, net.p0, net.q0)
    raise ValueError(f"unknown linearization method {method!r}")


def to_json(model: LinearFlowModel, path: str | Path) -> None:
    """Cache a model to disk (row-major matrices)."""
    payload = {
        "method": model.method,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "r0": model.r0.tolist(),
        "base_point": None
        if model.base_point is None
        else [model.base_point[0].tolist(), model.base_point[1].tolist()],
    }
    Path(path).write_text(json.dumps(payload))


def from_json(path: str | Path) -> LinearFlowModel:
    payload = json.loads(Path(path).read_text())
    base = payload["base_point"]
    return LinearFlowModel(
        A=np.array(payload["A"], dtype=float),
        B=np.array(payload["B"], dtype=float),
        r0=np.array(payload["r0"], dtype=float),
        method=payload["method"],
        base_point=None if base is None else (np.array(base[0]), np.array(base[1])),
    )
