"""Regularized primal-dual gradient controller for voltage-constrained OPF.

The Lagrangian couples per-node quadratic deviation costs and a substation
tracking term with voltage-band constraints through dual pairs (mu_lower,
mu_upper), damped by a Tikhonov term -(eta/2)||mu||^2. Primal variables
descend the Lagrangian and project onto the device feasible sets; duals ascend
with the regularized residual and clip at zero. The saddle operator is
strongly monotone with modulus M = min(cost curvature, eta) and Lipschitz with
the spectral norm L of its Jacobian, so steps below 2M/L^2 contract with
per-step factor sqrt(e^2 L^2 - 2 e M + 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linearizer import LinearFlowModel
from .netmodel import NetworkModel, project_feasible_net


@dataclass(frozen=True)
class CostParams:
    """Quadratic deviation weights and the substation tracking term.

    The local cost is sum_i wp_i (p_i - p_ref_i)^2 + wq_i (q_i - q_ref_i)^2;
    the substation term alpha (P0 - p0_target)^2 uses the lossless aggregate
    P0(p) = -sum(p) for gradients while reported costs may use the plant's
    true slack power.
    """

    wp: np.ndarray
    wq: np.ndarray
    alpha: float
    p0_target: float
    p_ref: np.ndarray
    q_ref: np.ndarray

    def __post_init__(self) -> None:
        if not ((self.wp > 0).all() and (self.wq > 0).all()):
            raise ValueError("per-node cost weights must be positive (strong convexity)")
        if self.alpha < 0:
            raise ValueError("substation weight must be nonnegative")

    @classmethod
    def for_network(
        cls,
        net: NetworkModel,
        wp: float | np.ndarray = 1.0,
        wq: float | np.ndarray = 1.0,
        alpha: float = 0.0,
        p0_target: float | None = None,
    ) -> "CostParams":
        """Deviation-from-nominal cost; the substation target defaults to the
        lossless nominal import -sum(p0)."""
        n = net.n
        return cls(
            wp=np.broadcast_to(np.asarray(wp, dtype=float), (n,)).copy(),
            wq=np.broadcast_to(np.asarray(wq, dtype=float), (n,)).copy(),
            alpha=float(alpha),
            p0_target=float(-net.p0.sum()) if p0_target is None else float(p0_target),
            p_ref=net.p0.copy(),
            q_ref=net.q0.copy(),
        )

    def local_cost(self, p: np.ndarray, q: np.ndarray) -> float:
        return float(
            np.sum(self.wp * (p - self.p_ref) ** 2) + np.sum(self.wq * (q - self.q_ref) ** 2)
        )

    def substation_cost(self, p0_actual: float) -> float:
        return float(self.alpha * (p0_actual - self.p0_target) ** 2)


@dataclass(frozen=True)
class ControllerConfig:
    """Step sizes, Tikhonov coefficient, and the voltage band."""

    eps_primal: float
    eps_dual: float
    eta: float = 1e-3
    v_min: float = 0.95
    v_max: float = 1.05

    def __post_init__(self) -> None:
        if min(self.eps_primal, self.eps_dual, self.eta) <= 0:
            raise ValueError("step sizes and eta must be positive")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")


@dataclass(frozen=True)
class ControllerState:
    """Iterate x = (p, q, mu_lower, mu_upper)."""

    p: np.ndarray
    q: np.ndarray
    mu_lower: np.ndarray
    mu_upper: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.mu_lower, self.mu_upper])

    def distance(self, other: "ControllerState") -> float:
        return float(np.linalg.norm(self.as_vector() - other.as_vector()))


def initial_state(net: NetworkModel) -> ControllerState:
    """Nominal injections with zero duals."""
    n = net.n
    return ControllerState(
        p=net.p0.copy(), q=net.q0.copy(), mu_lower=np.zeros(n), mu_upper=np.zeros(n)
    )


def primal_grad(
    state: ControllerState,
    cost: CostParams,
    model: LinearFlowModel,
    config: ControllerConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Lagrangian gradients in (p, q).

    The voltage constraints contribute A^T (mu_upper - mu_lower) and the B^T
    analogue; the substation term uses the lossless sensitivity dP0/dp = -1.
    ``config`` takes no part here (the gradient is step-size free) but keeps
    the controller call signatures uniform.
    """
    del config
    mu_diff = state.mu_upper - state.mu_lower
    dc0 = -2.0 * cost.alpha * (-state.p.sum() - cost.p0_target)
    g_p = 2.0 * cost.wp * (state.p - cost.p_ref) + dc0 + model.A.T @ mu_diff
    g_q = 2.0 * cost.wq * (state.q - cost.q_ref) + model.B.T @ mu_diff
    return g_p, g_q


def primal_step(
    state: ControllerState,
    grads: tuple[np.ndarray, np.ndarray],
    net: NetworkModel,
    config: ControllerConfig,
) -> ControllerState:
    """Projected gradient descent on (p, q); duals unchanged."""
    g_p, g_q = grads
    p_new, q_new = project_feasible_net(
        state.p - config.eps_primal * g_p, state.q - config.eps_primal * g_q, net
    )
    return ControllerState(
        p=p_new, q=q_new, mu_lower=state.mu_lower, mu_upper=state.mu_upper
    )


def dual_step(
    state: ControllerState, r_hat: np.ndarray, config: ControllerConfig
) -> ControllerState:
    """Regularized dual ascent with the voltage feedback r_hat, clipped at 0."""
    eps = config.eps_dual
    eta = config.eta
    mu_l = state.mu_lower + eps * ((config.v_min - r_hat) - eta * state.mu_lower)
    mu_u = state.mu_upper + eps * ((r_hat - config.v_max) - eta * state.mu_upper)
    return ControllerState(
        p=state.p,
        q=state.q,
        mu_lower=np.maximum(mu_l, 0.0),
        mu_upper=np.maximum(mu_u, 0.0),
    )


@dataclass(frozen=True)
class StepSizeCertificate:
    """Monotonicity/Lipschitz constants and the admissible step range."""

    M: float
    L: float
    eps_max: float
    eps_configured: float

    def delta(self, eps: float | None = None) -> float:
        """Squared per-step contraction factor at step size eps."""
        e = self.eps_configured if eps is None else eps
        return e * e * self.L * self.L - 2.0 * e * self.M + 1.0

    @property
    def certified(self) -> bool:
        return 0.0 < self.eps_configured < self.eps_max


def certify_step_size(
    cost: CostParams,
    model: LinearFlowModel,
    config: ControllerConfig,
    net: NetworkModel,
) -> StepSizeCertificate:
    """Bound the saddle operator's constants and the admissible step size.

    M is the smallest curvature among the separable cost terms and eta (the
    substation rank-one term only adds curvature). L is the spectral norm of
    the operator Jacobian [[Hc, G^T], [-G, eta I]] obtained by power iteration
    on J^T J; the certificate conservatively evaluates the larger of the two
    configured step sizes.
    """
    del net
    M = float(min(2.0 * cost.wp.min(), 2.0 * cost.wq.min(), config.eta))
    if M <= 0:
        raise ValueError("strong monotonicity requires positive weights and eta")
    L = _operator_norm(cost, model, config.eta)
    L = max(L, M)
    eps_max = 2.0 * M / (L * L)
    return StepSizeCertificate(
        M=M,
        L=L,
        eps_max=eps_max,
        eps_configured=float(max(config.eps_primal, config.eps_dual)),
    )


def _operator_norm(
    cost: CostParams, model: LinearFlowModel, eta: float, tol: float = 1e-13
) -> float:
    """Largest singular value of the saddle Jacobian by power iteration."""
    n = model.n
    A, B = model.A, model.B
    wp2, wq2 = 2.0 * cost.wp, 2.0 * cost.wq
    a2 = 2.0 * cost.alpha

    def j_apply(v: np.ndarray) -> np.ndarray:
        vp, vq, vl, vu = np.split(v, 4)
        mu_diff = vu - vl
        t = A @ vp + B @ vq
        return np.concatenate(
            [
                wp2 * vp + a2 * vp.sum() + A.T @ mu_diff,
                wq2 * vq + B.T @ mu_diff,
                t + eta * vl,
                -t + eta * vu,
            ]
        )

    def jt_apply(v: np.ndarray) -> np.ndarray:
        vp, vq, vl, vu = np.split(v, 4)
        mu_diff = vu - vl
        t = A @ vp + B @ vq
        return np.concatenate(
            [
                wp2 * vp + a2 * vp.sum() - A.T @ mu_diff,
                wq2 * vq - B.T @ mu_diff,
                -t + eta * vl,
                t + eta * vu,
            ]
        )

    rng = np.random.Generator(np.random.Philox(key=0))
    v = rng.standard_normal(4 * n)
    v /= np.linalg.norm(v)
    sigma2 = 0.0
    for _ in range(2000):
        w = jt_apply(j_apply(v))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - sigma2) <= tol * max(norm, 1.0):
            sigma2 = norm
            break
        sigma2 = norm
    return float(np.sqrt(sigma2))
