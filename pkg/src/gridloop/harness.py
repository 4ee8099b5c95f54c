"""Closed-loop execution: controller against plant with estimation feedback.

One iteration follows the online pattern: the plant responds to the current
injections, sensors sample that response, the estimator reconstructs the
voltage profile, the primal variables take a projected gradient step, and the
duals ascend using the reconstructed voltages. Everything is deterministic
given the scenario seeds; trials differ only through their measurement seed.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from .controller import (
    ControllerConfig,
    ControllerState,
    CostParams,
    StepSizeCertificate,
    certify_step_size,
    dual_step,
    initial_state,
    primal_grad,
    primal_step,
)
from .estimator import WlsEstimator, estimate_voltages
from .feeders import resolve_network
from .linearizer import LinearFlowModel, eval_linear, linearize
from .netmodel import NetworkModel, load_network, scale_injections
from .plant import solve_power_flow
from .sensing import MeasurementPlan, make_plan, sample_measurements

FEEDBACK_MODES = ("se_loop", "raw_measurements", "full_exact", "pseudo_only", "linear_model")


class HarnessError(RuntimeError):
    pass


class PlantDivergence(HarnessError):
    """The physical solve failed mid-run; message carries the diagnostic."""


class CertificateError(HarnessError):
    """Configured step sizes exceed the certified range and no override is set."""


@dataclass(frozen=True)
class PlanSpec:
    """Scenario-level description of the measurement system."""

    sensor_nodes: tuple[int, ...] | None = None
    sensor_fraction: float | None = 0.036
    placement_seed: int = 0
    sensor_sigma: float = 0.01
    pseudo_sigma: float = 0.5
    pseudo_fixed: bool = False


@dataclass(frozen=True)
class CostSpec:
    wp: float = 1.0
    wq: float = 1.0
    alpha: float = 0.0005
    p0_target: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce a run, serializable to the scenario file."""

    network: str
    controller: ControllerConfig
    cost: CostSpec = CostSpec()
    plan: PlanSpec = PlanSpec()
    load_scale: float = 1.0
    linearization: str = "lindistflow"
    feedback_mode: str = "se_loop"
    plant_model: str = "nonlinear"
    estimation_mode: str = "nonlinear"
    iterations: int = 1000
    trials: int = 1
    base_seed: int = 0
    allow_uncertified: bool = False
    track_saddle: bool = False
    verify_bound: bool = False
    tighten_ci: float | None = None

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.feedback_mode not in FEEDBACK_MODES:
            raise ValueError(f"feedback_mode must be one of {FEEDBACK_MODES}")
        if self.plant_model not in ("nonlinear", "linear"):
            raise ValueError("plant_model must be 'nonlinear' or 'linear'")
        if self.estimation_mode not in ("nonlinear", "linear"):
            raise ValueError("estimation_mode must be 'nonlinear' or 'linear'")

    def to_dict(self) -> dict:
        return {
            "network": self.network,
            "load_scale": self.load_scale,
            "linearization": self.linearization,
            "controller": {
                "eps_primal": self.controller.eps_primal,
                "eps_dual": self.controller.eps_dual,
                "eta": self.controller.eta,
                "v_min": self.controller.v_min,
                "v_max": self.controller.v_max,
            },
            "cost": {
                "wp": self.cost.wp,
                "wq": self.cost.wq,
                "alpha": self.cost.alpha,
                "p0_target": self.cost.p0_target,
            },
            "plan": {
                "sensor_nodes": None
                if self.plan.sensor_nodes is None
                else list(self.plan.sensor_nodes),
                "sensor_fraction": self.plan.sensor_fraction,
                "placement_seed": self.plan.placement_seed,
                "sensor_sigma": self.plan.sensor_sigma,
                "pseudo_sigma": self.plan.pseudo_sigma,
                "pseudo_fixed": self.plan.pseudo_fixed,
            },
            "feedback_mode": self.feedback_mode,
            "plant_model": self.plant_model,
            "estimation_mode": self.estimation_mode,
            "iterations": self.iterations,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "allow_uncertified": self.allow_uncertified,
            "track_saddle": self.track_saddle,
            "verify_bound": self.verify_bound,
            "tighten_ci": self.tighten_ci,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        ctl = raw["controller"]
        cost = raw.get("cost", {})
        plan = raw.get("plan", {})
        nodes = plan.get("sensor_nodes")
        return cls(
            network=raw["network"],
            load_scale=float(raw.get("load_scale", 1.0)),
            linearization=raw.get("linearization", "lindistflow"),
            controller=ControllerConfig(
                eps_primal=float(ctl["eps_primal"]),
                eps_dual=float(ctl["eps_dual"]),
                eta=float(ctl.get("eta", 1e-3)),
                v_min=float(ctl.get("v_min", 0.95)),
                v_max=float(ctl.get("v_max", 1.05)),
            ),
            cost=CostSpec(
                wp=float(cost.get("wp", 1.0)),
                wq=float(cost.get("wq", 1.0)),
                alpha=float(cost.get("alpha", 0.0005)),
                p0_target=None if cost.get("p0_target") is None else float(cost["p0_target"]),
            ),
            plan=PlanSpec(
                sensor_nodes=None if nodes is None else tuple(int(v) for v in nodes),
                sensor_fraction=plan.get("sensor_fraction", 0.036 if nodes is None else None),
                placement_seed=int(plan.get("placement_seed", 0)),
                sensor_sigma=float(plan.get("sensor_sigma", 0.01)),
                pseudo_sigma=float(plan.get("pseudo_sigma", 0.5)),
                pseudo_fixed=bool(plan.get("pseudo_fixed", False)),
            ),
            feedback_mode=raw.get("feedback_mode", "se_loop"),
            plant_model=raw.get("plant_model", "nonlinear"),
            estimation_mode=raw.get("estimation_mode", "nonlinear"),
            iterations=int(raw.get("iterations", 1000)),
            trials=int(raw.get("trials", 1)),
            base_seed=int(raw.get("base_seed", 0)),
            allow_uncertified=bool(raw.get("allow_uncertified", False)),
            track_saddle=bool(raw.get("track_saddle", False)),
            verify_bound=bool(raw.get("verify_bound", False)),
            tighten_ci=None if raw.get("tighten_ci") is None else float(raw["tighten_ci"]),
        )


@dataclass
class RunContext:
    """Prepared runtime bundle shared by every trial of one scenario."""

    cfg: ScenarioConfig
    net: NetworkModel
    model: LinearFlowModel
    cost: CostParams
    plan: MeasurementPlan
    certificate: StepSizeCertificate | None
    estimator: WlsEstimator | None
    x_star: ControllerState | None = None

    def require_certificate(self) -> StepSizeCertificate:
        if self.certificate is None:
            self.certificate = certify_step_size(
                self.cost, self.model, self.cfg.controller, self.net
            )
        return self.certificate

    @property
    def exact_full_coverage(self) -> bool:
        """Noiseless sensors on every node: the voltage readings are the truth,
        so the feedback short-circuits to them (and se_loop collapses to
        full_exact bit for bit)."""
        return (
            self.plan.sensor_sigma == 0.0
            and len(self.plan.sensor_nodes) == self.net.n
        )


def prepare(
    cfg: ScenarioConfig,
    enforce_certificate: bool = True,
    net: NetworkModel | None = None,
) -> RunContext:
    """Load the network, linearize, certify steps, and bind the estimator.

    With allow_uncertified the (possibly expensive) certificate is deferred
    until something asks for it. ``net`` short-circuits file loading for
    programmatically built feeders.
    """
    if net is None:
        net = load_network(resolve_network(cfg.network))
    net = scale_injections(net, cfg.load_scale)
    model = linearize(net, cfg.linearization)
    cost = CostParams.for_network(
        net, wp=cfg.cost.wp, wq=cfg.cost.wq, alpha=cfg.cost.alpha, p0_target=cfg.cost.p0_target
    )
    certificate = None
    if not cfg.allow_uncertified:
        certificate = certify_step_size(cost, model, cfg.controller, net)
        if enforce_certificate and not certificate.certified:
            raise CertificateError(
                f"step size {certificate.eps_configured:.3e} is not certified "
                f"(eps_max = {certificate.eps_max:.3e}); set allow_uncertified to override"
            )
    if cfg.feedback_mode == "raw_measurements":
        sensor_nodes: tuple[int, ...] | None = tuple(range(1, net.n + 1))
        fraction = None
    else:
        sensor_nodes = cfg.plan.sensor_nodes
        fraction = cfg.plan.sensor_fraction
    plan = make_plan(
        n=net.n,
        sensor_nodes=sensor_nodes,
        sensor_fraction=fraction,
        placement_seed=cfg.plan.placement_seed,
        sensor_sigma=cfg.plan.sensor_sigma,
        pseudo_sigma=cfg.plan.pseudo_sigma,
        pseudo_base=(net.p0, net.q0),
        seed=cfg.base_seed,
        pseudo_fixed=cfg.plan.pseudo_fixed,
    )
    estimator = (
        WlsEstimator(plan, model)
        if cfg.feedback_mode in ("se_loop", "pseudo_only")
        else None
    )
    ctx = RunContext(
        cfg=cfg,
        net=net,
        model=model,
        cost=cost,
        plan=plan,
        certificate=certificate,
        estimator=estimator,
    )
    if cfg.track_saddle:
        ctx.x_star = saddle_oracle(cfg, context=ctx)
    return ctx


# ---------------------------------------------------------------------------
# Closed loop


@dataclass
class SimulationTrace:
    """Per-iteration records of one trial (row k reflects iterate k)."""

    p: np.ndarray
    q: np.ndarray
    v_true: np.ndarray
    r_hat: np.ndarray
    mu_lower_norm: np.ndarray
    mu_upper_norm: np.ndarray
    cost_local: np.ndarray
    cost_substation: np.ndarray
    max_violation: np.ndarray
    se_err_mean: np.ndarray
    se_err_max: np.ndarray
    dist_to_saddle: np.ndarray
    final_state: ControllerState
    summary: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return self.p.shape[0]

    def to_csv(self, path: str | Path) -> None:
        """Write the trace in a byte-stable format (shortest round-trip floats)."""
        n = self.p.shape[1]
        cols = (
            ["iter"]
            + [f"v_true_{i}" for i in range(1, n + 1)]
            + [f"v_hat_{i}" for i in range(1, n + 1)]
            + [f"p_{i}" for i in range(1, n + 1)]
            + [f"q_{i}" for i in range(1, n + 1)]
            + [
                "mu_lower_norm",
                "mu_upper_norm",
                "cost_local",
                "cost_substation",
                "max_violation",
                "se_err_mean",
                "se_err_max",
                "dist_to_saddle",
            ]
        )
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(self.iterations):
                row = (
                    [str(k)]
                    + [repr(float(v)) for v in self.v_true[k]]
                    + [repr(float(v)) for v in self.r_hat[k]]
                    + [repr(float(v)) for v in self.p[k]]
                    + [repr(float(v)) for v in self.q[k]]
                    + [
                        repr(float(self.mu_lower_norm[k])),
                        repr(float(self.mu_upper_norm[k])),
                        repr(float(self.cost_local[k])),
                        repr(float(self.cost_substation[k])),
                        repr(float(self.max_violation[k])),
                        repr(float(self.se_err_mean[k])),
                        repr(float(self.se_err_max[k])),
                        repr(float(self.dist_to_saddle[k])),
                    ]
                )
                fh.write(",".join(row) + "\n")


def _plant_truth(ctx: RunContext, p: np.ndarray, q: np.ndarray, k: int):
    """True response and slack power under the configured plant."""
    if ctx.cfg.plant_model == "linear":
        return eval_linear(ctx.model, p, q), float(-p.sum())
    sol = solve_power_flow(ctx.net, p, q)
    if not sol.converged:
        raise PlantDivergence(
            f"plant diverged at iteration {k} (residual {sol.residual:.3e}, "
            f"{sol.iterations} sweeps; injections norm {np.linalg.norm(p + 1j * q):.3f})"
        )
    return sol.v_mag, sol.p_slack


def _feedback(
    ctx: RunContext,
    plan: MeasurementPlan,
    r_true: np.ndarray,
    p: np.ndarray,
    q: np.ndarray,
    k: int,
):
    """Voltage vector handed to the dual update, per feedback mode."""
    cfg = ctx.cfg
    mode = cfg.feedback_mode
    if mode == "full_exact":
        return r_true
    if mode == "linear_model":
        return eval_linear(ctx.model, p, q)
    batch = sample_measurements(plan, r_true, p, q, k)
    ns = len(plan.sensor_nodes)
    if mode == "raw_measurements":
        return batch.y[:ns]
    if mode == "se_loop":
        if ctx.exact_full_coverage:
            return batch.y[:ns]
        z_hat = ctx.estimator.solve(ctx.estimator.adjust(batch))
        r_hat, _ = estimate_voltages(z_hat, ctx.net, ctx.model, cfg.estimation_mode)
        return r_hat
    if mode == "pseudo_only":
        z_hat = batch.y[ns:]
        r_hat, _ = estimate_voltages(z_hat, ctx.net, ctx.model, cfg.estimation_mode)
        return r_hat
    raise HarnessError(f"unhandled feedback mode {mode}")


def run_closed_loop(
    cfg: ScenarioConfig,
    trial: int = 0,
    context: RunContext | None = None,
) -> SimulationTrace:
    """Run one trial of the feedback loop and collect its trace.

    The measurement seed for trial t is base_seed + t; everything else is
    shared across trials. Requires a certified step size unless the scenario
    sets allow_uncertified.
    """
    ctx = context if context is not None else prepare(cfg)
    k_iter = cfg.iterations
    n = ctx.net.n
    plan = ctx.plan.with_seed(cfg.base_seed + trial)

    p = np.empty((k_iter, n))
    q = np.empty((k_iter, n))
    v_true = np.empty((k_iter, n))
    r_hat_arr = np.empty((k_iter, n))
    mu_l_norm = np.empty(k_iter)
    mu_u_norm = np.empty(k_iter)
    cost_local = np.empty(k_iter)
    cost_sub = np.empty(k_iter)
    violation = np.empty(k_iter)
    se_mean = np.empty(k_iter)
    se_max = np.empty(k_iter)
    dist = np.full(k_iter, np.nan)

    x_star_vec = None if ctx.x_star is None else ctx.x_star.as_vector()
    state = initial_state(ctx.net)
    cfgc = cfg.controller
    for k in range(k_iter):
        r_true, p_slack = _plant_truth(ctx, state.p, state.q, k)
        r_hat = _feedback(ctx, plan, r_true, state.p, state.q, k)

        p[k] = state.p
        q[k] = state.q
        v_true[k] = r_true
        r_hat_arr[k] = r_hat
        mu_l_norm[k] = np.linalg.norm(state.mu_lower)
        mu_u_norm[k] = np.linalg.norm(state.mu_upper)
        cost_local[k] = ctx.cost.local_cost(state.p, state.q)
        cost_sub[k] = ctx.cost.substation_cost(p_slack)
        violation[k] = max(
            0.0,
            float(cfgc.v_min - r_true.min()),
            float(r_true.max() - cfgc.v_max),
        )
        err = np.abs(r_hat - r_true)
        se_mean[k] = err.mean()
        se_max[k] = err.max()
        if x_star_vec is not None:
            dist[k] = np.linalg.norm(state.as_vector() - x_star_vec)

        grads = primal_grad(state, ctx.cost, ctx.model, cfgc)
        new_primal = primal_step(state, grads, ctx.net, cfgc)
        new_dual = dual_step(state, r_hat, cfgc)
        state = ControllerState(
            p=new_primal.p,
            q=new_primal.q,
            mu_lower=new_dual.mu_lower,
            mu_upper=new_dual.mu_upper,
        )

    summary = {
        "trial": trial,
        "seed": plan.seed,
        "final_cost_local": float(cost_local[-1]),
        "final_cost_substation": float(cost_sub[-1]),
        "final_max_violation": float(violation[-1]),
        "final_nodes_below_vmin": int((v_true[-1] < cfgc.v_min).sum()),
        "se_err_mean_avg": float(se_mean.mean()),
    }
    return SimulationTrace(
        p=p,
        q=q,
        v_true=v_true,
        r_hat=r_hat_arr,
        mu_lower_norm=mu_l_norm,
        mu_upper_norm=mu_u_norm,
        cost_local=cost_local,
        cost_substation=cost_sub,
        max_violation=violation,
        se_err_mean=se_mean,
        se_err_max=se_max,
        dist_to_saddle=dist,
        final_state=state,
        summary=summary,
    )


def _trial_worker(args: tuple[dict, int]) -> SimulationTrace:
    raw, trial = args
    cfg = ScenarioConfig.from_dict(raw)
    return run_closed_loop(cfg, trial=trial)


def run_trials(cfg: ScenarioConfig, context: RunContext | None = None) -> list[SimulationTrace]:
    """All trials, optionally in parallel (GRIDLOOP_THREADS), in trial order.

    Results are aggregated in trial order regardless of scheduling, so
    parallel and serial runs produce identical output.
    """
    ctx = context if context is not None else prepare(cfg)
    threads = int(os.environ.get("GRIDLOOP_THREADS", "1") or "1")
    if cfg.trials == 1 or threads <= 1:
        return [run_closed_loop(cfg, trial=t, context=ctx) for t in range(cfg.trials)]
    raw = cfg.to_dict()
    with ProcessPoolExecutor(max_workers=min(threads, cfg.trials)) as pool:
        return list(pool.map(_trial_worker, [(raw, t) for t in range(cfg.trials)]))


# ---------------------------------------------------------------------------
# Saddle-point oracle


def saddle_oracle(
    cfg: ScenarioConfig,
    context: RunContext | None = None,
    n_starts: int = 3,
    fp_tol: float = 1e-12,
) -> ControllerState:
    """The unique saddle point of the regularized Lagrangian under the linear
    pipeline.

    Maximizing the duals in closed form (mu = [g]_+ / eta) turns the saddle
    problem into a strongly convex box-constrained minimization of
    C(z) + ||[g(z)]_+||^2 / (2 eta), solved from several starts (agreement
    within 1e-8 checks uniqueness) and polished by one exact solve of the
    active-set KKT system. The result must be a fixed point of the projected
    primal-dual map within ``fp_tol``.
    """
    ctx = context if context is not None else prepare(cfg, enforce_certificate=False)
    net, model, cost, cfgc = ctx.net, ctx.model, ctx.cost, ctx.cfg.controller
    n = net.n
    pmin, pmax, qmin, qmax, smax = net.box
    if np.isfinite(smax).any():
        raise HarnessError(
            "the saddle oracle supports box feasible sets only (apparent-power "
            "caps are outside the closed-form dual elimination)"
        )
    G = np.hstack([model.A, model.B])
    d_l = cfgc.v_min - model.r0
    d_u = model.r0 - cfgc.v_max
    eta = cfgc.eta
    wz = np.concatenate([2.0 * cost.wp, 2.0 * cost.wq])
    z_ref = np.concatenate([cost.p_ref, cost.q_ref])
    lo = np.concatenate([pmin, qmin])
    hi = np.concatenate([pmax, qmax])

    def objective(z):
        r = G @ z
        gl = np.maximum(d_l - r, 0.0)
        gu = np.maximum(r + d_u, 0.0)
        agg = z[:n].sum() + cost.p0_target
        val = (
            0.5 * np.sum(wz * (z - z_ref) ** 2)
            + cost.alpha * agg**2
            + (gl @ gl + gu @ gu) / (2.0 * eta)
        )
        grad = wz * (z - z_ref) + (G.T @ (gu - gl)) / eta
        grad[:n] += 2.0 * cost.alpha * agg
        return val, grad

    rng = np.random.Generator(np.random.Philox(key=cfg.base_seed))
    starts = [z_ref.copy()]
    for _ in range(max(0, n_starts - 1)):
        starts.append(lo + rng.uniform(0.0, 1.0, 2 * n) * (hi - lo))
    sols = []
    for z0 in starts:
        res = sopt.minimize(
            objective,
            np.clip(z0, lo, hi),
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": 20000, "ftol": 1e-18, "gtol": 1e-12},
        )
        sols.append(res.x)
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            if np.linalg.norm(sols[i] - sols[j]) > 1e-8:
                raise HarnessError(
                    "saddle solves from different starts disagree; "
                    "the problem may not be strongly convex as configured"
                )
    z = min(sols, key=lambda zz: objective(zz)[0])
    z = _kkt_polish(z, G, d_l, d_u, eta, wz, z_ref, cost, lo, hi, n)

    r = G @ z
    mu_l = np.maximum(d_l - r, 0.0) / eta
    mu_u = np.maximum(r + d_u, 0.0) / eta
    x_star = ControllerState(p=z[:n], q=z[n:], mu_lower=mu_l, mu_upper=mu_u)

    eps = ctx.require_certificate().eps_max / 10.0
    residual = _fixed_point_residual(x_star, ctx, eps)
    if residual > fp_tol:
        raise HarnessError(
            f"saddle candidate is not a fixed point (residual {residual:.2e} > {fp_tol:.0e})"
        )
    return x_star


def _kkt_polish(z, G, d_l, d_u, eta, wz, z_ref, cost, lo, hi, n, rounds: int = 40):
    """Solve the active-set KKT system exactly, refining the sets as needed."""
    bound_tol = 1e-9
    for _ in range(rounds):
        r = G @ z
        act_l = (d_l - r) > 0.0
        act_u = (r + d_u) > 0.0
        at_lo = z <= lo + bound_tol
        at_hi = z >= hi - bound_tol
        clamped = at_lo | at_hi
        z_new = np.where(at_lo, lo, np.where(at_hi, hi, z))

        rows = []
        rhs_terms = np.zeros(2 * n)
        if act_l.any():
            rows.append(-G[act_l])
            rhs_terms += (-G[act_l]).T @ d_l[act_l]
        if act_u.any():
            rows.append(G[act_u])
            rhs_terms += G[act_u].T @ d_u[act_u]
        Ga = np.vstack(rows) if rows else np.zeros((0, 2 * n))
        M = np.diag(wz) + (Ga.T @ Ga) / eta
        M[:n, :n] += 2.0 * cost.alpha
        b = -wz * z_ref + rhs_terms / eta
        b[:n] += 2.0 * cost.alpha * cost.p0_target
        free = ~clamped
        if free.any():
            rhs = -b[free] - M[np.ix_(free, clamped)] @ z_new[clamped]
            z_new[free] = sla.solve(M[np.ix_(free, free)], rhs, assume_a="pos")
        z_new = np.clip(z_new, lo, hi)
        if np.abs(z_new - z).max() < 1e-14:
            return z_new
        z = z_new
    return z


def _fixed_point_residual(state: ControllerState, ctx: RunContext, eps: float) -> float:
    """Distance moved by one exact primal-dual step from the candidate point."""
    cfgc = ctx.cfg.controller
    single = ControllerConfig(
        eps_primal=eps, eps_dual=eps, eta=cfgc.eta, v_min=cfgc.v_min, v_max=cfgc.v_max
    )
    grads = primal_grad(state, ctx.cost, ctx.model, single)
    stepped = primal_step(state, grads, ctx.net, single)
    r_lin = eval_linear(ctx.model, state.p, state.q)
    stepped_dual = dual_step(state, r_lin, single)
    moved = ControllerState(
        p=stepped.p, q=stepped.q, mu_lower=stepped_dual.mu_lower, mu_upper=stepped_dual.mu_upper
    )
    return state.distance(moved)


# ---------------------------------------------------------------------------
# Stochastic error-bound audit


@dataclass
class BoundReport:
    """Empirical error-bound audit for the stochastic feedback loop.

    alpha_hat estimates the worst expected squared gap between the model-based
    and estimation-based gradient maps; rho_hat the worst squared gap between
    estimation-based and physical-feedback maps; both are taken along realized
    trajectories (noise expectation approximated by the trial average at each
    iteration). The bound is (rho + 3 alpha) / (2 M / eps - L^2) against the
    tail average (last 20% of iterations) of the mean squared distance to the
    saddle point.
    """

    alpha_hat: float
    rho_hat: float
    bound: float
    empirical: float
    satisfied: bool
    eps: float
    M: float
    L: float
    trials: int
    iterations: int
    mean_dist_sq: np.ndarray

    def to_dict(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat,
            "rho_hat": self.rho_hat,
            "bound": self.bound,
            "empirical_tail_mean_sq_dist": self.empirical,
            "satisfied": self.satisfied,
            "eps": self.eps,
            "M": self.M,
            "L": self.L,
            "trials": self.trials,
            "iterations": self.iterations,
            "expectation_note": "expectations estimated over noise draws along realized trajectories",
        }


def verify_error_bound(
    cfg: ScenarioConfig,
    x_star: ControllerState | None = None,
    trials: int | None = None,
    context: RunContext | None = None,
) -> BoundReport:
    """Measure the stochastic-feedback error terms and audit the bound.

    Per iteration and trial the three gradient maps differ only in the voltage
    vector entering the dual ascent, so the squared map gaps reduce to
    2 ||r_a - r_b||^2 of the corresponding voltage vectors.
    """
    ctx = context if context is not None else prepare(cfg)
    n_trials = cfg.trials if trials is None else trials
    if x_star is None:
        x_star = ctx.x_star if ctx.x_star is not None else saddle_oracle(cfg, context=ctx)
    x_star_vec = x_star.as_vector()

    cert = ctx.require_certificate()
    eps = cert.eps_configured
    denom = 2.0 * cert.M / eps - cert.L**2
    if denom <= 0:
        raise HarnessError(
            f"bound denominator nonpositive (eps {eps:.3e} >= {2 * cert.M / cert.L**2:.3e})"
        )

    k_iter = cfg.iterations
    d_alpha = np.zeros((n_trials, k_iter))
    d_rho = np.zeros((n_trials, k_iter))
    dist_sq = np.zeros((n_trials, k_iter))
    for t in range(n_trials):
        trace = _instrumented_trial(cfg, ctx, trial=t, x_star_vec=x_star_vec)
        d_alpha[t] = trace["d_alpha"]
        d_rho[t] = trace["d_rho"]
        dist_sq[t] = trace["dist_sq"]

    alpha_hat = float(d_alpha.mean(axis=0).max())
    rho_hat = float(d_rho.max())
    bound = (rho_hat + 3.0 * alpha_hat) / denom
    mean_dist_sq = dist_sq.mean(axis=0)
    tail = mean_dist_sq[int(0.8 * k_iter):]
    empirical = float(tail.mean())
    return BoundReport(
        alpha_hat=alpha_hat,
        rho_hat=rho_hat,
        bound=bound,
        empirical=empirical,
        satisfied=empirical <= bound,
        eps=eps,
        M=cert.M,
        L=cert.L,
        trials=n_trials,
        iterations=k_iter,
        mean_dist_sq=mean_dist_sq,
    )


def _instrumented_trial(
    cfg: ScenarioConfig, ctx: RunContext, trial: int, x_star_vec: np.ndarray
) -> dict:
    """Closed-loop trial that also records the gradient-map gaps."""
    plan = ctx.plan.with_seed(cfg.base_seed + trial)
    k_iter = cfg.iterations
    state = initial_state(ctx.net)
    cfgc = cfg.controller
    d_alpha = np.empty(k_iter)
    d_rho = np.empty(k_iter)
    dist_sq = np.empty(k_iter)
    for k in range(k_iter):
        r_true, _ = _plant_truth(ctx, state.p, state.q, k)
        r_hat = _feedback(ctx, plan, r_true, state.p, state.q, k)
        r_lin = eval_linear(ctx.model, state.p, state.q)
        d_alpha[k] = 2.0 * float(np.sum((r_lin - r_hat) ** 2))
        d_rho[k] = 2.0 * float(np.sum((r_hat - r_true) ** 2))
        dist_sq[k] = float(np.sum((state.as_vector() - x_star_vec) ** 2))
        grads = primal_grad(state, ctx.cost, ctx.model, cfgc)
        new_primal = primal_step(state, grads, ctx.net, cfgc)
        new_dual = dual_step(state, r_hat, cfgc)
        state = ControllerState(
            p=new_primal.p,
            q=new_primal.q,
            mu_lower=new_dual.mu_lower,
            mu_upper=new_dual.mu_upper,
        )
    return {"d_alpha": d_alpha, "d_rho": d_rho, "dist_sq": dist_sq}


# ---------------------------------------------------------------------------
# Baseline comparison and bound tightening


@dataclass
class ComparisonReport:
    """Shared-seed comparison of feedback modes (voltage-estimation errors)."""

    modes: tuple[str, ...]
    err_mean: dict
    err_max: dict
    running_avg_mean: dict
    running_avg_max: dict
    final_violations: dict
    reduction_vs_raw: float
    reduction_vs_pseudo: float


def _running_average(series: np.ndarray) -> np.ndarray:
    return np.cumsum(series) / np.arange(1, series.size + 1)


def run_baseline_comparison(
    cfg: ScenarioConfig, modes: tuple[str, ...] = ("se_loop", "raw_measurements", "pseudo_only")
) -> ComparisonReport:
    """Run the configured scenario under each feedback mode with shared seeds."""
    err_mean: dict[str, np.ndarray] = {}
    err_max: dict[str, np.ndarray] = {}
    run_mean: dict[str, np.ndarray] = {}
    run_max: dict[str, np.ndarray] = {}
    violations: dict[str, int] = {}
    for mode in modes:
        mode_cfg = replace(cfg, feedback_mode=mode)
        trace = run_closed_loop(mode_cfg)
        err_mean[mode] = trace.se_err_mean
        err_max[mode] = trace.se_err_max
        run_mean[mode] = _running_average(trace.se_err_mean)
        run_max[mode] = _running_average(trace.se_err_max)
        violations[mode] = trace.summary["final_nodes_below_vmin"]
    tail = slice(min(100, cfg.iterations - 1), None)

    def _ratio(other: str) -> float:
        if "se_loop" not in run_mean or other not in run_mean:
            return float("nan")
        denom = run_mean[other][tail].mean()
        return float(run_mean["se_loop"][tail].mean() / denom) if denom > 0 else float("nan")

    return ComparisonReport(
        modes=tuple(modes),
        err_mean=err_mean,
        err_max=err_max,
        running_avg_mean=run_mean,
        running_avg_max=run_max,
        final_violations=violations,
        reduction_vs_raw=_ratio("raw_measurements"),
        reduction_vs_pseudo=_ratio("pseudo_only"),
    )


@dataclass
class TighteningReport:
    """Outcome of the confidence-interval bound-tightening experiment."""

    confidence: float
    halfwidth: float
    v_min_original: float
    v_min_tightened: float
    base_violations: int
    tightened_violations: int
    base_cost: float
    tightened_cost: float
    base_trace: SimulationTrace
    tightened_trace: SimulationTrace


def tightened_bound_experiment(
    cfg: ScenarioConfig, c: float, context: RunContext | None = None
) -> TighteningReport:
    """Re-run with the lower voltage bound raised by the worst analytic
    confidence halfwidth of the reconstructed voltages, and compare true
    violations of the original bound plus cost."""
    ctx = context if context is not None else prepare(cfg)
    if ctx.estimator is None:
        raise HarnessError("bound tightening requires an estimating feedback mode")
    halfwidth = float(c * np.sqrt(ctx.estimator.voltage_variance().max()))
    v_min_new = cfg.controller.v_min + halfwidth
    if v_min_new >= cfg.controller.v_max:
        raise HarnessError(
            f"tightened lower bound {v_min_new:.4f} reaches v_max {cfg.controller.v_max:.4f}"
        )
    base = run_closed_loop(cfg, context=ctx)
    tight_cfg = replace(
        cfg,
        controller=ControllerConfig(
            eps_primal=cfg.controller.eps_primal,
            eps_dual=cfg.controller.eps_dual,
            eta=cfg.controller.eta,
            v_min=v_min_new,
            v_max=cfg.controller.v_max,
        ),
    )
    tight = run_closed_loop(tight_cfg)
    v_min0 = cfg.controller.v_min
    return TighteningReport(
        confidence=c,
        halfwidth=halfwidth,
        v_min_original=v_min0,
        v_min_tightened=v_min_new,
        base_violations=int((base.v_true[-1] < v_min0).sum()),
        tightened_violations=int((tight.v_true[-1] < v_min0).sum()),
        base_cost=float(base.cost_local[-1] + base.cost_substation[-1]),
        tightened_cost=float(tight.cost_local[-1] + tight.cost_substation[-1]),
        base_trace=base,
        tightened_trace=tight,
    )
