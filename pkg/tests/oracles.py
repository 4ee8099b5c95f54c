"""Independent reference implementations used only to check the package.

Everything here is deliberately built from first principles (full-bus Newton
power flow, closed forms, scalar objective) and shares no code with the
implementations under test.
"""

from __future__ import annotations

import math

import numpy as np


def full_ybus(net) -> np.ndarray:
    """(N+1) x (N+1) dense bus admittance matrix, substation row/col included."""
    nb = net.n + 1
    Y = np.zeros((nb, nb), dtype=complex)
    for ln in net.lines:
        y = 1.0 / ln.z
        a, b = ln.from_bus, ln.to_bus
        Y[a, a] += y
        Y[b, b] += y
        Y[a, b] -= y
        Y[b, a] -= y
    for nd in net.nodes:
        Y[nd.id, nd.id] += nd.shunt
    return Y


def newton_power_flow(net, p, q, tol=1e-12, max_iter=60):
    """Polar Newton-Raphson solve of the PQ network; returns complex voltages
    of the non-slack nodes. Raises if Newton stalls."""
    nb = net.n + 1
    Y = full_ybus(net)
    s_spec = np.concatenate(([0.0], np.asarray(p) + 1j * np.asarray(q)))
    vm = np.full(nb, float(net.v0))
    va = np.zeros(nb)
    pq = np.arange(1, nb)
    for _ in range(max_iter):
        V = vm * np.exp(1j * va)
        Ibus = Y @ V
        mis = V * np.conj(Ibus) - s_spec
        f = np.concatenate([mis[pq].real, mis[pq].imag])
        if np.abs(f).max() < tol:
            return V[1:]
        diagV = np.diag(V)
        diagI = np.diag(Ibus)
        diagVn = np.diag(np.exp(1j * va))
        dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
        dS_dVm = diagV @ np.conj(Y @ diagVn) + np.conj(diagI) @ diagVn
        J = np.block(
            [
                [dS_dVa[np.ix_(pq, pq)].real, dS_dVm[np.ix_(pq, pq)].real],
                [dS_dVa[np.ix_(pq, pq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
            ]
        )
        dx = np.linalg.solve(J, -f)
        va[pq] += dx[: len(pq)]
        vm[pq] += dx[len(pq) :]
    raise RuntimeError("Newton power flow did not converge")


def one_branch_voltage(v0: float, z: complex, p: float, q: float) -> float:
    """Exact voltage magnitude at the receiving end of a single branch.

    Solves the quadratic in u = |V1|^2 obtained from V1 = V0 + z conj(s/V1):
    u^2 - u (2a + V0^2) + (a^2 + b^2) = 0 with a + jb = conj(z) s, taking the
    high-voltage root.
    """
    s = complex(p, q)
    w = np.conj(z) * s
    a, b = w.real, w.imag
    disc = (2 * a + v0**2) ** 2 - 4 * (a * a + b * b)
    u = ((2 * a + v0**2) + math.sqrt(disc)) / 2.0
    return math.sqrt(u)


def scalar_lagrangian(p, q, mu_l, mu_u, *, wp, wq, alpha, p0, q0, p0_target,
                      A, B, r0, v_min, v_max, eta) -> float:
    """Regularized Lagrangian value, written out longhand for gradient checks."""
    r = A @ p + B @ q + r0
    local = float(np.sum(wp * (p - p0) ** 2) + np.sum(wq * (q - q0) ** 2))
    substation = float(alpha * (-np.sum(p) - p0_target) ** 2)
    coupling = float(mu_l @ (v_min - r) + mu_u @ (r - v_max))
    tikhonov = 0.5 * eta * float(mu_l @ mu_l + mu_u @ mu_u)
    return local + substation + coupling - tikhonov


def wls_closed_form(H, w, y):
    """Weighted least squares via orthogonal factorization of sqrt(w) H."""
    sw = np.sqrt(w)
    sol, *_ = np.linalg.lstsq(H * sw[:, None], y * sw, rcond=None)
    return sol
