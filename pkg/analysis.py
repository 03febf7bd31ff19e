""" Sub-optimality of the SDRE feedback.

For V_S(x) = x^T P(x) x the gradient is 2 P(x) x + phi(x) with
[phi]_i = x^T P_i x, where P_i = dP/dx_i solves

    P_i A_cl + A_cl^T P_i + Lambda_i = 0,
    Lambda_i = P A_i + A_i^T P - P (B_i R^-1 B^T + B R^-1 B_i^T) P,

A_cl = A(x) - S P, A_i = dA/dx_i and B_i = dB/dx_i. The HJB residual of V_S is

    E(x) = phi . (A_cl x - S phi / 4)

and its time integral along the corrected trajectory bounds the value error.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from mateq import DimensionMismatch, LyapunovSolver, as_matrix, residual_matrix
from model import QuadraticCost, SemilinearModel, eval_semilinear

logger = logging.getLogger(__name__)

TAIL_THRESHOLD = 1e-8


class EmptyTrajectory(ValueError):
    pass


@dataclass
class ResidualReport:
    phi: np.ndarray
    e_value: float
    lyap_solves: int
    hjb_residual_direct: float

    @property
    def phi_norm(self) -> float:
        return float(np.linalg.norm(self.phi))


@dataclass
class BoundEstimate:
    integral_along_trajectory: float
    horizon: float
    tail_flag: bool


def _check_p(model: SemilinearModel, p) -> np.ndarray:
    p = as_matrix(p, "p")
    if p.shape != (model.dim_state, model.dim_state):
        raise DimensionMismatch(f"p has shape {p.shape}, expected {(model.dim_state, model.dim_state)}")
    return p


def _check_phi(model: SemilinearModel, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.shape[0] != model.dim_state:
        raise DimensionMismatch(f"phi has length {phi.shape[0]}, expected {model.dim_state}")
    return phi


def compute_phi(model: SemilinearModel, cost: QuadraticCost, x, p) -> np.ndarray:
    """
    Gradient correction phi(x). The Schur factorization of A_cl is computed once
    and shared by the d Lyapunov solves; solves with Lambda_i = 0 are skipped.

    :raises NotHurwitz: if A(x) - S P is not Hurwitz.
    :complexity: O(d^4) in the worst case, one O(d^3) back-substitution per coordinate.
    """
    x = model.check_state(x)
    p = _check_p(model, p)
    a, b = eval_semilinear(model, x)
    s = cost.s(b)
    solver = LyapunovSolver(a - s @ p)
    rinv_bt = np.linalg.solve(cost.r, b.T)
    phi = np.zeros(model.dim_state)
    for i in range(model.dim_state):
        a_i = model.a_partial(x, i)
        b_i = as_matrix(model.b_partial(x, i), "dB", column=True)
        s_i = b_i @ rinv_bt
        lam = p @ a_i + a_i.T @ p - p @ (s_i + s_i.T) @ p
        if not np.any(lam):
            continue
        phi[i] = x @ solver.solve(lam) @ x
    return phi


def hjb_residual(model: SemilinearModel, cost: QuadraticCost, x, p, phi, closed_loop: bool = True) -> float:
    """
    E(x) = phi . (A_cl x - S phi / 4), sign preserved. With closed_loop=False
    the open-loop drift A(x) x replaces A_cl x; both agree when phi = 0.
    """
    x = model.check_state(x)
    p = _check_p(model, p)
    phi = _check_phi(model, phi)
    a, b = eval_semilinear(model, x)
    s = cost.s(b)
    v = a @ x - s @ (p @ x) if closed_loop else a @ x
    return float(phi @ (v - 0.25 * (s @ phi)))


def value_gradient(p: np.ndarray, x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return 2.0 * p @ x + phi


def sdre_value(p, x) -> float:
    """ V_S(x) = x^T P(x) x. """
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(x @ np.asarray(p, dtype=float) @ x)


def substitution_residual(model: SemilinearModel, cost: QuadraticCost, x, p, phi) -> float:
    """ Unconstrained HJB evaluated on V_S: grad^T f - grad^T S grad / 4 + x^T Q x. """
    x = model.check_state(x)
    _, b = eval_semilinear(model, x)
    s = cost.s(b)
    grad = value_gradient(_check_p(model, p), x, _check_phi(model, phi))
    return float(grad @ model.f(x) - 0.25 * grad @ s @ grad + x @ cost.q @ x)


def residual_report(model: SemilinearModel, cost: QuadraticCost, x, p) -> ResidualReport:
    """
    phi, E and the independent check: the substitution residual minus the
    quadratic form of the Riccati residual matrix, which equals E.
    """
    x = model.check_state(x)
    p = _check_p(model, p)
    phi = compute_phi(model, cost, x, p)
    e = hjb_residual(model, cost, x, p, phi)
    a, b = eval_semilinear(model, x)
    riccati_part = float(x @ residual_matrix(p, a, cost.s(b), cost.q) @ x)
    direct = substitution_residual(model, cost, x, p, phi) - riccati_part
    return ResidualReport(phi, e, model.dim_state, direct)


def corrected_control(model: SemilinearModel, cost: QuadraticCost, x, p, phi) -> np.ndarray:
    """ u~_S = -R^-1 B(x)^T (2 P x + phi) / 2. """
    x = model.check_state(x)
    _, b = eval_semilinear(model, x)
    grad = value_gradient(_check_p(model, p), x, _check_phi(model, phi))
    return -0.5 * np.linalg.solve(cost.r, b.T @ grad)


def augmented_running_cost(cost: QuadraticCost, x, u, e_value: float) -> float:
    """
    x^T Q x + u^T R u - E(x), the running cost for which V_S satisfies the
    modified HJB with E in its closed-loop form. The residual enters with a
    minus sign, so x = 0, u = 0 and E = 0.3 give -0.3, not +0.3.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    return cost.running(x, u) - float(e_value)


def modified_hjb_bracket(model: SemilinearModel, cost: QuadraticCost, x, p, phi, u, e_value: float) -> float:
    """ grad V_S^T (A(x) x + B(x) u) + l~(x, u); minimized over u by u~_S. """
    x = model.check_state(x)
    u = np.asarray(u, dtype=float).reshape(-1)
    a, b = eval_semilinear(model, x)
    grad = value_gradient(_check_p(model, p), x, _check_phi(model, phi))
    return float(grad @ (a @ x + b @ u)) + augmented_running_cost(cost, x, u, e_value)


def _finite_residuals(times: Sequence[float], residuals) -> tuple[np.ndarray, np.ndarray]:
    if residuals is None or len(residuals) == 0:
        raise EmptyTrajectory("trajectory carries no residual values")
    t = np.asarray(times, dtype=float)[: len(residuals)]
    e = np.abs(np.asarray(residuals, dtype=float))
    # Residuals evaluated with a stride leave NaN gaps.
    keep = np.isfinite(e)
    if not keep.any():
        raise EmptyTrajectory("trajectory carries no finite residual values")
    return t[keep], e[keep]


def bound_integral(trajectory) -> BoundEstimate:
    """
    Trapezoidal integral of |E| over the trajectory's time grid.

    :raises EmptyTrajectory: if no residual was recorded.
    """
    t, e = _finite_residuals(trajectory.times, trajectory.residuals)
    integral = float(trapezoid(e, t)) if len(t) > 1 else 0.0
    tail = bool(e[-1] > TAIL_THRESHOLD)
    if tail:
        logger.info("residual at final time %.3e: integral is not converged", e[-1])
    return BoundEstimate(integral, float(t[-1]), tail)


def bound_profile(times: Sequence[float], residuals) -> np.ndarray:
    """ Tail integrals of |E| from each grid time to the horizon, interpolated where E was skipped. """
    t_all = np.asarray(times, dtype=float)[: len(residuals)]
    t, e = _finite_residuals(times, residuals)
    if len(t) == 1:
        tail = np.zeros(1)
    else:
        running = cumulative_trapezoid(e, t, initial=0.0)
        tail = running[-1] - running
    return np.interp(t_all, t, tail, left=np.nan, right=np.nan) if len(t) < len(t_all) else tail
