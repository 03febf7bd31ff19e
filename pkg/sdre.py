""" Riccati strategies for the receding-horizon loop.

direct          one CARE solve per step
offline_online  P0 from the CARE on A0 offline, one Lyapunov correction W(x) per step
cascade_nk      Newton-Kleinman warm-started from the previous step's solution
hybrid          offline-online prediction corrected by Newton-Kleinman
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from constants import NK_MAX_ITER, NK_TOL, Strategy
from mateq import (LyapunovSolver, NearDefective, NotHurwitz, NotStabilizingGuess, RiccatiSolution,
                   SpectralInfo, newton_kleinman_s, solve_care_s, spectral_info)
from model import QuadraticCost, SemilinearModel, eval_semilinear

logger = logging.getLogger(__name__)


class UnsupportedModel(ValueError):
    pass


@dataclass
class StepStats:
    iterations: int
    lyapunov_solves: int
    residual: float
    wall_time: float
    fallback: bool = False


@dataclass
class StabilityCertificate:
    """ Sufficient condition ||A~(x)|| (1 + ||S|| M^2 / alpha ||P0||) < alpha for A(x) - S(P0 + W(x)) to be Hurwitz. """

    lhs: float
    alpha: float
    holds: bool


@dataclass
class OfflinePhase:
    p0: np.ndarray
    c0: np.ndarray
    info: SpectralInfo
    s: np.ndarray
    solver: LyapunovSolver
    term_solutions: Optional[list[np.ndarray]] = None


@dataclass
class Gain:
    p: np.ndarray
    u: np.ndarray
    iterations: int = 0
    lyapunov_solves: int = 0
    residual: float = 0.0
    certificate: Optional[StabilityCertificate] = None
    fallback: bool = False


@dataclass
class StrategyState:
    """
    Mutable per-trajectory state of a strategy. p_current is the warm-start
    seed; offline holds P0, C0 and the reusable Schur factorization of C0.
    """

    kind: Strategy
    nk_tol: float = NK_TOL
    nk_max_iter: int = NK_MAX_ITER
    p_current: Optional[np.ndarray] = None
    offline: Optional[OfflinePhase] = None
    per_step_stats: list[StepStats] = field(default_factory=list)
    fallback_count: int = 0
    certificate_failures: int = 0

    @property
    def p0(self) -> Optional[np.ndarray]:
        return None if self.offline is None else self.offline.p0

    @property
    def c0(self) -> Optional[np.ndarray]:
        return None if self.offline is None else self.offline.c0


def _feedback(cost: QuadraticCost, b: np.ndarray, p: np.ndarray, x: np.ndarray) -> np.ndarray:
    """ u = -R^-1 B^T P x. """
    return -np.linalg.solve(cost.r, b.T @ (p @ x))


def offline_phase(model: SemilinearModel, cost: QuadraticCost, precompute_terms: bool = False) -> OfflinePhase:
    """
    Solve the CARE on A0 and factor C0 = A0 - S P0 for the online Lyapunov solves.
    With precompute_terms, P_j C0 + C0^T P_j + P0 A_j + A_j^T P0 = 0 is solved for
    every decomposition term so the online gain needs no Lyapunov solve.

    :raises UnsupportedModel: without a constant B or a structured decomposition.
    :raises NotHurwitz: if C0 is not Hurwitz.
    """
    if model.b_constant is None or model.decomposition is None:
        raise UnsupportedModel(f"offline phase needs a constant B and a decomposition, {model.name} has neither")
    a0 = model.decomposition.a0
    s = cost.s(model.b_constant)
    sol = solve_care_s(a0, s, cost.q)
    c0 = a0 - s @ sol.p
    try:
        info = spectral_info(c0)
    except NearDefective as e:
        logger.warning("C0 is nearly defective (%s); stability certificate disabled", e)
        abscissa = float(np.max(np.linalg.eigvals(c0).real))
        if abscissa >= 0:
            raise NotHurwitz(abscissa, "C0") from e
        info = SpectralInfo(alpha=-abscissa, cond_eigvec=np.inf)
    solver = LyapunovSolver(c0)
    terms = None
    if precompute_terms:
        p0 = sol.p
        terms = [solver.solve(p0 @ t.a + t.a.T @ p0) for t in model.decomposition.terms]
    logger.info("offline phase: alpha=%.4e, cond(V)=%.4e, |P0|=%.4e", info.alpha, info.cond_eigvec,
                np.linalg.norm(sol.p, 2))
    return OfflinePhase(sol.p, c0, info, s, solver, terms)


def stability_certificate(offline: OfflinePhase, a_tilde: np.ndarray) -> StabilityCertificate:
    """ Advisory bound; spectral norms throughout. """
    alpha, m = offline.info.alpha, offline.info.cond_eigvec
    lhs = np.linalg.norm(a_tilde, 2) * (1.0 + np.linalg.norm(offline.s, 2) * m ** 2 / alpha
                                        * np.linalg.norm(offline.p0, 2))
    lhs = float(lhs)
    return StabilityCertificate(lhs=lhs, alpha=alpha, holds=bool(lhs < alpha))


def init_strategy(kind: Strategy, model: SemilinearModel, cost: QuadraticCost, nk_tol: float = NK_TOL,
                  nk_max_iter: int = NK_MAX_ITER, precompute_terms: bool = False) -> StrategyState:
    state = StrategyState(Strategy(kind), nk_tol, nk_max_iter)
    if state.kind in (Strategy.OFFLINE_ONLINE, Strategy.HYBRID):
        state.offline = offline_phase(model, cost, precompute_terms)
    return state


def gain_direct(model: SemilinearModel, cost: QuadraticCost, x) -> Gain:
    """
    P(x) from a direct CARE solve and u_S = -R^-1 B(x)^T P(x) x.

    :raises NoStabilizingSolution: from the CARE solver.
    """
    x = model.check_state(x)
    a, b = eval_semilinear(model, x)
    sol = solve_care_s(a, cost.s(b), cost.q)
    return Gain(sol.p, _feedback(cost, b, sol.p, x), residual=sol.residual_norm)


def _predict(state: StrategyState, model: SemilinearModel, x: np.ndarray, a: np.ndarray):
    offline = state.offline
    if offline is None:
        raise UnsupportedModel("offline phase has not been run")
    a_tilde = a - model.decomposition.a0
    if offline.term_solutions is not None:
        p = offline.p0 + sum(t.f(x) * pj for t, pj in zip(model.decomposition.terms, offline.term_solutions))
        solves = 0
    else:
        p0 = offline.p0
        p = offline.p0 + offline.solver.solve(p0 @ a_tilde + a_tilde.T @ p0)
        solves = 1
    cert = stability_certificate(offline, a_tilde)
    if not cert.holds:
        if state.certificate_failures == 0:
            logger.warning("stability certificate fails: %.4e >= alpha %.4e", cert.lhs, cert.alpha)
        state.certificate_failures += 1
    return p, solves, cert


def gain_offline_online(state: StrategyState, model: SemilinearModel, cost: QuadraticCost, x) -> Gain:
    """
    P0 + W(x) with W C0 + C0^T W + P0 A~(x) + A~(x)^T P0 = 0, A~(x) = A(x) - A0,
    and u_O = -R^-1 B^T (P0 + W(x)) x. The certificate is reported, never enforced.
    """
    x = model.check_state(x)
    a, b = eval_semilinear(model, x)
    p, solves, cert = _predict(state, model, x, a)
    state.p_current = p
    return Gain(p, _feedback(cost, b, p, x), lyapunov_solves=solves, certificate=cert)


def _fall_back(state: StrategyState, model: SemilinearModel, cost: QuadraticCost, x: np.ndarray,
               reason: Exception) -> Gain:
    state.fallback_count += 1
    logger.warning("warm start rejected (%s); falling back to direct solve", reason)
    gain = gain_direct(model, cost, x)
    gain.fallback = True
    state.p_current = gain.p
    return gain


def _refine(state: StrategyState, a, s, q, p_init) -> RiccatiSolution:
    return newton_kleinman_s(a, s, q, p_init, state.nk_tol, state.nk_max_iter)


def gain_cascade_nk(state: StrategyState, model: SemilinearModel, cost: QuadraticCost, x) -> Gain:
    """
    Newton-Kleinman seeded with the previous step's solution. The first call
    is seeded by a direct solve. When the incoming residual already meets
    nk_tol no Lyapunov equation is solved.
    """
    x = model.check_state(x)
    if state.p_current is None:
        gain = gain_direct(model, cost, x)
        state.p_current = gain.p
        return gain
    a, b = eval_semilinear(model, x)
    try:
        sol = _refine(state, a, cost.s(b), cost.q, state.p_current)
    except (NotStabilizingGuess, NotHurwitz) as e:
        return _fall_back(state, model, cost, x, e)
    state.p_current = sol.p
    return Gain(sol.p, _feedback(cost, b, sol.p, x), iterations=sol.iterations,
                lyapunov_solves=sol.iterations, residual=sol.residual_norm)


def gain_hybrid(state: StrategyState, model: SemilinearModel, cost: QuadraticCost, x) -> Gain:
    """ Offline-online prediction P0 + W(x) as the Newton-Kleinman initial guess. """
    x = model.check_state(x)
    a, b = eval_semilinear(model, x)
    p_pred, solves, cert = _predict(state, model, x, a)
    try:
        sol = _refine(state, a, cost.s(b), cost.q, p_pred)
    except (NotStabilizingGuess, NotHurwitz) as e:
        gain = _fall_back(state, model, cost, x, e)
        gain.certificate = cert
        return gain
    state.p_current = sol.p
    return Gain(sol.p, _feedback(cost, b, sol.p, x), iterations=sol.iterations,
                lyapunov_solves=solves + sol.iterations, residual=sol.residual_norm, certificate=cert)


def compute_gain(state: StrategyState, model: SemilinearModel, cost: QuadraticCost, x) -> Gain:
    """ Dispatch on the strategy kind and record per-step statistics. """
    start = time.perf_counter()
    if state.kind is Strategy.DIRECT:
        gain = gain_direct(model, cost, x)
        state.p_current = gain.p
    elif state.kind is Strategy.OFFLINE_ONLINE:
        gain = gain_offline_online(state, model, cost, x)
    elif state.kind is Strategy.CASCADE_NK:
        gain = gain_cascade_nk(state, model, cost, x)
    else:
        gain = gain_hybrid(state, model, cost, x)
    elapsed = time.perf_counter() - start
    state.per_step_stats.append(StepStats(gain.iterations, gain.lyapunov_solves, gain.residual, elapsed,
                                          gain.fallback))
    logger.debug("%s step %d: iterations=%d residual=%.3e wall=%.3es", state.kind.value,
                 len(state.per_step_stats), gain.iterations, gain.residual, elapsed)
    return gain
