""" One-parameter search for a semilinear form with vanishing HJB residual.

The family A(x) + alpha Z(x) leaves the dynamics unchanged; E(x; alpha) is
evaluated through the full pipeline (SDRE solve, phi, E) and a sign change in
alpha is refined to a root.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from algorithms.bracketing import MaxBisections, NoBracket, RootResult, bracket_root, first_sign_change
from analysis import compute_phi, hjb_residual
from mateq import MatrixEquationError
from model import QuadraticCost, SemilinearModel, ZPerturbation, perturbed_model
from sdre import gain_direct

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = tuple(np.linspace(-10.0, 10.0, 41))
ROOT_FTOL = 1e-10
ROOT_XTOL = 1e-12


@dataclass
class ResidualProfile:
    """ E(x; alpha) on a sorted grid; failed solves are NaN. """

    alphas: list[float]
    e_values: list[float]
    bracket: Optional[tuple[float, float]] = None


@dataclass
class SdcSearchResult:
    profile: ResidualProfile
    alpha_star: Optional[float] = None
    e_at_root: Optional[float] = None
    holds: bool = False
    evaluations: int = field(default=0)


def residual_at(model: SemilinearModel, cost: QuadraticCost, x, z: ZPerturbation, alpha: float,
                closed_loop: bool = False) -> float:
    """
    E at x for the semilinear form A(x) + alpha Z(x). The open-loop drift form
    phi . (A x - S phi / 4) is the default here; closed_loop selects the
    closed-loop form used by the analysis module.
    """
    pm = perturbed_model(model, z, alpha)
    gain = gain_direct(pm, cost, x)
    phi = compute_phi(pm, cost, x, gain.p)
    return hjb_residual(pm, cost, x, gain.p, phi, closed_loop=closed_loop)


def _safe_residual(model, cost, x, z, alpha, closed_loop) -> float:
    try:
        return residual_at(model, cost, x, z, alpha, closed_loop)
    except MatrixEquationError as e:
        logger.warning("residual at alpha=%g unavailable: %s", alpha, e)
        return float("nan")


def scan_residual(model: SemilinearModel, cost: QuadraticCost, x, z: ZPerturbation,
                  alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID, jobs: int = 1,
                  closed_loop: bool = False) -> ResidualProfile:
    """
    E over alpha_grid with the first sign-change bracket. Per-alpha solver
    failures are recorded as NaN and skipped when bracketing.
    """
    alphas = sorted(float(a) for a in alpha_grid)
    z.validate(model.dim_state)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(lambda a: _safe_residual(model, cost, x, z, a, closed_loop), alphas))
    else:
        values = [_safe_residual(model, cost, x, z, a, closed_loop) for a in alphas]
    pair = first_sign_change(alphas, values)
    bracket = None if pair is None else (alphas[pair[0]], alphas[pair[1]])
    return ResidualProfile(alphas, values, bracket)


def find_root(model: SemilinearModel, cost: QuadraticCost, x, z: ZPerturbation, bracket: tuple[float, float],
              xtol: float = ROOT_XTOL, ftol: float = ROOT_FTOL, max_iter: int = 100,
              closed_loop: bool = False) -> RootResult:
    """
    Root of alpha -> E(x; alpha) inside bracket.

    :raises NoBracket: if E has the same sign at both ends.
    :raises MaxBisections: if the bracket is not resolved within max_iter iterations.
    """
    lo, hi = (float(v) for v in bracket)
    def f(alpha):
        return residual_at(model, cost, x, z, alpha, closed_loop)

    if lo == hi:
        e = f(lo)
        if abs(e) <= ftol:
            return RootResult(lo, e, 0, 1)
        raise NoBracket(f"degenerate bracket at {lo} with E={e:.3e}")
    return bracket_root(f, lo, hi, xtol=xtol, ftol=ftol, max_iter=max_iter)


def search_optimal_form(model: SemilinearModel, cost: QuadraticCost, x, z: ZPerturbation,
                        alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID, jobs: int = 1,
                        ftol: float = ROOT_FTOL, closed_loop: bool = False) -> SdcSearchResult:
    """ Check alpha = 0, then scan, bracket and refine. A missing bracket is reported, not raised. """
    e0 = residual_at(model, cost, x, z, 0.0, closed_loop)
    if abs(e0) <= ftol:
        logger.info("E(0) = %.3e: the unperturbed form is already a root", e0)
        return SdcSearchResult(ResidualProfile([0.0], [e0], (0.0, 0.0)), 0.0, e0, True, 1)
    profile = scan_residual(model, cost, x, z, alpha_grid, jobs, closed_loop)
    evaluations = 1 + len(profile.alphas)
    if profile.bracket is None:
        logger.warning("no sign change of E on [%g, %g]", profile.alphas[0], profile.alphas[-1])
        return SdcSearchResult(profile, evaluations=evaluations)
    try:
        root = find_root(model, cost, x, z, profile.bracket, ftol=ftol, closed_loop=closed_loop)
    except (NoBracket, MaxBisections) as e:
        logger.warning("root refinement failed: %s", e)
        return SdcSearchResult(profile, evaluations=evaluations)
    logger.info("alpha* = %.10g with E = %.3e in %s", root.root, root.value, profile.bracket)
    return SdcSearchResult(profile, root.root, root.value, True, evaluations + root.function_calls)
