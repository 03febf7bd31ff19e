""" Dense matrix-equation solvers (Lyapunov, Riccati).

Lyapunov equations A^T X + X A + Q = 0 are solved by Bartels-Stewart (LAPACK
trsyl) on the Schur form of A. The continuous algebraic Riccati equation

    A^T P + P A - P S P + Q = 0,    S = B R^-1 B^T

is solved through the stable invariant subspace of its Hamiltonian matrix, and
Newton-Kleinman refines a stabilizing guess with one Lyapunov solve per
iteration. Every returned solution is explicitly symmetrized.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as spla

from constants import CARE_RTOL, LYAPUNOV_RTOL, NEAR_DEFECTIVE_COND, NK_MAX_ITER, NK_TOL

logger = logging.getLogger(__name__)


class MatrixEquationError(Exception):
    pass


class DimensionMismatch(ValueError):
    pass


class NotHurwitz(MatrixEquationError):

    def __init__(self, abscissa: float, what: str = "matrix") -> None:
        super().__init__(f"{what} is not Hurwitz (spectral abscissa {abscissa:.3e})")
        self.abscissa = abscissa


class SingularReduction(MatrixEquationError):
    pass


class NoStabilizingSolution(MatrixEquationError):
    pass


class IllConditioned(MatrixEquationError):
    pass


class NotStabilizingGuess(MatrixEquationError):

    def __init__(self, abscissa: float) -> None:
        super().__init__(f"initial guess does not stabilize the pair (closed-loop abscissa {abscissa:.3e})")
        self.abscissa = abscissa


class MaxIterations(MatrixEquationError):

    def __init__(self, p: np.ndarray, residual: float, iterations: int) -> None:
        super().__init__(f"Newton-Kleinman stopped after {iterations} iterations, residual {residual:.3e}")
        self.p = p
        self.residual = residual
        self.iterations = iterations


class NearDefective(MatrixEquationError):
    pass


@dataclass
class RiccatiSolution:
    """
    Stabilizing solution of a CARE.

    residual_norm is the Frobenius norm of the Riccati residual evaluated on p,
    closed_loop_abscissa the largest real part in the spectrum of A - S p.
    """

    p: np.ndarray
    residual_norm: float
    closed_loop_abscissa: float
    iterations: int = 0


@dataclass
class SpectralInfo:
    """ Stability margin alpha = min |Re(lambda)| and eigenvector conditioning cond(V). """

    alpha: float
    cond_eigvec: float


def as_matrix(m, name: str = "matrix", column: bool = False) -> np.ndarray:
    """
    Coerce m to a finite 2D float array. Scalars become 1x1; a 1D array becomes
    a column when column is set, a row otherwise.
    """
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if column else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _square(m, name: str) -> np.ndarray:
    arr = as_matrix(m, name)
    if arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def spectral_abscissa(c: np.ndarray) -> float:
    """ Largest real part over the spectrum of c. """
    return float(np.max(np.linalg.eigvals(c).real))


def gain_matrix(b: np.ndarray, r: np.ndarray) -> np.ndarray:
    """ S = B R^-1 B^T. """
    return symmetrize(b @ np.linalg.solve(r, b.T))


def _check_care_args(a, b, q, r) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    a = _square(a, "a")
    q = _square(q, "q")
    r = _square(r, "r")
    b = as_matrix(b, "b", column=True)
    d, m = a.shape[0], r.shape[0]
    if q.shape != (d, d):
        raise DimensionMismatch(f"q has shape {q.shape}, expected {(d, d)}")
    if b.shape != (d, m):
        raise DimensionMismatch(f"b has shape {b.shape}, expected {(d, m)}")
    return a, b, q, r


def residual_matrix(p: np.ndarray, a: np.ndarray, s: np.ndarray, q: np.ndarray) -> np.ndarray:
    """ A^T P + P A - P S P + Q, written out for a precomputed S. """
    return a.T @ p + p @ a - p @ s @ p + q


def riccati_residual(p, a, b, q, r) -> float:
    """
    Frobenius norm of the Riccati residual A^T P + P A - P S P + Q.

    :raises DimensionMismatch: when the shapes are inconsistent.
    """
    a, b, q, r = _check_care_args(a, b, q, r)
    p = _square(p, "p")
    if p.shape != a.shape:
        raise DimensionMismatch(f"p has shape {p.shape}, expected {a.shape}")
    return float(np.linalg.norm(residual_matrix(p, a, gain_matrix(b, r), q), "fro"))


class LyapunovSolver:
    """
    Solves A^T X + X A + Q = 0 for any number of right-hand sides sharing A.

    The real Schur form A = U T U^T is computed once. In Schur coordinates the
    equation reads T^T Y + Y T = -U^T Q U, which LAPACK trsyl solves on the
    quasi-triangular factor.

    :complexity: O(d^3) for the factorization and O(d^3) per right-hand side.
    :raises NotHurwitz: when A has an eigenvalue with nonnegative real part.
    """

    def __init__(self, a, rtol: float = LYAPUNOV_RTOL) -> None:
        self.a = _square(a, "a")
        self.rtol = rtol
        self.t, self.u = spla.schur(self.a, output="real")
        self.abscissa = spectral_abscissa(self.t)
        if self.abscissa >= 0:
            raise NotHurwitz(self.abscissa, "Lyapunov coefficient")
        self._trsyl, = spla.get_lapack_funcs(("trsyl",), (self.t,))

    @property
    def order(self) -> int:
        return self.a.shape[0]

    def _back_substitute(self, q: np.ndarray) -> np.ndarray:
        t, u = self.t, self.u
        c = -(u.T @ q @ u)
        y, scale, info = self._trsyl(t, t, c, trana="T", tranb="N")
        if info < 0:
            raise ValueError(f"trsyl rejected argument {-info}")
        if info == 1:
            raise SingularReduction("eigenvalue pair of the Lyapunov coefficient sums to zero")
        return symmetrize(u @ (y / scale) @ u.T)

    def residual(self, x: np.ndarray, q: np.ndarray) -> np.ndarray:
        return self.a.T @ x + x @ self.a + q

    def solve(self, q) -> np.ndarray:
        """
        Solve for one symmetric right-hand side. One step of iterative refinement
        is applied when the substitution residual misses tolerance.
        """
        q = _square(q, "q")
        if q.shape != self.a.shape:
            raise DimensionMismatch(f"q has shape {q.shape}, expected {self.a.shape}")
        tol = self.rtol * max(1.0, float(np.linalg.norm(q, "fro")))
        x = self._back_substitute(q)
        res = self.residual(x, q)
        if np.linalg.norm(res, "fro") > tol:
            x = symmetrize(x + self._back_substitute(res))
            res_norm = float(np.linalg.norm(self.residual(x, q), "fro"))
            if res_norm > tol:
                logger.warning("Lyapunov residual %.3e above tolerance %.3e after refinement", res_norm, tol)
        return x


def solve_lyapunov(a, q) -> np.ndarray:
    """
    Solve A^T X + X A + Q = 0 for symmetric Q and Hurwitz A.

    One-off solves go through scipy; use LyapunovSolver to share the Schur
    factorization across right-hand sides.

    :raises NotHurwitz: if A has an eigenvalue with nonnegative real part.
    """
    a = _square(a, "a")
    q = _square(q, "q")
    if q.shape != a.shape:
        raise DimensionMismatch(f"q has shape {q.shape}, expected {a.shape}")
    abscissa = spectral_abscissa(a)
    if abscissa >= 0:
        raise NotHurwitz(abscissa, "Lyapunov coefficient")
    return symmetrize(spla.solve_continuous_lyapunov(a.T, -q))


def _finish_care(a, s, q, p, rtol: float, iterations: int) -> RiccatiSolution:
    tol = rtol * max(1.0, float(np.linalg.norm(q, "fro")))
    res = residual_matrix(p, a, s, q)
    res_norm = float(np.linalg.norm(res, "fro"))
    if res_norm > tol:
        # One Newton step on the substitution residual.
        try:
            p = symmetrize(p + LyapunovSolver(a - s @ p).solve(res))
        except NotHurwitz as e:
            raise NoStabilizingSolution(str(e)) from e
        res_norm = float(np.linalg.norm(residual_matrix(p, a, s, q), "fro"))
        if res_norm > tol:
            raise IllConditioned(f"CARE residual {res_norm:.3e} exceeds tolerance {tol:.3e}")
    abscissa = spectral_abscissa(a - s @ p)
    if abscissa >= 0:
        raise NoStabilizingSolution(f"closed loop is not Hurwitz (abscissa {abscissa:.3e})")
    return RiccatiSolution(p=p, residual_norm=res_norm, closed_loop_abscissa=abscissa, iterations=iterations)


def solve_care_s(a: np.ndarray, s: np.ndarray, q: np.ndarray, rtol: float = CARE_RTOL) -> RiccatiSolution:
    """
    Direct CARE solve for a precomputed S: the stable invariant subspace
    [U11; U21] of the Hamiltonian [[A, -S], [-Q, -A^T]] gives P = U21 U11^-1.

    :raises NoStabilizingSolution: when the stable subspace has the wrong
        dimension or does not project onto the first block.
    """
    d = a.shape[0]
    h = np.block([[a, -s], [-q, -a.T]])
    _, z, sdim = spla.schur(h, output="real", sort="lhp")
    if sdim != d:
        raise NoStabilizingSolution(f"stable invariant subspace has dimension {sdim}, expected {d}")
    u11, u21 = z[:d, :d], z[d:, :d]
    if np.linalg.cond(u11) > 1.0 / np.finfo(float).eps:
        raise NoStabilizingSolution("stable subspace projection is singular")
    p = symmetrize(np.linalg.solve(u11.T, u21.T).T)
    return _finish_care(a, s, q, p, rtol, iterations=0)


def solve_care(a, b, q, r, rtol: float = CARE_RTOL) -> RiccatiSolution:
    """
    Stabilizing solution of A^T P + P A - P B R^-1 B^T P + Q = 0.

    :pre: r symmetric positive definite, (a, b) stabilizable, (a, q^1/2) detectable.
    :raises NoStabilizingSolution: when no stabilizing solution can be extracted.
    :raises IllConditioned: when the residual misses tolerance after refinement.
    """
    a, b, q, r = _check_care_args(a, b, q, r)
    return solve_care_s(a, gain_matrix(b, r), q, rtol)


def newton_kleinman_s(
    a: np.ndarray,
    s: np.ndarray,
    q: np.ndarray,
    p_init: np.ndarray,
    tol: float = NK_TOL,
    max_iter: int = NK_MAX_ITER,
    callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
) -> RiccatiSolution:
    """
    Newton-Kleinman in correction form: P <- P + dP with
    (A - S P)^T dP + dP (A - S P) + R(P) = 0, until ||R(P)||_F <= tol.

    callback(k, p, residual) is invoked after every update.

    :raises NotStabilizingGuess: when A - S p_init is not Hurwitz.
    :raises MaxIterations: carrying the last iterate and its residual.
    """
    p = symmetrize(np.asarray(p_init, dtype=float))
    a_cl = a - s @ p
    abscissa = spectral_abscissa(a_cl)
    if abscissa >= 0:
        raise NotStabilizingGuess(abscissa)
    res = residual_matrix(p, a, s, q)
    res_norm = float(np.linalg.norm(res, "fro"))
    k = 0
    while res_norm > tol:
        if k >= max_iter:
            raise MaxIterations(p, res_norm, k)
        p = symmetrize(p + LyapunovSolver(a_cl).solve(res))
        k += 1
        a_cl = a - s @ p
        res = residual_matrix(p, a, s, q)
        res_norm = float(np.linalg.norm(res, "fro"))
        if callback is not None:
            callback(k, p, res_norm)
    if k > 0:
        abscissa = spectral_abscissa(a_cl)
    return RiccatiSolution(p=p, residual_norm=res_norm, closed_loop_abscissa=abscissa, iterations=k)


def newton_kleinman(a, b, q, r, p_init, tol: float = NK_TOL, max_iter: int = NK_MAX_ITER,
                    callback: Optional[Callable[[int, np.ndarray, float], None]] = None) -> RiccatiSolution:
    """
    Refine a stabilizing guess of the CARE solution by Newton-Kleinman.
    After the first iterate the sequence is non-increasing in the PSD order.
    """
    a, b, q, r = _check_care_args(a, b, q, r)
    p_init = _square(p_init, "p_init")
    if p_init.shape != a.shape:
        raise DimensionMismatch(f"p_init has shape {p_init.shape}, expected {a.shape}")
    return newton_kleinman_s(a, gain_matrix(b, r), q, p_init, tol, max_iter, callback)


def spectral_info(c, cond_limit: float = NEAR_DEFECTIVE_COND) -> SpectralInfo:
    """
    Stability margin and eigenvector conditioning of a Hurwitz, diagonalizable c.
    Eigenvectors are normalized to unit 2-norm before the condition number is taken.

    :raises NotHurwitz: if any eigenvalue has Re >= 0.
    :raises NearDefective: if cond(V) exceeds cond_limit.
    """
    c = _square(c, "c")
    w, v = np.linalg.eig(c)
    abscissa = float(np.max(w.real))
    if abscissa >= 0:
        raise NotHurwitz(abscissa)
    cond = float(np.linalg.cond(v, 2))
    if not np.isfinite(cond) or cond > cond_limit:
        raise NearDefective(f"eigenvector matrix condition {cond:.3e} exceeds {cond_limit:.1e}")
    return SpectralInfo(alpha=float(np.min(np.abs(w.real))), cond_eigvec=max(cond, 1.0))
