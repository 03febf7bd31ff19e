from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq


class NoBracket(ValueError):
    pass


class MaxBisections(RuntimeError):
    pass


@dataclass
class RootResult:
    root: float
    value: float
    iterations: int
    function_calls: int


class _Converged(Exception):

    def __init__(self, x: float, fx: float) -> None:
        super().__init__()
        self.x = x
        self.fx = fx


def first_sign_change(xs: Sequence[float], values: Sequence[float]) -> Optional[tuple[int, int]]:
    """
    Indices (i, j), i < j, of the first pair of consecutive finite samples with
    opposite signs. Non-finite samples are treated as missing and skipped.
    An exact zero counts as a bracket on its own, returned as (i, i).

    :complexity: O(N) where N is the number of samples.
    """
    prev = None
    for k, v in enumerate(values):
        if not np.isfinite(v):
            continue
        if v == 0.0:
            return k, k
        if prev is not None and np.sign(values[prev]) != np.sign(v):
            return prev, k
        prev = k
    return None


def bracket_root(f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-12,
                 ftol: float = 1e-10, max_iter: int = 100) -> RootResult:
    """
    Safeguarded bisection/secant (Brent) root of f on [lo, hi]. Stops as soon
    as |f(x)| <= ftol or the bracket is narrower than xtol, so the root always
    lies inside the initial bracket.

    :raises NoBracket: if f(lo) and f(hi) have the same sign.
    :raises MaxBisections: if max_iter iterations do not meet either tolerance.
    """
    calls = 0

    def g(x: float) -> float:
        nonlocal calls
        calls += 1
        fx = float(f(x))
        if abs(fx) <= ftol:
            raise _Converged(x, fx)
        return fx

    try:
        f_lo, f_hi = g(lo), g(hi)
        if np.sign(f_lo) == np.sign(f_hi):
            raise NoBracket(f"no sign change on [{lo}, {hi}]: f={f_lo:.3e}, {f_hi:.3e}")
        root, info = brentq(g, lo, hi, xtol=xtol, maxiter=max_iter, full_output=True, disp=False)
    except _Converged as c:
        return RootResult(c.x, c.fx, max(calls - 2, 0), calls)
    if not info.converged:
        raise MaxBisections(f"bracket [{lo}, {hi}] not resolved in {max_iter} iterations")
    return RootResult(root, float(f(root)), info.iterations, calls + 1)
