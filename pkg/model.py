""" Semilinear (state-dependent coefficient) models and the built-in benchmark problems.

A model carries the maps x -> A(x), x -> B(x) with A(x) x = f(x), their partial
derivatives in every state coordinate, and optionally a structured
decomposition A(x) = A0 + sum_j f_j(x) A_j used by the offline-online strategy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from constants import Scheme
from mateq import DimensionMismatch, as_matrix, gain_matrix

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]


class UnknownModel(KeyError):
    pass


class InvalidParams(ValueError):
    pass


class IndexOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class DecompositionTerm:
    """ One summand f_j(x) A_j of the nonlinear part. """

    f: Callable[[np.ndarray], float]
    a: np.ndarray


@dataclass(frozen=True)
class StructuredDecomposition:
    a0: np.ndarray
    terms: tuple[DecompositionTerm, ...] = ()

    def a_tilde(self, x: np.ndarray) -> np.ndarray:
        """ Nonlinear part sum_j f_j(x) A_j. """
        out = np.zeros_like(self.a0)
        for term in self.terms:
            out += term.f(x) * term.a
        return out

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.a0 + self.a_tilde(x)

    def with_terms(self, *extra: DecompositionTerm) -> StructuredDecomposition:
        return StructuredDecomposition(self.a0, self.terms + tuple(extra))


@dataclass(frozen=True)
class SemilinearModel:
    """
    x' = A(x) x + B(x) u.

    a_partial(x, i) and b_partial(x, i) are derivatives in the 0-based state
    coordinate i. implicit_part, when set, is the constant stiff operator the
    semi-implicit integrator treats implicitly. b_constant is set when B does
    not depend on the state. state_bound is the half-width of the box that
    randomized checks draw states from.
    """

    name: str
    dim_state: int
    dim_control: int
    a_of_x: Field
    b_of_x: Field
    a_partial: Callable[[np.ndarray, int], np.ndarray]
    b_partial: Callable[[np.ndarray, int], np.ndarray]
    decomposition: Optional[StructuredDecomposition] = None
    drift: Optional[Field] = None
    implicit_part: Optional[np.ndarray] = None
    b_constant: Optional[np.ndarray] = None
    state_bound: float = 1.0

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim_state:
            raise DimensionMismatch(f"state has length {x.shape[0]}, model {self.name} expects {self.dim_state}")
        return x

    def f(self, x) -> np.ndarray:
        """ Drift of the underlying dynamics; A(x) x when no explicit drift is known. """
        x = self.check_state(x)
        if self.drift is not None:
            return self.drift(x)
        return self.a_of_x(x) @ x


@dataclass(frozen=True)
class QuadraticCost:
    """
    Running cost x^T Q x + u^T R u.

    s_cache holds S = B R^-1 B^T for models with a constant B.
    """

    q: np.ndarray
    r: np.ndarray
    s_cache: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        q = as_matrix(self.q, "q")
        r = as_matrix(self.r, "r")
        if q.shape[0] != q.shape[1] or r.shape[0] != r.shape[1]:
            raise InvalidParams("cost weights must be square")
        if not np.allclose(q, q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(q).max())):
            raise InvalidParams("q is not symmetric")
        if not np.allclose(r, r.T, rtol=0, atol=1e-12 * max(1.0, np.abs(r).max())):
            raise InvalidParams("r is not symmetric")
        if np.linalg.eigvalsh(q).min() < -1e-12:
            raise InvalidParams("q is not positive semidefinite")
        if np.linalg.eigvalsh(r).min() <= 0:
            raise InvalidParams("r is not positive definite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)

    @classmethod
    def for_model(cls, model: SemilinearModel, q, r) -> QuadraticCost:
        r = as_matrix(r, "r")
        s = gain_matrix(model.b_constant, r) if model.b_constant is not None else None
        return cls(q, r, s)

    def s(self, b: np.ndarray) -> np.ndarray:
        if self.s_cache is not None:
            return self.s_cache
        return gain_matrix(b, self.r)

    def running(self, x: np.ndarray, u: np.ndarray) -> float:
        return float(x @ self.q @ x + u @ self.r @ u)


@dataclass(frozen=True)
class ZPerturbation:
    """
    Z(x) with [Z]_{i1,j1} = x_{j2}, [Z]_{i1,j2} = -x_{j1}, zero elsewhere, so Z(x) x = 0.
    Indices are 1-based.
    """

    i1: int
    j1: int
    j2: int

    def validate(self, d: int) -> None:
        for name in ("i1", "j1", "j2"):
            v = getattr(self, name)
            if not 1 <= v <= d:
                raise IndexOutOfRange(f"{name}={v} outside 1..{d}")
        if self.j1 == self.j2:
            raise IndexOutOfRange("j1 and j2 must differ")

    def matrix(self, x: np.ndarray) -> np.ndarray:
        i, j1, j2 = self.i1 - 1, self.j1 - 1, self.j2 - 1
        z = np.zeros((x.shape[0], x.shape[0]))
        z[i, j1] = x[j2]
        z[i, j2] = -x[j1]
        return z

    def partial(self, d: int, k: int) -> np.ndarray:
        """ dZ/dx_k for the 0-based coordinate k (constant in x). """
        i, j1, j2 = self.i1 - 1, self.j1 - 1, self.j2 - 1
        z = np.zeros((d, d))
        if k == j2:
            z[i, j1] = 1.0
        if k == j1:
            z[i, j2] = -1.0
        return z


def _unit(d: int, row: int, col: int) -> np.ndarray:
    e = np.zeros((d, d))
    e[row, col] = 1.0
    return e


def eval_semilinear(model: SemilinearModel, x) -> tuple[np.ndarray, np.ndarray]:
    """
    (A(x), B(x)) with B returned as a d x m array.

    :raises DimensionMismatch: if x does not have length d.
    """
    x = model.check_state(x)
    a = as_matrix(model.a_of_x(x), "A(x)")
    b = as_matrix(model.b_of_x(x), "B(x)", column=True)
    if a.shape != (model.dim_state, model.dim_state) or b.shape != (model.dim_state, model.dim_control):
        raise DimensionMismatch(f"model {model.name} returned A {a.shape}, B {b.shape}")
    return a, b


def perturbed_model(model: SemilinearModel, z: ZPerturbation, alpha: float) -> SemilinearModel:
    """
    The same dynamics in the semilinear form A(x) + alpha Z(x). The drift is
    unchanged since Z(x) x = 0.

    :raises IndexOutOfRange: for indices outside 1..d or j1 == j2.
    """
    d = model.dim_state
    z.validate(d)
    alpha = float(alpha)
    base_a, base_partial = model.a_of_x, model.a_partial

    def a_of_x(x):
        return base_a(x) + alpha * z.matrix(x)

    def a_partial(x, k):
        return base_partial(x, k) + alpha * z.partial(d, k)

    decomposition = model.decomposition
    if decomposition is not None:
        i, j1, j2 = z.i1 - 1, z.j1 - 1, z.j2 - 1
        decomposition = decomposition.with_terms(
            DecompositionTerm(lambda x: alpha * x[j2], _unit(d, i, j1)),
            DecompositionTerm(lambda x: alpha * x[j1], -_unit(d, i, j2)),
        )
    drift = model.drift if model.drift is not None else (lambda x: base_a(x) @ x)
    return replace(model, a_of_x=a_of_x, a_partial=a_partial, decomposition=decomposition, drift=drift)


# Built-in problems.

@dataclass(frozen=True)
class IntegratorDefaults:
    scheme: Scheme
    dt: float
    t_final: float


@dataclass(frozen=True)
class BuiltinProblem:
    model: SemilinearModel
    cost: QuadraticCost
    y0: np.ndarray
    integrator: IntegratorDefaults
    params: dict = field(default_factory=dict)


NEUMANN_CLOSURES = ("ghost", "symmetric")
COST_WEIGHTINGS = ("grid", "unit")


def laplacian_neumann(d: int, closure: str = "ghost") -> np.ndarray:
    """
    Second-difference matrix on d uniform points of [0, 1] with homogeneous
    Neumann conditions.

    closure="ghost" mirrors a ghost point, giving boundary rows (-2, 2) / h^2;
    W A is then symmetric for the trapezoidal weight W = diag(1/2, 1, ..., 1, 1/2).
    closure="symmetric" uses boundary rows (-1, 1) / h^2 and a symmetric matrix.
    Row sums vanish for both.
    """
    if d < 3:
        raise InvalidParams(f"grid needs at least 3 points, got {d}")
    if closure not in NEUMANN_CLOSURES:
        raise InvalidParams(f"unknown Neumann closure {closure!r}, expected one of {NEUMANN_CLOSURES}")
    h = 1.0 / (d - 1)
    lap = np.diag(np.full(d, -2.0)) + np.diag(np.ones(d - 1), 1) + np.diag(np.ones(d - 1), -1)
    if closure == "ghost":
        lap[0, 1] = 2.0
        lap[-1, -2] = 2.0
    else:
        lap[0, 0] = -1.0
        lap[-1, -1] = -1.0
    return lap / h ** 2


def _quadrature_weight(p: dict, h: float) -> float:
    """ Weight of one grid point in the cost integrals: h, or 1 for plain sums. """
    if p["weighting"] not in COST_WEIGHTINGS:
        raise InvalidParams(f"unknown weighting {p['weighting']!r}, expected one of {COST_WEIGHTINGS}")
    return h if p["weighting"] == "grid" else 1.0


def grid(d: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, d)


def grid_indicator(d: int, interval) -> np.ndarray:
    """ Boolean mask of the grid points lying in the closed interval [lo, hi]. """
    lo, hi = (float(v) for v in interval)
    if lo > hi:
        raise InvalidParams(f"empty interval [{lo}, {hi}]")
    xs = grid(d)
    tol = 1e-12
    return (xs >= lo - tol) & (xs <= hi + tol)


def _initial_profile(d: int, init: str) -> np.ndarray:
    xs = grid(d)
    if init == "cos":
        return np.cos(np.pi * xs)
    if init == "sin":
        return np.sin(np.pi * xs)
    raise InvalidParams(f"unknown init {init!r}, expected 'cos' or 'sin'")


def _merge(name: str, defaults: dict, params: Optional[dict]) -> dict:
    params = dict(params or {})
    unknown = set(params) - set(defaults)
    if unknown:
        raise InvalidParams(f"unknown parameters for {name}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(params)
    return merged


def _positive(params: dict, *keys: str) -> None:
    for key in keys:
        if not float(params[key]) > 0:
            raise InvalidParams(f"{key} must be positive, got {params[key]}")


def _grid_size(params: dict) -> int:
    d = params["d"]
    if int(d) != d or d < 3:
        raise InvalidParams(f"d must be an integer >= 3, got {d}")
    return int(d)


def _constant_partial(d: int, m: int):
    zero = np.zeros((d, m))
    return lambda x, i: zero


def _diag_partial(d: int, coeff: Callable[[float], float]):
    def partial(x, i):
        out = np.zeros((d, d))
        out[i, i] = coeff(x[i])
        return out
    return partial


def _lqr(params: Optional[dict]) -> BuiltinProblem:
    p = _merge("lqr", {
        "a": [[0.0, 1.0], [-1.0, 0.5]],
        "b": [[0.0], [1.0]],
        "q": [[1.0, 0.0], [0.0, 1.0]],
        "r": [[1.0]],
        "x0": [1.0, 0.0],
        "dt": 1e-2,
        "t_final": 10.0,
    }, params)
    try:
        a = as_matrix(p["a"], "a")
        b = as_matrix(p["b"], "b", column=True)
    except ValueError as e:
        raise InvalidParams(str(e)) from e
    d, m = b.shape
    if a.shape != (d, d):
        raise InvalidParams(f"a has shape {a.shape}, b has {d} rows")
    zero_a = np.zeros((d, d))
    model = SemilinearModel(
        name="lqr", dim_state=d, dim_control=m,
        a_of_x=lambda x: a, b_of_x=lambda x: b,
        a_partial=lambda x, i: zero_a, b_partial=_constant_partial(d, m),
        decomposition=StructuredDecomposition(a),
        b_constant=b,
    )
    cost = QuadraticCost.for_model(model, p["q"], p["r"])
    if cost.q.shape != (d, d) or cost.r.shape != (m, m):
        raise InvalidParams("cost weights do not match the system dimensions")
    y0 = model.check_state(p["x0"])
    return BuiltinProblem(model, cost, y0, IntegratorDefaults(Scheme.RK4, p["dt"], p["t_final"]), p)


def _van_der_pol(params: Optional[dict]) -> BuiltinProblem:
    p = _merge("van_der_pol", {
        "variant": "baseline",
        "x0": [-0.5, 0.5],
        "dt": 1e-2,
        "t_final": 20.0,
    }, params)
    if p["variant"] not in ("baseline", "alternative"):
        raise InvalidParams(f"unknown van_der_pol variant {p['variant']!r}")

    def a_of_x(x):
        return np.array([[0.0, 1.0], [-1.0, -0.5 * (1.0 - x[0] ** 2)]])

    def b_of_x(x):
        return np.array([[0.0], [x[0]]])

    def a_partial(x, i):
        out = np.zeros((2, 2))
        if i == 0:
            out[1, 1] = x[0]
        return out

    def b_partial(x, i):
        return np.array([[0.0], [1.0 if i == 0 else 0.0]])

    def drift(x):
        return np.array([x[1], -x[0] - 0.5 * (1.0 - x[0] ** 2) * x[1]])

    decomposition = StructuredDecomposition(
        np.array([[0.0, 1.0], [-1.0, -0.5]]),
        (DecompositionTerm(lambda x: x[0] ** 2, np.array([[0.0, 0.0], [0.0, 0.5]])),),
    )
    model = SemilinearModel(
        name="van_der_pol", dim_state=2, dim_control=1,
        a_of_x=a_of_x, b_of_x=b_of_x, a_partial=a_partial, b_partial=b_partial,
        decomposition=decomposition, drift=drift, state_bound=2.0,
    )
    if p["variant"] == "alternative":
        model = perturbed_model(model, ZPerturbation(1, 1, 2), -1.0)
    cost = QuadraticCost(np.diag([0.0, 1.0]), np.array([[1.0]]))
    y0 = model.check_state(p["x0"])
    return BuiltinProblem(model, cost, y0, IntegratorDefaults(Scheme.RK4, p["dt"], p["t_final"]), p)


def _allen_cahn(params: Optional[dict]) -> BuiltinProblem:
    p = _merge("allen_cahn", {
        "d": 100,
        "sigma": 0.1,
        "gamma": 0.1,
        "init": "cos",
        "dt": 0.02,
        "t_final": 4.0,
        "neumann": "ghost",
        "weighting": "grid",
    }, params)
    d = _grid_size(p)
    _positive(p, "sigma", "gamma", "dt", "t_final")
    h = 1.0 / (d - 1)
    lap = float(p["sigma"]) * laplacian_neumann(d, p["neumann"])
    a0 = lap + np.eye(d)
    b = np.eye(d)

    def a_of_x(y):
        return a0 - np.diag(y * y)

    def drift(y):
        return lap @ y + y - y ** 3

    def term(j):
        e = np.zeros((d, d))
        e[j, j] = -1.0
        return DecompositionTerm(lambda y: y[j] ** 2, e)

    model = SemilinearModel(
        name="allen_cahn", dim_state=d, dim_control=d,
        a_of_x=a_of_x, b_of_x=lambda y: b,
        a_partial=_diag_partial(d, lambda yi: -2.0 * yi), b_partial=_constant_partial(d, d),
        decomposition=StructuredDecomposition(a0, tuple(term(j) for j in range(d))),
        drift=drift, implicit_part=lap, b_constant=b,
    )
    w = _quadrature_weight(p, h)
    cost = QuadraticCost.for_model(model, w * np.eye(d), float(p["gamma"]) * w * np.eye(d))
    y0 = _initial_profile(d, p["init"])
    return BuiltinProblem(model, cost, y0, IntegratorDefaults(Scheme.SEMI_IMPLICIT_EULER, p["dt"], p["t_final"]), p)


ZELDOVICH_CASES = {
    1: {"sigma": 0.2, "gamma": 0.01, "nu": 0.5, "omega_c": [0.2, 0.5], "omega_o": [0.5, 0.7]},
    2: {"sigma": 1e-2, "gamma": 0.1, "nu": 0.5, "omega_c": [0.0, 1.0], "omega_o": [0.0, 1.0]},
}


def _zeldovich(params: Optional[dict]) -> BuiltinProblem:
    params = dict(params or {})
    case = params.get("case", 1)
    if case not in ZELDOVICH_CASES:
        raise InvalidParams(f"unknown zeldovich case {case!r}")
    defaults = {"case": case, "d": 100, "mu": 1.0, "init": "cos", "dt": 0.02, "t_final": 4.0,
                "neumann": "ghost", "weighting": "grid"}
    defaults.update(ZELDOVICH_CASES[case])
    p = _merge("zeldovich", defaults, params)
    d = _grid_size(p)
    _positive(p, "sigma", "gamma", "dt", "t_final")
    h = 1.0 / (d - 1)
    mu, nu = float(p["mu"]), float(p["nu"])
    control_mask = grid_indicator(d, p["omega_c"])
    observed_mask = grid_indicator(d, p["omega_o"])
    if not control_mask.any():
        raise InvalidParams(f"control region {p['omega_c']} contains no grid point")
    lap = float(p["sigma"]) * laplacian_neumann(d, p["neumann"])
    a0 = lap + nu * np.eye(d)
    b = np.eye(d)[:, control_mask]
    m = b.shape[1]

    def a_of_x(y):
        return a0 + mu * np.diag(y - y * y)

    def drift(y):
        return lap @ y + nu * y + mu * (y - y * y) * y

    def term(j):
        e = np.zeros((d, d))
        e[j, j] = 1.0
        return DecompositionTerm(lambda y: mu * (y[j] - y[j] ** 2), e)

    model = SemilinearModel(
        name="zeldovich", dim_state=d, dim_control=m,
        a_of_x=a_of_x, b_of_x=lambda y: b,
        a_partial=_diag_partial(d, lambda yi: mu * (1.0 - 2.0 * yi)), b_partial=_constant_partial(d, m),
        decomposition=StructuredDecomposition(a0, tuple(term(j) for j in range(d))),
        drift=drift, implicit_part=lap, b_constant=b,
    )
    w = _quadrature_weight(p, h)
    cost = QuadraticCost.for_model(model, w * np.diag(observed_mask.astype(float)), float(p["gamma"]) * w * np.eye(m))
    y0 = _initial_profile(d, p["init"])
    return BuiltinProblem(model, cost, y0, IntegratorDefaults(Scheme.SEMI_IMPLICIT_EULER, p["dt"], p["t_final"]), p)


BUILTINS: dict[str, Callable[[Optional[dict]], BuiltinProblem]] = {
    "lqr": _lqr,
    "van_der_pol": _van_der_pol,
    "allen_cahn": _allen_cahn,
    "zeldovich": _zeldovich,
}


def builtin_model(name: str, params: Optional[dict[str, Any]] = None) -> BuiltinProblem:
    """
    Model, cost, initial state and integrator defaults of a built-in problem.

    :raises UnknownModel: if name is not one of lqr, van_der_pol, allen_cahn, zeldovich.
    :raises InvalidParams: on unknown or out-of-range parameters.
    """
    if name not in BUILTINS:
        raise UnknownModel(name)
    problem = BUILTINS[name](params)
    logger.debug("built %s with d=%d, m=%d", name, problem.model.dim_state, problem.model.dim_control)
    return problem
