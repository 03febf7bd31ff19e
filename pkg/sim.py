""" Closed-loop time integration and the receding-horizon driver. """
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as spla
from scipy.integrate import trapezoid

from analysis import compute_phi, corrected_control, hjb_residual
from constants import DIVERGENCE_THRESHOLD, Scheme
from mateq import MatrixEquationError
from model import BuiltinProblem, InvalidParams, QuadraticCost, SemilinearModel, eval_semilinear
from sdre import StepStats, StrategyState, compute_gain

logger = logging.getLogger(__name__)

Stepper = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SingularImplicitOperator(ValueError):
    pass


class NonFiniteState(ArithmeticError):

    def __init__(self, norm: float) -> None:
        super().__init__(f"state norm {norm:.3e} is non-finite or above {DIVERGENCE_THRESHOLD:.0e}")
        self.norm = norm


class SimulationError(RuntimeError):
    """ A solver failure inside the loop, tagged with the step index. """

    def __init__(self, step: int, cause: Exception) -> None:
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class IntegratorSpec:
    scheme: Scheme
    dt: float
    t_final: float
    implicit_part: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.scheme = Scheme(self.scheme)
        if not self.dt > 0 or not self.t_final > 0:
            raise InvalidParams(f"dt and t_final must be positive, got {self.dt}, {self.t_final}")
        if self.dt > self.t_final:
            raise InvalidParams(f"dt={self.dt} exceeds t_final={self.t_final}")

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @classmethod
    def for_problem(cls, problem: BuiltinProblem, scheme: Optional[Scheme] = None, dt: Optional[float] = None,
                    t_final: Optional[float] = None) -> IntegratorSpec:
        defaults = problem.integrator
        return cls(scheme or defaults.scheme, dt or defaults.dt, t_final or defaults.t_final,
                   problem.model.implicit_part)


@dataclass
class RunOptions:
    corrected: bool = False
    residual_on: bool = False
    residual_stride: int = 1


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    states: list[np.ndarray]
    controls: list[np.ndarray]
    running_cost: list[float]
    total_cost: float
    residuals: Optional[list[float]] = None
    phi_norms: Optional[list[float]] = None
    step_stats: list[StepStats] = field(default_factory=list)
    wall_time_total: float = 0.0
    diverged: bool = False
    fallback_count: int = 0

    @property
    def steps(self) -> int:
        return len(self.states) - 1


def _guard(y: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(y))
    if not np.isfinite(norm) or norm > DIVERGENCE_THRESHOLD:
        raise NonFiniteState(norm)
    return y


def make_stepper(model: SemilinearModel, integrator: IntegratorSpec) -> Stepper:
    """
    One-step map (y, u) -> y+ with the control held over the step.

    semi_implicit_euler: y+ = (I - dt L)^-1 (y + dt ((A(y) - L) y + B u)); the
    LU factors of I - dt L are computed here, once per run.
    rk4: classical fourth order with frozen u.

    :raises SingularImplicitOperator: if I - dt L is singular.
    """
    dt = integrator.dt
    d = model.dim_state

    def rhs(y, u):
        _, b = eval_semilinear(model, y)
        return model.f(y) + b @ u

    if integrator.scheme is Scheme.RK4:
        def rk4(y, u):
            k1 = rhs(y, u)
            k2 = rhs(y + 0.5 * dt * k1, u)
            k3 = rhs(y + 0.5 * dt * k2, u)
            k4 = rhs(y + dt * k3, u)
            return _guard(y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        return rk4

    lin = integrator.implicit_part if integrator.implicit_part is not None else model.implicit_part
    lin = np.zeros((d, d)) if lin is None else np.asarray(lin, dtype=float)
    m = np.eye(d) - dt * lin
    lu, piv = spla.lu_factor(m, check_finite=False)
    if np.min(np.abs(np.diag(lu))) <= np.finfo(float).eps * max(1.0, np.abs(m).max()):
        raise SingularImplicitOperator(f"I - dt L is singular for dt={dt}")

    def semi_implicit(y, u):
        _, b = eval_semilinear(model, y)
        explicit = y + dt * (model.f(y) - lin @ y + b @ u)
        return _guard(spla.lu_solve((lu, piv), explicit, check_finite=False))
    return semi_implicit


def step(model: SemilinearModel, integrator: IntegratorSpec, x, u) -> np.ndarray:
    """
    Advance one step with u held constant.

    :raises NonFiniteState: if the new state is non-finite or above the divergence threshold.
    """
    x = model.check_state(x)
    u = np.asarray(u, dtype=float).reshape(-1)
    return make_stepper(model, integrator)(x, u)


def _running_costs(cost: QuadraticCost, states, controls) -> list[float]:
    return [cost.running(y, u) for y, u in zip(states, controls)]


def total_cost(record: TrajectoryRecord, cost: QuadraticCost) -> float:
    """ Trapezoidal quadrature of y^T Q y + u^T R u over the recorded grid. """
    values = _running_costs(cost, record.states, record.controls)
    if len(values) < 2:
        return 0.0
    return float(trapezoid(values, record.times[: len(values)]))


def run_receding_horizon(model: SemilinearModel, cost: QuadraticCost, strategy: StrategyState,
                         integrator: IntegratorSpec, y0, options: Optional[RunOptions] = None) -> TrajectoryRecord:
    """
    Receding-horizon loop: at every node compute the gain at the current state,
    hold the control over one step and advance. Controls are recorded at all
    nodes including the last. A state that leaves the finite range truncates
    the run and sets diverged.

    :raises SimulationError: on a solver failure, carrying the step index.
    """
    options = options or RunOptions()
    stride = max(1, int(options.residual_stride))
    stepper = make_stepper(model, integrator)
    n = integrator.steps
    times = integrator.dt * np.arange(n + 1)
    y = model.check_state(y0)
    states, controls = [], []
    residuals: Optional[list[float]] = [] if options.residual_on else None
    phi_norms: Optional[list[float]] = [] if options.residual_on else None
    first_stat = len(strategy.per_step_stats)
    diverged = False
    logger.info("running %s on %s: %d steps of %g", strategy.kind.value, model.name, n, integrator.dt)

    for k in range(n + 1):
        try:
            gain = compute_gain(strategy, model, cost, y)
            u = gain.u
            wants_residual = residuals is not None and k % stride == 0
            if options.corrected or wants_residual:
                phi = compute_phi(model, cost, y, gain.p)
                if options.corrected:
                    u = corrected_control(model, cost, y, gain.p, phi)
                if wants_residual:
                    residuals.append(hjb_residual(model, cost, y, gain.p, phi))
                    phi_norms.append(float(np.linalg.norm(phi)))
            if residuals is not None and not wants_residual:
                residuals.append(float("nan"))
                phi_norms.append(float("nan"))
        except MatrixEquationError as e:
            raise SimulationError(k, e) from e
        states.append(y)
        controls.append(u)
        if k == n:
            break
        try:
            y = stepper(y, u)
        except NonFiniteState as e:
            diverged = True
            logger.warning("trajectory diverged after step %d: %s", k, e)
            break

    running = _running_costs(cost, states, controls)
    times = times[: len(states)]
    total = float(trapezoid(running, times)) if len(running) > 1 else 0.0
    stats = strategy.per_step_stats[first_stat:]
    record = TrajectoryRecord(times, states, controls, running, total, residuals, phi_norms, stats,
                              float(sum(s.wall_time for s in stats)), diverged, strategy.fallback_count)
    logger.info("%s finished: cost=%.6e, solver time=%.3fs, diverged=%s", strategy.kind.value, total,
                record.wall_time_total, diverged)
    return record


def singular_value_profile(p) -> np.ndarray:
    """ All singular values of p, descending. """
    return spla.svdvals(np.asarray(p, dtype=float))


def offdiagonal_profile(p) -> np.ndarray:
    """ max_i |P_{i,i+k}| for every band k = 0..d-1. """
    p = np.asarray(p, dtype=float)
    return np.array([np.abs(np.diagonal(p, k)).max() for k in range(p.shape[0])])


def numerical_rank(sigmas, rtol: float = 1e-8) -> int:
    """ Number of singular values above rtol times the largest. """
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.size == 0 or sigmas[0] == 0:
        return 0
    return int(np.count_nonzero(sigmas > rtol * sigmas[0]))
