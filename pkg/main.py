""" Command line entry point.

    python main.py simulate --config stores/zeldovich_case1.json --strategy cascade_nk
    python main.py bench --config stores/zeldovich_case1.json
    python main.py sdc-root --config stores/allen_cahn_cos.json
    python main.py spectrum --config stores/zeldovich_case2.json
    python main.py selftest

Exit codes: 0 on success (a diverging trajectory is a result), 1 when a solver
fails, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

import serialize
from analysis import bound_profile
from config import ConfigError, ExperimentConfig, SdcConfig, load_config, resolve_output_dir
from constants import Scheme, Strategy
from mateq import MatrixEquationError, newton_kleinman, solve_care, solve_lyapunov, spectral_info
from model import BuiltinProblem, IndexOutOfRange, InvalidParams, UnknownModel, ZPerturbation, builtin_model
from sdc_search import search_optimal_form
from sdre import UnsupportedModel, gain_direct, init_strategy
from sim import (IntegratorSpec, RunOptions, SimulationError, SingularImplicitOperator, TrajectoryRecord,
                 numerical_rank, offdiagonal_profile, run_receding_horizon, singular_value_profile)

logger = logging.getLogger("main")

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2


@dataclass
class RunSummary:
    model: str
    params: dict
    strategy: str
    total_cost: float
    wall_time_total: float
    diverged: bool
    steps: int


@dataclass
class BenchRow:
    strategy: str
    mu: float
    wall_time: float
    total_cost: Optional[float]
    diverged: bool
    failed: bool
    error: Optional[str] = None


def load_problem(cfg: ExperimentConfig) -> BuiltinProblem:
    try:
        return builtin_model(cfg.model.name, cfg.model.params)
    except UnknownModel as e:
        raise ConfigError("model.name", f"unknown model {e.args[0]!r}") from e
    except InvalidParams as e:
        raise ConfigError("model.params", str(e)) from e


def integrator_for(cfg: ExperimentConfig, problem: BuiltinProblem) -> IntegratorSpec:
    try:
        return IntegratorSpec.for_problem(problem, cfg.integrator.scheme, cfg.integrator.dt, cfg.integrator.t_final)
    except InvalidParams as e:
        raise ConfigError("integrator", str(e)) from e


def simulate(cfg: ExperimentConfig, problem: BuiltinProblem, strategy: Strategy) -> tuple[TrajectoryRecord, float]:
    """ One receding-horizon run; returns the record and the offline setup time. """
    start = time.perf_counter()
    try:
        state = init_strategy(strategy, problem.model, problem.cost, cfg.nk_tol, cfg.nk_max_iter,
                              cfg.precompute_terms)
    except UnsupportedModel as e:
        raise ConfigError("strategy", str(e)) from e
    offline_time = time.perf_counter() - start
    options = RunOptions(cfg.analysis.corrected, cfg.analysis.residual_on, cfg.analysis.residual_stride)
    record = run_receding_horizon(problem.model, problem.cost, state, integrator_for(cfg, problem), problem.y0,
                                  options)
    return record, offline_time


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    problem = load_problem(cfg)
    record, offline_time = simulate(cfg, problem, cfg.strategy)
    serialize.write_trajectory_csv(out / "trajectory.csv", record)
    if record.residuals is not None:
        profile = bound_profile(record.times, record.residuals)
        serialize.write_residual_csv(out / "residual.csv", record.times, record.residuals, record.phi_norms, profile)
    summary = RunSummary(problem.model.name, problem.params, cfg.strategy.value, record.total_cost,
                         record.wall_time_total + offline_time, record.diverged, record.steps)
    serialize.write_json(out / "summary.json", serialize.SummarySerializer(summary).data)
    serialize.write_json(out / "step_stats.json", record.step_stats)
    logger.info("total cost %.6e (diverged=%s), artifacts in %s", record.total_cost, record.diverged, out)
    return EXIT_OK


def _bench_cell(cfg: ExperimentConfig, strategy: Strategy, mu: float) -> BenchRow:
    params = dict(cfg.model.params)
    params["mu"] = mu
    cell = replace(cfg, model=replace(cfg.model, params=params))
    try:
        problem = load_problem(cell)
        record, offline_time = simulate(cell, problem, strategy)
    except (MatrixEquationError, SimulationError, SingularImplicitOperator) as e:
        logger.warning("bench cell %s mu=%g failed: %s", strategy.value, mu, e)
        return BenchRow(strategy.value, mu, float("nan"), None, False, True, str(e))
    logger.info("bench cell %s mu=%g: cost=%.4e time=%.3fs", strategy.value, mu, record.total_cost,
                record.wall_time_total + offline_time)
    return BenchRow(strategy.value, mu, record.wall_time_total + offline_time, record.total_cost, record.diverged,
                    False)


def cmd_bench(cfg: ExperimentConfig, out: Path) -> int:
    if not cfg.bench.strategies:
        raise ConfigError("bench.strategies", "at least one strategy is required")
    if cfg.model.name != "zeldovich":
        raise ConfigError("model.name", "bench sweeps the reaction coefficient mu of the zeldovich model")
    cells = [(s, mu) for mu in cfg.bench.mu for s in cfg.bench.strategies]
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(lambda c: _bench_cell(cfg, *c), cells))
    else:
        rows = [_bench_cell(cfg, s, mu) for s, mu in cells]
    data = serialize.BenchRowSerializer(rows, many=True).data
    serialize.write_bench_csv(out / "bench.csv", data)
    serialize.write_json(out / "bench.json", data)
    return EXIT_OK


def cmd_sdc_root(cfg: ExperimentConfig, out: Path) -> int:
    problem = load_problem(cfg)
    sdc = cfg.sdc or SdcConfig()
    z = ZPerturbation(*sdc.indices)
    try:
        z.validate(problem.model.dim_state)
    except IndexOutOfRange as e:
        raise ConfigError("sdc.indices", str(e)) from e
    result = search_optimal_form(problem.model, problem.cost, problem.y0, z, sdc.alpha_grid, cfg.jobs,
                                 closed_loop=sdc.closed_loop)
    serialize.write_profile_csv(out / "sdc_profile.csv", result.profile.alphas, result.profile.e_values)
    serialize.write_json(out / "sdc_root.json", serialize.RootSerializer(result).data)
    if result.holds:
        logger.info("alpha* = %.10g, E = %.3e", result.alpha_star, result.e_at_root)
    return EXIT_OK


def cmd_spectrum(cfg: ExperimentConfig, out: Path) -> int:
    problem = load_problem(cfg)
    p = gain_direct(problem.model, problem.cost, problem.y0).p
    sigmas = singular_value_profile(p)
    serialize.write_spectrum_csv(out / "spectrum.csv", sigmas)
    serialize.write_offdiagonal_csv(out / "offdiagonal.csv", offdiagonal_profile(p))
    logger.info("numerical rank of P(y0) at 1e-8: %d of %d", numerical_rank(sigmas), len(sigmas))
    return EXIT_OK


def _selftest_checks(seed: int) -> list[tuple[str, Callable[[], bool]]]:
    vdp = builtin_model("van_der_pol")
    bound = vdp.model.state_bound

    def vdp_identity():
        rng = np.random.default_rng(seed)
        return all(np.allclose(gain_direct(vdp.model, vdp.cost, x).p, np.eye(2), atol=1e-8)
                   for x in rng.uniform(-bound, bound, size=(100, 2)))

    return [
        ("scalar CARE", lambda: abs(solve_care([[-1.0]], [[1.0]], [[1.0]], [[1.0]]).p[0, 0]
                                    - (np.sqrt(2) - 1)) < 1e-12),
        ("unit CARE", lambda: abs(solve_care([[0.0]], [[1.0]], [[1.0]], [[1.0]]).p[0, 0] - 1.0) < 1e-12),
        ("diagonal Lyapunov", lambda: np.allclose(solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2)),
                                                  np.diag([0.5, 0.25]), atol=1e-12)),
        ("scalar Newton-Kleinman", lambda: abs(newton_kleinman([[-1.0]], [[1.0]], [[1.0]], [[1.0]], [[0.0]],
                                                               tol=1e-13).p[0, 0] - (np.sqrt(2) - 1)) < 1e-12),
        ("diagonal spectral info", lambda: spectral_info(np.diag([-1.0, -3.0])).alpha == 1.0),
        ("van der pol identity", vdp_identity),
    ]


def cmd_selftest(cfg: ExperimentConfig, out: Path) -> int:
    failed = 0
    for name, check in _selftest_checks(cfg.seed):
        try:
            ok = bool(check())
        except Exception as e:  # any failure counts
            logger.error("%s raised %s", name, e)
            ok = False
        logger.info("%-24s %s", name, "ok" if ok else "FAILED")
        failed += not ok
    return EXIT_OK if failed == 0 else EXIT_SOLVER


COMMANDS = {
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "sdc-root": cmd_sdc_root,
    "spectrum": cmd_spectrum,
    "selftest": cmd_selftest,
}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description="SDRE feedback synthesis experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="Log per-step solver statistics.")
    p.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", type=Path, help="JSON experiment config.")
        c.add_argument("--model", help="lqr, van_der_pol, allen_cahn or zeldovich.")
        c.add_argument("--case", type=int, help="Zeldovich parameter set (1 or 2).")
        c.add_argument("--mu", type=float, help="Zeldovich reaction coefficient.")
        c.add_argument("--sigma", type=float, help="Diffusion coefficient of the PDE models.")
        c.add_argument("--init", choices=["cos", "sin"], help="Initial profile of the PDE models.")
        c.add_argument("--x0", type=_floats, help="Initial state of the ODE models, e.g. -0.5,0.5.")
        c.add_argument("--variant", choices=["baseline", "alternative"], help="Van der Pol semilinear form.")
        c.add_argument("--strategy", choices=[s.value for s in Strategy])
        c.add_argument("--scheme", choices=[s.value for s in Scheme])
        c.add_argument("--dt", type=float)
        c.add_argument("--t-final", type=float)
        c.add_argument("--corrected", action="store_true", help="Apply the gradient-corrected feedback.")
        c.add_argument("--residual", action="store_true", help="Evaluate the HJB residual along the run.")
        c.add_argument("--residual-stride", type=int)
        c.add_argument("--strategies", help="Comma-separated strategies for bench.")
        c.add_argument("--mu-values", type=_floats, help="Comma-separated mu values for bench.")
        c.add_argument("--indices", type=_ints, help="Z perturbation indices i1,j1,j2 (1-based).")
        c.add_argument("--closed-loop", action="store_true",
                       help="Search on the closed-loop residual phi . (A_cl x - S phi / 4).")
        c.add_argument("--jobs", type=int)
        c.add_argument("--seed", type=int, help="Seed of the randomized selftest states.")
        c.add_argument("--output-dir")
    return p


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """ Flags win over the config file. """
    data = cfg.to_dict()
    if args.model:
        if args.model != data["model"]["name"]:
            data["model"]["params"] = {}
        data["model"]["name"] = args.model
    params = dict(data["model"]["params"])
    for key in ("case", "mu", "sigma", "init", "x0", "variant"):
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    data["model"]["params"] = params
    if args.strategy:
        data["strategy"] = args.strategy
    for key, flag in (("scheme", args.scheme), ("dt", args.dt), ("t_final", args.t_final)):
        if flag is not None:
            data["integrator"][key] = flag
    if args.corrected:
        data["analysis"]["corrected"] = True
    if args.residual:
        data["analysis"]["residual_on"] = True
    if args.residual_stride is not None:
        data["analysis"]["residual_stride"] = args.residual_stride
    if args.strategies is not None:
        data["bench"]["strategies"] = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if args.mu_values is not None:
        data["bench"]["mu"] = args.mu_values
    if args.indices is not None:
        data["sdc"] = dict(data["sdc"] or {}, indices=args.indices)
    if args.closed_loop:
        data["sdc"] = dict(data["sdc"] or {}, closed_loop=True)
    if args.jobs is not None:
        data["jobs"] = args.jobs
    if args.seed is not None:
        data["seed"] = args.seed
    return ExperimentConfig.from_dict(data)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = apply_overrides(cfg, args)
        out = resolve_output_dir(cfg, args.output_dir)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (MatrixEquationError, SimulationError, SingularImplicitOperator) as e:
        logger.error("solver failure: %s", e)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
