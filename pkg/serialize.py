""" JSON and CSV emission of run artifacts. """
from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import serpy

from constants import CSV_DIGITS


def fmt(value) -> str:
    """ Numbers with 17 significant digits so reruns compare bit for bit. """
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), f".{CSV_DIGITS}g")


class EnhancedJSONEncoder(json.JSONEncoder):
    """ Dataclasses and numpy arrays and scalars. """

    def default(self, o):
        if dataclasses.is_dataclass(o) and not isinstance(o, type):
            return dataclasses.asdict(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        return super().default(o)


def dumps(obj) -> str:
    return json.dumps(obj, cls=EnhancedJSONEncoder, indent=2)


def write_json(path: Path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


class SummarySerializer(serpy.Serializer):
    model = serpy.StrField()
    params = serpy.Field()
    strategy = serpy.StrField()
    total_cost = serpy.FloatField()
    wall_time_total = serpy.FloatField()
    diverged = serpy.BoolField()
    steps = serpy.IntField()


class BenchRowSerializer(serpy.Serializer):
    strategy = serpy.StrField()
    mu = serpy.FloatField()
    wall_time = serpy.MethodField()
    total_cost = serpy.MethodField()
    diverged = serpy.BoolField()
    failed = serpy.BoolField()
    error = serpy.Field(required=False)

    def get_wall_time(self, row):
        return _finite_or_none(row.wall_time)

    def get_total_cost(self, row):
        return _finite_or_none(row.total_cost)


class RootSerializer(serpy.Serializer):
    alpha_star = serpy.MethodField()
    e_at_root = serpy.MethodField()
    bracket = serpy.MethodField()
    holds = serpy.BoolField()

    def get_alpha_star(self, result):
        return _finite_or_none(result.alpha_star)

    def get_e_at_root(self, result):
        return _finite_or_none(result.e_at_root)

    def get_bracket(self, result):
        bracket = result.profile.bracket
        return None if bracket is None else [float(bracket[0]), float(bracket[1])]


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def trajectory_header(d: int, m: int) -> list[str]:
    return (["t"] + [f"y_{i}" for i in range(1, d + 1)] + [f"u_{j}" for j in range(1, m + 1)]
            + ["running_cost", "E", "nk_iters", "step_wall_s"])


def write_trajectory_csv(path: Path, record) -> None:
    """ One row per grid node: t, y_1..y_d, u_1..u_m, running_cost, E, nk_iters, step_wall_s. """
    d = len(record.states[0])
    m = len(record.controls[0])
    rows = []
    for k, (t, y, u, c) in enumerate(zip(record.times, record.states, record.controls, record.running_cost)):
        e = record.residuals[k] if record.residuals is not None else float("nan")
        stat = record.step_stats[k] if k < len(record.step_stats) else None
        iters = stat.iterations if stat is not None else 0
        wall = stat.wall_time if stat is not None else float("nan")
        rows.append([t, *y, *u, c, e, iters, wall])
    write_csv(path, trajectory_header(d, m), rows)


def write_residual_csv(path: Path, times, residuals, phi_norms, bound_partial) -> None:
    write_csv(path, ["t", "E", "phi_norm", "bound_partial"], zip(times, residuals, phi_norms, bound_partial))


def write_profile_csv(path: Path, alphas, e_values) -> None:
    write_csv(path, ["alpha", "E"], zip(alphas, e_values))


def write_spectrum_csv(path: Path, sigmas) -> None:
    write_csv(path, ["index", "sigma"], ((i, s) for i, s in enumerate(sigmas, start=1)))


def write_offdiagonal_csv(path: Path, profile) -> None:
    write_csv(path, ["k", "max_offdiag_k"], enumerate(profile))


def write_bench_csv(path: Path, rows: list[dict]) -> None:
    header = ["strategy", "mu", "wall_time", "total_cost", "diverged", "failed"]
    write_csv(path, header, ([r[h] if r[h] is not None else "" for h in header] for r in rows))


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]


def load_json(path: Path) -> Optional[dict]:
    return json.loads(Path(path).read_text())
