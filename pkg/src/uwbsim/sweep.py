"""Parameter sweeps: one independent, reproducibly seeded run per grid point."""

from __future__ import annotations

import copy
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .scenario import ScenarioError, validate_data
from .simulator import RunResult, Simulator


class SweepError(ValueError):
    pass


@dataclass
class SweepPoint:
    point: int
    params: dict
    seed: int
    status: str = "ok"
    error: str = ""
    result: RunResult | None = None

    def summary_row(self) -> dict:
        row = {"point": self.point, "seed": self.seed, "status": self.status, "error": self.error}
        for key, value in self.params.items():
            row[key] = value if np.isscalar(value) else repr(value)
        summary = self.result.summary if self.result is not None else {}
        for key in ("exchanges", "completion_rate", "tag_average_current_ma", "tag_lifetime_h"):
            row[key] = summary.get(key)
        return row


@dataclass
class SweepResult:
    keys: list
    points: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [p for p in self.points if p.status != "ok"]

    def summary_rows(self) -> list[dict]:
        return [p.summary_row() for p in self.points]

    def measurements(self) -> list[dict]:
        rows = []
        for p in self.points:
            if p.result is not None:
                rows.extend(p.result.measurements)
        return rows


def set_path(data: dict, path: str, value) -> None:
    """Assign ``value`` at a dotted path such as ``nodes.1.position`` (list parts are indices)."""
    parts = path.split(".")
    target = data
    for i, part in enumerate(parts[:-1]):
        target = _step(target, part, path, create=True)
    last = parts[-1]
    if isinstance(target, list):
        idx = _index(target, last, path)
        target[idx] = value
    elif isinstance(target, dict):
        target[last] = value
    else:
        raise SweepError(f"{path}: cannot assign into {type(target).__name__}")


def _index(seq: list, part: str, path: str) -> int:
    try:
        idx = int(part)
    except ValueError:
        raise SweepError(f"{path}: {part!r} is not a list index") from None
    if not -len(seq) <= idx < len(seq):
        raise SweepError(f"{path}: index {idx} out of range")
    return idx


def _step(target, part: str, path: str, create: bool):
    if isinstance(target, list):
        return target[_index(target, part, path)]
    if isinstance(target, dict):
        if part not in target:
            if not create:
                raise SweepError(f"{path}: no key {part!r}")
            target[part] = {}
        return target[part]
    raise SweepError(f"{path}: cannot descend into {type(target).__name__}")


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        raise SweepError("parameter grid is empty")
    keys = list(grid)
    for key in keys:
        values = grid[key]
        if not isinstance(values, (list, tuple)) or len(values) == 0:
            raise SweepError(f"grid entry {key!r} needs a non-empty list of values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def point_seeds(master_seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _run_point(args) -> SweepPoint:
    index, params, seed, template = args
    point = SweepPoint(index, params, seed)
    try:
        data = copy.deepcopy(template)
        for key, value in params.items():
            set_path(data, key, value)
        data["seed"] = seed
        scenario = validate_data(data, f"<point {index}>")
        point.result = Simulator(scenario, point=index).run()
    except (ScenarioError, SweepError, ValueError, KeyError) as exc:
        point.status = "failed"
        point.error = " ".join(str(exc).split())
    return point


def sweep(template: dict, grid: dict, master_seed: int | None = None, jobs: int = 1) -> SweepResult:
    """Run ``template`` once for every combination in ``grid``.

    A failing point is recorded with its error and the sweep moves on.
    """
    combos = expand_grid(grid)
    if master_seed is None:
        master_seed = int(template.get("seed", 0))
    seeds = point_seeds(master_seed, len(combos))
    tasks = [(i, combo, seeds[i], template) for i, combo in enumerate(combos)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_run_point, tasks))
    else:
        points = [_run_point(t) for t in tasks]
    return SweepResult(list(grid), points)
