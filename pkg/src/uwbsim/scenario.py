"""Scenario file schema (YAML or JSON) with line-anchored validation errors."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Parse or validation failure; ``issues`` holds ``(line, path, message)`` tuples."""

    def __init__(self, issues: list[tuple[Optional[int], str, str]], source: str = "<scenario>"):
        self.issues = issues
        self.source = source
        lines = []
        for line, path, msg in issues:
            where = f"{source}:{line}" if line else source
            lines.append(f"{where}: {path + ': ' if path else ''}{msg}")
        super().__init__("\n".join(lines))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NodeSpec(_Model):
    id: int = Field(ge=0, le=255)
    role: Literal["tag", "anchor", "gateway"]
    position: tuple[float, float] = (0.0, 0.0)
    drift_ppm: Optional[float] = None
    phase_offset: Optional[float] = Field(default=None, ge=0)
    trace: Optional[list[tuple[float, float, float]]] = None

    @field_validator("trace")
    @classmethod
    def _trace_ordered(cls, trace):
        if trace is None:
            return trace
        if len(trace) < 2:
            raise ValueError("a motion trace needs at least two waypoints [t, x, y]")
        times = [w[0] for w in trace]
        if times[0] < 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("trace times must be non-negative and strictly increasing")
        return trace


class ObstacleSpec(_Model):
    segment: tuple[tuple[float, float], tuple[float, float]]
    material: str = "wood"
    thickness_mm: float = Field(default=20.0, ge=0)
    excess_loss_db: Optional[float] = Field(default=None, ge=0)


class PolicySpec(_Model):
    regime: Literal["motion", "periodic", "continuous"] = "motion"
    t_offset: float = Field(default=2.0, gt=0)
    n_range: float = Field(default=15.0, gt=0)
    updates_per_interval: int = Field(default=3, gt=0)
    update_interval: float = Field(default=5.0, gt=0)
    rx_delay: float = Field(default=0.010, ge=0)
    hop_limit: int = Field(default=1, ge=0)


class TimingSpec(_Model):
    anchor_processing: float = Field(default=0.010, gt=0)
    tag_processing: float = Field(default=0.010, gt=0)
    response_timeout: Optional[float] = Field(default=None, gt=0)
    guard: float = Field(default=0.002, ge=0)


class ClockSpec(_Model):
    max_random_drift_ppm: float = Field(default=5.0, ge=0)
    max_drift_ppm: float = Field(default=20.0, gt=0)
    ratio_noise_ppm: float = Field(default=0.0, ge=0)


class BleSpec(_Model):
    enabled: bool = True
    interval: float = Field(default=1.0, gt=0)


class MeshSpec(_Model):
    latency: Union[float, tuple[float, float]] = 0.05

    @field_validator("latency")
    @classmethod
    def _non_negative(cls, value):
        values = value if isinstance(value, tuple) else (value,)
        if any(v < 0 for v in values):
            raise ValueError("mesh latency must be non-negative")
        if isinstance(value, tuple) and value[0] > value[1]:
            raise ValueError("latency range must be [low, high]")
        return value


class ChannelSpec(_Model):
    noiseless: bool = False
    noise: Optional[bool] = None
    bias: Optional[bool] = None
    ideal_reception: Optional[bool] = None
    range_sigma_m: Optional[dict[int, tuple[float, float]]] = None
    nlos_sigma_factor: Optional[float] = Field(default=None, ge=0)
    nlos_bias_sigmas: Optional[float] = None
    fp_gap_los_db: Optional[float] = Field(default=None, ge=0)
    fp_gap_sigma_db: Optional[float] = Field(default=None, ge=0)
    reception_scale_db: Optional[float] = Field(default=None, gt=0)
    ble_ref_power_1m: Optional[float] = None
    ble_exponent: Optional[float] = Field(default=None, gt=0)
    ble_reception_los: Optional[float] = Field(default=None, ge=0, le=1)
    ble_reception_nlos: Optional[float] = Field(default=None, ge=0, le=1)
    tx_power_dbm: Optional[float] = None


class EstimationSpec(_Model):
    drift_correction: bool = True
    bias_correction: bool = True
    bias_tables: Optional[dict[int, list[tuple[float, float]]]] = None
    nlos_threshold_db: float = 7.0
    nlos_weight: float = Field(default=0.25, gt=0, le=1)
    half_plane_hint: Optional[tuple[float, float]] = None


class Scenario(_Model):
    schema_version: int
    name: str = "scenario"
    seed: int = Field(default=0, ge=0, lt=2**64)
    duration: float = Field(gt=0)
    mode: int = Field(default=4, ge=1, le=6)
    protocol: Literal["sstwr", "dstwr"] = "sstwr"
    nodes: list[NodeSpec]
    obstacles: list[ObstacleSpec] = []
    policy: PolicySpec = PolicySpec()
    timing: TimingSpec = TimingSpec()
    clock: ClockSpec = ClockSpec()
    ble: BleSpec = BleSpec()
    mesh: MeshSpec = MeshSpec()
    channel: ChannelSpec = ChannelSpec()
    estimation: EstimationSpec = EstimationSpec()
    battery_capacity_mah: float = Field(default=200.0, gt=0)
    base_current: Union[Literal["debug", "productive"], float] = "debug"

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}; this build reads version {SCHEMA_VERSION}")
        return v

    @model_validator(mode="after")
    def _cross_checks(self):
        ids = [n.id for n in self.nodes]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValueError(f"duplicate node ids {dupes}")
        if not any(n.role == "tag" for n in self.nodes):
            raise ValueError("scenario needs at least one tag")
        if not any(n.role == "anchor" for n in self.nodes):
            raise ValueError("scenario needs at least one anchor")
        for n in self.nodes:
            if n.drift_ppm is not None and abs(n.drift_ppm) > self.clock.max_drift_ppm:
                raise ValueError(f"node {n.id}: |drift_ppm| exceeds {self.clock.max_drift_ppm}")
            if n.trace is not None:
                if n.role != "tag":
                    raise ValueError(f"node {n.id}: only tags may carry a motion trace")
                if n.trace[-1][0] > self.duration:
                    raise ValueError(f"node {n.id}: trace extends beyond duration {self.duration}")
        return self


# -- loading --------------------------------------------------------------------

def line_index(text: str) -> dict[tuple, int]:
    """Map key paths in a YAML/JSON document to 1-based line numbers."""
    index: dict[tuple, int] = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return index

    def walk(node, path):
        index.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                sub = path + (key.value,)
                index[sub] = key.start_mark.line + 1
                walk(value, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                index[path + (str(i),)] = item.start_mark.line + 1
                walk(item, path + (str(i),))

    if root is not None:
        walk(root, ())
    return index


def _locate(index: dict, loc: tuple) -> Optional[int]:
    path = tuple(str(p) for p in loc)
    while path:
        if path in index:
            return index[path]
        path = path[:-1]
    return index.get(())


def parse_scenario(text: str, source: str = "<scenario>", overrides: dict | None = None) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError([(line, "", f"parse error: {getattr(exc, 'problem', exc)}")], source) from None
    if not isinstance(data, dict):
        raise ScenarioError([(1, "", "scenario must be a mapping")], source)
    if overrides:
        data = copy.deepcopy(data)
        data.update(overrides)
    return validate_data(data, source, line_index(text))


def validate_data(data: dict, source: str = "<scenario>", index: dict | None = None) -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        index = index or {}
        issues = []
        for err in exc.errors():
            loc = tuple(p for p in err["loc"] if not str(p).startswith(("function-", "tuple[", "float", "int")))
            issues.append((_locate(index, loc), ".".join(str(p) for p in loc), err["msg"]))
        raise ScenarioError(issues, source) from None


def load_scenario(path: str | Path, overrides: dict | None = None) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    return parse_scenario(path.read_text(encoding="utf-8"), str(path), overrides)


def load_document(path: str | Path) -> tuple[dict, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        return yaml.safe_load(text), text
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError([(mark.line + 1 if mark else None, "", f"parse error: {exc}")], str(path)) from None


def scenario_to_dict(scenario: Scenario) -> dict:
    return json.loads(scenario.model_dump_json())
