"""Distances and positions from ranging exchanges and BLE signal strength."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import COUNTER_MODULUS, MODE4_RANGE_BIAS
from .protocol import RangingExchange
from .radio import SPEED_OF_LIGHT

NLOS_THRESHOLD_DB = 7.0
NLOS_WEIGHT = 0.25
MAX_RATIO_DEVIATION = 100e-6


class EstimationError(ValueError):
    pass


class GeometryError(EstimationError):
    pass


class SolverError(EstimationError):
    def __init__(self, message: str, best: "Position2D"):
        super().__init__(message)
        self.best = best


class Method(str, enum.Enum):
    UWB_TOF = "UwbTof"
    BLE_RSSI = "BleRssi"


class LinkClass(str, enum.Enum):
    LOS = "LOS"
    NLOS = "NLOS"


@dataclass(frozen=True)
class DistanceEstimate:
    meters: float
    method: Method = Method.UWB_TOF
    nlos_flag: bool | None = None
    raw_tof: float | None = None
    raw_meters: float | None = None

    def __post_init__(self):
        if self.meters < 0:
            raise EstimationError("distance estimate must be non-negative")


@dataclass(frozen=True)
class BiasTable:
    """Range bias (m) as a function of measured distance (m).

    Linear between breakpoints, held constant outside them.
    """

    breakpoints: tuple = ()

    def __post_init__(self):
        xs = [d for d, _ in self.breakpoints]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise EstimationError("bias breakpoints must be strictly increasing in distance")

    def bias_at(self, distance: float) -> float:
        if not self.breakpoints:
            return 0.0
        xs, ys = zip(*self.breakpoints)
        return float(np.interp(distance, xs, ys))


def default_bias_table(mode_id: int) -> BiasTable:
    return BiasTable(MODE4_RANGE_BIAS) if mode_id == 4 else BiasTable()


# -- time of flight ----------------------------------------------------------------

def _span(later: int, earlier: int) -> int:
    return (later - earlier) % COUNTER_MODULUS


def _require(ex: RangingExchange, *names: str):
    missing = [n for n in names if getattr(ex, n) is None]
    if missing or not ex.complete:
        raise EstimationError(f"exchange is not complete (missing {', '.join(missing) or 'outcome'})")


def tof_sstwr(exchange: RangingExchange) -> float:
    """Single-sided time of flight, (round - reply) / 2, in seconds."""
    return correct_drift(exchange, 1.0)


def correct_drift(exchange: RangingExchange, clock_offset_ratio: float) -> float:
    """Single-sided time of flight with the anchor's reply rescaled to the tag clock."""
    _require(exchange, "t1_tx_poll", "t2_rx_poll", "t3_tx_resp", "t4_rx_resp")
    if abs(clock_offset_ratio - 1.0) >= MAX_RATIO_DEVIATION:
        raise EstimationError(f"clock offset ratio {clock_offset_ratio!r} is implausible")
    round_ticks = _span(exchange.t4_rx_resp, exchange.t1_tx_poll)
    reply_ticks = _span(exchange.t3_tx_resp, exchange.t2_rx_poll)
    if clock_offset_ratio == 1.0:
        diff = round_ticks - reply_ticks
    else:
        diff = round_ticks - clock_offset_ratio * reply_ticks
    if diff < 0:
        raise EstimationError("reply longer than round trip: corrupted timestamps")
    return diff * exchange.tick_duration / 2.0


def tof_dstwr(exchange: RangingExchange) -> float:
    """Double-sided time of flight, first-order insensitive to clock drift."""
    if exchange.t5_tx_final is None or exchange.t6_rx_final is None:
        raise EstimationError("double-sided estimate needs the final message timestamps")
    _require(exchange, "t1_tx_poll", "t2_rx_poll", "t3_tx_resp", "t4_rx_resp")
    ra = _span(exchange.t4_rx_resp, exchange.t1_tx_poll)
    da = _span(exchange.t3_tx_resp, exchange.t2_rx_poll)
    rb = _span(exchange.t6_rx_final, exchange.t3_tx_resp)
    db = _span(exchange.t5_tx_final, exchange.t4_rx_resp)
    num = ra * rb - da * db
    if num < 0:
        raise EstimationError("negative double-sided time of flight: corrupted timestamps")
    return num / (ra + rb + da + db) * exchange.tick_duration


def drift_error(reply: float, drift_tag_ppm: float, drift_anchor_ppm: float) -> float:
    """Distance error (m) carried by an uncorrected single-sided estimate.

    Positive when the tag clock runs faster than the anchor clock.
    """
    if reply <= 0:
        raise EstimationError("reply time must be positive")
    return SPEED_OF_LIGHT * (reply / 2.0) * (drift_tag_ppm - drift_anchor_ppm) * 1e-6


def correct_bias(raw: float, table: BiasTable) -> float:
    if raw < 0:
        raise EstimationError("raw distance must be non-negative")
    return raw - table.bias_at(raw)


def distance_from_rssi(rssi: float, ref_power_1m: float, exponent: float = 2.0) -> float:
    if exponent <= 0:
        raise EstimationError("path-loss exponent must be positive")
    return 10 ** ((ref_power_1m - rssi) / (10 * exponent))


def classify_gap(gap_db: float, threshold: float = NLOS_THRESHOLD_DB) -> LinkClass:
    return LinkClass.NLOS if gap_db >= threshold else LinkClass.LOS


def classify_nlos(p_rxl: float, p_fp: float, threshold: float = NLOS_THRESHOLD_DB) -> LinkClass:
    """LOS/NLOS decision from total and first-path received power."""
    if p_fp > p_rxl:
        raise EstimationError(f"first-path power {p_fp} exceeds total power {p_rxl}")
    return classify_gap(p_rxl - p_fp, threshold)


def estimate_distance(exchange: RangingExchange, bias_table: BiasTable | None = None,
                      drift_correction: bool = True, threshold: float = NLOS_THRESHOLD_DB) -> DistanceEstimate:
    """Complete exchange -> bias-corrected UWB distance with NLOS flag."""
    if exchange.double_sided:
        tof = tof_dstwr(exchange)
    elif drift_correction and exchange.clock_offset_ratio is not None:
        tof = correct_drift(exchange, exchange.clock_offset_ratio)
    else:
        tof = tof_sstwr(exchange)
    raw = SPEED_OF_LIGHT * tof
    table = bias_table if bias_table is not None else default_bias_table(exchange.mode_id)
    meters = max(correct_bias(raw, table), 0.0)
    flag = None
    if not (math.isnan(exchange.p_rxl) or math.isnan(exchange.p_fp)):
        flag = classify_nlos(exchange.p_rxl, exchange.p_fp, threshold) is LinkClass.NLOS
    return DistanceEstimate(meters, Method.UWB_TOF, flag, tof, raw)


# -- positioning -----------------------------------------------------------------

@dataclass(frozen=True)
class Position2D:
    x: float
    y: float
    residual: float = 0.0
    ambiguity: tuple | None = None

    def __post_init__(self):
        if self.residual < 0:
            raise EstimationError("residual must be non-negative")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


def intersect_two_circles(a1, d1: float, a2, d2: float) -> Position2D:
    """Intersection of two range circles.

    Two solutions: the one left of the a1->a2 direction is returned, the other
    goes in ``ambiguity``.  Disjoint or nested circles: midpoint of closest
    approach with ``residual`` equal to half the gap.
    """
    p1 = np.asarray(a1, dtype=float)
    p2 = np.asarray(a2, dtype=float)
    baseline = p2 - p1
    dist = math.hypot(*baseline)
    if dist == 0.0:
        raise GeometryError("anchors coincide")
    u = baseline / dist
    along = (d1 * d1 - d2 * d2 + dist * dist) / (2 * dist)
    h2 = d1 * d1 - along * along

    if h2 < 0:
        if d1 + d2 < dist:
            q1, q2 = p1 + d1 * u, p2 - d2 * u
            gap = dist - d1 - d2
        elif d1 >= d2:
            q1, q2 = p1 + d1 * u, p2 + d2 * u
            gap = d1 - d2 - dist
        else:
            q1, q2 = p1 - d1 * u, p2 - d2 * u
            gap = d2 - d1 - dist
        mid = (q1 + q2) / 2
        return Position2D(float(mid[0]), float(mid[1]), max(gap, 0.0) / 2)

    base = p1 + along * u
    if h2 == 0:
        return Position2D(float(base[0]), float(base[1]))
    h = math.sqrt(h2)
    perp = np.array([-u[1], u[0]])
    left, right = base + h * perp, base - h * perp
    return Position2D(float(left[0]), float(left[1]), 0.0, (float(right[0]), float(right[1])))


def resolve_half_plane(position: Position2D, a1, a2, hint) -> Position2D:
    """Pick the solution lying on the same side of the a1-a2 line as ``hint``."""
    if position.ambiguity is None:
        return position
    p1 = np.asarray(a1, float)
    direction = np.asarray(a2, float) - p1

    def side(point):
        rel = np.asarray(point, float) - p1
        return direction[0] * rel[1] - direction[1] * rel[0]

    if side(hint) * side((position.x, position.y)) >= 0:
        return position
    ox, oy = position.ambiguity
    return Position2D(ox, oy, position.residual, (position.x, position.y))


def _distance_of(value) -> tuple[float, bool]:
    if isinstance(value, DistanceEstimate):
        return value.meters, bool(value.nlos_flag)
    return float(value), False


def _linear_start(anchors: np.ndarray, dists: np.ndarray) -> np.ndarray:
    a0, d0 = anchors[0], dists[0]
    lhs = 2 * (anchors[1:] - a0)
    rhs = (np.sum(anchors[1:] ** 2, axis=1) - np.sum(a0 ** 2)) - dists[1:] ** 2 + d0 ** 2
    solution, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return solution


def multilaterate(measurements: Sequence, weights: Sequence[float] | None = None,
                  nlos_weight: float = NLOS_WEIGHT, initial=None, max_iter: int = 100,
                  tol: float = 1e-10) -> Position2D:
    """Weighted Gauss-Newton fit of a 2D position to anchor ranges.

    ``measurements`` is a sequence of ``(anchor_xy, distance)`` where distance is
    a float or a :class:`DistanceEstimate`; NLOS-flagged estimates are weighted
    down by ``nlos_weight``.
    """
    if len(measurements) < 3:
        raise GeometryError("need at least three anchors for a 2D fix")
    anchors = np.array([np.asarray(a, float)[:2] for a, _ in measurements])
    parsed = [_distance_of(d) for _, d in measurements]
    dists = np.array([d for d, _ in parsed])
    w = np.ones(len(measurements)) if weights is None else np.asarray(weights, float).copy()
    w *= np.array([nlos_weight if flag else 1.0 for _, flag in parsed])

    spread = anchors - anchors.mean(axis=0)
    sv = np.linalg.svd(spread, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise GeometryError("anchors are collinear")

    def residuals(point):
        return np.linalg.norm(point - anchors, axis=1) - dists

    def cost(point):
        r = residuals(point)
        return float(np.sum(w * r * r))

    def solve(p):
        current = cost(p)
        for _ in range(max_iter):
            diff = p - anchors
            ranges = np.linalg.norm(diff, axis=1)
            ranges[ranges == 0] = 1e-12
            jac = diff / ranges[:, None]
            jtw = jac.T * w
            try:
                step = np.linalg.solve(jtw @ jac, -(jtw @ (ranges - dists)))
            except np.linalg.LinAlgError:
                step = -(jtw @ (ranges - dists))
            scale = 1.0
            while scale > 1e-10:
                candidate = p + scale * step
                new_cost = cost(candidate)
                if new_cost <= current:
                    break
                scale /= 2
            else:
                return p, current, True
            moved = float(np.linalg.norm(candidate - p))
            gain = current - new_cost
            p, current = candidate, new_cost
            if moved <= tol * max(1.0, float(np.linalg.norm(p))) or gain <= 1e-10 * current:
                return p, current, True
        return p, current, False

    linear = _linear_start(anchors, dists)
    p, current, converged = solve(linear if initial is None else np.asarray(initial, float).copy())
    if initial is not None and current > 1e-12:
        # a poor start can settle in a local minimum; the linear start is the fallback
        q, alt, ok = solve(linear)
        if alt < current:
            p, current, converged = q, alt, ok
    result = _fix(p, residuals(p))
    if not converged:
        raise SolverError("Gauss-Newton did not converge", result)
    return result


def _fix(p: np.ndarray, r: np.ndarray) -> Position2D:
    return Position2D(float(p[0]), float(p[1]), float(np.sqrt(np.mean(r * r))))
