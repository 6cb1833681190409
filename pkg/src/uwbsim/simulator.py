"""Discrete-event simulation of tags, anchors and gateways ranging over UWB and advertising over BLE."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import radio
from .channel import (
    COUNTER_MODULUS,
    TICK_DURATION,
    ChannelModel,
    DeviceClock,
    LinkGeometry,
    Obstruction,
)
from .estimation import (
    BiasTable,
    EstimationError,
    GeometryError,
    SolverError,
    default_bias_table,
    distance_from_rssi,
    estimate_distance,
    intersect_two_circles,
    multilaterate,
    resolve_half_plane,
)
from .events import EventQueue, MeshBus
from .power import (
    BASE_CURRENT_PRESETS_MA,
    DutyCyclePolicy,
    PolicyState,
    PowerLedger,
    PowerProfile,
    State,
    lifetime_hours,
    step_policy,
)
from .protocol import FINAL_PAYLOAD_BYTES, Outcome, ProtocolTiming, RangingNode, TwrSession
from .scenario import Scenario

MEASUREMENT_COLUMNS = (
    "point", "time_s", "tag", "anchor", "method", "mode", "protocol", "outcome", "received",
    "true_distance_m", "los", "barrier_mm", "distance_raw_m", "distance_m",
    "p_rxl_dbm", "p_fp_dbm", "fp_gap_db", "nlos_flag", "rssi_dbm",
)
POSITION_COLUMNS = (
    "point", "time_s", "tag", "method", "success", "anchors", "x", "y", "true_x", "true_y",
    "error_m", "residual_m",
)
MIN_LINK_DISTANCE = 0.01


@dataclass
class RunResult:
    scenario: str
    seed: int
    duration: float
    mode: int
    protocol: str
    measurements: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    ledgers: dict = field(default_factory=dict)
    logs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return jsonable(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    @property
    def exchanges(self) -> list:
        return [m for m in self.measurements if m["method"] == "uwb"]


def jsonable(value):
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) or math.isinf(value) else value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def build_channel(scenario: Scenario) -> ChannelModel:
    spec = scenario.channel
    model = ChannelModel.noiseless() if spec.noiseless else ChannelModel()
    changes = {}
    for name in ("noise", "bias", "ideal_reception", "nlos_sigma_factor", "nlos_bias_sigmas", "fp_gap_los_db",
                 "fp_gap_sigma_db", "reception_scale_db", "ble_ref_power_1m", "ble_exponent",
                 "ble_reception_los", "ble_reception_nlos"):
        value = getattr(spec, name)
        if value is not None:
            changes[name] = value
    if spec.range_sigma_m:
        sigmas = dict(model.range_sigma_m)
        sigmas.update({int(k): tuple(v) for k, v in spec.range_sigma_m.items()})
        changes["range_sigma_m"] = sigmas
    return dataclasses.replace(model, **changes)


class _Node:
    def __init__(self, spec, clock: DeviceClock, ledger: PowerLedger, policy: PolicyState):
        self.spec = spec
        self.id = spec.id
        self.role = spec.role
        self.ranging = RangingNode(spec.id, tuple(spec.position), clock, awake=policy.awake)
        self.ledger = ledger
        self.policy = policy
        self.busy_until = -math.inf
        self.round: list = []
        self.round_results: list = []
        self.round_start = 0.0
        self.advert_seq = 0
        self.relayed: dict = {}
        trace = spec.trace
        if trace:
            arr = np.asarray(trace, float)
            self.trace_t, self.trace_x, self.trace_y = arr[:, 0], arr[:, 1], arr[:, 2]
        else:
            self.trace_t = None

    def position(self, t: float) -> tuple[float, float]:
        if self.trace_t is None:
            return tuple(self.spec.position)
        return (float(np.interp(t, self.trace_t, self.trace_x)), float(np.interp(t, self.trace_t, self.trace_y)))

    def motion_intervals(self) -> list[tuple[float, float]]:
        if self.trace_t is None:
            return []
        spans: list[list[float]] = []
        for i in range(len(self.trace_t) - 1):
            if self.trace_x[i] == self.trace_x[i + 1] and self.trace_y[i] == self.trace_y[i + 1]:
                continue
            start, end = float(self.trace_t[i]), float(self.trace_t[i + 1])
            if spans and spans[-1][1] == start:
                spans[-1][1] = end
            else:
                spans.append([start, end])
        return [tuple(s) for s in spans]


class Simulator:
    """Runs one scenario on a single-threaded event loop.

    The same scenario and seed always yield an identical :class:`RunResult`.
    """

    def __init__(self, scenario: Scenario, point: int = 0,
                 temperature_hook: Optional[Callable[[int, float], None]] = None):
        self.sc = scenario
        self.point = point
        self.temperature_hook = temperature_hook or (lambda node_id, t: None)
        self.rng = np.random.default_rng(scenario.seed)
        self.queue = EventQueue()
        tx_power = scenario.channel.tx_power_dbm
        self.config = radio.mode(scenario.mode, tx_power=radio.DEFAULT_TX_POWER_DBM if tx_power is None else tx_power)
        self.channel = build_channel(scenario)
        pol = scenario.policy
        self.policy = DutyCyclePolicy(pol.t_offset, pol.n_range, pol.updates_per_interval, pol.update_interval,
                                      pol.rx_delay, pol.hop_limit)
        tm = scenario.timing
        self.timing = ProtocolTiming(tm.anchor_processing, pol.rx_delay, tm.tag_processing,
                                     tm.response_timeout, tm.guard)
        base = scenario.base_current
        base_ma = BASE_CURRENT_PRESETS_MA[base] if isinstance(base, str) else float(base)
        self.profile = PowerProfile(base_node_current_ma=base_ma)
        self.regime = pol.regime
        self.double_sided = scenario.protocol == "dstwr"
        est = scenario.estimation
        if not est.bias_correction:
            self.bias_table = BiasTable()
        elif est.bias_tables and scenario.mode in est.bias_tables:
            self.bias_table = BiasTable(tuple(tuple(p) for p in est.bias_tables[scenario.mode]))
        else:
            self.bias_table = default_bias_table(scenario.mode)

        self.airtime = radio.airtime(self.config)
        self.shr = radio.shr_duration(self.config)
        self.cycle_s = self.profile.exchange_total_s(scenario.mode)
        self.cycle_margin = 0.0
        if self.double_sided:
            self.cycle_margin = (tm.anchor_processing + tm.tag_processing
                                 + 3 * radio.airtime(self.config, FINAL_PAYLOAD_BYTES) + 0.005)

        self.result = RunResult(scenario.name, scenario.seed, scenario.duration, scenario.mode, scenario.protocol)
        self.nodes: dict[int, _Node] = {}
        for spec in sorted(scenario.nodes, key=lambda n: n.id):
            self.nodes[spec.id] = self._make_node(spec)
        self.tags = [n for n in self.nodes.values() if n.role == "tag"]
        self.anchors = [n for n in self.nodes.values() if n.role == "anchor"]
        self.gateways = [n for n in self.nodes.values() if n.role == "gateway"]
        self.mesh = MeshBus(self.queue, scenario.mesh.latency, self.rng)
        for node in self.nodes.values():
            self.mesh.subscribe(node.id, self._mesh_handler(node))
        self.obstacles = [
            (o.segment, Obstruction(o.material, o.thickness_mm, o.excess_loss_db)) for o in scenario.obstacles
        ]
        self.outcomes = {o.value: 0 for o in Outcome}

    # -- setup -------------------------------------------------------------------

    def _make_node(self, spec) -> _Node:
        clk = self.sc.clock
        drift = spec.drift_ppm
        if drift is None:
            drift = float(self.rng.uniform(-clk.max_random_drift_ppm, clk.max_random_drift_ppm))
        offset = spec.phase_offset
        if offset is None:
            offset = float(self.rng.uniform(0.0, COUNTER_MODULUS * TICK_DURATION))
        clock = DeviceClock(drift, offset)
        if spec.role == "anchor":
            awake = self.regime != "motion"
            start_state = State.RX if awake else State.DEEP_SLEEP
        elif spec.role == "tag":
            awake = self.regime != "motion"
            start_state = State.SLEEP if awake else State.DEEP_SLEEP
        else:
            awake, start_state = False, State.DEEP_SLEEP
        ledger = PowerLedger(self.sc.mode, self.profile, 0.0, start_state)
        policy = PolicyState(role=spec.role, radio="active" if awake else "deep_sleep")
        return _Node(spec, clock, ledger, policy)

    def _log(self, node_id: int, event: str, detail=None):
        node = self.nodes.get(node_id)
        state = node.ledger.state.value if node else ""
        self.result.logs.append([self.queue.now, node_id, event, state, detail])

    def geometry(self, a_pos, b_pos) -> LinkGeometry:
        dist = max(math.hypot(a_pos[0] - b_pos[0], a_pos[1] - b_pos[1]), MIN_LINK_DISTANCE)
        blocked = tuple(obs for seg, obs in self.obstacles if _segments_cross(a_pos, b_pos, seg[0], seg[1]))
        return LinkGeometry(dist, blocked)

    # -- run ---------------------------------------------------------------------

    def run(self) -> RunResult:
        for tag in self.tags:
            self._schedule_tag(tag)
        self.queue.run(until=self.sc.duration)
        self._finalize()
        return self.result

    def _schedule_tag(self, tag: _Node):
        q = self.queue
        if self.sc.ble.enabled:
            q.push(0.0, self._advertise, tag)
        if self.regime == "continuous":
            q.push(0.0, self._round, tag)
        elif self.regime == "periodic":
            q.push(0.0, self._slot, tag)
        else:
            for start, stop in tag.motion_intervals():
                q.push(start, self._motion_edge, tag, "motion_start")
                q.push(stop, self._motion_edge, tag, "motion_stop")

    def _in_time(self, t: float) -> bool:
        return t + self.cycle_s + self.cycle_margin <= self.sc.duration

    # -- tag behaviour -------------------------------------------------------------

    def _motion_edge(self, tag: _Node, event: str):
        now = self.queue.now
        tag.policy = step_policy(tag.policy, event, self.policy, now)
        self._log(tag.id, event)
        if event == "motion_start":
            if self.sc.ble.enabled:
                self._advertise(tag, reschedule=False)
            first = now + self.policy.update_period
            if first <= self.sc.duration:
                self.queue.push(first, self._slot, tag)
        elif tag.busy_until <= now and tag.ledger.state is not State.DEEP_SLEEP:
            tag.ledger.transition(now, State.DEEP_SLEEP)

    def _slot(self, tag: _Node):
        now = self.queue.now
        if self.regime == "motion" and not tag.policy.moving:
            return
        if tag.round:
            self._log(tag.id, "slot_skipped", "round in progress")
        else:
            self._round(tag)
        nxt = now + self.policy.update_period
        if nxt <= self.sc.duration:
            self.queue.push(nxt, self._slot, tag)

    def _targets(self, tag: _Node) -> list[_Node]:
        if self.regime != "motion":
            return list(self.anchors)
        pos = tag.position(self.queue.now)
        return [a for a in self.anchors
                if math.hypot(pos[0] - a.spec.position[0], pos[1] - a.spec.position[1]) <= self.policy.n_range]

    def _round(self, tag: _Node):
        now = self.queue.now
        targets = self._targets(tag)
        if not targets or not self._in_time(now):
            return
        tag.round = targets
        tag.round_results = []
        tag.round_start = now
        self._start_cycle(tag)

    def _start_cycle(self, tag: _Node):
        now = self.queue.now
        anchor = tag.round[0]
        self.temperature_hook(tag.id, now)
        mode_id = self.sc.mode
        d = {s: self.profile.duration_s(mode_id, s) for s in (State.INIT, State.IDLE, State.TX, State.RX)}
        led = tag.ledger
        led.transition(now, State.INIT)
        led.transition(now + d[State.INIT], State.IDLE)
        tx_start_state = now + d[State.INIT] + d[State.IDLE]
        led.transition(tx_start_state, State.TX)
        tx_end = tx_start_state + d[State.TX]
        delay = min(self.timing.rx_delay, d[State.RX])
        if delay > 0:
            led.transition(tx_end, State.IDLE)
        led.transition(tx_end + delay, State.RX)
        window_end = tx_end + d[State.RX]
        tag.busy_until = window_end + self.cycle_margin

        pos = tag.position(now)
        tag.ranging.position = pos
        geometry = self.geometry(pos, anchor.spec.position)
        session = TwrSession(
            tag.ranging, anchor.ranging, self.config, self.timing, geometry, self.rng, self.channel,
            double_sided=self.double_sided, ratio_noise_ppm=self.sc.clock.ratio_noise_ppm,
            on_done=lambda ex: self._exchange_done(tag, anchor, geometry, ex, window_end),
        )
        self._log(tag.id, "ranging_start", anchor.id)
        session.start(self.queue, tx_end - self.airtime)

    def _exchange_done(self, tag: _Node, anchor: _Node, geometry: LinkGeometry, ex, window_end: float):
        now = self.queue.now
        self.outcomes[ex.outcome.value] += 1
        gt = ex.global_times
        if "poll_rx" in gt and "resp_tx" in gt:
            poll_end = gt["poll_rx"] + self.airtime - self.shr
            resp_start = gt["resp_tx"] - self.shr
            for t, state in ((poll_end, State.IDLE), (resp_start, State.TX), (resp_start + self.airtime, State.RX)):
                if t >= anchor.ledger.since:
                    anchor.ledger.transition(t, state)
        if self.regime == "motion" and anchor.policy.awake and ex.outcome is not Outcome.LOST:
            anchor.policy = step_policy(anchor.policy, "exchange_done", self.policy, now)
            self.queue.push(anchor.policy.sleep_at, self._anchor_sleep_check, anchor)

        cycle_end = window_end
        if "final_tx" in gt:
            final_start = gt["final_tx"] - self.shr
            final_end = final_start + radio.airtime(self.config, FINAL_PAYLOAD_BYTES)
            tag.ledger.transition(window_end, State.IDLE)
            tag.ledger.transition(final_start, State.TX)
            cycle_end = final_end
        self.queue.push(max(cycle_end, now), self._cycle_end, tag, cycle_end)

        row = self._uwb_row(ex, geometry)
        self.result.measurements.append(row)
        self._log(tag.id, "exchange_done", [anchor.id, ex.outcome.value])
        if ex.complete and row["distance_m"] is not None:
            tag.round_results.append((anchor, row))

    def _uwb_row(self, ex, geometry: LinkGeometry) -> dict:
        row = self._row_base(ex.start_time, ex.tag_id, ex.anchor_id, "uwb", geometry)
        row.update(outcome=ex.outcome.value, received=int(ex.complete))
        if ex.complete:
            try:
                est = estimate_distance(ex, self.bias_table, self.sc.estimation.drift_correction,
                                        self.sc.estimation.nlos_threshold_db)
            except EstimationError as exc:
                self._log(ex.tag_id, "estimate_failed", str(exc))
                return row
            row.update(distance_raw_m=est.raw_meters, distance_m=est.meters, p_rxl_dbm=ex.p_rxl,
                       p_fp_dbm=ex.p_fp, fp_gap_db=ex.p_rxl - ex.p_fp,
                       nlos_flag=None if est.nlos_flag is None else int(est.nlos_flag))
        return row

    def _row_base(self, t, tag_id, anchor_id, method, geometry: LinkGeometry) -> dict:
        row = dict.fromkeys(MEASUREMENT_COLUMNS)
        row.update(point=self.point, time_s=t, tag=tag_id, anchor=anchor_id, method=method,
                   mode=self.sc.mode, protocol=self.sc.protocol, true_distance_m=geometry.distance,
                   los=int(geometry.los), barrier_mm=geometry.barrier_mm)
        return row

    def _cycle_end(self, tag: _Node, t_end: float):
        moving = tag.policy.moving or self.regime != "motion"
        rest = State.SLEEP if moving else State.DEEP_SLEEP
        if t_end >= tag.ledger.since:
            tag.ledger.transition(t_end, rest)
        tag.round.pop(0)
        if tag.round and self._in_time(self.queue.now):
            self._start_cycle(tag)
            return
        tag.round = []
        self._solve_round(tag)
        if self.regime == "continuous":
            self._round(tag)

    def _solve_round(self, tag: _Node):
        results = tag.round_results
        tag.round_results = []
        if not results:
            return
        truth = tag.position(tag.round_start)
        fix = self._solve([a.spec.position for a, _ in results],
                          [r["distance_m"] for _, r in results],
                          [bool(r["nlos_flag"]) for _, r in results])
        self._record_position(tag, "uwb", tag.round_start, fix, len(results), truth)

    def _solve(self, anchors, dists, flags):
        if len(anchors) < 2:
            return None
        try:
            if len(anchors) == 2:
                fix = intersect_two_circles(anchors[0], dists[0], anchors[1], dists[1])
                hint = self.sc.estimation.half_plane_hint
                if hint is not None:
                    fix = resolve_half_plane(fix, anchors[0], anchors[1], hint)
                return fix
            weights = [self.sc.estimation.nlos_weight if f else 1.0 for f in flags]
            return multilaterate(list(zip(anchors, dists)), weights=weights, nlos_weight=1.0)
        except SolverError as exc:
            return exc.best
        except GeometryError:
            return None

    def _record_position(self, tag: _Node, method: str, t: float, fix, n: int, truth):
        row = dict.fromkeys(POSITION_COLUMNS)
        row.update(point=self.point, time_s=t, tag=tag.id, method=method, anchors=n,
                   true_x=truth[0], true_y=truth[1])
        success = fix is not None and (n >= 3 or fix.residual == 0.0)
        row["success"] = int(success)
        if fix is not None:
            row.update(x=fix.x, y=fix.y, residual_m=fix.residual,
                       error_m=math.hypot(fix.x - truth[0], fix.y - truth[1]))
        self.result.positions.append(row)
        if success and self.gateways:
            self.mesh.send(tag.id, self.gateways[0].id, ("position", method, tag.id, fix.x, fix.y))

    # -- BLE and mesh ------------------------------------------------------------

    def _advertise(self, tag: _Node, reschedule: bool = True):
        now = self.queue.now
        if reschedule:
            nxt = now + self.sc.ble.interval
            if nxt < self.sc.duration:
                self.queue.push(nxt, self._advertise, tag)
        tag.advert_seq += 1
        pos = tag.position(now)
        moving = tag.policy.moving
        ch = self.channel
        heard = []
        for anchor in self.anchors:
            geometry = self.geometry(pos, anchor.spec.position)
            draw = ch.draw_ble(geometry, self.rng)
            row = self._row_base(now, tag.id, anchor.id, "ble", geometry)
            row.update(outcome="Received" if draw.received else "Lost", received=int(draw.received))
            if draw.received:
                est = distance_from_rssi(draw.rssi, ch.ble_ref_power_1m, ch.ble_exponent)
                row.update(rssi_dbm=draw.rssi, distance_raw_m=est, distance_m=est)
                heard.append((anchor, est))
            self.result.measurements.append(row)
        if self.regime == "motion" and moving:
            for anchor, est in heard:
                self._wake(anchor, est, self.policy.hop_limit, tag.id, tag.advert_seq)
        if len(self.anchors) >= 2:
            fix = self._solve([a.spec.position for a, _ in heard], [d for _, d in heard], [False] * len(heard))
            self._record_position(tag, "ble", now, fix, len(heard), pos)

    def _wake(self, anchor: _Node, distance, hops_left: int, tag_id: int, seq: int):
        now = self.queue.now
        before = anchor.policy
        after = step_policy(before, "mesh_wake", self.policy, now, distance)
        if after.diagnostics != before.diagnostics:
            anchor.policy = dataclasses.replace(after, diagnostics=())
            return
        anchor.policy = after
        if not before.awake:
            anchor.ledger.transition(now, State.RX)
            anchor.ranging.awake = True
            self._log(anchor.id, "wake", tag_id)
        self.queue.push(after.sleep_at, self._anchor_sleep_check, anchor)
        if hops_left > 0 and anchor.relayed.get(tag_id) != seq:
            anchor.relayed[tag_id] = seq
            for other in self.anchors:
                if other is anchor:
                    continue
                gap = math.hypot(other.spec.position[0] - anchor.spec.position[0],
                                 other.spec.position[1] - anchor.spec.position[1])
                if gap <= self.policy.n_range:
                    self.mesh.send(anchor.id, other.id, ("wake", tag_id, hops_left - 1, seq))

    def _mesh_handler(self, node: _Node):
        def handle(source, payload):
            kind = payload[0]
            if kind == "wake" and node.role == "anchor" and self.regime == "motion":
                _, tag_id, hops_left, seq = payload
                self._wake(node, None, hops_left, tag_id, seq)
            elif kind == "position" and node.role == "gateway":
                self._log(node.id, "report", list(payload[1:]))
        return handle

    def _anchor_sleep_check(self, anchor: _Node):
        now = self.queue.now
        if anchor.ranging.busy_until > now:
            self.queue.push(anchor.ranging.busy_until, self._anchor_sleep_check, anchor)
            return
        after = step_policy(anchor.policy, "offset_elapsed", self.policy, now)
        if anchor.policy.awake and not after.awake:
            anchor.ledger.transition(max(now, anchor.ledger.since), State.DEEP_SLEEP)
            anchor.ranging.awake = False
            self._log(anchor.id, "deep_sleep")
        anchor.policy = after

    # -- wrap-up -------------------------------------------------------------------

    def _finalize(self):
        end = self.sc.duration
        cap = self.sc.battery_capacity_mah
        for node in self.nodes.values():
            node.ledger.close(max(end, node.ledger.since))
            self.result.ledgers[node.id] = dict(role=node.role, drift_ppm=node.ranging.clock.drift_ppm,
                                                **node.ledger.summary(cap))
        uwb = self.result.exchanges
        tag_currents = [self.result.ledgers[t.id]["average_current_ma"] for t in self.tags]
        self.result.summary = {
            "events": self.queue.executed,
            "exchanges": len(uwb),
            "outcomes": dict(self.outcomes),
            "completion_rate": (sum(r["received"] for r in uwb) / len(uwb)) if uwb else None,
            "ble_observations": sum(1 for r in self.result.measurements if r["method"] == "ble"),
            "mesh_messages": self.mesh.delivered,
            "tag_average_current_ma": float(np.mean(tag_currents)) if tag_currents else None,
            "tag_lifetime_h": lifetime_hours(cap, float(np.mean(tag_currents))) if tag_currents else None,
        }


def run(scenario: Scenario, point: int = 0) -> RunResult:
    return Simulator(scenario, point).run()
