"""SS-TWR and DS-TWR message exchanges as event-driven state machines.

Wire format: little-endian, fields in declaration order, timestamps as 5-byte
unsigned tick counts.

    Poll      kind(1) source(1) dest(1) zero padding(9)          12 bytes
    Response  kind(1) source(1) rx_ts(5) tx_ts(5)                12 bytes
    Final     kind(1) source(1) poll_tx(5) rx_ts(5) tx_ts(5)     17 bytes
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import COUNTER_MODULUS, DEFAULT_CHANNEL, ChannelModel, DeviceClock, LinkGeometry
from .events import EventQueue
from .power import DEFAULT_PROFILE, PowerProfile, State
from .radio import RANGING_PAYLOAD_BYTES, SPEED_OF_LIGHT, RadioConfig, airtime, preamble_duration, shr_duration


class ProtocolError(ValueError):
    pass


class MessageKind(enum.IntEnum):
    POLL = 1
    RESPONSE = 2
    FINAL = 3


TS_BYTES = 5
POLL_LENGTH = 12
RESPONSE_LENGTH = 12
FINAL_LENGTH = 17
FINAL_PAYLOAD_BYTES = FINAL_LENGTH


@dataclass(frozen=True)
class RangingMessage:
    kind: MessageKind
    source_id: int
    dest_id: int | None = None
    rx_timestamp: int | None = None
    tx_timestamp: int | None = None
    poll_tx_timestamp: int | None = None

    def encode(self) -> bytes:
        _check_u8(self.source_id)
        head = bytes([int(self.kind), self.source_id])
        if self.kind is MessageKind.POLL:
            _check_u8(self.dest_id)
            return head + bytes([self.dest_id]) + bytes(POLL_LENGTH - 3)
        if self.kind is MessageKind.RESPONSE:
            return head + _ts(self.rx_timestamp) + _ts(self.tx_timestamp)
        if self.kind is MessageKind.FINAL:
            return head + _ts(self.poll_tx_timestamp) + _ts(self.rx_timestamp) + _ts(self.tx_timestamp)
        raise ProtocolError(f"unknown message kind {self.kind}")

    @classmethod
    def decode(cls, data: bytes) -> "RangingMessage":
        if len(data) < 2:
            raise ProtocolError("truncated message")
        try:
            kind = MessageKind(data[0])
        except ValueError:
            raise ProtocolError(f"unknown message kind byte {data[0]}") from None
        expected = {MessageKind.POLL: POLL_LENGTH, MessageKind.RESPONSE: RESPONSE_LENGTH,
                    MessageKind.FINAL: FINAL_LENGTH}[kind]
        if len(data) != expected:
            raise ProtocolError(f"{kind.name} must be {expected} bytes, got {len(data)}")
        source = data[1]
        if kind is MessageKind.POLL:
            return cls(kind, source, dest_id=data[2])
        stamps = [int.from_bytes(data[i:i + TS_BYTES], "little") for i in range(2, len(data), TS_BYTES)]
        if kind is MessageKind.RESPONSE:
            return cls(kind, source, rx_timestamp=stamps[0], tx_timestamp=stamps[1])
        return cls(kind, source, poll_tx_timestamp=stamps[0], rx_timestamp=stamps[1], tx_timestamp=stamps[2])


def _check_u8(value):
    if value is None or not 0 <= value <= 0xFF:
        raise ProtocolError(f"node id {value!r} does not fit in one byte")


def _ts(value) -> bytes:
    if value is None or not 0 <= value < COUNTER_MODULUS:
        raise ProtocolError(f"timestamp {value!r} outside the 40-bit counter range")
    return int(value).to_bytes(TS_BYTES, "little")


class Outcome(str, enum.Enum):
    COMPLETE = "Complete"
    TIMEOUT = "Timeout"
    LOST = "Lost"


@dataclass(frozen=True)
class ProtocolTiming:
    anchor_processing: float = 0.010
    rx_delay: float = 0.010
    tag_processing: float = 0.010
    response_timeout: float | None = None
    guard: float = 0.002

    def __post_init__(self):
        if self.anchor_processing <= 0 or self.tag_processing <= 0:
            raise ProtocolError("processing delays must be positive")
        if self.rx_delay < 0:
            raise ProtocolError("rx_delay must be non-negative")

    def timeout_for(self, config: RadioConfig) -> float:
        """Tag wait from end of poll until the response must be complete."""
        if self.response_timeout is not None:
            return self.response_timeout
        return self.anchor_processing + 2 * airtime(config) + self.guard


def effective_rx_window(timing: ProtocolTiming, config: RadioConfig,
                        profile: PowerProfile = DEFAULT_PROFILE) -> float:
    """Tag receive-state duration once the receiver is enabled ``rx_delay`` late."""
    if timing.rx_delay >= timing.anchor_processing + airtime(config):
        raise ProtocolError(
            f"rx_delay {timing.rx_delay * 1e3:.3f} ms closes the window before the response arrives"
        )
    return max(profile.duration_s(config.mode_id, State.RX) - timing.rx_delay, 0.0)


@dataclass
class RangingNode:
    node_id: int
    position: tuple = (0.0, 0.0)
    clock: DeviceClock = field(default_factory=DeviceClock)
    awake: bool = True
    busy_until: float = -math.inf


@dataclass
class RangingExchange:
    tag_id: int
    anchor_id: int
    mode_id: int
    double_sided: bool = False
    outcome: Outcome = Outcome.TIMEOUT
    t1_tx_poll: int | None = None
    t2_rx_poll: int | None = None
    t3_tx_resp: int | None = None
    t4_rx_resp: int | None = None
    t5_tx_final: int | None = None
    t6_rx_final: int | None = None
    reply_delay: float = 0.0
    tick_duration: float = 0.0
    clock_offset_ratio: float | None = None
    p_rxl: float = math.nan
    p_fp: float = math.nan
    rssi_ble: float = math.nan
    true_distance: float = math.nan
    start_time: float = math.nan
    end_time: float = math.nan
    global_times: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return self.outcome is Outcome.COMPLETE


class TwrSession:
    """One tag-initiated ranging exchange driven by an :class:`EventQueue`.

    The anchor sends its response a fixed, locally timed delay after the poll
    and writes that scheduled transmit timestamp into the response.
    """

    def __init__(self, tag: RangingNode, anchor: RangingNode, config: RadioConfig, timing: ProtocolTiming,
                 geometry: LinkGeometry, rng: np.random.Generator, channel: ChannelModel = DEFAULT_CHANNEL,
                 double_sided: bool = False, ratio_noise_ppm: float = 0.0, on_done=None):
        self.tag = tag
        self.anchor = anchor
        self.config = config
        self.timing = timing
        self.geometry = geometry
        self.rng = rng
        self.channel = channel
        self.ratio_noise_ppm = ratio_noise_ppm
        self.on_done = on_done
        self.airtime = airtime(config, RANGING_PAYLOAD_BYTES)
        self.shr = shr_duration(config)
        self.acquire_slack = preamble_duration(config) - 2 * config.pac * config.symbol_duration
        self._tof = geometry.distance / SPEED_OF_LIGHT
        self.exchange = RangingExchange(
            tag_id=tag.node_id, anchor_id=anchor.node_id, mode_id=config.mode_id,
            double_sided=double_sided, tick_duration=tag.clock.tick_duration,
            reply_delay=self.airtime + timing.anchor_processing, true_distance=geometry.distance,
        )
        self.anchor_was_awake = True
        self.finished = False
        self.queue: EventQueue | None = None
        self._poll_end = math.nan
        self._t1 = self._t2 = self._t3 = self._t4 = self._t5 = None

    # -- helpers ---------------------------------------------------------------

    def _tx_ticks(self, clock: DeviceClock, after_ticks: int, delay: float) -> int:
        return after_ticks + round(delay / clock.tick_duration)

    def _finish(self, outcome: Outcome):
        if self.finished:
            return
        self.finished = True
        self.exchange.outcome = outcome
        self.exchange.end_time = self.queue.now
        if self.on_done is not None:
            self.on_done(self.exchange)

    # -- state machine ---------------------------------------------------------

    def start(self, queue: EventQueue, tx_start: float) -> None:
        """Begin the exchange with the poll frame starting at ``tx_start``."""
        self.queue = queue
        ex = self.exchange
        ex.start_time = tx_start
        marker = tx_start + self.shr
        self._t1 = self.tag.clock.ticks_at(marker)
        ex.t1_tx_poll = self._t1 % COUNTER_MODULUS
        ex.global_times["poll_tx"] = marker
        self._poll_end = tx_start + self.airtime
        poll = RangingMessage(MessageKind.POLL, self.tag.node_id, dest_id=self.anchor.node_id).encode()
        queue.push(self._poll_end + self._tof, self._anchor_rx_poll, poll, marker)
        queue.push(self._poll_end + self.timing.timeout_for(self.config), self._tag_timeout)

    def _anchor_rx_poll(self, frame: bytes, tx_marker: float):
        now = self.queue.now
        if not self.anchor.awake:
            self.anchor_was_awake = False
            return
        if self.anchor.busy_until > now:
            return
        msg = RangingMessage.decode(frame)
        if msg.dest_id != self.anchor.node_id:
            return
        draw = self.channel.draw_uwb(self.geometry, self.config, self.rng)
        if not draw.received:
            return
        rx_marker = tx_marker + draw.tof_true + draw.tof_noise
        self._t2 = self.anchor.clock.ticks_at(rx_marker)
        self._t3 = self._tx_ticks(self.anchor.clock, self._t2, self.airtime + self.timing.anchor_processing)
        resp_marker = self.anchor.clock.time_at_ticks(self._t3)
        self.exchange.t2_rx_poll = self._t2 % COUNTER_MODULUS
        self.exchange.t3_tx_resp = self._t3 % COUNTER_MODULUS
        self.exchange.global_times["poll_rx"] = rx_marker
        self.exchange.global_times["resp_tx"] = resp_marker
        resp_end = resp_marker - self.shr + self.airtime
        self.anchor.busy_until = resp_end
        response = RangingMessage(MessageKind.RESPONSE, self.anchor.node_id,
                                  rx_timestamp=self.exchange.t2_rx_poll,
                                  tx_timestamp=self.exchange.t3_tx_resp).encode()
        self.queue.push(resp_end + self._tof, self._tag_rx_response, response, resp_marker)

    def _tag_rx_response(self, frame: bytes, tx_marker: float):
        if self.finished:
            return
        ex = self.exchange
        rx_on = self._poll_end + self.timing.rx_delay / self.tag.clock.rate
        frame_start = tx_marker - self.shr + self._tof
        if rx_on > frame_start + self.acquire_slack:
            return
        draw = self.channel.draw_uwb(self.geometry, self.config, self.rng)
        if not draw.received:
            return
        msg = RangingMessage.decode(frame)
        rx_marker = tx_marker + draw.tof_true + draw.tof_noise
        self._t4 = self.tag.clock.ticks_at(rx_marker)
        ex.t4_rx_resp = self._t4 % COUNTER_MODULUS
        ex.t2_rx_poll, ex.t3_tx_resp = msg.rx_timestamp, msg.tx_timestamp
        ex.global_times["resp_rx"] = rx_marker
        ex.p_rxl, ex.p_fp = draw.p_rxl, draw.p_fp
        ratio = self.tag.clock.rate / self.anchor.clock.rate
        if self.ratio_noise_ppm > 0:
            ratio *= 1.0 + self.rng.normal(0.0, self.ratio_noise_ppm * 1e-6)
        ex.clock_offset_ratio = ratio
        if not ex.double_sided:
            self._finish(Outcome.COMPLETE)
            return
        self._t5 = self._tx_ticks(self.tag.clock, self._t4, self.airtime + self.timing.tag_processing)
        final_marker = self.tag.clock.time_at_ticks(self._t5)
        ex.t5_tx_final = self._t5 % COUNTER_MODULUS
        ex.global_times["final_tx"] = final_marker
        final = RangingMessage(MessageKind.FINAL, self.tag.node_id, poll_tx_timestamp=ex.t1_tx_poll,
                               rx_timestamp=ex.t4_rx_resp, tx_timestamp=ex.t5_tx_final).encode()
        final_airtime = airtime(self.config, FINAL_PAYLOAD_BYTES)
        final_end = final_marker - self.shr + final_airtime
        self.anchor.busy_until = max(self.anchor.busy_until, final_end)
        self.queue.push(final_end + self._tof, self._anchor_rx_final, final, final_marker)
        self.queue.push(final_end + self._tof + self.timing.guard, self._final_timeout)

    def _anchor_rx_final(self, frame: bytes, tx_marker: float):
        if self.finished or not self.anchor.awake:
            return
        draw = self.channel.draw_uwb(self.geometry, self.config, self.rng)
        if not draw.received:
            return
        msg = RangingMessage.decode(frame)
        rx_marker = tx_marker + draw.tof_true + draw.tof_noise
        self.exchange.t6_rx_final = self.anchor.clock.ticks_at(rx_marker) % COUNTER_MODULUS
        self.exchange.global_times["final_rx"] = rx_marker
        self.exchange.t1_tx_poll = msg.poll_tx_timestamp
        self._finish(Outcome.COMPLETE)

    def _tag_timeout(self):
        if self.finished or self._t4 is not None:
            return
        self._finish(Outcome.TIMEOUT if self.anchor_was_awake else Outcome.LOST)

    def _final_timeout(self):
        self._finish(Outcome.TIMEOUT)


def _run(tag, anchor, timing, channel, rng, config, geometry, double_sided, ratio_noise_ppm, start):
    if geometry is None:
        distance = float(np.hypot(*(np.subtract(tag.position, anchor.position))))
        geometry = LinkGeometry(distance)
    anchor.busy_until = -math.inf
    queue = EventQueue(start)
    session = TwrSession(tag, anchor, config, timing, geometry, rng, channel,
                         double_sided=double_sided, ratio_noise_ppm=ratio_noise_ppm)
    session.start(queue, start)
    queue.run()
    return session.exchange


def run_sstwr(tag: RangingNode, anchor: RangingNode, timing: ProtocolTiming, channel: ChannelModel,
              rng: np.random.Generator, config: RadioConfig, geometry: LinkGeometry | None = None,
              ratio_noise_ppm: float = 0.0, start: float = 0.0) -> RangingExchange:
    """Run one single-sided exchange to completion on a private event queue."""
    return _run(tag, anchor, timing, channel, rng, config, geometry, False, ratio_noise_ppm, start)


def run_dstwr(tag: RangingNode, anchor: RangingNode, timing: ProtocolTiming, channel: ChannelModel,
              rng: np.random.Generator, config: RadioConfig, geometry: LinkGeometry | None = None,
              ratio_noise_ppm: float = 0.0, start: float = 0.0) -> RangingExchange:
    """Run one double-sided exchange (poll, response, final) to completion."""
    return _run(tag, anchor, timing, channel, rng, config, geometry, True, ratio_noise_ppm, start)
