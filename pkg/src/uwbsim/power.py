"""Per-state energy accounting, the motion-based duty-cycle policy and battery projections."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .radio import MODE_IDS


class State(str, Enum):
    TX = "TX"
    RX = "RX"
    IDLE = "Idle"
    INIT = "Init"
    SLEEP = "Sleep"
    DEEP_SLEEP = "DeepSleep"


ACTIVE_STATES = (State.TX, State.RX, State.IDLE, State.INIT)

# Measured tag-side SS-TWR phases at 10 m, per mode (ms).
EXCHANGE_DURATION_MS = {
    1: {State.TX: 0.910, State.RX: 13.820, State.IDLE: 4.284, State.INIT: 3.377},
    2: {State.TX: 1.037, State.RX: 14.075, State.IDLE: 4.284, State.INIT: 3.378},
    3: {State.TX: 1.038, State.RX: 14.074, State.IDLE: 4.282, State.INIT: 3.377},
    4: {State.TX: 1.038, State.RX: 14.076, State.IDLE: 4.283, State.INIT: 3.375},
    5: {State.TX: 5.254, State.RX: 22.909, State.IDLE: 4.281, State.INIT: 3.376},
    6: {State.TX: 1.037, State.RX: 14.075, State.IDLE: 4.279, State.INIT: 3.375},
}

# Average current per phase (mA).
STATE_CURRENT_MA = {
    1: {State.TX: 25.0, State.RX: 76.9, State.IDLE: 17.4, State.INIT: 9.1},
    2: {State.TX: 30.7, State.RX: 79.2, State.IDLE: 18.9, State.INIT: 9.0},
    3: {State.TX: 32.5, State.RX: 85.0, State.IDLE: 18.6, State.INIT: 9.0},
    4: {State.TX: 33.4, State.RX: 91.9, State.IDLE: 18.2, State.INIT: 9.1},
    5: {State.TX: 33.4, State.RX: 85.2, State.IDLE: 17.3, State.INIT: 9.0},
    6: {State.TX: 41.5, State.RX: 101.5, State.IDLE: 17.3, State.INIT: 9.0},
}

SLEEP_CURRENT_MA = 1e-3
DEEP_SLEEP_CURRENT_MA = 50e-6
BASE_CURRENT_PRESETS_MA = {"debug": 0.85, "productive": 0.25}

# Tag phases in the order they occur within one exchange.
EXCHANGE_PHASES = (State.INIT, State.IDLE, State.TX, State.RX)


class PowerError(ValueError):
    pass


@dataclass(frozen=True)
class PowerProfile:
    durations_ms: dict = field(default_factory=lambda: EXCHANGE_DURATION_MS)
    currents_ma: dict = field(default_factory=lambda: STATE_CURRENT_MA)
    sleep_current_ma: float = SLEEP_CURRENT_MA
    deep_sleep_current_ma: float = DEEP_SLEEP_CURRENT_MA
    base_node_current_ma: float = BASE_CURRENT_PRESETS_MA["debug"]

    def __post_init__(self):
        if not self.deep_sleep_current_ma < self.sleep_current_ma:
            raise PowerError("deep sleep current must be below sleep current")
        for mode_id, currents in self.currents_ma.items():
            if min(currents.values()) <= self.sleep_current_ma:
                raise PowerError(f"mode {mode_id}: active currents must exceed sleep current")

    def _check(self, mode_id: int):
        if mode_id not in self.durations_ms or mode_id not in self.currents_ma:
            raise PowerError(f"mode {mode_id} not in power profile")

    def current(self, mode_id: int, state: State) -> float:
        state = State(state)
        if state is State.SLEEP:
            return self.sleep_current_ma
        if state is State.DEEP_SLEEP:
            return self.deep_sleep_current_ma
        self._check(mode_id)
        return self.currents_ma[mode_id][state]

    def duration_s(self, mode_id: int, state: State) -> float:
        self._check(mode_id)
        return self.durations_ms[mode_id][State(state)] * 1e-3

    def exchange_total_s(self, mode_id: int) -> float:
        self._check(mode_id)
        return sum(self.durations_ms[mode_id].values()) * 1e-3


DEFAULT_PROFILE = PowerProfile()


def mah(current_ma: float, seconds: float) -> float:
    return current_ma * seconds / 3600.0


@dataclass(frozen=True)
class ExchangeCharge:
    mode_id: int
    charge_mah: float
    duration_s: float
    state_s: dict

    @property
    def average_current_ma(self) -> float:
        return self.charge_mah * 3600.0 / self.duration_s


def exchange_phase_durations(mode_id: int, rx_delay: float = 0.0,
                             profile: PowerProfile = DEFAULT_PROFILE) -> dict:
    """Tag phase lengths (s) of one exchange with the receiver enabled ``rx_delay`` late.

    The delayed part of the receive window is spent in Idle, so the exchange
    keeps its measured total length.
    """
    if rx_delay < 0:
        raise PowerError("rx_delay must be non-negative")
    phases = {s: profile.duration_s(mode_id, s) for s in EXCHANGE_PHASES}
    shift = min(rx_delay, phases[State.RX])
    phases[State.RX] -= shift
    phases[State.IDLE] += shift
    return phases


def exchange_charge(mode_id: int, rx_delay: float = 0.0,
                    profile: PowerProfile = DEFAULT_PROFILE) -> ExchangeCharge:
    phases = exchange_phase_durations(mode_id, rx_delay, profile)
    charge = sum(mah(profile.current(mode_id, s), t) for s, t in phases.items())
    return ExchangeCharge(mode_id, charge, sum(phases.values()), phases)


@dataclass(frozen=True)
class DutyCyclePolicy:
    t_offset: float = 2.0
    n_range: float = 15.0
    updates_per_interval: int = 3
    update_interval: float = 5.0
    rx_delay: float = 0.010
    hop_limit: int = 1

    def __post_init__(self):
        if self.t_offset <= 0 or self.n_range <= 0 or self.update_interval <= 0:
            raise PowerError("policy durations and ranges must be positive")
        if self.updates_per_interval <= 0:
            raise PowerError("updates_per_interval must be positive")
        if self.rx_delay < 0 or self.hop_limit < 0:
            raise PowerError("rx_delay and hop_limit must be non-negative")

    @property
    def update_period(self) -> float:
        return self.update_interval / self.updates_per_interval


def lifetime_hours(capacity_mah: float, average_current_ma: float) -> float:
    if capacity_mah <= 0:
        raise PowerError("capacity must be positive")
    if average_current_ma <= 0:
        return math.inf
    return capacity_mah / average_current_ma


def regime_current(mode_id: int, policy: DutyCyclePolicy | None = None, motion_fraction: float = 1.0,
                   rx_delay: float = 0.0, profile: PowerProfile = DEFAULT_PROFILE,
                   include_base: bool = True) -> float:
    """Long-run average tag current (mA).

    ``policy=None`` means continuous back-to-back exchanges.  With a policy the
    tag ranges ``updates_per_interval`` times per interval while moving and
    rests in deep sleep while stationary; ``motion_fraction`` blends the two.
    """
    if not 0.0 <= motion_fraction <= 1.0:
        raise PowerError("motion_fraction must lie in [0, 1]")
    base = profile.base_node_current_ma if include_base else 0.0
    if policy is None:
        moving = exchange_charge(mode_id, rx_delay, profile).average_current_ma
    else:
        ex = exchange_charge(mode_id, policy.rx_delay, profile)
        busy = min(policy.updates_per_interval * ex.duration_s, policy.update_interval)
        moving = (
            policy.updates_per_interval * ex.charge_mah * 3600.0
            + profile.sleep_current_ma * (policy.update_interval - busy)
        ) / policy.update_interval
    stationary = profile.deep_sleep_current_ma
    return base + motion_fraction * moving + (1.0 - motion_fraction) * stationary


def battery_lifetime(capacity_mah: float, mode_id: int = 4, policy: DutyCyclePolicy | None = None,
                     motion_fraction: float = 1.0, rx_delay: float = 0.0,
                     profile: PowerProfile = DEFAULT_PROFILE, include_base: bool = True) -> float:
    current = regime_current(mode_id, policy, motion_fraction, rx_delay, profile, include_base)
    return lifetime_hours(capacity_mah, current)


class PowerLedger:
    """Accumulates time and charge per radio state for one node."""

    def __init__(self, mode_id: int, profile: PowerProfile = DEFAULT_PROFILE, start: float = 0.0,
                 state: State = State.DEEP_SLEEP, include_base: bool = True):
        self.mode_id = mode_id
        self.profile = profile
        self.include_base = include_base
        self.start = start
        self.state = State(state)
        self.since = start
        self.state_s = {s: 0.0 for s in State}
        self.radio_charge_mah = 0.0
        self.transitions: list[tuple[float, str]] = [(start, self.state.value)]

    def _accumulate(self, t: float):
        if t < self.since:
            raise PowerError(f"ledger time went backwards: {t} < {self.since}")
        dt = t - self.since
        self.state_s[self.state] += dt
        self.radio_charge_mah += mah(self.profile.current(self.mode_id, self.state), dt)
        self.since = t

    def transition(self, t: float, state: State) -> None:
        self._accumulate(t)
        state = State(state)
        if state is not self.state:
            self.state = state
            self.transitions.append((t, state.value))

    def close(self, t: float) -> None:
        self._accumulate(t)

    @property
    def elapsed_s(self) -> float:
        return self.since - self.start

    @property
    def charge_mah(self) -> float:
        base = mah(self.profile.base_node_current_ma, self.elapsed_s) if self.include_base else 0.0
        return self.radio_charge_mah + base

    @property
    def average_current_ma(self) -> float:
        if self.elapsed_s <= 0:
            return 0.0
        return self.charge_mah * 3600.0 / self.elapsed_s

    def summary(self, capacity_mah: float | None = None) -> dict:
        out = {
            "state_seconds": {s.value: t for s, t in self.state_s.items()},
            "elapsed_s": self.elapsed_s,
            "radio_charge_mah": self.radio_charge_mah,
            "charge_mah": self.charge_mah,
            "average_current_ma": self.average_current_ma,
            "transitions": len(self.transitions),
        }
        if capacity_mah:
            out["lifetime_h"] = lifetime_hours(capacity_mah, self.average_current_ma)
        return out


# -- duty-cycle state machine ---------------------------------------------------

POLICY_EVENTS = ("motion_start", "motion_stop", "mesh_wake", "exchange_done", "offset_elapsed")


@dataclass(frozen=True)
class PolicyState:
    role: str
    radio: str = "deep_sleep"
    moving: bool = False
    sleep_at: float | None = None
    diagnostics: tuple = ()

    @property
    def awake(self) -> bool:
        return self.radio == "active"


def _ignored(state: PolicyState, message: str) -> PolicyState:
    return replace(state, diagnostics=state.diagnostics + (message,))


def step_policy(state: PolicyState, event: str, policy: DutyCyclePolicy, now: float,
                distance: float | None = None) -> PolicyState:
    """Advance one node's duty-cycle state on ``event``.

    Tags follow motion edges.  Anchors wake on a mesh notification about a
    moving tag within ``n_range`` and fall back to deep sleep ``t_offset``
    after the last exchange.  Unknown or inapplicable events leave the state
    unchanged and add a diagnostic.
    """
    if event not in POLICY_EVENTS:
        return _ignored(state, f"unknown event {event!r}")

    if state.role == "tag":
        if event == "motion_start":
            return replace(state, radio="active", moving=True)
        if event == "motion_stop":
            return replace(state, radio="deep_sleep", moving=False)
        if event == "exchange_done":
            return state
        return _ignored(state, f"tag ignores {event}")

    if state.role == "anchor":
        if event == "mesh_wake":
            if distance is not None and distance > policy.n_range:
                return _ignored(state, f"wake from {distance:.2f} m beyond n_range")
            sleep_at = max(now + policy.t_offset, state.sleep_at or 0.0)
            return replace(state, radio="active", sleep_at=sleep_at)
        if event == "exchange_done":
            if not state.awake:
                return _ignored(state, "exchange_done while asleep")
            return replace(state, sleep_at=now + policy.t_offset)
        if event == "offset_elapsed":
            if state.awake and state.sleep_at is not None and now >= state.sleep_at:
                return replace(state, radio="deep_sleep", sleep_at=None)
            return state
        return _ignored(state, f"anchor ignores {event}")

    return _ignored(state, f"role {state.role!r} has no duty cycle")
