import math

import pytest

from uwbsim.power import (
    DEFAULT_PROFILE,
    DutyCyclePolicy,
    PolicyState,
    PowerError,
    PowerLedger,
    State,
    battery_lifetime,
    exchange_charge,
    lifetime_hours,
    regime_current,
    step_policy,
)

MODE4_MS = {State.TX: 1.038, State.RX: 14.076, State.IDLE: 4.283, State.INIT: 3.375}
MODE4_MA = {State.TX: 33.4, State.RX: 91.9, State.IDLE: 18.2, State.INIT: 9.1}


def test_mode4_tables():
    for state, ms in MODE4_MS.items():
        assert DEFAULT_PROFILE.duration_s(4, state) == pytest.approx(ms / 1e3)
        assert DEFAULT_PROFILE.current(4, state) == MODE4_MA[state]
    assert sum(MODE4_MS.values()) == pytest.approx(22.772)


def test_current_ordering():
    for mode_id in range(1, 7):
        active = min(DEFAULT_PROFILE.current(mode_id, s) for s in (State.TX, State.RX, State.IDLE, State.INIT))
        assert DEFAULT_PROFILE.current(mode_id, State.DEEP_SLEEP) < DEFAULT_PROFILE.current(mode_id, State.SLEEP) < active


def test_exchange_average_current_from_tables():
    oracle = sum(MODE4_MS[s] * MODE4_MA[s] for s in MODE4_MS) / sum(MODE4_MS.values())
    assert exchange_charge(4).average_current_ma == pytest.approx(oracle)
    assert exchange_charge(4).average_current_ma == pytest.approx(64, rel=0.05)
    assert exchange_charge(1).average_current_ma == pytest.approx(53, rel=0.05)


def test_rx_delay_moves_time_from_rx_to_idle():
    full, delayed = exchange_charge(4), exchange_charge(4, rx_delay=0.010)
    saved_mah = 0.010 * (MODE4_MA[State.RX] - MODE4_MA[State.IDLE]) / 3600
    assert full.charge_mah - delayed.charge_mah == pytest.approx(saved_mah)
    assert delayed.duration_s == pytest.approx(full.duration_s)


def test_unknown_mode():
    with pytest.raises(PowerError):
        exchange_charge(9)


def test_battery_examples():
    assert 2.9 <= battery_lifetime(200, 4) <= 3.3
    assert 6.0 <= battery_lifetime(200, 4, rx_delay=0.010) <= 7.0
    assert lifetime_hours(200, 1.25) == pytest.approx(160)
    assert lifetime_hours(200, 0.0) == math.inf


def test_policy_current_arithmetic():
    policy = DutyCyclePolicy()
    ex = exchange_charge(4, policy.rx_delay)
    added = regime_current(4, policy, include_base=False)
    busy = 3 * ex.duration_s
    oracle = (3 * ex.charge_mah * 3600 + DEFAULT_PROFILE.sleep_current_ma * (5 - busy)) / 5
    assert added == pytest.approx(oracle)
    assert regime_current(4, policy, motion_fraction=0.0, include_base=False) == pytest.approx(50e-6)


def test_ledger_conserves_time_and_rejects_rewind():
    ledger = PowerLedger(4, start=0.0, state=State.DEEP_SLEEP)
    ledger.transition(1.0, State.INIT)
    ledger.transition(1.5, State.RX)
    ledger.transition(2.0, State.SLEEP)
    ledger.close(10.0)
    assert sum(ledger.state_s.values()) == pytest.approx(10.0)
    expected = (1.0 * 50e-6 + 0.5 * 9.1 + 0.5 * 91.9 + 8.0 * 1e-3) / 3600
    assert ledger.radio_charge_mah == pytest.approx(expected)
    with pytest.raises(PowerError):
        ledger.transition(5.0, State.TX)


def test_anchor_policy_cycle():
    policy = DutyCyclePolicy(t_offset=2.0)
    anchor = PolicyState("anchor")
    anchor = step_policy(anchor, "mesh_wake", policy, 0.0, distance=5.0)
    assert anchor.awake
    anchor = step_policy(anchor, "exchange_done", policy, 1.0)
    assert anchor.sleep_at == 3.0
    assert step_policy(anchor, "offset_elapsed", policy, 2.5).awake
    assert not step_policy(anchor, "offset_elapsed", policy, 3.0).awake


def test_far_wake_and_invalid_events_leave_diagnostics():
    policy = DutyCyclePolicy(n_range=15.0)
    anchor = step_policy(PolicyState("anchor"), "mesh_wake", policy, 0.0, distance=20.0)
    assert not anchor.awake and anchor.diagnostics
    tag = step_policy(PolicyState("tag"), "teleport", policy, 0.0)
    assert tag.radio == "deep_sleep" and "unknown" in tag.diagnostics[0]


def test_tag_motion_edges():
    policy = DutyCyclePolicy()
    tag = step_policy(PolicyState("tag"), "motion_start", policy, 0.0)
    assert tag.moving and tag.awake
    tag = step_policy(tag, "motion_stop", policy, 4.0)
    assert not tag.moving and not tag.awake
