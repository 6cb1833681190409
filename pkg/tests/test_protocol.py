import dataclasses

import numpy as np
import pytest

from uwbsim import radio
from uwbsim.channel import COUNTER_MODULUS, ChannelModel, DeviceClock, LinkGeometry
from uwbsim.estimation import EstimationError, drift_error, tof_dstwr, tof_sstwr
from uwbsim.power import DEFAULT_PROFILE, State
from uwbsim.protocol import (
    MessageKind,
    Outcome,
    ProtocolError,
    ProtocolTiming,
    RangingMessage,
    RangingNode,
    effective_rx_window,
    run_dstwr,
    run_sstwr,
)

C = 299_792_458.0
MODE4 = radio.mode(4)
QUIET = ChannelModel.noiseless()
TIMING = ProtocolTiming(rx_delay=0.0)


def pair(d=10.0, tag_ppm=0.0, anchor_ppm=0.0, tag_offset=0.0, anchor_offset=0.0):
    return (RangingNode(1, (0.0, 0.0), DeviceClock(tag_ppm, tag_offset)),
            RangingNode(2, (d, 0.0), DeviceClock(anchor_ppm, anchor_offset)))


def test_response_is_twelve_bytes_and_round_trips():
    msg = RangingMessage(MessageKind.RESPONSE, 7, rx_timestamp=COUNTER_MODULUS - 1, tx_timestamp=12345)
    raw = msg.encode()
    assert len(raw) == 12
    assert RangingMessage.decode(raw) == msg
    assert not any("seq" in f.name for f in dataclasses.fields(RangingMessage))


def test_poll_and_final_round_trip():
    poll = RangingMessage(MessageKind.POLL, 1, dest_id=2)
    final = RangingMessage(MessageKind.FINAL, 1, poll_tx_timestamp=1, rx_timestamp=2, tx_timestamp=3)
    for msg in (poll, final):
        assert RangingMessage.decode(msg.encode()) == msg
    assert len(poll.encode()) == 12


def test_decode_rejects_bad_frames():
    with pytest.raises(ProtocolError):
        RangingMessage.decode(b"\x02\x01\x00")
    with pytest.raises(ProtocolError):
        RangingMessage(MessageKind.RESPONSE, 1, rx_timestamp=COUNTER_MODULUS, tx_timestamp=0).encode()


def test_noiseless_tof_at_ten_metres():
    tag, anchor = pair()
    ex = run_sstwr(tag, anchor, TIMING, QUIET, np.random.default_rng(0), MODE4)
    assert ex.outcome is Outcome.COMPLETE
    assert tof_sstwr(ex) == pytest.approx(10.0 / C, abs=ex.tick_duration)
    assert tof_sstwr(ex) * 1e9 == pytest.approx(33.36, abs=0.02)


def test_complete_exchange_has_timestamps_in_order():
    tag, anchor = pair(tag_offset=0.3, anchor_offset=17.0)
    ex = run_sstwr(tag, anchor, TIMING, QUIET, np.random.default_rng(0), MODE4)
    stamps = (ex.t1_tx_poll, ex.t2_rx_poll, ex.t3_tx_resp, ex.t4_rx_resp)
    assert all(s is not None and 0 <= s < COUNTER_MODULUS for s in stamps)
    assert (ex.t4_rx_resp - ex.t1_tx_poll) % COUNTER_MODULUS > (ex.t3_tx_resp - ex.t2_rx_poll) % COUNTER_MODULUS


def test_sleeping_anchor_gives_lost():
    tag, anchor = pair()
    anchor.awake = False
    ex = run_sstwr(tag, anchor, TIMING, QUIET, np.random.default_rng(0), MODE4)
    assert ex.outcome is Outcome.LOST


def test_out_of_range_gives_timeout():
    tag, anchor = pair(d=5000.0)
    ex = run_sstwr(tag, anchor, TIMING, ChannelModel(), np.random.default_rng(0), radio.mode(1))
    assert ex.outcome is Outcome.TIMEOUT
    ex = run_dstwr(tag, anchor, TIMING, ChannelModel(), np.random.default_rng(0), radio.mode(1))
    assert ex.outcome is Outcome.TIMEOUT


def test_mode4_cycle_duration():
    assert DEFAULT_PROFILE.exchange_total_s(4) * 1e3 == pytest.approx(22.772, abs=1e-9)


def test_dstwr_matches_sstwr_without_drift():
    ss = run_sstwr(*pair(), TIMING, QUIET, np.random.default_rng(0), MODE4)
    ds = run_dstwr(*pair(), TIMING, QUIET, np.random.default_rng(0), MODE4)
    assert ds.outcome is Outcome.COMPLETE
    assert tof_dstwr(ds) == pytest.approx(tof_sstwr(ss), abs=2 * ss.tick_duration)


@pytest.mark.parametrize("tag_ppm, anchor_ppm", [(5.0, -5.0), (-5.0, 5.0), (2.0, -3.0)])
def test_dstwr_cancels_drift(tag_ppm, anchor_ppm):
    ds = run_dstwr(*pair(10.0, tag_ppm, anchor_ppm), TIMING, QUIET, np.random.default_rng(0), MODE4)
    ds_err = abs(C * tof_dstwr(ds) - 10.0)
    uncorrected = abs(drift_error(ds.reply_delay, tag_ppm, anchor_ppm))
    assert ds_err < 0.01
    assert ds_err < uncorrected / 100


def test_uncorrected_sstwr_carries_drift_error():
    ss = run_sstwr(*pair(10.0, 5.0, -5.0), TIMING, QUIET, np.random.default_rng(0), MODE4)
    assert C * tof_sstwr(ss) - 10.0 == pytest.approx(drift_error(ss.reply_delay, 5.0, -5.0), rel=0.01)


def test_slow_tag_clock_makes_sstwr_negative():
    ss = run_sstwr(*pair(10.0, -5.0, 5.0), TIMING, QUIET, np.random.default_rng(0), MODE4)
    with pytest.raises(EstimationError):
        tof_sstwr(ss)


def test_effective_rx_window():
    full = DEFAULT_PROFILE.duration_s(4, State.RX)
    assert effective_rx_window(ProtocolTiming(rx_delay=0.0), MODE4) == pytest.approx(full)
    assert effective_rx_window(ProtocolTiming(rx_delay=0.010), MODE4) == pytest.approx(full - 0.010)
    late = ProtocolTiming(rx_delay=0.010 + 2 * radio.airtime(MODE4))
    with pytest.raises(ProtocolError):
        effective_rx_window(late, MODE4)


def test_receiver_opened_too_late_misses_response():
    timing = ProtocolTiming(rx_delay=0.0105)
    ex = run_sstwr(*pair(), timing, QUIET, np.random.default_rng(0), MODE4)
    assert ex.outcome is Outcome.TIMEOUT
    ex = run_sstwr(*pair(), ProtocolTiming(rx_delay=0.010), QUIET, np.random.default_rng(0), MODE4)
    assert ex.outcome is Outcome.COMPLETE
