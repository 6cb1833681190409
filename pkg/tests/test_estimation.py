import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from uwbsim import radio
from uwbsim.channel import COUNTER_MODULUS, TICK_DURATION, ChannelModel, DeviceClock
from uwbsim.estimation import (
    BiasTable,
    EstimationError,
    GeometryError,
    LinkClass,
    SolverError,
    classify_nlos,
    correct_bias,
    correct_drift,
    default_bias_table,
    distance_from_rssi,
    drift_error,
    intersect_two_circles,
    multilaterate,
    resolve_half_plane,
    tof_dstwr,
    tof_sstwr,
)
from uwbsim.protocol import Outcome, ProtocolTiming, RangingExchange, RangingNode, run_sstwr

C = 299_792_458.0


def exchange(t1, t2, t3, t4, **kw):
    ex = RangingExchange(1, 2, 4, outcome=Outcome.COMPLETE, tick_duration=TICK_DURATION, **kw)
    ex.t1_tx_poll, ex.t2_rx_poll, ex.t3_tx_resp, ex.t4_rx_resp = (t % COUNTER_MODULUS for t in (t1, t2, t3, t4))
    return ex


def test_equal_round_and_reply_is_zero():
    assert tof_sstwr(exchange(100, 5000, 9000, 4100)) == 0.0


def test_round_minus_reply_gives_ten_metres():
    tof_ticks = round(10.0 / C / TICK_DURATION)
    ex = exchange(0, 1000, 1000 + 640_000, 640_000 + 2 * tof_ticks)
    assert tof_sstwr(ex) == pytest.approx(tof_ticks * TICK_DURATION)
    assert C * tof_sstwr(ex) == pytest.approx(10.0, abs=C * TICK_DURATION)


def test_negative_tof_is_an_error():
    with pytest.raises(EstimationError):
        tof_sstwr(exchange(0, 0, 1000, 10))


def test_incomplete_exchange_is_an_error():
    ex = exchange(0, 0, 10, 20)
    ex.outcome = Outcome.TIMEOUT
    with pytest.raises(EstimationError):
        tof_sstwr(ex)


@settings(max_examples=300)
@given(st.integers(0, COUNTER_MODULUS - 1), st.integers(0, 10**7), st.integers(0, 10**9), st.integers(0, 10**4),
       st.integers(0, COUNTER_MODULUS - 1))
def test_wrapped_tof_equals_unbounded_oracle(t1, flight, reply, extra, anchor_base):
    t2 = anchor_base
    t3 = t2 + reply
    t4 = t1 + 2 * flight + reply + extra
    oracle = ((t4 - t1) - (t3 - t2)) / 2 * TICK_DURATION
    assert tof_sstwr(exchange(t1, t2, t3, t4)) == oracle


def test_drift_error_examples():
    assert drift_error(0.01, 3.0, 3.0) == 0.0
    assert drift_error(0.01, 2.0, 0.0) == pytest.approx(C * 0.005 * 2e-6)
    assert drift_error(0.01, 2.0, 0.0) == pytest.approx(3.0, abs=0.01)
    assert drift_error(0.005, 2.0, 0.0) == pytest.approx(drift_error(0.01, 2.0, 0.0) / 2)


def test_ratio_one_is_plain_sstwr():
    ex = exchange(10, 20, 40_000, 40_100)
    assert correct_drift(ex, 1.0) == tof_sstwr(ex)


def test_implausible_ratio_rejected():
    with pytest.raises(EstimationError):
        correct_drift(exchange(10, 20, 40_000, 40_100), 1.001)


def _ranged(tag_ppm, anchor_ppm, noise=0.0, seed=0):
    tag = RangingNode(1, (0, 0), DeviceClock(tag_ppm, 0.25))
    anchor = RangingNode(2, (10, 0), DeviceClock(anchor_ppm, 3.0))
    ex = run_sstwr(tag, anchor, ProtocolTiming(rx_delay=0.0), ChannelModel.noiseless(),
                   np.random.default_rng(seed), radio.mode(4), ratio_noise_ppm=noise)
    return ex, (1 + tag_ppm * 1e-6) / (1 + anchor_ppm * 1e-6)


def test_exact_ratio_recovers_distance():
    ex, ratio = _ranged(1.0, -1.0)
    assert abs(C * correct_drift(ex, ratio) - 10.0) < 0.01
    assert abs(C * tof_sstwr(ex) - 10.0) > 2.0


def test_noisy_ratio_error_bounded_by_ratio_error():
    for seed in range(50):
        ex, true_ratio = _ranged(2.0, 0.0, noise=0.3, seed=seed)
        eps_ppm = abs(ex.clock_offset_ratio / true_ratio - 1.0) * 1e6
        err = abs(C * correct_drift(ex, ex.clock_offset_ratio) - 10.0)
        assert err <= drift_error(ex.reply_delay, eps_ppm, 0.0) + 2 * C * TICK_DURATION


def test_dstwr_symmetric_reduces_to_half_difference():
    ra, da = 2_000_400, 2_000_000
    ex = exchange(0, 50, 50 + da, ra)
    ex.t5_tx_final = ra + da
    ex.t6_rx_final = 50 + da + ra
    assert tof_dstwr(ex) == pytest.approx((ra - da) / 2 * TICK_DURATION)


def test_dstwr_requires_final():
    with pytest.raises(EstimationError):
        tof_dstwr(exchange(0, 0, 10, 20))


def test_bias_correction():
    table = default_bias_table(4)
    assert correct_bias(2.25, table) == pytest.approx(2.50)
    for raw in np.linspace(5.0, 10.0, 21):
        assert abs(correct_bias(raw, table) - raw) < 0.10
    assert correct_bias(7.3, BiasTable()) == 7.3
    with pytest.raises(EstimationError):
        BiasTable(((2.0, 0.1), (1.0, 0.0)))


def test_rssi_inversion():
    assert distance_from_rssi(-40.0, -40.0) == pytest.approx(1.0)
    assert distance_from_rssi(-70.0, -50.0, 2.0) == pytest.approx(10.0)
    assert distance_from_rssi(-70.0 + 20 * math.log10(2), -50.0, 2.0) == pytest.approx(5.0)


@pytest.mark.parametrize(
    "p_rxl, p_fp, expected",
    [(40.16, 38.73, LinkClass.LOS), (36.93, 29.07, LinkClass.NLOS), (34.84, 27.15, LinkClass.NLOS)],
)
def test_nlos_table_rows(p_rxl, p_fp, expected):
    assert classify_nlos(p_rxl, p_fp) is expected


def test_nlos_threshold_boundary_and_integrity():
    assert classify_nlos(20.0 + 6.999, 20.0) is LinkClass.LOS
    assert classify_nlos(27.0, 20.0) is LinkClass.NLOS
    with pytest.raises(EstimationError):
        classify_nlos(10.0, 11.0)


def test_two_circle_examples():
    tangent = intersect_two_circles((0, 0), 5, (10, 0), 5)
    assert (tangent.x, tangent.y, tangent.ambiguity) == (5.0, 0.0, None)
    fix = intersect_two_circles((0, 0), 6, (10, 0), 8)
    assert fix.x == pytest.approx(3.6) and fix.y == pytest.approx(4.8)
    assert fix.ambiguity == pytest.approx((3.6, -4.8))
    gap = intersect_two_circles((0, 0), 1, (10, 0), 1)
    assert gap.residual == pytest.approx(4.0)
    assert gap.x == pytest.approx(5.0)
    with pytest.raises(GeometryError):
        intersect_two_circles((1, 1), 2, (1, 1), 3)


def test_half_plane_hint_picks_side():
    fix = intersect_two_circles((0, 0), 6, (10, 0), 8)
    below = resolve_half_plane(fix, (0, 0), (10, 0), (5, -1))
    assert below.y == pytest.approx(-4.8)
    assert resolve_half_plane(fix, (0, 0), (10, 0), (5, 3)).y == pytest.approx(4.8)


def test_multilaterate_example():
    fix = multilaterate([((0, 0), 5.0), ((10, 0), 8.062), ((0, 10), 6.708)])
    assert fix.x == pytest.approx(3.0, abs=1e-3) and fix.y == pytest.approx(4.0, abs=1e-3)


def test_multilaterate_continuity():
    truth = np.array([3.0, 4.0])
    anchors = [(0, 0), (10, 0), (0, 10), (9, 8)]
    exact = [float(np.linalg.norm(truth - a)) for a in anchors]
    for eps in (1e-3, 1e-5, 1e-7):
        fix = multilaterate([(a, d * (1 + eps)) for a, d in zip(anchors, exact)])
        assert np.linalg.norm(fix.xy - truth) < 50 * eps


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-50, 50), st.floats(-50, 50))
def test_multilaterate_exact_from_any_start(x, y, sx, sy):
    anchors = [(0, 0), (12, 1), (3, 11)]
    truth = np.array([x, y])
    dists = [float(np.linalg.norm(truth - a)) for a in anchors]
    assume(min(dists) > 1e-3)
    fix = multilaterate(list(zip(anchors, dists)), initial=(sx, sy))
    assert fix.residual < 1e-6
    assert np.linalg.norm(fix.xy - truth) < 1e-6


def test_multilaterate_errors():
    with pytest.raises(GeometryError):
        multilaterate([((0, 0), 1), ((1, 1), 1), ((2, 2), 1)])
    with pytest.raises(GeometryError):
        multilaterate([((0, 0), 1), ((1, 0), 1)])
    with pytest.raises(SolverError) as info:
        multilaterate([((0, 0), 1.0), ((10, 0), 1.0), ((0, 10), 1.0)], max_iter=1, initial=(40, 40))
    assert info.value.best is not None


def test_nlos_measurements_weighted_down():
    truth = np.array([4.0, 3.0])
    anchors = [(0, 0), (10, 0), (0, 10), (10, 10)]
    dists = [float(np.linalg.norm(truth - a)) for a in anchors]
    dists[3] += 1.0
    plain = multilaterate(list(zip(anchors, dists)))
    weighted = multilaterate(list(zip(anchors, dists)), weights=[1, 1, 1, 0.25], nlos_weight=1.0)
    assert np.linalg.norm(weighted.xy - truth) < np.linalg.norm(plain.xy - truth)
