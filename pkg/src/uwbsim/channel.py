"""Link observables for UWB and BLE transmissions plus device clocks.

Every stochastic quantity is drawn from a caller-owned ``numpy.random.Generator``
so that a simulation run is reproducible from its seed alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .radio import (
    BLE_PATH_LOSS_EXPONENT,
    BLE_TX_REF_1M_DBM,
    DEFAULT_TX_POWER_DBM,
    SPEED_OF_LIGHT,
    RadioConfig,
    mode as radio_mode,
)

TICK_DURATION = 1.0 / (128 * 499.2e6)
COUNTER_BITS = 40
COUNTER_MODULUS = 1 << COUNTER_BITS

# Ranging precision (1 sigma, metres) per mode: (0-10 m, beyond 10 m).
# The far value is chosen so that the mean of the two equals the 0-30 m figure.
RANGE_SIGMA_M = {
    1: (0.0436, 0.0436),
    2: (0.0650, 0.0538),
    3: (0.0542, 0.0754),
    4: (0.0244, 0.0564),
    5: (0.1355, 0.2561),
    6: (0.0523, 0.0285),
}
NEAR_FAR_SPLIT_M = 10.0

# Mode-4 systematic range bias, (distance m, bias m).
MODE4_RANGE_BIAS = (
    (1.0, -0.25),
    (2.5, -0.25),
    (5.0, -0.08),
    (7.5, 0.0),
    (10.0, 0.08),
    (15.0, 0.15),
    (30.0, 0.15),
)

# (distance m, per-exchange success probability) used to place each mode's
# receiver sensitivity on the logistic reception curve.
RECEPTION_CALIBRATION = {
    1: (10.0, 0.1778),
    2: (109.0, 0.5),
    3: (116.0, 0.5),
    4: (116.0, 0.5),
    5: (622.0, 0.5),
    6: (124.0, 0.5),
}

# P_RXL - P_FP mean per total obstruction thickness (mm).
FP_GAP_LOS_DB = 1.43
FP_GAP_NLOS_DB = ((65.0, 7.86), (130.0, 7.69), (170.0, 7.23))

# Excess loss per millimetre of material, used when an obstruction gives none.
MATERIAL_LOSS_DB_PER_MM = {
    "wood": 0.1,
    "door": 0.1,
    "glass": 0.1,
    "drywall": 0.05,
    "concrete": 0.04,
    "metal": 1.0,
}


class DomainError(ValueError):
    pass


def fspl(distance: float, frequency: float) -> float:
    """Free-space path loss in dB (Friis)."""
    if distance <= 0 or frequency <= 0:
        raise DomainError(f"fspl needs positive distance and frequency, got {distance}, {frequency}")
    return (
        20 * math.log10(distance)
        + 20 * math.log10(frequency)
        + 20 * math.log10(4 * math.pi / SPEED_OF_LIGHT)
    )


@dataclass(frozen=True)
class DeviceClock:
    drift_ppm: float = 0.0
    phase_offset: float = 0.0
    tick_duration: float = TICK_DURATION
    counter_bits: int = COUNTER_BITS

    def __post_init__(self):
        if self.drift_ppm <= -1e6:
            raise DomainError("clock rate must stay positive")

    @property
    def rate(self) -> float:
        return 1.0 + self.drift_ppm * 1e-6

    def local_time(self, t: float) -> float:
        return self.rate * t + self.phase_offset

    def ticks_at(self, t: float) -> int:
        """Unwrapped tick count at global time ``t``."""
        return round(self.local_time(t) / self.tick_duration)

    def time_at_ticks(self, ticks: int) -> float:
        """Global time at which the unwrapped counter reads ``ticks``."""
        return (ticks * self.tick_duration - self.phase_offset) / self.rate


def local_timestamp(clock: DeviceClock, global_time: float) -> int:
    """Counter value latched at ``global_time``, wrapped to the counter width."""
    if global_time < 0:
        raise DomainError("global time must be non-negative")
    return clock.ticks_at(global_time) % (1 << clock.counter_bits)


@dataclass(frozen=True)
class Obstruction:
    material: str = "wood"
    thickness_mm: float = 0.0
    excess_loss_db: float | None = None

    def __post_init__(self):
        if self.thickness_mm < 0:
            raise DomainError("obstruction thickness must be non-negative")
        if self.excess_loss_db is not None and self.excess_loss_db < 0:
            raise DomainError("excess loss must be non-negative")

    @property
    def loss_db(self) -> float:
        if self.excess_loss_db is not None:
            return self.excess_loss_db
        return MATERIAL_LOSS_DB_PER_MM.get(self.material, 0.1) * self.thickness_mm


@dataclass(frozen=True)
class LinkGeometry:
    distance: float
    obstructions: tuple[Obstruction, ...] = ()

    def __post_init__(self):
        if not self.distance > 0:
            raise DomainError(f"link distance must be positive, got {self.distance}")

    @property
    def los(self) -> bool:
        return not self.obstructions

    @property
    def excess_loss_db(self) -> float:
        return sum(o.loss_db for o in self.obstructions)

    @property
    def barrier_mm(self) -> float:
        return sum(o.thickness_mm for o in self.obstructions)


@dataclass(frozen=True)
class ChannelDraw:
    received: bool
    tof_true: float
    tof_noise: float = 0.0
    rssi: float = math.nan
    p_rxl: float = math.nan
    p_fp: float = math.nan


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class ChannelModel:
    """Calibrated UWB/BLE channel.  All constants may be overridden per scenario."""

    range_sigma_m: dict = field(default_factory=lambda: dict(RANGE_SIGMA_M))
    range_bias: dict = field(default_factory=lambda: {4: MODE4_RANGE_BIAS})
    nlos_sigma_factor: float = 1.12
    nlos_bias_sigmas: float = 1.0
    fp_gap_los_db: float = FP_GAP_LOS_DB
    fp_gap_nlos_db: tuple = FP_GAP_NLOS_DB
    fp_gap_sigma_db: float = 1.0
    reception_scale_db: float = 1.5
    reception_calibration: dict = field(default_factory=lambda: dict(RECEPTION_CALIBRATION))
    ble_ref_power_1m: float = BLE_TX_REF_1M_DBM
    ble_exponent: float = BLE_PATH_LOSS_EXPONENT
    ble_sigma_los_db: tuple = (2.45, 2.75)
    ble_sigma_nlos_db: tuple = (2.6, 6.48)
    ble_reception_los: float = 0.8983
    ble_reception_nlos: float = 0.7974
    noise: bool = True
    bias: bool = True
    ideal_reception: bool = False

    @classmethod
    def noiseless(cls, **overrides) -> "ChannelModel":
        kw = dict(noise=False, bias=False, ideal_reception=True, fp_gap_sigma_db=0.0)
        kw.update(overrides)
        return cls(**kw)

    # -- UWB -----------------------------------------------------------------

    def range_sigma(self, mode_id: int, distance: float, los: bool = True) -> float:
        near, far = self.range_sigma_m.get(mode_id, (0.0, 0.0))
        sigma = near if distance <= NEAR_FAR_SPLIT_M else far
        return sigma if los else sigma * self.nlos_sigma_factor

    def range_bias_at(self, mode_id: int, distance: float) -> float:
        table = self.range_bias.get(mode_id)
        if not table:
            return 0.0
        xs, ys = zip(*table)
        return float(np.interp(distance, xs, ys))

    def sensitivity(self, config: RadioConfig) -> float:
        """Received level (dBm) at which a single frame is decoded with the calibrated odds."""
        distance, success = self.reception_calibration[config.mode_id]
        reference = radio_mode(config.mode_id, tx_power=DEFAULT_TX_POWER_DBM)
        level = reference.tx_power - fspl(distance, reference.center_frequency)
        # both frames of an exchange must get through
        per_frame = math.sqrt(success)
        return level - self.reception_scale_db * _logit(per_frame)

    def frame_success_probability(self, p_rxl: float, config: RadioConfig) -> float:
        if self.ideal_reception:
            return 1.0
        margin = p_rxl - self.sensitivity(config)
        return 1.0 / (1.0 + math.exp(-margin / self.reception_scale_db))

    def fp_gap_mean(self, geometry: LinkGeometry) -> float:
        if geometry.los:
            return self.fp_gap_los_db
        xs, ys = zip(*self.fp_gap_nlos_db)
        return float(np.interp(geometry.barrier_mm, xs, ys))

    def received_level(self, geometry: LinkGeometry, config: RadioConfig) -> float:
        return config.tx_power - fspl(geometry.distance, config.center_frequency) - geometry.excess_loss_db

    def draw_uwb(self, geometry: LinkGeometry, config: RadioConfig, rng: np.random.Generator) -> ChannelDraw:
        tof_true = geometry.distance / SPEED_OF_LIGHT
        p_rxl = self.received_level(geometry, config)
        if rng.random() >= self.frame_success_probability(p_rxl, config):
            return ChannelDraw(received=False, tof_true=tof_true)

        gap = self.fp_gap_mean(geometry)
        if self.fp_gap_sigma_db > 0:
            gap += rng.normal(0.0, self.fp_gap_sigma_db)
        gap = max(gap, 0.0)

        error_m = 0.0
        sigma = self.range_sigma(config.mode_id, geometry.distance, geometry.los)
        if self.noise and sigma > 0:
            # two legs average in a round trip, so each leg carries sqrt(2) sigma
            error_m += rng.normal(0.0, math.sqrt(2.0) * sigma)
        if self.bias:
            error_m += self.range_bias_at(config.mode_id, geometry.distance)
            if not geometry.los:
                error_m += self.nlos_bias_sigmas * self.range_sigma(config.mode_id, geometry.distance)
        return ChannelDraw(
            received=True,
            tof_true=tof_true,
            tof_noise=error_m / SPEED_OF_LIGHT,
            rssi=p_rxl,
            p_rxl=p_rxl,
            p_fp=p_rxl - gap,
        )

    # -- BLE -----------------------------------------------------------------

    def ble_mean_rssi(self, geometry: LinkGeometry) -> float:
        return (
            self.ble_ref_power_1m
            - 10 * self.ble_exponent * math.log10(geometry.distance)
            - geometry.excess_loss_db
        )

    def ble_sigma(self, geometry: LinkGeometry) -> float:
        near, far = self.ble_sigma_los_db if geometry.los else self.ble_sigma_nlos_db
        return near if geometry.distance <= NEAR_FAR_SPLIT_M else far

    def ble_reception_probability(self, geometry: LinkGeometry) -> float:
        if self.ideal_reception:
            return 1.0
        return self.ble_reception_los if geometry.los else self.ble_reception_nlos

    def draw_ble(self, geometry: LinkGeometry, rng: np.random.Generator) -> ChannelDraw:
        tof_true = geometry.distance / SPEED_OF_LIGHT
        if rng.random() >= self.ble_reception_probability(geometry):
            return ChannelDraw(received=False, tof_true=tof_true)
        rssi = self.ble_mean_rssi(geometry)
        if self.noise:
            rssi += rng.normal(0.0, self.ble_sigma(geometry))
        return ChannelDraw(received=True, tof_true=tof_true, rssi=rssi)


DEFAULT_CHANNEL = ChannelModel()


def draw_uwb(geometry: LinkGeometry, config: RadioConfig, rng: np.random.Generator,
             model: ChannelModel = DEFAULT_CHANNEL) -> ChannelDraw:
    return model.draw_uwb(geometry, config, rng)


def draw_ble(geometry: LinkGeometry, rng: np.random.Generator,
             model: ChannelModel = DEFAULT_CHANNEL) -> ChannelDraw:
    return model.draw_ble(geometry, rng)
