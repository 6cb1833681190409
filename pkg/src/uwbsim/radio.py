"""UWB transmission modes, frame timing and BLE baseline radio constants."""

from __future__ import annotations

from dataclasses import dataclass

SPEED_OF_LIGHT = 299_792_458.0

# Nominal IEEE 802.15.4 UWB channel centre frequencies (Hz).
CHANNEL_CENTER_HZ = {
    1: 3494.4e6,
    2: 3993.6e6,
    3: 4492.8e6,
    4: 3993.6e6,
    5: 6489.6e6,
    7: 6489.6e6,
}

# Preamble symbol duration per PRF; 64 MHz symbols are 24.04 ns longer.
PREAMBLE_SYMBOL_S = {16: 993.59e-9, 64: 1017.63e-9}

PHR_BITS = 19
MAX_PAYLOAD_BYTES = 1023
RANGING_PAYLOAD_BYTES = 12

# Regulatory limit of -41.3 dBm/MHz integrated over 500 MHz.
DEFAULT_TX_POWER_DBM = -14.3

BLE_TX_REF_1M_DBM = -40.0
BLE_PATH_LOSS_EXPONENT = 2.0

VALID_DATA_RATES = (110_000, 850_000, 6_800_000)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RadioConfig:
    mode_id: int
    data_rate: int
    prf: int
    preamble_symbols: int
    pac: int
    channel: int
    center_frequency: float
    tx_power: float = DEFAULT_TX_POWER_DBM

    def __post_init__(self):
        if self.prf not in PREAMBLE_SYMBOL_S:
            raise ConfigurationError(f"PRF must be 16 or 64 MHz, got {self.prf}")
        if self.data_rate not in VALID_DATA_RATES:
            raise ConfigurationError(f"unsupported data rate {self.data_rate}")
        if not 64 <= self.preamble_symbols <= 4096:
            raise ConfigurationError(f"preamble length {self.preamble_symbols} outside 64..4096")
        if not 3.1e9 <= self.center_frequency <= 10.6e9:
            raise ConfigurationError(f"centre frequency {self.center_frequency} outside UWB band")

    @property
    def symbol_duration(self) -> float:
        return PREAMBLE_SYMBOL_S[self.prf]

    @property
    def frame(self) -> "FrameSpec":
        return frame_spec(self)


@dataclass(frozen=True)
class FrameSpec:
    preamble_symbol_duration: float
    sfd_symbols: int
    phr_bits: int = PHR_BITS
    payload_bytes: int = RANGING_PAYLOAD_BYTES
    phr_rate: float = 850_000.0

    def __post_init__(self):
        if self.phr_bits != PHR_BITS:
            raise ConfigurationError("PHR is always 19 bits")
        if not 0 <= self.payload_bytes <= MAX_PAYLOAD_BYTES:
            raise ConfigurationError(f"payload of {self.payload_bytes} bytes exceeds {MAX_PAYLOAD_BYTES}")


# mode -> (data rate, PRF, preamble, PAC, channel)
_MODE_TABLE = {
    1: (6_800_000, 16, 64, 8, 1),
    2: (6_800_000, 16, 128, 8, 1),
    3: (6_800_000, 64, 128, 8, 1),
    4: (6_800_000, 64, 128, 8, 5),
    5: (110_000, 64, 4096, 64, 1),
    6: (6_800_000, 64, 128, 8, 4),
}

MODE_IDS = tuple(sorted(_MODE_TABLE))


def mode(mode_id: int, tx_power: float = DEFAULT_TX_POWER_DBM) -> RadioConfig:
    """Return the full radio configuration for one of the six test modes."""
    try:
        rate, prf, preamble, pac, channel = _MODE_TABLE[int(mode_id)]
    except (KeyError, TypeError, ValueError):
        raise ConfigurationError(f"unknown mode id {mode_id!r}; expected one of {MODE_IDS}") from None
    return RadioConfig(
        mode_id=int(mode_id),
        data_rate=rate,
        prf=prf,
        preamble_symbols=preamble,
        pac=pac,
        channel=channel,
        center_frequency=CHANNEL_CENTER_HZ[channel],
        tx_power=tx_power,
    )


def frame_spec(config: RadioConfig, payload_bytes: int = RANGING_PAYLOAD_BYTES) -> FrameSpec:
    # 110 kb/s uses the long 64-symbol SFD and sends the PHR at the base rate.
    slow = config.data_rate == 110_000
    return FrameSpec(
        preamble_symbol_duration=config.symbol_duration,
        sfd_symbols=64 if slow else 8,
        payload_bytes=payload_bytes,
        phr_rate=110_000.0 if slow else 850_000.0,
    )


def shr_duration(config: RadioConfig) -> float:
    """Synchronisation header (preamble + SFD) duration in seconds."""
    spec = frame_spec(config)
    return (config.preamble_symbols + spec.sfd_symbols) * config.symbol_duration


def preamble_duration(config: RadioConfig) -> float:
    return config.preamble_symbols * config.symbol_duration


def airtime(config: RadioConfig, payload_bytes: int = RANGING_PAYLOAD_BYTES) -> float:
    """Analytic on-air duration of one frame carrying ``payload_bytes``."""
    if payload_bytes > MAX_PAYLOAD_BYTES or payload_bytes < 0:
        raise ConfigurationError(f"payload of {payload_bytes} bytes not in 0..{MAX_PAYLOAD_BYTES}")
    spec = frame_spec(config, payload_bytes)
    return (
        shr_duration(config)
        + spec.phr_bits / spec.phr_rate
        + payload_bytes * 8 / config.data_rate
    )
