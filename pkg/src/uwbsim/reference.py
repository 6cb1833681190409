"""Published reference values used by the report tables.

Bump ``REFERENCE_VERSION`` whenever a number here changes so that stored
reports can be matched to the constants they were compared against.
"""

REFERENCE_VERSION = "1"

# Average current of one tag-side ranging exchange, mA, per mode.
EXCHANGE_AVG_CURRENT_MA = {1: 53.0, 2: 56.0, 3: 59.0, 4: 64.0, 5: 63.0, 6: 70.0}

# Ranging precision per mode, cm: std over 0-30 m, std over 0-10 m, max difference.
PRECISION_CM = {
    2: {"std_0_30m_cm": 5.94, "std_0_10m_cm": 6.50, "max_difference_cm": 30.00},
    3: {"std_0_30m_cm": 6.48, "std_0_10m_cm": 5.42, "max_difference_cm": 71.02},
    4: {"std_0_30m_cm": 4.04, "std_0_10m_cm": 2.44, "max_difference_cm": 32.95},
    5: {"std_0_30m_cm": 19.58, "std_0_10m_cm": 13.55, "max_difference_cm": 170.12},
    6: {"std_0_30m_cm": 4.04, "std_0_10m_cm": 5.23, "max_difference_cm": 68.11},
}

# UWB versus BLE distance estimation over 0-30 m (mode 4).  Distances in cm,
# reception as a fraction; BLE spread also given in dB under ``*_db``.
COMPARISON = {
    "uwb_los": {"reception_rate": 0.9999, "std_0_30m_cm": 4.04, "std_0_10m_cm": 2.44,
                "max_deviation_cm": 32.95, "avg_deviation_250cm_cm": 11.99, "avg_deviation_750cm_cm": 5.24},
    "uwb_nlos": {"reception_rate": 0.9998, "std_0_30m_cm": 3.27, "std_0_10m_cm": 2.73,
                 "max_deviation_cm": 75.46, "avg_deviation_250cm_cm": 0.76, "avg_deviation_750cm_cm": 6.14},
    "ble_los": {"reception_rate": 0.8983, "std_0_30m_cm": 299.78, "std_0_10m_cm": 101.16,
                "max_deviation_cm": 5657.17, "avg_deviation_250cm_cm": 75.82, "avg_deviation_750cm_cm": 241.83,
                "std_0_30m_db": 2.6, "std_0_10m_db": 2.45},
    "ble_nlos": {"reception_rate": 0.7974, "std_0_30m_cm": 717.66, "std_0_10m_cm": 148.75,
                 "max_deviation_cm": 4016.33, "avg_deviation_250cm_cm": 185.86, "avg_deviation_750cm_cm": 699.12,
                 "std_0_30m_db": 4.54, "std_0_10m_db": 2.6},
}

# First-path diagnostics for one link at roughly 10 m, keyed by barrier thickness (mm).
NLOS_DIAGNOSTICS = {
    0: {"label": "LOS", "distance_cm": 981.0, "fp_gap_db": 1.43, "class": "LOS"},
    65: {"label": "NLOS 1", "distance_cm": 1005.0, "fp_gap_db": 7.86, "class": "NLOS"},
    130: {"label": "NLOS 2", "distance_cm": 996.0, "fp_gap_db": 7.69, "class": "NLOS"},
    170: {"label": "NLOS 3", "distance_cm": 1005.0, "fp_gap_db": 7.23, "class": "NLOS"},
}

# Battery figures for a 200 mAh cell, hours.
LIFETIME_H = {"continuous_mode4": 3.0, "continuous_mode4_rx_delay": 6.5}
