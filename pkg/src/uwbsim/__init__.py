"""UWB/BLE indoor asset-tracking simulator."""

from .radio import ConfigurationError, RadioConfig, airtime, mode
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .simulator import RunResult, Simulator, run

__all__ = [
    "ConfigurationError", "RadioConfig", "airtime", "mode",
    "Scenario", "ScenarioError", "load_scenario", "parse_scenario",
    "RunResult", "Simulator", "run",
]
__version__ = "0.1.0"
