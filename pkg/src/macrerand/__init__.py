"""Runtime Wi-Fi MAC address re-randomization: derivation, AP table,
station/AP models, linkage adversaries and a discrete-event simulator."""

from .core import (NonceMode, NonceState, RerandContext, RerandParams, Ptk,
                   choose_pn_split, derive_rerand_mac, interval_index, wrap_interval)
from .frames import BROADCAST, Frame, FrameType, MacAddress, decode_frame, encode_frame
from .mactable import MacTable
from .nodes import ApNode, Mode, StationNode
from .sim import ScenarioConfig, Simulation, parse_config, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BROADCAST", "ApNode", "Frame", "FrameType", "MacAddress", "MacTable", "Mode",
    "NonceMode", "NonceState", "Ptk", "RerandContext", "RerandParams", "ScenarioConfig",
    "Simulation", "StationNode", "choose_pn_split", "decode_frame", "derive_rerand_mac",
    "encode_frame", "interval_index", "parse_config", "run_scenario", "wrap_interval",
]
