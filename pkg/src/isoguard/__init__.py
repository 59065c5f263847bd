"""Executable isolation-level semantics with refinement monitoring of
transaction protocols (S2PL with 2PC, TAPIR) and a black-box RA history checker."""

from isoguard.abstract import Commit, Config, GuardReport, Skip, XView, abs_run, abs_step, initial_config
from isoguard.core import T_INIT, TxId, Version
from isoguard.explorer import emit_history, enabled_events, explore, replay
from isoguard.history import build_graph, check_ra, check_ra_oracle
from isoguard.levels import get_level
from isoguard.monitor import Violation, monitor_run, monitor_step
from isoguard.protocols import S2PL, Scope, Tapir, make_protocol

__version__ = "0.1.0"

__all__ = [
    "Commit",
    "Config",
    "GuardReport",
    "S2PL",
    "Scope",
    "Skip",
    "T_INIT",
    "Tapir",
    "TxId",
    "Version",
    "Violation",
    "XView",
    "abs_run",
    "abs_step",
    "build_graph",
    "check_ra",
    "check_ra_oracle",
    "emit_history",
    "enabled_events",
    "explore",
    "get_level",
    "initial_config",
    "make_protocol",
    "monitor_run",
    "monitor_step",
    "replay",
]
