"""Simulator and protocol library for authenticated RPL topologies."""
from .chains import ChainSet, build_encryption_chain, build_rank_chain, build_version_chain
from .primitives import PRODUCTION, TEST, get_suite
from .scenario import ConfigInvalid, ScenarioConfig, run_scenario
from .topology import Topology, kary_tree

__all__ = [
    "ChainSet",
    "ConfigInvalid",
    "PRODUCTION",
    "ScenarioConfig",
    "TEST",
    "Topology",
    "build_encryption_chain",
    "build_rank_chain",
    "build_version_chain",
    "get_suite",
    "kary_tree",
    "run_scenario",
]
