"""Deterministic simulated network for exercising the measurement pipeline."""

from .scenario import DnsPolicy, IkePolicy, Scenario, ScenarioError, SimOperator, SimVantage, load_scenario
from .server import SimNet, SimTransport, spawn

__all__ = [
    "DnsPolicy",
    "IkePolicy",
    "Scenario",
    "ScenarioError",
    "SimNet",
    "SimOperator",
    "SimTransport",
    "SimVantage",
    "load_scenario",
    "spawn",
]
