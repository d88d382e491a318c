"""Minimum worst-case source power for multi-pair networks with energy-harvesting AF relays."""

from .model import EhTrace, EnergyLedger, Scenario, compute_gains, gen_eh_trace, place_relays
from .optimizer import PolicyResult, ScenarioInfeasible, bisect_eta, greedy_policy, lp_bound
from .simulator import (RelaySchedule, SimOutcome, run_constructive_scheduler, run_online_mode,
                        run_random_policy)
from .utility import AfUtility

__version__ = "0.1.0"

__all__ = [
    "AfUtility", "EhTrace", "EnergyLedger", "PolicyResult", "RelaySchedule", "Scenario",
    "ScenarioInfeasible", "SimOutcome", "bisect_eta", "compute_gains", "gen_eh_trace",
    "greedy_policy", "lp_bound", "place_relays", "run_constructive_scheduler",
    "run_online_mode", "run_random_policy",
]
