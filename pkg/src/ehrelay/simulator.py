"""Block-level execution of relay policies under energy causality.

Three selectors share one loop: uniform choice among active candidates, the
max-surplus constructive rule, and an online variant that re-plans at every
EH interval from the rates observed so far.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .feasibility import CandidateSets, relay_division, startup_ok, theorem1_check
from .model import (ENERGY_TOL, EhTrace, EnergyLedger, Gains, Scenario, causality_violations,
                    compute_gains, ledger_step)
from .optimizer import DEFAULT_EPSILON, PolicyResult, ScenarioInfeasible, bisect_eta
from .utility import AfUtility

QOS_TOL = 1e-9
# relative shortfall (in half-block transmissions) still treated as active
SURPLUS_TOL = 1e-9


class SufficiencyWitnessFailure(AssertionError):
    """The feasibility condition held but no candidate relay was active."""


@dataclass
class RelaySchedule:
    """Selection tensor ``z`` (M x K x N, bool) and the relay power actually used."""

    z: np.ndarray
    p_relay: np.ndarray

    def per_block_counts(self) -> np.ndarray:
        return self.z.sum(axis=1)

    def outside(self, mask: np.ndarray) -> int:
        """Number of selections of relays outside the candidate mask."""
        return int(np.count_nonzero(self.z & ~mask[:, :, None]))


@dataclass
class SimOutcome:
    energy: np.ndarray  # K x (N+1), stored energy at block boundaries
    M: int
    N: int
    energy_outage_blocks: int = 0
    qos_violations: int = 0
    causality_violations: int = 0
    max_source_power: float = 0.0
    eta_per_interval: list = field(default_factory=list)

    @property
    def no_outage_ratio(self) -> float:
        return 1.0 - self.energy_outage_blocks / (self.M * self.N)

    def to_dict(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else str(x)

        return {
            "M": self.M,
            "N": self.N,
            "energy_outage_blocks": self.energy_outage_blocks,
            "qos_violations": self.qos_violations,
            "causality_violations": self.causality_violations,
            "no_outage_ratio": self.no_outage_ratio,
            "max_source_power": num(self.max_source_power),
            "eta_per_interval": [num(float(e)) for e in self.eta_per_interval],
            "energy": self.energy.tolist(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def dump_energy_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block", "relay", "joules"])
            for n in range(self.energy.shape[1]):
                for k in range(self.energy.shape[0]):
                    w.writerow([n, k, repr(float(self.energy[k, n]))])


def active_set(available, p_relay_row, T_c: float, tol: float = ENERGY_TOL) -> np.ndarray:
    """Candidates (nonzero power) whose stored energy covers half a block at their power."""
    available = np.asarray(available, dtype=float)
    p = np.asarray(p_relay_row, dtype=float)
    return np.flatnonzero((p > 0) & (available >= p * T_c / 2 - tol))


def candidates_of(policy: PolicyResult) -> CandidateSets:
    p = np.asarray(policy.p_relay, dtype=float)
    return CandidateSets(eta=policy.eta_star, p_hat=p, mask=p > 0)


# A chooser gets (block index, pair, physical energy left at the relay
# stage, relay powers of the pair) and returns a relay index or -1.
Chooser = Callable[[int, int, np.ndarray, np.ndarray], int]


def _simulate(scenario: Scenario, trace: EhTrace, plan: Callable[[int], tuple],
              choose: Chooser, utility: Optional[AfUtility] = None,
              on_block_end: Optional[Callable] = None):
    """Shared block loop.

    ``plan(n)`` returns ``(eta, p_relay)`` in force for block ``n``.
    """
    M, K, N, T_c = scenario.M, scenario.K, scenario.N, scenario.T_c
    ledger = EnergyLedger.start(trace)
    energy = np.zeros((K, N + 1))
    energy[:, 0] = ledger.available
    z = np.zeros((M, K, N), dtype=bool)
    used = np.zeros((M, K, N))
    outages = 0
    qos_bad = 0
    max_src = 0.0
    for n in range(N):
        eta, p_relay = plan(n)
        left = ledger.relay_stage(trace, scenario)
        choices = [-1] * M
        p_block = np.zeros((M, K))
        for m in range(M):
            k = choose(n, m, left, p_relay[m])
            if k < 0:
                outages += 1
                continue
            choices[m] = k
            p_block[m, k] = p_relay[m, k]
            left[k] -= p_relay[m, k] * T_c / 2
            z[m, k, n] = True
            used[m, k, n] = p_relay[m, k]
            max_src = max(max_src, eta)
            if utility is not None and utility.value(eta, p_relay[m, k])[m, k] < scenario.u_th - QOS_TOL:
                qos_bad += 1
        ledger = ledger_step(ledger, trace, scenario, choices, p_block)
        energy[:, n + 1] = ledger.available
        if on_block_end is not None:
            on_block_end(n, choices)
    outcome = SimOutcome(energy=energy, M=M, N=N, energy_outage_blocks=outages,
                         qos_violations=qos_bad, max_source_power=max_src)
    outcome.causality_violations = causality_violations(z, used, trace, scenario)
    return outcome, RelaySchedule(z=z, p_relay=used)


def _surplus(energy, p_row, T_c):
    # how many half-block transmissions beyond the next one the energy covers
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p_row > 0, energy / (p_row * T_c / 2) - 1.0, -np.inf)


def run_random_policy(scenario: Scenario, trace: EhTrace, policy: PolicyResult,
                      rng: np.random.Generator, utility: Optional[AfUtility] = None):
    """Pick uniformly among the active candidates of each pair in every block."""
    p_relay = np.asarray(policy.p_relay, dtype=float)

    def choose(n, m, left, p_row):
        act = active_set(left, p_row, scenario.T_c)
        if act.size == 0:
            return -1
        return int(act[rng.integers(act.size)]) if act.size > 1 else int(act[0])

    return _simulate(scenario, trace, lambda n: (policy.eta_star, p_relay), choose, utility)


def run_constructive_scheduler(scenario: Scenario, trace: EhTrace, policy: PolicyResult,
                               utility: Optional[AfUtility] = None):
    """Max-surplus selection that never runs dry when the feasibility condition holds.

    With several pairs each relay is split into per-pair child relays using a
    horizon-wide energy division; every pair then schedules against its own
    children. If no division exists the rule falls back to the shared
    physical energy and outages are recorded instead of raised.
    """
    cand = candidates_of(policy)
    M, K, T_c = scenario.M, scenario.K, scenario.T_c
    p_relay = cand.p_hat
    if M == 1:
        guaranteed = cand.usable and startup_ok(cand, trace, scenario) and theorem1_check(cand, trace, scenario)
        division = None
    else:
        division = relay_division(cand, trace, scenario)
        guaranteed = division is not None

    child = None
    if division is not None:
        child = division.phi * trace.e_init[None, :]  # M x K

    def choose(n, m, left, p_row):
        if child is not None:
            j = n // scenario.N_c
            mid = child[m] + division.theta[m, :, j] * trace.psi[:, j] * T_c / 2
            score = _surplus(mid, p_row, T_c)
            # physical energy must cover it too (it does unless the witness is off by rounding)
            score[left < p_row * T_c / 2 - ENERGY_TOL] = -np.inf
        else:
            score = _surplus(left, p_row, T_c)
        k = int(np.argmax(score))
        if not score[k] >= -SURPLUS_TOL:
            if guaranteed:
                raise SufficiencyWitnessFailure(
                    f"sufficiency witness failure: no active relay for pair {m} in block {n + 1}")
            return -1
        return k

    def advance(n, choices):
        if child is None:
            return
        j = n // scenario.N_c
        child[:] += division.theta[:, :, j] * trace.psi[None, :, j] * T_c
        for m, k in enumerate(choices):
            if k >= 0:
                child[m, k] -= p_relay[m, k] * T_c / 2

    return _simulate(scenario, trace, lambda n: (policy.eta_star, p_relay), choose, utility, advance)


def surrogate_trace(trace: EhTrace, j: int) -> EhTrace:
    """Observed rates for intervals before ``j`` (0-based), interval ``j`` extended forward."""
    psi = trace.psi.copy()
    psi[:, j:] = trace.psi[:, j:j + 1]
    return EhTrace(psi=psi, e_init=trace.e_init)


def run_online_mode(scenario: Scenario, trace: EhTrace, gains: Optional[Gains] = None,
                    epsilon: float = DEFAULT_EPSILON, utility: Optional[AfUtility] = None):
    """Re-plan at the start of each EH interval from current side information only.

    Returns ``(SimOutcome, RelaySchedule)``; ``SimOutcome.eta_per_interval``
    holds the planned source power per interval (``nan`` where even the
    surrogate was infeasible, in which case that interval's blocks are outages).
    """
    utility = utility or AfUtility(scenario, gains or compute_gains(scenario))
    M, K = scenario.M, scenario.K
    plans = []
    for j in range(scenario.N_e):
        try:
            pol = bisect_eta(scenario, surrogate_trace(trace, j), epsilon=epsilon, utility=utility)
            plans.append((pol.eta_star, np.asarray(pol.p_relay, dtype=float)))
        except ScenarioInfeasible:
            plans.append((math.nan, np.zeros((M, K))))

    def plan(n):
        return plans[n // scenario.N_c]

    def choose(n, m, left, p_row):
        score = _surplus(left, p_row, scenario.T_c)
        k = int(np.argmax(score))
        return k if score[k] >= -SURPLUS_TOL else -1

    outcome, sched = _simulate(scenario, trace, plan, choose, utility)
    outcome.eta_per_interval = [p[0] for p in plans]
    return outcome, sched
