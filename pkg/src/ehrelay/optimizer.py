"""Minimum worst-case source power: the proposed bisection, a greedy baseline and an LP bound."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import lp
from .feasibility import CandidateSets, feasible_at, preselect
from .model import EhTrace, EnergyLedger, Gains, Scenario, compute_gains, ledger_step
from .utility import (AfUtility, inverse_source_power_lower, inverse_source_power_upper,
                      solve_source_power)

DEFAULT_EPSILON = 1e-4
MAX_EXPANSIONS = 40
LP_BOUND_MAX_VARS = 10**5


class ScenarioInfeasible(RuntimeError):
    """No source power up to the expanded upper bound passes the feasibility probe."""


@dataclass
class PolicyResult:
    method: str
    eta_star: float
    p_source: np.ndarray
    p_relay: np.ndarray
    candidate_sets: list
    probes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return clean(v.tolist())
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (float, np.floating)) and not math.isfinite(v):
                return str(float(v))
            if isinstance(v, np.generic):
                return v.item()
            return v

        return clean({
            "method": self.method,
            "eta_star": self.eta_star,
            "p_source": self.p_source,
            "p_relay": self.p_relay,
            "candidate_sets": self.candidate_sets,
            "probes": [[eta, bool(ok)] for eta, ok in self.probes],
            "extra": self.extra,
        })

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def eta_bounds(utility: AfUtility, trace: EhTrace) -> tuple[float, float]:
    """Initial bisection bracket.

    Lower end: the largest over pairs of the smallest source power any relay
    at peak power could get away with (below it some pair has no candidate).
    Upper end: from relays transmitting at their harvest rates.
    """
    eta_lo = inverse_source_power_lower(utility)
    if not math.isfinite(eta_lo):
        raise ScenarioInfeasible(
            "scenario infeasible at eta_U: some pair has no relay able to meet the QoS target "
            "(too poor relay-destination channels)"
        )
    eta_hi = inverse_source_power_upper(utility, trace)
    # inf when no relay helps at its harvest rate; the caller's doubling takes over
    if not (math.isfinite(eta_hi) and eta_hi > eta_lo):
        eta_hi = 2 * eta_lo
    return eta_lo, eta_hi


def _bisect(check: Callable[[float], bool], lo: float, hi: float, eps: float, probes: list) -> float:
    def probe(eta):
        ok = check(eta)
        probes.append((float(eta), bool(ok)))
        return ok

    # unlimited source power is the best case; if even that fails, stop early
    if not check(math.inf):
        raise ScenarioInfeasible(
            f"scenario infeasible at eta_U = inf: too few relays or too poor relay-destination "
            f"channels for the harvest rates (bracket started at {hi:.6g} W)"
        )

    expansions = 0
    while not probe(hi):
        expansions += 1
        if expansions > MAX_EXPANSIONS:
            raise ScenarioInfeasible(
                f"scenario infeasible at eta_U = {hi:.6g} W: too few relays or too poor channels"
            )
        lo, hi = hi, 2 * hi
    while hi - lo > eps:
        mid = 0.5 * (hi + lo)
        if probe(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _result(method, eta, cand: CandidateSets, probes, M) -> PolicyResult:
    return PolicyResult(
        method=method,
        eta_star=float(eta),
        p_source=np.full(M, float(eta)),
        p_relay=cand.p_hat.copy(),
        candidate_sets=cand.s_eta,
        probes=probes,
    )


def bisect_eta(scenario: Scenario, trace: EhTrace, gains: Optional[Gains] = None,
               epsilon: float = DEFAULT_EPSILON, utility: Optional[AfUtility] = None) -> PolicyResult:
    """Smallest source power (to within ``epsilon``) passing the sufficient feasibility condition."""
    utility = utility or AfUtility(scenario, gains or compute_gains(scenario))
    lo, hi = eta_bounds(utility, trace)
    probes: list = []

    def check(eta):
        return feasible_at(preselect(eta, utility), trace, scenario)

    eta = _bisect(check, lo, hi, epsilon, probes)
    return _result("proposed", eta, preselect(eta, utility), probes, scenario.M)


# --------------------------------------------------------------------------
# LP relaxation bound
# --------------------------------------------------------------------------

def relaxed_schedule_lp(cand: CandidateSets, trace: EhTrace, scenario: Scenario) -> lp.LpProblem:
    """Block-indexed selection LP with z relaxed to [0, 1].

    Variables are ``z[m, k, n]`` for candidate pairs only (ordered by m, k, n).
    ``z <= 1`` is implied by the one-relay-per-block equalities.
    """
    M, K = cand.mask.shape
    N, T_c = scenario.N, scenario.T_c
    pairs = [(m, k) for m in range(M) for k in np.flatnonzero(cand.mask[m])]
    nv = len(pairs) * N
    if nv > LP_BOUND_MAX_VARS:
        raise ValueError(f"bound requires desk-scale N: {nv} variables exceeds {LP_BOUND_MAX_VARS}")
    rates = trace.block_rates(scenario.N_c)
    budget = trace.e_init[:, None] + np.cumsum(rates, axis=1) * T_c - rates * T_c / 2  # K x N
    prob = lp.LpProblem(nv, lb=np.zeros(nv), ub=np.full(nv, np.inf))
    tri = np.tril(np.ones((N, N)))  # row l sums blocks 1..l
    energy_rows = np.zeros((K * N, nv))
    select_rows = np.zeros((M * N, nv))
    for idx, (m, k) in enumerate(pairs):
        cols = slice(idx * N, (idx + 1) * N)
        energy_rows[k * N:(k + 1) * N, cols] = tri * cand.p_hat[m, k] * T_c / 2
        select_rows[m * N:(m + 1) * N, cols] = np.eye(N)
    used = [k for k in range(K) if cand.mask[:, k].any()]
    for k in used:
        prob.add_rows(energy_rows[k * N:(k + 1) * N], "<=", budget[k])
    prob.add_rows(select_rows, "=", 1.0)
    return prob


def lp_bound(scenario: Scenario, trace: EhTrace, gains: Optional[Gains] = None,
             epsilon: float = DEFAULT_EPSILON, utility: Optional[AfUtility] = None,
             method: str = "auto") -> PolicyResult:
    """Bisection on the LP relaxation of the block-level selection problem."""
    utility = utility or AfUtility(scenario, gains or compute_gains(scenario))
    if scenario.M * scenario.K * scenario.N > LP_BOUND_MAX_VARS:
        raise ValueError("bound requires desk-scale N")
    lo, hi = eta_bounds(utility, trace)
    probes: list = []

    def check(eta):
        cand = preselect(eta, utility)
        if not cand.usable:
            return False
        return lp.feasible(relaxed_schedule_lp(cand, trace, scenario), method).feasible

    eta = _bisect(check, lo, hi, epsilon, probes)
    return _result("lp_bound", eta, preselect(eta, utility), probes, scenario.M)


# --------------------------------------------------------------------------
# Greedy baseline
# --------------------------------------------------------------------------

def greedy_policy(scenario: Scenario, trace: EhTrace, gains: Optional[Gains] = None,
                  utility: Optional[AfUtility] = None):
    """Block-by-block greedy selection that lets the chosen relay exhaust its energy.

    Pairs are served in index order. Each picks the relay needing the least
    source power when transmitting at ``min(p_max, 2*stored/T_c)``, ties to
    the lowest index. Returns ``(PolicyResult, z, p_blocks)`` with ``z`` the
    M x K x N selection tensor and ``p_blocks`` the relay power used in each block. Blocks where no relay can meet the target are counted
    in ``extra["qos_infeasible_blocks"]``; if there are any, ``eta_star`` is
    ``inf`` and ``extra["eta_served"]`` keeps the largest power actually used.
    """
    utility = utility or AfUtility(scenario, gains or compute_gains(scenario))
    M, K, N, T_c = scenario.M, scenario.K, scenario.N, scenario.T_c
    ledger = EnergyLedger.start(trace)
    z = np.zeros((M, K, N), dtype=bool)
    src = np.zeros((M, N))
    relay_power = np.zeros((M, K, N))
    failed = 0
    for n in range(N):
        mid = ledger.relay_stage(trace, scenario)
        left = mid.copy()
        choices = [-1] * M
        p_used = np.zeros((M, K))
        for m in range(M):
            pr = np.minimum(scenario.p_max, 2 * np.maximum(left, 0.0) / T_c)
            need = solve_source_power(utility.snr_sr[m], utility.snr_rd[m] * pr, utility.gamma, scenario.u_th)
            k = int(np.argmin(need))
            if not math.isfinite(need[k]):
                failed += 1
                continue
            choices[m] = k
            p_used[m, k] = pr[k]
            left[k] -= pr[k] * T_c / 2
            z[m, k, n] = True
            src[m, n] = need[k]
            relay_power[m, k, n] = pr[k]
        ledger = ledger_step(ledger, trace, scenario, choices, p_used)
    served = float(src.max()) if src.size else 0.0
    # a block without any relay able to meet the target fails the QoS
    # constraint outright, so such a policy has no finite worst-case power
    eta = served if failed == 0 else math.inf
    res = PolicyResult(
        method="greedy",
        eta_star=eta,
        p_source=src.max(axis=1),
        p_relay=relay_power.max(axis=2),
        candidate_sets=[sorted(set(np.flatnonzero(z[m].any(axis=1)).tolist())) for m in range(M)],
        extra={"qos_infeasible_blocks": failed,
               "eta_served": served,
               "no_outage_ratio": 1.0 - failed / (M * N)},
    )
    return res, z, relay_power

