"""Relay pre-selection, the zeta sufficient condition and the per-interval LPs.

For one pair the feasibility test is the closed-form statistic

    zeta(eta, l) = sum_k 2*avg_rate[k, l] / p_hat[k]
                 + sum_k (2*e_init[k]/T_c - p_hat[k]) / (p_hat[k] * l * N_c)

which must be at least 1 for every EH interval ``l``. With several pairs
each relay's energy is divided among the pairs through shares ``phi``
(initial energy) and ``theta`` (harvest), giving one small LP per interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lp
from .model import EhTrace, Scenario, cumulative_avg_rates
from .utility import AfUtility


@dataclass
class CandidateSets:
    """Pre-selection result at source power ``eta``.

    ``mask[m, k]`` is true iff relay ``k`` reaches the QoS target for pair
    ``m`` at peak power; ``p_hat`` holds the minimum relay powers there and
    zero elsewhere.
    """

    eta: float
    p_hat: np.ndarray
    mask: np.ndarray

    @property
    def s_eta(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.mask]

    @property
    def empty_pairs(self) -> list[int]:
        return [m for m, row in enumerate(self.mask) if not row.any()]

    @property
    def usable(self) -> bool:
        return not self.empty_pairs


def preselect(eta: float, utility: AfUtility) -> CandidateSets:
    p_hat, mask = utility.min_relay_power(eta)
    return CandidateSets(eta=float(eta), p_hat=p_hat, mask=mask)


def zeta(cand: CandidateSets, trace: EhTrace, l: int, scenario: Scenario, m: int = 0) -> float:
    """Sufficient-condition statistic of pair ``m`` at EH interval ``l`` (1-based)."""
    if not 1 <= l <= trace.N_e:
        raise IndexError(f"EH interval {l} outside 1..{trace.N_e}")
    return float(zeta_profile(cand, trace, scenario, m)[l - 1])


def zeta_profile(cand: CandidateSets, trace: EhTrace, scenario: Scenario, m: int = 0) -> np.ndarray:
    """``zeta`` for every EH interval; ``-inf`` throughout when the candidate set is empty."""
    sel = cand.mask[m]
    if not sel.any():
        return np.full(trace.N_e, -np.inf)
    p = cand.p_hat[m, sel]
    avg = cumulative_avg_rates(trace)[sel]  # |S| x N_e
    blocks = np.arange(1, trace.N_e + 1) * scenario.N_c
    steady = np.sum(2 * avg / p[:, None], axis=0)
    startup = np.sum((2 * trace.e_init[sel] / scenario.T_c - p)[:, None] / (p[:, None] * blocks), axis=0)
    return steady + startup


def theorem1_check(cand: CandidateSets, trace: EhTrace, scenario: Scenario, m: int = 0) -> bool:
    return bool(np.min(zeta_profile(cand, trace, scenario, m)) >= 1.0)


def startup_ok(cand: CandidateSets, trace: EhTrace, scenario: Scenario, m: int = 0) -> bool:
    """Some candidate can serve the very first block from its initial energy alone.

    Holds automatically with the default initial energy; the zeta
    condition only guarantees blocks after the first.
    """
    sel = cand.mask[m]
    if not sel.any():
        return False
    p = cand.p_hat[m, sel]
    return bool(np.sum(2 * trace.e_init[sel] / (scenario.T_c * p) - 1) >= 0)


def child_rate(theta_tilde: float, trace: EhTrace, k: int, j: int) -> float:
    """Cumulative average harvest rate of a child relay holding share ``theta_tilde``."""
    if not 0 <= theta_tilde <= 1:
        raise ValueError("share must lie in [0, 1]")
    return float(theta_tilde * cumulative_avg_rates(trace)[k, j - 1])


# --------------------------------------------------------------------------
# Per-interval LP
# --------------------------------------------------------------------------

@dataclass
class Fp6Instance:
    """Relay-division LP for one EH interval.

    Variables: ``phi[m, k]`` at ``m*K + k`` and ``theta_tilde[m, k]`` at
    ``M*K + m*K + k``. Row order: one row per pair, then ``K`` phi
    equalities, then ``K`` theta_tilde equalities.
    """

    j: int
    M: int
    K: int
    problem: Optional[lp.LpProblem]

    @property
    def infeasible_marker(self) -> bool:
        return self.problem is None

    def phi_index(self, m: int, k: int) -> int:
        return m * self.K + k

    def theta_index(self, m: int, k: int) -> int:
        return self.M * self.K + m * self.K + k

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x)
        MK = self.M * self.K
        return x[:MK].reshape(self.M, self.K), x[MK:].reshape(self.M, self.K)

    def dump(self) -> str:
        if self.problem is None:
            return f"# interval {self.j}: empty candidate set, infeasible\n"
        return f"# interval {self.j}\n" + lp.dumps(self.problem)


def build_fp6(cand: CandidateSets, trace: EhTrace, j: int, scenario: Scenario) -> Fp6Instance:
    M, K = cand.mask.shape
    if not cand.usable:
        return Fp6Instance(j, M, K, None)
    blocks = j * scenario.N_c
    avg = cumulative_avg_rates(trace)[:, j - 1]
    n = 2 * M * K
    names = [f"phi[{m},{k}]" for m in range(M) for k in range(K)]
    names += [f"theta[{m},{k}]" for m in range(M) for k in range(K)]
    prob = lp.LpProblem(n, lb=np.zeros(n), ub=np.ones(n), names=names)
    inst = Fp6Instance(j, M, K, prob)
    for m in range(M):
        row = np.zeros(n)
        count = 0
        for k in np.flatnonzero(cand.mask[m]):
            p = cand.p_hat[m, k]
            row[inst.theta_index(m, k)] = 2 * avg[k] / p
            row[inst.phi_index(m, k)] = 2 * trace.e_init[k] / (scenario.T_c * blocks * p)
            count += 1
        # each candidate contributes -p_hat/(blocks*p_hat) = -1/blocks
        prob.add_row(row, ">=", 1.0 + count / blocks)
    for k in range(K):
        row = np.zeros(n)
        row[[inst.phi_index(m, k) for m in range(M)]] = 1.0
        prob.add_row(row, "=", 1.0)
    for k in range(K):
        row = np.zeros(n)
        row[[inst.theta_index(m, k) for m in range(M)]] = 1.0
        prob.add_row(row, "=", 1.0)
    return inst


def fp6_feasible(inst: Fp6Instance, method: str = "auto") -> lp.LpResult:
    if inst.problem is None:
        return lp.LpResult("infeasible")
    return lp.feasible(inst.problem, method)


def check_all_intervals(cand: CandidateSets, trace: EhTrace, scenario: Scenario,
                        method: str = "auto") -> bool:
    if not cand.usable:
        return False
    return all(fp6_feasible(build_fp6(cand, trace, j, scenario), method).feasible
               for j in range(1, trace.N_e + 1))


def feasible_at(cand: CandidateSets, trace: EhTrace, scenario: Scenario) -> bool:
    """Probe used by the bisection: closed form for one pair, per-interval LPs otherwise."""
    if cand.mask.shape[0] == 1:
        return cand.usable and theorem1_check(cand, trace, scenario)
    return check_all_intervals(cand, trace, scenario)


# --------------------------------------------------------------------------
# Horizon-wide relay division (used to drive the multi-pair scheduler)
# --------------------------------------------------------------------------

@dataclass
class RelayDivision:
    """Shares of every relay's initial energy (``phi``, M x K) and harvest (``theta``, M x K x N_e)."""

    phi: np.ndarray
    theta: np.ndarray


def relay_division(cand: CandidateSets, trace: EhTrace, scenario: Scenario) -> Optional[RelayDivision]:
    """One consistent energy split valid for all EH intervals at once.

    Per pair the child relays must satisfy the zeta condition at every
    interval end plus the first-block startup condition, with ``phi``
    shared across intervals and ``theta`` constant inside each interval.
    Returns ``None`` when no such split exists.
    """
    M, K = cand.mask.shape
    Ne, Nc = trace.N_e, scenario.N_c
    if not cand.usable:
        return None
    if M == 1:
        div = RelayDivision(np.ones((1, K)), np.ones((1, K, Ne)))
        ok = startup_ok(cand, trace, scenario) and theorem1_check(cand, trace, scenario)
        return div if ok else None

    MK = M * K
    n = MK + MK * Ne

    def phi(m, k):
        return m * K + k

    def theta(m, k, i):
        return MK + (m * K + k) * Ne + i

    prob = lp.LpProblem(n, lb=np.zeros(n), ub=np.ones(n))
    for m in range(M):
        sel = np.flatnonzero(cand.mask[m])
        count = len(sel)
        base = np.zeros(n)
        for k in sel:
            base[phi(m, k)] = 2 * trace.e_init[k] / (scenario.T_c * cand.p_hat[m, k])
        prob.add_row(base, ">=", count)
        for l in range(1, Ne + 1):
            row = base.copy()
            for k in sel:
                for i in range(l):
                    row[theta(m, k, i)] = 2 * Nc * trace.psi[k, i] / cand.p_hat[m, k]
            prob.add_row(row, ">=", l * Nc + count)
    for k in range(K):
        row = np.zeros(n)
        row[[phi(m, k) for m in range(M)]] = 1.0
        prob.add_row(row, "=", 1.0)
        for i in range(Ne):
            row = np.zeros(n)
            row[[theta(m, k, i) for m in range(M)]] = 1.0
            prob.add_row(row, "=", 1.0)
    res = lp.feasible(prob)
    if not res.feasible:
        return None
    x = res.x
    return RelayDivision(x[:MK].reshape(M, K), x[MK:].reshape(M, K, Ne))
