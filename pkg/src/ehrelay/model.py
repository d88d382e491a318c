"""Scenario description, geometry, EH traces and relay energy bookkeeping.

Blocks are indexed from 1 to ``N = n_c * n_e`` and EH intervals from 1 to
``n_e`` wherever an index is part of a public signature; arrays are plain
0-based numpy arrays.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

# Slack (joules) tolerated when comparing stored energy with a debit.
ENERGY_TOL = 1e-10


class EnergyCausalityError(RuntimeError):
    """A relay was asked to spend energy it has not harvested yet."""


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    M: int = 1
    K: int = 5
    N_c: int = 5
    N_e: int = 5
    T_c: float = 0.01
    L_x: float = 100.0
    L_y: float = 100.0
    d0: float = 10.0
    pl_ref_db: float = 60.0
    bandwidth_hz: float = 1e6
    noise_psd: float = 1e-16
    gamma_th: float = 1.0
    u_th: float = 0.99
    p_max: float = 2.0
    eh_mean: float = 0.02
    eh_alpha: float = 0.5
    relay_positions: Optional[list] = None
    seed: int = 0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ScenarioError("; ".join(problems))
        if self.relay_positions is not None:
            self.relay_positions = [[float(x), float(y)] for x, y in self.relay_positions]

    def problems(self) -> list[str]:
        """Return a list of human-readable invariant violations (empty if valid)."""
        out = []
        for name in ("M", "K", "N_c", "N_e"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                out.append(f"{name} must be an integer >= 1 (got {v!r})")
        for name in ("T_c", "L_x", "L_y", "d0", "bandwidth_hz", "noise_psd",
                     "gamma_th", "p_max", "eh_mean"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                out.append(f"{name} must be a finite positive number (got {v!r})")
        if not isinstance(self.pl_ref_db, (int, float)) or not math.isfinite(self.pl_ref_db):
            out.append(f"pl_ref_db must be finite (got {self.pl_ref_db!r})")
        if not (isinstance(self.u_th, (int, float)) and 0 < self.u_th < 1):
            out.append(f"u_th must lie in (0, 1) (got {self.u_th!r})")
        if not (isinstance(self.eh_alpha, (int, float)) and 0 <= self.eh_alpha < 1):
            out.append(f"eh_alpha must lie in [0, 1) (got {self.eh_alpha!r})")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            out.append(f"seed must be an unsigned 64-bit integer (got {self.seed!r})")
        if self.relay_positions is not None and not out:
            if len(self.relay_positions) != self.K:
                out.append(f"relay_positions has {len(self.relay_positions)} entries, K = {self.K}")
            for p in self.relay_positions:
                if len(p) != 2:
                    out.append(f"relay position {p!r} is not an (x, y) pair")
        return out

    @property
    def N(self) -> int:
        return self.N_c * self.N_e

    @property
    def noise_power(self) -> float:
        return self.noise_psd * self.bandwidth_hz

    def source_position(self, m: int) -> tuple[float, float]:
        """Position of source ``m`` (0-based)."""
        return (0.0, (m + 1) * self.L_y / (self.M + 1))

    def destination_position(self, m: int) -> tuple[float, float]:
        return (self.L_x, (m + 1) * self.L_y / (self.M + 1))

    def with_relays(self, positions) -> "Scenario":
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        return dataclasses.replace(self, K=len(positions), relay_positions=positions.tolist())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "Scenario":
        text = Path(path).read_text()
        return cls.from_dict(json.loads(text) if text.strip() else {})


def place_relays(scenario: Scenario, rng: np.random.Generator) -> Scenario:
    """Drop ``scenario.K`` relays uniformly inside the field."""
    pts = rng.uniform(0.0, 1.0, size=(scenario.K, 2)) * [scenario.L_x, scenario.L_y]
    return scenario.with_relays(pts)


def path_gain(src, dst, scenario: Scenario) -> float:
    d = math.dist(src, dst)
    if d == 0:
        raise ScenarioError("degenerate geometry: zero link distance")
    return 10.0 ** (-scenario.pl_ref_db / 10.0) * (scenario.d0 / d) ** 2


@dataclass
class Gains:
    """Linear path gains: ``sr`` and ``rd`` are M x K, ``sd`` has length M."""

    sr: np.ndarray
    rd: np.ndarray
    sd: np.ndarray


def compute_gains(scenario: Scenario) -> Gains:
    if scenario.relay_positions is None:
        raise ScenarioError("relay positions are not set; call place_relays first")
    M, K = scenario.M, scenario.K
    sr = np.empty((M, K))
    rd = np.empty((M, K))
    sd = np.empty(M)
    for m in range(M):
        s, d = scenario.source_position(m), scenario.destination_position(m)
        sd[m] = path_gain(s, d, scenario)
        for k, r in enumerate(scenario.relay_positions):
            sr[m, k] = path_gain(s, r, scenario)
            rd[m, k] = path_gain(r, d, scenario)
    return Gains(sr=sr, rd=rd, sd=sd)


@dataclass
class EhTrace:
    """Per-interval harvest rates ``psi`` (K x N_e, watts) and initial energies (joules)."""

    psi: np.ndarray
    e_init: np.ndarray

    def __post_init__(self):
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        self.e_init = np.asarray(self.e_init, dtype=float).reshape(-1)
        if self.psi.shape[0] != self.e_init.shape[0]:
            raise ValueError("psi and e_init disagree on the number of relays")

    @property
    def K(self) -> int:
        return self.psi.shape[0]

    @property
    def N_e(self) -> int:
        return self.psi.shape[1]

    def block_rates(self, n_c: int) -> np.ndarray:
        """K x N matrix of per-block harvest rates."""
        return np.repeat(self.psi, n_c, axis=1)

    def to_dict(self) -> dict:
        return {"psi": self.psi.tolist(), "e_init": self.e_init.tolist()}


def initial_energy(scenario: Scenario) -> float:
    # enough for peak power in every band for one relay stage
    return scenario.M * scenario.p_max * scenario.T_c / 2


def gen_eh_trace(scenario: Scenario, rng: np.random.Generator) -> EhTrace:
    lo = scenario.eh_mean * (1 - scenario.eh_alpha)
    hi = scenario.eh_mean * (1 + scenario.eh_alpha)
    psi = rng.uniform(lo, hi, size=(scenario.K, scenario.N_e))
    e_init = np.full(scenario.K, initial_energy(scenario))
    return EhTrace(psi=psi, e_init=e_init)


def constant_trace(scenario: Scenario, rate: Optional[float] = None) -> EhTrace:
    rate = scenario.eh_mean if rate is None else rate
    return EhTrace(psi=np.full((scenario.K, scenario.N_e), rate),
                   e_init=np.full(scenario.K, initial_energy(scenario)))


def cumulative_avg_rate(trace: EhTrace, k: int, j: int) -> float:
    """Mean harvest rate of relay ``k`` over EH intervals 1..j."""
    if not 1 <= j <= trace.N_e:
        raise IndexError(f"EH interval {j} outside 1..{trace.N_e}")
    return float(np.mean(trace.psi[k, :j]))


def cumulative_avg_rates(trace: EhTrace) -> np.ndarray:
    """K x N_e matrix whose column j-1 holds the cumulative averages up to interval j."""
    return np.cumsum(trace.psi, axis=1) / np.arange(1, trace.N_e + 1)


@dataclass
class EnergyLedger:
    """Stored energy of every relay at a block boundary."""

    available: np.ndarray
    block: int = 0  # number of completed blocks
    spent: np.ndarray = field(default=None)

    def __post_init__(self):
        self.available = np.asarray(self.available, dtype=float).copy()
        if self.spent is None:
            self.spent = np.zeros_like(self.available)

    @classmethod
    def start(cls, trace: EhTrace) -> "EnergyLedger":
        return cls(available=trace.e_init)

    def relay_stage(self, trace: EhTrace, scenario: Scenario) -> np.ndarray:
        """Energy available to each relay just before the relay stage of the next block."""
        j = self.block // scenario.N_c
        return self.available + trace.psi[:, j] * scenario.T_c / 2


def ledger_step(
    ledger: EnergyLedger,
    trace: EhTrace,
    scenario: Scenario,
    choices: Sequence[int],
    p_relay: np.ndarray,
) -> EnergyLedger:
    """Advance the ledger through one block.

    ``choices[m]`` is the relay serving pair ``m`` (or -1 for none) and
    ``p_relay`` the M x K relay power matrix. Half of the block's harvest
    is credited before the relay stage, the rest after it.
    """
    T_c = scenario.T_c
    rate = trace.psi[:, ledger.block // scenario.N_c]
    mid = ledger.available + rate * T_c / 2
    debit = np.zeros_like(mid)
    for m, k in enumerate(choices):
        if k >= 0:
            debit[k] += p_relay[m, k] * T_c / 2
    short = debit - mid
    if np.any(short > ENERGY_TOL):
        k = int(np.argmax(short))
        raise EnergyCausalityError(
            f"energy causality violation: relay {k} needs {debit[k]:.6g} J "
            f"but holds {mid[k]:.6g} J in block {ledger.block + 1}"
        )
    after = np.maximum(mid - debit, 0.0) + rate * T_c / 2
    return EnergyLedger(available=after, block=ledger.block + 1, spent=ledger.spent + debit)


def causality_violations(z: np.ndarray, p_relay: np.ndarray, trace: EhTrace,
                         scenario: Scenario, tol: float = ENERGY_TOL) -> int:
    """Count (relay, block-prefix) pairs breaking the cumulative energy constraint.

    Independent of :class:`EnergyLedger`: evaluates the prefix inequality
    directly from the selection tensor ``z`` (M x K x N). ``p_relay`` is
    either M x K or per block (M x K x N).
    """
    T_c = scenario.T_c
    rates = trace.block_rates(scenario.N_c)
    p_relay = np.asarray(p_relay, dtype=float)
    if p_relay.ndim == 2:
        p_relay = p_relay[:, :, None]
    use = np.einsum("mkn,mkn->kn", z.astype(float), np.broadcast_to(p_relay, z.shape)) * T_c / 2
    consumed = np.cumsum(use, axis=1)
    harvested = np.cumsum(rates, axis=1) * T_c - rates * T_c / 2
    budget = trace.e_init[:, None] + harvested
    return int(np.count_nonzero(consumed - budget > tol))
