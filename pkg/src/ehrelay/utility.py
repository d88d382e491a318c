"""Successful-transmission probability over Rayleigh fading, and its inverses.

The relayed link uses the two-hop amplify-and-forward closed form built on
the harmonic-mean SNR bound ``g1*g2/(g1+g2)`` with exponentially distributed
hop SNRs; its survival function involves the modified Bessel function K1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EhTrace, Gains, Scenario

EULER_GAMMA = 0.5772156649015329

# absolute tolerance (watts) of the relay-power bisection
RELAY_POWER_TOL = 1e-9
XK1_CUTOFF = 700.0


class NotCandidateError(ValueError):
    """Target utility cannot be reached even at peak relay power."""


# --------------------------------------------------------------------------
# Bessel K1
# --------------------------------------------------------------------------

def _xk1_series(x: np.ndarray) -> np.ndarray:
    # x*K1(x) from the ascending series; accurate for 0 < x <= 2
    t = x * x / 4
    term = np.ones_like(x)
    i1 = np.zeros_like(x)
    s = np.zeros_like(x)
    psi1, psi2 = -EULER_GAMMA, 1.0 - EULER_GAMMA
    for k in range(30):
        i1 += term
        s += (psi1 + psi2) * term
        term = term * t / ((k + 1) * (k + 2))
        psi1 += 1.0 / (k + 1)
        psi2 += 1.0 / (k + 2)
        # sums start at 1 and terms shrink monotonically, so this bounds the tail
        if not np.any(term * (psi1 + psi2 + 1.0) > 1e-17):
            break
    i1 *= x / 2
    return 1.0 + x * np.log(x / 2) * i1 - x * x / 4 * s


def _k1_steed(x: np.ndarray, eps: float = 1e-16, maxit: int = 500) -> np.ndarray:
    # Steed's continued fraction (Temme's normalisation), x > 2
    b = 2 * (1 + x)
    d = 1 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25
    q = np.full_like(x, a1)
    c = a1
    a = -a1
    s = 1 + q * delh
    for i in range(2, maxit):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2
        d = 1 / (b + a * d)
        delh = (b * d - 1) * delh
        h = h + delh
        dels = q * delh
        s = s + dels
        if np.all(np.abs(dels / s) < eps):
            break
    k0 = np.sqrt(np.pi / (2 * x)) * np.exp(-x) / s
    return k0 * (x + 0.5 - a1 * h) / x


def bessel_k1(x):
    """Modified Bessel function of the second kind, order 1, for x > 0."""
    arr = np.asarray(x, dtype=float)
    out = np.empty_like(arr)
    flat, res = arr.reshape(-1), out.reshape(-1)
    if np.any(flat <= 0):
        raise ValueError("bessel_k1 requires x > 0")
    small = flat <= 2
    if small.any():
        xs = flat[small]
        res[small] = _xk1_series(xs) / xs
    if (~small).any():
        res[~small] = _k1_steed(flat[~small])
    return out if arr.ndim else float(out)


def _xk1(x: np.ndarray) -> np.ndarray:
    """x*K1(x) with the x -> 0 limit of 1."""
    out = np.ones_like(x)
    pos = x > 0
    small = pos & (x <= 2)
    # beyond this x*K1(x) < 1e-300; treat as zero rather than underflow
    large = (x > 2) & (x <= XK1_CUTOFF)
    out[x > XK1_CUTOFF] = 0.0
    if small.any():
        out[small] = _xk1_series(x[small])
    if large.any():
        out[large] = x[large] * _k1_steed(x[large])
    return out


# --------------------------------------------------------------------------
# Forward utilities
# --------------------------------------------------------------------------

def mean_snr(power, gain, scenario: Scenario):
    return np.asarray(power) * np.asarray(gain) / scenario.noise_power


def direct_success(p_src: float, gain: float, scenario: Scenario) -> float:
    if gain <= 0:
        return 0.0
    return math.exp(-scenario.gamma_th * scenario.noise_power / (p_src * gain))


def direct_source_power(gain: float, scenario: Scenario, target: float | None = None) -> float:
    """Source power at which the unassisted link just meets ``target``."""
    target = scenario.u_th if target is None else target
    return scenario.gamma_th * scenario.noise_power / (gain * math.log(1.0 / target))


@dataclass
class LinkStats:
    """Average received SNRs (linear) of the three links of one pair/relay combination."""

    mean_snr_sr: float
    mean_snr_rd: float
    mean_snr_sd: float = 0.0

    @classmethod
    def at(cls, p_src, p_relay, g_sr, g_rd, scenario: Scenario, g_sd: float = 0.0) -> "LinkStats":
        return cls(float(mean_snr(p_src, g_sr, scenario)),
                   float(mean_snr(p_relay, g_rd, scenario)),
                   float(mean_snr(p_src, g_sd, scenario)))


def af_success_snr(snr1, snr2, gamma_th: float):
    """Vectorised closed-form success probability from the two hop mean SNRs."""
    g1 = np.asarray(snr1, dtype=float)
    g2 = np.asarray(snr2, dtype=float)
    g1, g2 = np.broadcast_arrays(g1, g2)
    out = np.zeros(g1.shape)
    ok = (g1 > 0) & (g2 > 0)
    if gamma_th <= 0:
        out[ok] = 1.0
        return out if out.ndim else float(out)
    a, b = g1[ok], g2[ok]
    x = 2 * gamma_th / np.sqrt(a * b)
    val = _xk1(x) * np.exp(-gamma_th * (1 / a + 1 / b))
    out[ok] = np.clip(val, 0.0, 1.0)
    return out if out.ndim else float(out)


def af_success_closed(stats: LinkStats, gamma_th: float) -> float:
    return float(af_success_snr(stats.mean_snr_sr, stats.mean_snr_rd, gamma_th))


def af_success_mc(stats: LinkStats, gamma_th: float, n_draws: int,
                  rng: np.random.Generator, snr: str = "exact") -> float:
    """Monte Carlo success frequency under Rayleigh fading.

    ``snr="exact"`` uses the true AF end-to-end SNR ``g1*g2/(g1+g2+1)``;
    ``snr="harmonic"`` uses the bound the closed form is built on.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    if stats.mean_snr_sr <= 0 or stats.mean_snr_rd <= 0:
        return 0.0 if gamma_th > 0 else 1.0
    g1 = rng.exponential(stats.mean_snr_sr, n_draws)
    g2 = rng.exponential(stats.mean_snr_rd, n_draws)
    extra = {"exact": 1.0, "harmonic": 0.0}[snr]
    e2e = g1 * g2 / (g1 + g2 + extra)
    return float(np.mean(e2e >= gamma_th))


# --------------------------------------------------------------------------
# Pair/relay utility matrix and its inverses
# --------------------------------------------------------------------------

def solve_source_power(snr_sr_per_watt, snr_rd, gamma_th: float, target: float,
                       rtol: float = 1e-12) -> np.ndarray:
    """Invert the AF success probability in the source power.

    ``snr_sr_per_watt`` is the source-relay SNR per watt of source power and
    ``snr_rd`` the (fixed) relay-destination mean SNR. Entries with no
    finite solution are ``inf``.
    """
    a = np.asarray(snr_sr_per_watt, dtype=float)
    g2 = np.broadcast_to(np.asarray(snr_rd, dtype=float), a.shape)
    out = np.full(a.shape, np.inf)
    with np.errstate(divide="ignore"):
        ceiling = np.where(g2 > 0, np.exp(-gamma_th / np.where(g2 > 0, g2, 1.0)), 0.0)
    feasible = (ceiling > target) & (a > 0)
    if not feasible.any():
        return out
    a, g2 = a[feasible], g2[feasible]

    def u(s):
        return af_success_snr(s * a, g2, gamma_th)

    # U <= exp(-gamma / snr1), so below this power the target is missed
    lo = gamma_th / (a * math.log(1.0 / target))
    f_lo = u(lo) - target
    hi = lo * 2
    f_hi = u(hi) - target
    for _ in range(2000):
        short = f_hi < 0
        if not short.any():
            break
        lo, f_lo = np.where(short, hi, lo), np.where(short, f_hi, f_lo)
        hi = np.where(short, hi * 2, hi)
        f_hi = np.where(short, u(hi) - target, f_hi)
    closed = f_lo >= 0
    hi = np.where(closed, lo, hi)
    out[feasible] = _illinois(lambda s: u(s) - target, lo, hi, f_lo, f_hi, closed, rtol * lo)
    return out


# consecutive moves of one bracket end before a midpoint probe is forced
_SECANT_STREAK = 4


def _illinois(f, lo, hi, f_lo, f_hi, closed, tol, maxit: int = 500) -> np.ndarray:
    """Vectorised Illinois root bracketing for increasing ``f`` with ``f(lo) < 0 <= f(hi)``.

    Returns ``hi`` once ``hi - lo <= tol`` everywhere not already ``closed``;
    probes are kept at least ``tol/2`` inside the bracket so both ends move.
    After several moves of the same end the next probe is the midpoint, which
    bounds the work even where ``f`` is flat to rounding.
    """
    lo, hi = lo.astype(float), hi.astype(float)
    f_lo, f_hi = f_lo.astype(float), f_hi.astype(float)
    last = np.zeros(lo.shape, dtype=np.int8)
    streak = np.zeros(lo.shape, dtype=np.int64)
    for _ in range(maxit):
        open_ = ~closed & (hi - lo > tol)
        if not open_.any():
            return hi
        with np.errstate(divide="ignore", invalid="ignore"):
            x = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        x = np.where(np.isfinite(x) & (streak < _SECANT_STREAK), x, 0.5 * (lo + hi))
        x = np.minimum(np.maximum(x, lo + tol / 2), hi - tol / 2)
        x = np.where(open_, x, hi)
        fx = f(x)
        up = open_ & (fx >= 0)
        down = open_ & ~(fx >= 0)
        # an end that survives two rounds in a row gets its weight halved
        f_lo = np.where(up & (last == 1), f_lo / 2, f_lo)
        f_hi = np.where(down & (last == -1), f_hi / 2, f_hi)
        hi, f_hi = np.where(up, x, hi), np.where(up, fx, f_hi)
        lo, f_lo = np.where(down, x, lo), np.where(down, fx, f_lo)
        side = np.where(up, 1, np.where(down, -1, last)).astype(np.int8)
        streak = np.where(side == last, streak + 1, 1) * (streak < _SECANT_STREAK)
        last = side
    raise RuntimeError("root bracketing did not converge")


class AfUtility:
    """Success probability ``U[m, k](p_src, p_relay)`` for every pair/relay combination.

    This is the only place the rest of the package touches the QoS metric,
    so a different monotone utility can be dropped in by providing the same
    methods.
    """

    def __init__(self, scenario: Scenario, gains: Gains):
        self.scenario = scenario
        self.gains = gains
        self.snr_sr = gains.sr / scenario.noise_power  # SNR per watt
        self.snr_rd = gains.rd / scenario.noise_power
        self.gamma = scenario.gamma_th

    def value(self, p_src, p_relay) -> np.ndarray:
        return af_success_snr(np.asarray(p_src) * self.snr_sr,
                              np.asarray(p_relay) * self.snr_rd, self.gamma)

    def limit_source_inf(self, p_relay) -> np.ndarray:
        """Utility as the source power grows without bound."""
        g2 = np.asarray(p_relay) * self.snr_rd
        with np.errstate(divide="ignore"):
            return np.where(g2 > 0, np.exp(-self.gamma / np.where(g2 > 0, g2, 1.0)), 0.0)

    def min_relay_power(self, eta: float, target: float | None = None):
        """Smallest relay powers in [0, p_max] meeting ``target`` at source power ``eta``.

        Returns ``(p_hat, reachable)``; ``p_hat`` is zero where the target is
        out of reach at peak power.
        """
        sc = self.scenario
        target = sc.u_th if target is None else target
        shape = self.snr_sr.shape
        top = self.value(eta, sc.p_max) - target
        reachable = top >= 0
        if not reachable.any():
            return np.zeros(shape), reachable
        # U <= exp(-gamma / snr_rd), which gives a valid lower end
        with np.errstate(divide="ignore"):
            lo = np.minimum(self.gamma / (self.snr_rd * math.log(1.0 / target)), sc.p_max)
        lo = np.where(reachable, lo, 0.0)
        hi = np.full(shape, float(sc.p_max))
        f_lo = self.value(eta, lo) - target
        closed = ~reachable | (f_lo >= 0)
        hi = np.where(f_lo >= 0, lo, hi)
        hi = _illinois(lambda p: self.value(eta, p) - target, lo, hi, f_lo, top, closed,
                       RELAY_POWER_TOL)
        return np.where(reachable, hi, 0.0), reachable

    def min_source_power(self, p_relay, target: float | None = None) -> np.ndarray:
        """Smallest source powers meeting ``target`` with the given relay powers.

        ``inf`` marks combinations where no finite source power suffices.
        """
        target = self.scenario.u_th if target is None else target
        p_relay = np.broadcast_to(np.asarray(p_relay, dtype=float), self.snr_sr.shape)
        return solve_source_power(self.snr_sr, self.snr_rd * p_relay, self.gamma, target)

    def source_lower_bounds(self) -> np.ndarray:
        """Per (m, k) source power meeting the target with the relay at peak power (0 if none)."""
        s = self.min_source_power(self.scenario.p_max)
        return np.where(np.isfinite(s), s, 0.0)

    def source_upper_reciprocals(self, trace: EhTrace) -> np.ndarray:
        """M x K x N_e reciprocals of the source power needed with each relay at its EH rate (0 if none)."""
        M, K = self.snr_sr.shape
        out = np.zeros((M, K, trace.N_e))
        for j in range(trace.N_e):
            s = self.min_source_power(trace.psi[:, j][None, :])
            out[:, :, j] = np.where(np.isfinite(s), 1.0 / s, 0.0)
        return out


def inverse_relay_power(p_src: float, k: int, m: int, utility: AfUtility,
                        target: float | None = None) -> float:
    p_hat, ok = utility.min_relay_power(p_src, target)
    if not ok[m, k]:
        raise NotCandidateError(f"relay {k} cannot meet the target for pair {m} at source power {p_src}")
    return float(p_hat[m, k])


def inverse_source_power_lower(utility: AfUtility) -> float:
    """Bisection lower bound with relays at peak power.

    For each pair take the cheapest reachable relay, then the worst pair.
    Below this value some pair has no relay able to meet the target.
    ``inf`` if some pair cannot be served at all.
    """
    lower = utility.source_lower_bounds()
    per_pair = np.where(lower > 0, lower, np.inf).min(axis=1)
    return float(np.max(per_pair))


def inverse_source_power_upper(utility: AfUtility, trace: EhTrace) -> float:
    """Bisection upper bound from relays transmitting at their EH rates.

    Combinations with no solution carry a zero reciprocal; relays where every
    combination is zero are skipped when taking the minimum over relays. The
    result is ``inf`` if no relay can help at its EH rate.
    """
    rec = utility.source_upper_reciprocals(trace)
    per_relay = rec.max(axis=(0, 2))
    usable = per_relay[per_relay > 0]
    if usable.size == 0:
        return math.inf
    return float(1.0 / usable.min())
