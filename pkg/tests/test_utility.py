import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from ehrelay.model import EhTrace, Gains, Scenario
from ehrelay.utility import (AfUtility, LinkStats, NotCandidateError, af_success_closed,
                             af_success_mc, af_success_snr, bessel_k1, direct_source_power,
                             direct_success, inverse_relay_power, inverse_source_power_lower,
                             inverse_source_power_upper, solve_source_power)


@pytest.mark.parametrize("x", [1e-8, 1e-3, 0.1, 0.5, 1.0, 1.999, 2.0, 2.001, 3.7, 10.0, 50.0, 300.0])
def test_bessel_k1_against_scipy(x):
    assert bessel_k1(x) == pytest.approx(scipy.special.k1(x), rel=1e-10)


def test_bessel_k1_dense_sweep():
    x = np.logspace(-6, 2.5, 2000)
    assert np.max(np.abs(bessel_k1(x) / scipy.special.k1(x) - 1)) < 1e-10


def test_bessel_k1_domain():
    with pytest.raises(ValueError):
        bessel_k1(0.0)


# --- direct link ----------------------------------------------------------

def test_direct_success_anchor():
    sc = Scenario()
    assert direct_success(0.995, 1e-8, sc) == pytest.approx(0.99, abs=1e-4)


def test_direct_success_limits():
    sc = Scenario()
    assert direct_success(1e12, 1e-8, sc) == pytest.approx(1.0)
    assert direct_success(1.0, 0.0, sc) == 0.0
    half = 1e-10 / (1e-8 * math.log(2))
    assert direct_success(half, 1e-8, sc) == pytest.approx(0.5, rel=1e-12)


@given(st.floats(1e-12, 1e-4), st.floats(0.05, 0.999))
def test_direct_inversion_round_trip(gain, target):
    sc = Scenario()
    p = direct_source_power(gain, sc, target)
    assert float(f"{direct_success(p, gain, sc):.6g}") == float(f"{target:.6g}")


# --- AF closed form ---------------------------------------------------------

def test_af_symmetry():
    a = af_success_snr(30.0, 70.0, 1.0)
    b = af_success_snr(70.0, 30.0, 1.0)
    assert a == pytest.approx(b, rel=1e-14)


def test_af_broken_second_hop():
    assert af_success_snr(100.0, 1e-9, 1.0) == pytest.approx(0.0, abs=1e-300)
    assert af_success_snr(100.0, 0.0, 1.0) == 0.0
    assert af_success_snr(-1.0, 10.0, 1.0) == 0.0


def test_af_zero_threshold_always_succeeds():
    assert af_success_snr(1.0, 1.0, 0.0) == 1.0


def test_af_matches_numerical_integral():
    # P(min-type harmonic statistic >= g) integrated directly over the first hop
    from scipy.integrate import quad

    g1, g2, g = 8.0, 20.0, 1.0

    def integrand(x):
        # x * y / (x + y) >= g  <=>  y >= g x / (x - g) for x > g
        return math.exp(-x / g1) / g1 * math.exp(-g * x / ((x - g) * g2))

    val = quad(integrand, g, 10 * g)[0] + quad(integrand, 10 * g, math.inf)[0]
    assert af_success_snr(g1, g2, g) == pytest.approx(val, rel=1e-8)


def test_af_monotone_on_log_grid():
    p = np.logspace(-3, 2, 100)
    S, R = np.meshgrid(p, p, indexing="ij")
    u = af_success_snr(S * 50, R * 30, 1.0)
    assert np.all(np.diff(u, axis=0) >= -1e-12)
    assert np.all(np.diff(u, axis=1) >= -1e-12)


def test_mc_single_draw_below_threshold():
    # tiny mean SNRs make any single draw fall below the threshold
    assert af_success_mc(LinkStats(1e-9, 1e-9), 1.0, 1, np.random.default_rng(0)) == 0.0


def test_mc_zero_threshold():
    assert af_success_mc(LinkStats(1.0, 1.0), 0.0, 1000, np.random.default_rng(0)) == 1.0


def test_mc_regression_fixture():
    # recorded with seed 0: 0.97853 at one million draws
    s = LinkStats(100.0, 100.0)
    for seed in (0, 1, 2):
        assert abs(af_success_mc(s, 1.0, 10**6, np.random.default_rng(seed)) - 0.97853) <= 0.005


def test_closed_form_upper_bounds_exact_snr():
    rng = np.random.default_rng(5)
    n = 200_000
    for g1, g2 in [(3.0, 3.0), (10.0, 40.0), (100.0, 5.0)]:
        s = LinkStats(g1, g2)
        mc = af_success_mc(s, 1.0, n, rng)
        sigma = math.sqrt(mc * (1 - mc) / n)
        assert af_success_closed(s, 1.0) >= mc - 3 * sigma


def test_link_stats_at():
    s = LinkStats.at(2.0, 0.5, 1e-8, 4e-8, Scenario())
    assert (s.mean_snr_sr, s.mean_snr_rd) == pytest.approx((200.0, 200.0))


# --- inverses -------------------------------------------------------------

def _utility(g_sr=(1e-7, 4e-8), g_rd=(1e-7, 2e-8)):
    sc = Scenario(K=len(g_sr))
    gains = Gains(sr=np.array([g_sr]), rd=np.array([g_rd]), sd=np.array([1e-8]))
    return sc, AfUtility(sc, gains)


def test_inverse_relay_power_tolerance():
    sc, u = _utility()
    p = inverse_relay_power(2.0, 0, 0, u)
    assert u.value(2.0, p)[0, 0] >= sc.u_th
    assert u.value(2.0, p - 2e-9)[0, 0] < sc.u_th


def test_inverse_relay_power_boundary_at_peak():
    sc, u = _utility()
    target = float(u.value(2.0, sc.p_max)[0, 0]) - 1e-12
    assert inverse_relay_power(2.0, 0, 0, u, target) == pytest.approx(sc.p_max, abs=1e-8)


def test_inverse_relay_power_not_candidate():
    _, u = _utility()
    with pytest.raises(NotCandidateError, match="cannot meet"):
        inverse_relay_power(0.001, 1, 0, u)


def test_inverse_relay_power_decreases_with_better_channel():
    _, weak = _utility(g_rd=(5e-8, 5e-8))
    _, strong = _utility(g_rd=(1e-7, 1e-7))
    p_weak = inverse_relay_power(2.0, 0, 0, weak)
    p_strong = inverse_relay_power(2.0, 0, 0, strong)
    assert p_strong < p_weak
    # grid oracle: the forward utility at the grid point just above p_strong still meets the target
    grid = np.linspace(0, 2, 20001)
    u = af_success_snr(2.0 * strong.snr_sr[0, 0], grid * strong.snr_rd[0, 0], 1.0)
    first = grid[np.argmax(u >= 0.99)]
    assert abs(first - p_strong) <= 1e-4


@settings(max_examples=60)
@given(st.floats(1e-9, 1e-6), st.floats(1e2, 1e5), st.floats(0.5, 0.999))
def test_solve_source_power_round_trip(gain, snr_rd, target):
    a = gain / 1e-10
    s = float(solve_source_power(a, snr_rd, 1.0, target))
    if math.exp(-1.0 / snr_rd) <= target:
        assert math.isinf(s)
        return
    log_ref = brentq(lambda t: af_success_snr(math.exp(t) * a, snr_rd, 1.0) - target, -80, 80,
                     xtol=1e-13, rtol=1e-15)
    ref = math.exp(log_ref)
    assert s == pytest.approx(ref, rel=1e-9)


def test_source_lower_round_trip():
    sc, u = _utility()
    eta_l = inverse_source_power_lower(u)
    lower = u.source_lower_bounds()
    # max over pairs of the cheapest relay; single pair here
    assert eta_l == pytest.approx(lower[0].min())
    k = int(np.argmin(lower[0]))
    assert u.value(eta_l, sc.p_max)[0, k] == pytest.approx(sc.u_th, abs=1e-9)


def test_lower_bound_takes_worst_pair_of_best_relays():
    sc = Scenario(M=2, K=2)
    gains = Gains(sr=np.array([[1e-7, 1e-8], [1e-8, 1e-7]]),
                  rd=np.array([[1e-7, 1e-7], [1e-7, 1e-7]]), sd=np.array([1e-8, 1e-8]))
    u = AfUtility(sc, gains)
    lower = u.source_lower_bounds()
    assert inverse_source_power_lower(u) == pytest.approx(max(lower[0].min(), lower[1].min()))
    assert inverse_source_power_lower(u) < lower.max()


def test_footnote_relay_reports_zero():
    sc = Scenario(K=2)
    gains = Gains(sr=np.array([[1e-7, 1e-7]]), rd=np.array([[1e-7, 1e-30]]), sd=np.array([1e-8]))
    u = AfUtility(sc, gains)
    assert u.source_lower_bounds()[0, 1] == 0.0
    tr = EhTrace(psi=[[0.5] * 5, [0.5] * 5], e_init=[0.01, 0.01])
    assert np.all(u.source_upper_reciprocals(tr)[0, 1] == 0.0)


def test_upper_bound_singleton():
    sc = Scenario(K=1, N_e=1)
    gains = Gains(sr=np.array([[1e-7]]), rd=np.array([[1e-7]]), sd=np.array([1e-8]))
    u = AfUtility(sc, gains)
    tr = EhTrace(psi=[[0.5]], e_init=[0.01])
    rec = u.source_upper_reciprocals(tr)[0, 0, 0]
    assert inverse_source_power_upper(u, tr) == pytest.approx(1.0 / rec)
    assert u.value(1.0 / rec, 0.5)[0, 0] == pytest.approx(sc.u_th, abs=1e-9)


def test_upper_bound_inf_when_no_relay_helps():
    sc = Scenario(K=1, N_e=1)
    gains = Gains(sr=np.array([[1e-7]]), rd=np.array([[1e-9]]), sd=np.array([1e-8]))
    u = AfUtility(sc, gains)
    assert math.isinf(inverse_source_power_upper(u, EhTrace(psi=[[0.01]], e_init=[0.01])))


def test_root_bracketing_survives_flat_function():
    from ehrelay.utility import _illinois

    # zero on the whole upper part of the bracket; a pure secant step would crawl
    f = lambda x: np.where(x >= 1.0, 0.0, -1e-70)
    lo, hi = np.array([0.0, 0.5]), np.array([1e4, 3.0])
    out = _illinois(f, lo, hi, f(lo), f(hi), np.zeros(2, bool), 1e-8)
    assert np.all(out >= 1.0) and np.all(out - 1.0 <= 1e-8)
