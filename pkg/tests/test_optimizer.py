import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from ehrelay import lp
from ehrelay.feasibility import preselect, theorem1_check
from ehrelay.model import EhTrace, Scenario, compute_gains
from ehrelay.optimizer import (PolicyResult, ScenarioInfeasible, bisect_eta, eta_bounds,
                               greedy_policy, lp_bound, relaxed_schedule_lp)
from ehrelay.utility import AfUtility, af_success_snr
from conftest import random_instance
from oracles import schedule_min_eta


def _single(K=1, N_c=5, N_e=1, rate=0.2, pos=((50.0, 50.0),), **kw):
    sc = Scenario(K=K, N_c=N_c, N_e=N_e, **kw).with_relays(list(pos))
    tr = EhTrace(psi=np.full((K, N_e), rate), e_init=np.full(K, sc.p_max * sc.T_c / 2))
    return sc, tr, AfUtility(sc, compute_gains(sc))


def _is_step(probes):
    verdicts = [ok for _, ok in sorted(probes)]
    first = verdicts.index(True) if True in verdicts else len(verdicts)
    return all(not v for v in verdicts[:first]) and all(verdicts[first:])


def test_probe_log_is_two_phase():
    for seed in range(5):
        sc, tr, u = random_instance(seed, K=8)
        res = bisect_eta(sc, tr, utility=u)
        assert _is_step(res.probes)
        assert res.probes[-1][0] >= res.eta_star - 1e-4


def test_result_invariants():
    sc, tr, u = random_instance(1, M=2, K=6)
    res = bisect_eta(sc, tr, utility=u)
    assert res.method == "proposed"
    assert np.all(res.p_source == res.eta_star)
    assert np.all(res.p_relay <= sc.p_max)
    mask = res.p_relay > 0
    assert [np.flatnonzero(r).tolist() for r in mask] == res.candidate_sets
    assert np.all(u.value(res.eta_star, res.p_relay)[mask] >= sc.u_th - 1e-9)


def test_grid_oracle_single_relay_constant_harvest():
    sc, tr, u = _single()
    eps = 2e-3
    res = bisect_eta(sc, tr, utility=u, epsilon=eps)
    grid = np.arange(0.0, res.eta_star + 5 * eps, eps)[1:]
    ok = [theorem1_check(preselect(g, u), tr, sc) for g in grid]
    first = grid[ok.index(True)]
    assert abs(first - res.eta_star) <= eps + 1e-12


def test_halving_epsilon_moves_result_by_at_most_epsilon():
    sc, tr, u = random_instance(2, K=6)
    a = bisect_eta(sc, tr, utility=u, epsilon=1e-3).eta_star
    b = bisect_eta(sc, tr, utility=u, epsilon=5e-4).eta_star
    assert abs(a - b) <= 1e-3


def test_bracket_contains_result():
    sc, tr, u = random_instance(3, K=6)
    lo, hi = eta_bounds(u, tr)
    assert lo < hi
    assert bisect_eta(sc, tr, utility=u).eta_star >= lo


def test_infeasible_scenario_reports_reason():
    # relay-destination link far too weak for the harvest rate
    sc, tr, u = _single(rate=1e-4, pos=((1.0, 99.0),))
    with pytest.raises(ScenarioInfeasible, match="scenario infeasible at eta_U"):
        bisect_eta(sc, tr, utility=u)


def test_policy_json():
    sc, tr, u = random_instance(4, K=4)
    res = bisect_eta(sc, tr, utility=u)
    d = json.loads(res.to_json())
    assert d["method"] == "proposed" and d["eta_star"] == pytest.approx(res.eta_star)
    assert len(d["probes"]) == len(res.probes)
    g, _, _ = greedy_policy(sc, tr, utility=u)
    json.loads(g.to_json())


# --- greedy -----------------------------------------------------------------

def _needed_source_power(u, m, k, p_relay, target):
    a = u.snr_sr[m, k]
    b = u.snr_rd[m, k] * p_relay
    if math.exp(-u.gamma / b) <= target:
        return math.inf
    t = brentq(lambda t: af_success_snr(math.exp(t) * a, b, u.gamma) - target, -80, 80, xtol=1e-14)
    return math.exp(t)


def test_greedy_single_relay_hand_simulation():
    sc, tr, u = _single(N_c=3, rate=0.2, pos=((80.0, 50.0),))
    res, z, _ = greedy_policy(sc, tr, utility=u)
    energy = tr.e_init[0]
    expect = []
    for n in range(3):
        mid = energy + 0.2 * sc.T_c / 2
        p = min(sc.p_max, 2 * mid / sc.T_c)
        need = _needed_source_power(u, 0, 0, p, sc.u_th)
        expect.append(need)
        spent = p * sc.T_c / 2 if math.isfinite(need) else 0.0
        energy = mid - spent + 0.2 * sc.T_c / 2
    assert all(math.isfinite(e) for e in expect)
    assert z[0, 0].all()
    # peak power in block 1 leaves 1 mJ, so blocks 2 and 3 get 0.6 W then 0.4 W
    assert expect[0] < expect[1] < expect[2]
    assert res.eta_star == pytest.approx(max(expect), rel=1e-9)


def test_greedy_counts_unservable_blocks():
    sc, tr, u = _single(N_c=3, rate=1e-6, pos=((90.0, 50.0),))
    res, z, _ = greedy_policy(sc, tr, utility=u)
    assert res.extra["qos_infeasible_blocks"] >= 1
    assert math.isinf(res.eta_star) and math.isfinite(res.extra["eta_served"])
    assert res.extra["no_outage_ratio"] < 1


def test_greedy_schedule_respects_causality():
    from ehrelay.model import causality_violations

    sc, tr, u = random_instance(6, M=3, K=5)
    res, z, p_blocks = greedy_policy(sc, tr, utility=u)
    assert np.all(z.sum(axis=1) <= 1)
    assert causality_violations(z, p_blocks, tr, sc) == 0


def test_greedy_not_better_than_proposed_on_typical_traces():
    diffs = []
    for seed in range(20):
        sc, tr, u = random_instance(100 + seed, K=5)
        try:
            p = bisect_eta(sc, tr, utility=u).eta_star
        except ScenarioInfeasible:
            continue
        g, _, _ = greedy_policy(sc, tr, utility=u)
        diffs.append(g.eta_star - p)
    assert np.median(diffs) >= 0


def test_greedy_and_proposed_meet_when_energy_is_abundant():
    for seed in range(20):
        sc, tr, u = random_instance(200 + seed, K=5, eh_mean=50.0)
        p = bisect_eta(sc, tr, utility=u).eta_star
        g, _, _ = greedy_policy(sc, tr, utility=u)
        assert g.eta_star == pytest.approx(p, rel=0.02)


# --- LP bound -------------------------------------------------------------

def test_lp_bound_tight_for_one_block_one_relay():
    sc, tr, u = _single(N_c=1, N_e=1)
    eps = 1e-3
    res = lp_bound(sc, tr, utility=u, epsilon=eps)

    def p_hat_fn(eta):
        c = preselect(eta, u)
        return c.p_hat, c.mask

    grid = np.arange(res.eta_star - 20 * eps, res.eta_star + 2 * eps, eps)
    brute = schedule_min_eta(p_hat_fn, grid, tr, sc)
    assert brute is not None and abs(brute - res.eta_star) <= eps + 1e-12


def test_lp_bound_below_exhaustive_integral_schedules():
    sc, tr, u = _single(K=2, N_c=2, N_e=2, rate=0.01, pos=((40.0, 40.0), (60.0, 55.0)))
    eps = 1e-3
    bound = lp_bound(sc, tr, utility=u, epsilon=eps).eta_star

    def p_hat_fn(eta):
        c = preselect(eta, u)
        return c.p_hat, c.mask

    grid = np.arange(max(bound - 10 * eps, eps), bound + 3.0, eps)
    brute = schedule_min_eta(p_hat_fn, grid, tr, sc)
    assert brute is not None and brute >= bound - eps


def test_lp_bound_dominated_by_proposed():
    for seed in range(6):
        sc, tr, u = random_instance(300 + seed, M=1 + seed % 2, K=5)
        try:
            p = bisect_eta(sc, tr, utility=u).eta_star
        except ScenarioInfeasible:
            continue
        assert lp_bound(sc, tr, utility=u).eta_star <= p + 1e-4


def test_relaxed_lp_matches_pooled_prefix_condition():
    # one pair: the relaxed schedule exists iff pooled normalised budgets cover every prefix
    for seed in range(40):
        rng = np.random.default_rng(seed)
        sc, tr, u = random_instance(400 + seed, K=int(rng.integers(1, 5)), N_c=3, N_e=3)
        c = preselect(float(rng.uniform(0.1, 3)), u)
        if not c.usable:
            continue
        rates = tr.block_rates(sc.N_c)
        budget = tr.e_init[:, None] + np.cumsum(rates, 1) * sc.T_c - rates * sc.T_c / 2
        sel = c.mask[0]
        pooled = (budget[sel] / (c.p_hat[0, sel, None] * sc.T_c / 2)).sum(0)
        expect = bool(np.all(pooled >= np.arange(1, sc.N + 1) - 1e-9))
        assert lp.feasible(relaxed_schedule_lp(c, tr, sc)).feasible == expect


def test_lp_bound_size_cap():
    sc, tr, u = random_instance(5, K=10, N_c=2000, N_e=6)
    with pytest.raises(ValueError, match="bound requires desk-scale N"):
        lp_bound(sc, tr, utility=u)
