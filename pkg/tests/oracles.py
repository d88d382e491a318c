"""Brute-force reference solvers used only by the tests."""

import itertools

import numpy as np

from ehrelay.lp import LpProblem


def _constraints(p: LpProblem):
    """All rows and finite bounds as (a, b) pairs for a . x = b when active."""
    A, senses, b = p.matrix()
    cons = [(a, rhs, s) for a, s, rhs in zip(A, senses, b)]
    eye = np.eye(p.n_vars)
    for j in range(p.n_vars):
        if np.isfinite(p.lb[j]):
            cons.append((eye[j], p.lb[j], ">="))
        if np.isfinite(p.ub[j]):
            cons.append((eye[j], p.ub[j], "<="))
    return cons


def vertices(p: LpProblem, tol: float = 1e-9):
    """Every basic feasible solution of a pointed polyhedron (batched solves)."""
    cons = _constraints(p)
    n = p.n_vars
    A = np.array([c[0] for c in cons])
    b = np.array([c[1] for c in cons])
    eq = [i for i, c in enumerate(cons) if c[2] == "="]
    other = [i for i in range(len(cons)) if i not in eq]
    if len(eq) > n:
        raise ValueError("more equalities than variables; oracle not needed here")
    picks = [tuple(eq) + c for c in itertools.combinations(other, n - len(eq))]
    if not picks:
        return np.zeros((0, n))
    idx = np.array(picks)
    M = A[idx]
    rhs = b[idx]
    det = np.linalg.det(M)
    ok = np.abs(det) > 1e-10
    if not ok.any():
        return np.zeros((0, n))
    X = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    scale = np.maximum(np.abs(A).max(axis=1), 1e-300)
    r = (X @ A.T - b) / scale
    viol = np.zeros_like(r)
    for i, c in enumerate(cons):
        viol[:, i] = -r[:, i] if c[2] == ">=" else r[:, i] if c[2] == "<=" else np.abs(r[:, i])
    return X[viol.max(axis=1) <= tol]


def feasible_by_vertices(p: LpProblem) -> bool:
    """Exact for bounded feasible regions (a nonempty polytope has a vertex)."""
    return len(vertices(p)) > 0


def min_by_vertices(p: LpProblem):
    V = vertices(p)
    if len(V) == 0:
        return None
    return float(np.min(V @ p.c))


def feasible_on_grid(p: LpProblem, resolution: int = 20) -> bool:
    """True if some point of the 1/resolution grid on the unit box satisfies every row."""
    axes = [np.linspace(0, 1, resolution + 1)] * p.n_vars
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, p.n_vars)
    A, senses, b = p.matrix()
    good = np.ones(len(pts), dtype=bool)
    vals = pts @ A.T
    for i, s in enumerate(senses):
        if s == "<=":
            good &= vals[:, i] <= b[i] + 1e-12
        elif s == ">=":
            good &= vals[:, i] >= b[i] - 1e-12
        else:
            good &= np.abs(vals[:, i] - b[i]) <= 1e-12
    return bool(good.any())


def random_box_lp(rng, n_vars: int, n_rows: int, with_eq: bool = False) -> LpProblem:
    """Random rows over the unit box, tuned so roughly half the instances are feasible."""
    p = LpProblem(n_vars, lb=np.zeros(n_vars), ub=np.ones(n_vars))
    for i in range(n_rows):
        a = rng.normal(size=n_vars)
        sense = "=" if with_eq and i == 0 else ("<=" if rng.random() < 0.5 else ">=")
        centre = a @ rng.uniform(0, 1, n_vars)
        p.add_row(a, sense, centre + rng.normal(scale=0.6 * np.abs(a).sum()) * (sense != "="))
    return p


def schedule_min_eta(p_hat_fn, etas, trace, scenario):
    """Smallest eta on a grid for which some integral single-pair schedule exists (exhaustive)."""
    import itertools as it

    from ehrelay.model import EhTrace  # noqa: F401 - documents the argument type

    T_c = scenario.T_c
    rates = trace.block_rates(scenario.N_c)
    budget = trace.e_init[:, None] + np.cumsum(rates, axis=1) * T_c - rates * T_c / 2
    K, N = rates.shape
    for eta in etas:
        p_hat, mask = p_hat_fn(eta)
        cands = np.flatnonzero(mask[0])
        if cands.size == 0:
            continue
        for sched in it.product(cands, repeat=N):
            use = np.zeros((K, N))
            for n, k in enumerate(sched):
                use[k, n] = p_hat[0, k] * T_c / 2
            if np.all(np.cumsum(use, axis=1) <= budget + 1e-15):
                return eta
    return None
