"""Dense linear-program feasibility and minimisation.

The default solver is a two-phase tableau simplex using Bland's rule, which
is small, deterministic and guaranteed to terminate. Problems above
``SIMPLEX_MAX_CELLS`` tableau entries are handed to HiGHS (through
scipy) instead; both paths return witnesses checked against the original
rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-11
MAX_PIVOTS = 10**6
SIMPLEX_MAX_CELLS = 40_000

SENSES = ("<=", ">=", "=")


class SolverStall(RuntimeError):
    """Pivot limit reached before the simplex finished."""


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray] = None
    value: Optional[float] = None
    pivots: int = 0

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "unbounded")


@dataclass
class LpProblem:
    """``rows`` are ``(coeffs, sense, rhs)`` with dense coefficient vectors."""

    n_vars: int
    rows: list = field(default_factory=list)
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    names: Optional[list] = None

    def __post_init__(self):
        if self.lb is None:
            self.lb = np.zeros(self.n_vars)
        if self.ub is None:
            self.ub = np.full(self.n_vars, np.inf)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)

    def add_row(self, coeffs, sense: str, rhs: float) -> None:
        if sense not in SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        if isinstance(coeffs, dict):
            vec = np.zeros(self.n_vars)
            for i, v in coeffs.items():
                vec[i] += v
        else:
            vec = np.asarray(coeffs, dtype=float)
            if vec.shape != (self.n_vars,):
                raise ValueError(f"row has {vec.shape} coefficients, expected {self.n_vars}")
        self.rows.append((vec, sense, float(rhs)))

    def add_rows(self, matrix, sense: str, rhs) -> None:
        matrix = np.asarray(matrix, dtype=float)
        for vec, b in zip(matrix, np.broadcast_to(rhs, (matrix.shape[0],))):
            self.add_row(vec.copy(), sense, b)

    def matrix(self):
        if not self.rows:
            return np.zeros((0, self.n_vars)), [], np.zeros(0)
        A = np.vstack([r[0] for r in self.rows])
        return A, [r[1] for r in self.rows], np.array([r[2] for r in self.rows])

    def residuals(self, x) -> np.ndarray:
        """Violation of every row, each row scaled to unit max coefficient, plus bound violations."""
        x = np.asarray(x, dtype=float)
        A, senses, b = self.matrix()
        viol = []
        for a, s, rhs in zip(A, senses, b):
            scale = max(np.max(np.abs(a)), 1e-300)
            r = (a @ x - rhs) / scale
            viol.append(max(-r, 0.0) if s == ">=" else max(r, 0.0) if s == "<=" else abs(r))
        viol.extend(np.maximum(self.lb - x, 0.0))
        viol.extend(np.maximum(x - self.ub, 0.0))
        return np.asarray(viol)

    def satisfied_by(self, x, tol: float = FEAS_TOL) -> bool:
        r = self.residuals(x)
        return bool(r.size == 0 or r.max() <= tol)


# --------------------------------------------------------------------------
# Standard form
# --------------------------------------------------------------------------

def _standard_form(p: LpProblem):
    """Rewrite as ``A y = b, y >= 0`` with ``b >= 0``.

    Returns ``(A, b, needs_art, recover, lift_cost, n_struct)``: ``needs_art``
    marks rows without a ready basic slack, ``recover`` maps the structural
    part of ``y`` back to ``x`` and ``lift_cost`` maps an objective over
    ``x`` onto the structural columns. ``None`` means a constant row is
    already violated.
    """
    n = p.n_vars
    lb, ub = p.lb, p.ub
    free = ~np.isfinite(lb)
    # x = lb + y+  (finite lb)   or   x = y+ - y-   (free)
    cols = n + int(free.sum())
    neg_index = np.full(n, -1)
    neg_index[free] = n + np.arange(int(free.sum()))
    shift = np.where(free, 0.0, lb)

    def expand(a):
        out = np.zeros(cols)
        out[:n] = a
        out[neg_index[free]] = -a[free]
        return out

    rows, senses, rhs = [], [], []
    for a, s, b in p.rows:
        rows.append(expand(a))
        senses.append(s)
        rhs.append(b - a @ shift)
    for j in np.flatnonzero(np.isfinite(ub)):
        a = np.zeros(n)
        a[j] = 1.0
        rows.append(expand(a))
        senses.append("<=")
        rhs.append(ub[j] - shift[j])

    A = np.array(rows).reshape(len(rows), cols)
    b = np.array(rhs, dtype=float)
    # unit max coefficient per row, so tolerances mean the same thing for every row
    trivial = []
    for i in range(len(rows)):
        scale = np.max(np.abs(A[i])) if cols else 0.0
        if scale == 0:
            trivial.append(i)
            continue
        A[i] /= scale
        b[i] /= scale
    for i in trivial:
        s, v = senses[i], b[i]
        if (s == "<=" and v < -FEAS_TOL) or (s == ">=" and v > FEAS_TOL) or (s == "=" and abs(v) > FEAS_TOL):
            return None
    keep = [i for i in range(len(rows)) if i not in set(trivial)]
    A, b = A[keep], b[keep]
    senses = [senses[i] for i in keep]

    n_slack = sum(s != "=" for s in senses)
    S = np.zeros((len(keep), n_slack))
    needs_art = np.zeros(len(keep), dtype=bool)
    col = 0
    for i, s in enumerate(senses):
        if s == "<=":
            S[i, col] = 1.0
            col += 1
        elif s == ">=":
            S[i, col] = -1.0
            col += 1
    A = np.hstack([A, S])
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1
    for i, s in enumerate(senses):
        # a slack with coefficient +1 after the sign fix can start in the basis
        needs_art[i] = not (s == "<=" and not flip[i]) and not (s == ">=" and flip[i])

    def recover(y):
        x = shift + y[:n]
        x[free] -= y[neg_index[free]]
        return x

    def lift_cost(c):
        return expand(np.asarray(c, dtype=float))

    return A, b, needs_art, recover, lift_cost, cols


# --------------------------------------------------------------------------
# Tableau simplex
# --------------------------------------------------------------------------

class _Tableau:
    def __init__(self, A, b, basis):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = list(basis)
        self.pivots = 0

    @property
    def m(self):
        return self.T.shape[0] - 1

    def set_cost(self, c):
        n = self.T.shape[1] - 1
        self.T[-1, :n] = c
        self.T[-1, n] = 0.0
        for i, j in enumerate(self.basis):
            if self.T[-1, j] != 0:
                self.T[-1] -= self.T[-1, j] * self.T[i]

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        nz = np.flatnonzero(col)
        if nz.size:
            T[nz] -= col[nz, None] * T[r]
        self.basis[r] = j
        self.pivots += 1
        if self.pivots > MAX_PIVOTS:
            raise SolverStall(f"solver stall: more than {MAX_PIVOTS} pivots")

    def run(self, allowed):
        """Minimise the cost row with Bland's rule; return "optimal" or "unbounded"."""
        T = self.T
        while True:
            red = T[-1, :-1]
            cand = np.flatnonzero((red < -PIVOT_TOL) & allowed)
            if cand.size == 0:
                return "optimal"
            j = int(cand[0])
            colj = T[:-1, j]
            rows = np.flatnonzero(colj > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            ratios = T[rows, -1] / colj[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            r = int(min(ties, key=lambda i: self.basis[i]))
            self.pivot(r, j)


def _simplex(p: LpProblem, with_objective: bool) -> LpResult:
    sf = _standard_form(p)
    if sf is None:
        return LpResult("infeasible")
    A, b, needs_art, recover, lift_cost, n_struct = sf
    m, n = A.shape
    if m == 0:
        y = np.zeros(n)
        if with_objective and p.c is not None:
            if np.any(lift_cost(p.c) < 0):
                return LpResult("unbounded", recover(y), -math.inf)
        x = recover(y)
        return LpResult("optimal", x, float(p.c @ x) if p.c is not None else 0.0)

    art_rows = np.flatnonzero(needs_art)
    n_art = art_rows.size
    Art = np.zeros((m, n_art))
    Art[art_rows, np.arange(n_art)] = 1.0
    full = np.hstack([A, Art])
    basis = []
    slack_of_row = {}
    for i in range(m):
        if not needs_art[i]:
            # the row's own +1 slack column
            j = int(np.flatnonzero((A[:, n_struct:][i] == 1.0))[0]) + n_struct
            slack_of_row[i] = j
            basis.append(j)
        else:
            basis.append(n + int(np.searchsorted(art_rows, i)))
    tab = _Tableau(full, b, basis)
    total = n + n_art
    is_art = np.zeros(total, dtype=bool)
    is_art[n:] = True

    if n_art:
        cost = np.zeros(total)
        cost[n:] = 1.0
        tab.set_cost(cost)
        tab.run(np.ones(total, dtype=bool))
        if -tab.T[-1, -1] > FEAS_TOL:
            return LpResult("infeasible", pivots=tab.pivots)
        # drive zero-level artificials out of the basis, dropping redundant rows
        r = 0
        while r < tab.m:
            if is_art[tab.basis[r]]:
                row = tab.T[r, :n]
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                if nz.size:
                    tab.pivot(r, int(nz[0]))
                else:
                    tab.T = np.delete(tab.T, r, axis=0)
                    del tab.basis[r]
                    continue
            r += 1

    status = "optimal"
    allowed = ~is_art
    if with_objective and p.c is not None:
        cost = np.zeros(total)
        cost[:n_struct] = lift_cost(p.c)
        tab.set_cost(cost)
        status = tab.run(allowed)
    y = np.zeros(total)
    for i, j in enumerate(tab.basis):
        y[j] = tab.T[i, -1]
    y = np.maximum(y[:n], 0.0)
    x = np.clip(recover(y), p.lb, p.ub)
    if not p.satisfied_by(x):
        # numerically marginal instance; refuse to certify it
        return LpResult("infeasible", pivots=tab.pivots)
    value = float(p.c @ x) if p.c is not None else 0.0
    if status == "unbounded":
        value = -math.inf
    return LpResult(status, x, value, tab.pivots)


def _highs(p: LpProblem, with_objective: bool) -> LpResult:
    from scipy.optimize import linprog
    from scipy.sparse import csr_matrix

    A, senses, b = p.matrix()
    senses = np.array(senses)
    le = senses == "<="
    ge = senses == ">="
    eq = senses == "="
    A_ub = np.vstack([A[le], -A[ge]]) if (le.any() or ge.any()) else None
    b_ub = np.concatenate([b[le], -b[ge]]) if A_ub is not None else None
    c = p.c if (with_objective and p.c is not None) else np.zeros(p.n_vars)
    bounds = list(zip(np.where(np.isfinite(p.lb), p.lb, None), np.where(np.isfinite(p.ub), p.ub, None)))
    res = linprog(
        c,
        A_ub=csr_matrix(A_ub) if A_ub is not None else None,
        b_ub=b_ub,
        A_eq=csr_matrix(A[eq]) if eq.any() else None,
        b_eq=b[eq] if eq.any() else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "presolve": True},
    )
    if res.status == 2:
        return LpResult("infeasible")
    if res.status == 3:
        return LpResult("unbounded", value=-math.inf)
    if res.status != 0:
        raise SolverStall(f"solver stall: HiGHS status {res.status} ({res.message})")
    x = np.clip(res.x, p.lb, p.ub)
    if not p.satisfied_by(x):
        return LpResult("infeasible")
    return LpResult("optimal", x, float(c @ x))


def _cells(p: LpProblem) -> int:
    extra = int(np.isfinite(p.ub).sum())
    rows = len(p.rows) + extra
    return rows * (p.n_vars + 2 * rows)


def _solve(p: LpProblem, with_objective: bool, method: str) -> LpResult:
    if method == "auto":
        method = "simplex" if _cells(p) <= SIMPLEX_MAX_CELLS else "highs"
    if method == "simplex":
        return _simplex(p, with_objective)
    if method == "highs":
        return _highs(p, with_objective)
    raise ValueError(f"unknown LP method {method!r}")


def feasible(p: LpProblem, method: str = "auto") -> LpResult:
    """Phase-1 feasibility check; ``result.x`` is a verified witness when feasible."""
    return _solve(p, False, method)


def minimize(p: LpProblem, method: str = "auto") -> LpResult:
    if p.c is None:
        raise ValueError("problem has no objective")
    return _solve(p, True, method)


# --------------------------------------------------------------------------
# Text dump
# --------------------------------------------------------------------------

def dumps(p: LpProblem) -> str:
    lines = [f"lp {p.n_vars}"]
    for j in range(p.n_vars):
        name = p.names[j] if p.names else f"x{j}"
        lines.append(f"var {j} {name} {float(p.lb[j])!r} {float(p.ub[j])!r}")
    if p.c is not None:
        lines.append("min " + " ".join(f"{j}:{float(v)!r}" for j, v in enumerate(p.c) if v != 0))
    for a, s, b in p.rows:
        terms = " ".join(f"{j}:{float(a[j])!r}" for j in np.flatnonzero(a))
        lines.append(f"row {s} {float(b)!r} | {terms}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> LpProblem:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    head = lines[0].split()
    if head[0] != "lp":
        raise ValueError("not an LP dump")
    n = int(head[1])
    lb, ub, names = np.zeros(n), np.full(n, np.inf), [f"x{j}" for j in range(n)]
    p = LpProblem(n, lb=lb, ub=ub, names=names)
    for ln in lines[1:]:
        kind, rest = ln.split(" ", 1)
        if kind == "var":
            j, name, lo, hi = rest.split()
            j = int(j)
            p.names[j] = name
            p.lb[j] = float(lo)
            p.ub[j] = float(hi)
        elif kind == "min":
            c = np.zeros(n)
            for t in rest.split():
                j, v = t.split(":")
                c[int(j)] = float(v)
            p.c = c
        elif kind == "row":
            spec, terms = rest.split("|")
            sense, rhs = spec.split()
            coeffs = {}
            for t in terms.split():
                j, v = t.split(":")
                coeffs[int(j)] = float(v)
            p.add_row(coeffs, sense, float(rhs))
        else:
            raise ValueError(f"unknown dump line {ln!r}")
    return p
