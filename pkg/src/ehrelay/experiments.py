"""Monte Carlo sweeps producing CSV tables for the four figure experiments."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .lp import SolverStall
from .model import Scenario, ScenarioError, compute_gains, gen_eh_trace, place_relays
from .optimizer import (LP_BOUND_MAX_VARS, ScenarioInfeasible, bisect_eta, greedy_policy,
                        lp_bound)
from .simulator import run_online_mode
from .utility import AfUtility

log = logging.getLogger(__name__)

COLUMNS = ["experiment", "series", "sweep_value", "trial", "method",
           "eta_watts", "no_outage_ratio", "runtime_ms", "status"]

# experiment -> (swept Scenario field, default sweep, methods, series field, default series)
EXPERIMENTS = {
    "fig2_power_vs_relays": ("K", [2, 4, 6, 8, 10, 15], ["proposed", "greedy", "lp_bound"],
                             "eh_mean", [0.02, 0.04]),
    "fig3_power_vs_blocks": ("N_c", [1, 10, 100], ["proposed", "lp_bound"], None, []),
    "fig4_hardening": ("K", [2, 4, 6, 8, 12, 16, 20], ["proposed", "online"], None, []),
    "fig5_multipair": ("M", [1, 2, 3, 4, 5], ["proposed", "greedy"], None, []),
}
METHODS = ("proposed", "greedy", "lp_bound", "online")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentSpec:
    experiment: str = "fig2_power_vs_relays"
    sweep: list = field(default_factory=list)
    series: list = field(default_factory=list)
    methods: list = field(default_factory=list)
    trials: int = 20
    seed: int = 0
    epsilon: float = 1e-4
    scenario: Scenario = field(default_factory=Scenario)
    out: Optional[str] = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"] = self.scenario.to_dict()
        return d

    @property
    def sweep_field(self) -> str:
        return EXPERIMENTS[self.experiment][0]

    @property
    def series_field(self) -> Optional[str]:
        return EXPERIMENTS[self.experiment][3]


_SPEC_KEYS = {f.name for f in dataclasses.fields(ExperimentSpec)} | {"scenario_path"}


def _positive_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def normalize_spec(data: dict, base_dir: Path = Path(".")) -> ExperimentSpec:
    """Check a raw config mapping and fill in defaults; raises ConfigError listing all problems."""
    problems = []
    if not isinstance(data, dict):
        raise ConfigError(["config must be a JSON object"])
    unknown = sorted(set(data) - _SPEC_KEYS)
    if unknown:
        problems.append(f"unknown keys: {', '.join(unknown)}")
    name = data.get("experiment", ExperimentSpec.experiment)
    if name not in EXPERIMENTS:
        problems.append(f"experiment must be one of {', '.join(EXPERIMENTS)} (got {name!r})")
        raise ConfigError(problems)
    sweep_field, sweep_default, methods_default, series_field, series_default = EXPERIMENTS[name]

    sweep = data.get("sweep", sweep_default)
    if not (isinstance(sweep, list) and sweep and all(_positive_int(v) for v in sweep)):
        problems.append(f"sweep must be a nonempty list of positive integers (got {sweep!r})")
    series = data.get("series", series_default)
    if series_field is None and series:
        problems.append(f"{name} has no series axis")
    elif not isinstance(series, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in series):
        problems.append(f"series must be a list of positive numbers (got {series!r})")
    methods = data.get("methods", methods_default)
    if not (isinstance(methods, list) and methods and all(m in METHODS for m in methods)):
        problems.append(f"methods must be a nonempty subset of {', '.join(METHODS)} (got {methods!r})")
    trials = data.get("trials", ExperimentSpec.trials)
    if not _positive_int(trials):
        problems.append(f"trials must be an integer >= 1 (got {trials!r})")
    seed = data.get("seed", 0)
    if not (isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64):
        problems.append(f"seed must be an unsigned 64-bit integer (got {seed!r})")
    eps = data.get("epsilon", ExperimentSpec.epsilon)
    if not (isinstance(eps, (int, float)) and not isinstance(eps, bool) and eps > 0 and math.isfinite(eps)):
        problems.append(f"epsilon must be a positive number of watts (got {eps!r})")

    raw = data.get("scenario", {})
    if "scenario_path" in data:
        if "scenario" in data:
            problems.append("give either scenario or scenario_path, not both")
        try:
            text = (base_dir / data["scenario_path"]).read_text()
            raw = json.loads(text) if text.strip() else {}
        except (OSError, json.JSONDecodeError) as exc:
            problems.append(f"cannot read scenario_path: {exc}")
            raw = {}
    scenario = None
    if not isinstance(raw, dict):
        problems.append("scenario must be a JSON object")
    else:
        names = {f.name for f in dataclasses.fields(Scenario)}
        bad = sorted(set(raw) - names)
        if bad:
            problems.append(f"unknown scenario keys: {', '.join(bad)}")
        else:
            try:
                scenario = Scenario(**raw)
            except ScenarioError as exc:
                problems.extend(str(exc).split("; "))
            except TypeError as exc:
                problems.append(str(exc))
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        problems.append("out must be a path string")
    if problems:
        raise ConfigError(problems)
    return ExperimentSpec(experiment=name, sweep=list(sweep), series=list(series), methods=list(methods),
                          trials=trials, seed=seed, epsilon=float(eps), scenario=scenario, out=out)


def validate_config(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"]) from exc
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    return normalize_spec(data, path.parent)


# --------------------------------------------------------------------------
# Trials
# --------------------------------------------------------------------------

def trial_rngs(seed: int, experiment: str, key: int, trial: int):
    """Independent (placement, trace) generators for one trial.

    Derived only from the listed values, so adding trials or sweep points
    never perturbs existing rows.
    """
    ss = np.random.SeedSequence([seed, zlib.crc32(experiment.encode()), key, trial])
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return repr(x) if math.isfinite(x) else ("inf" if x > 0 else "nan" if math.isnan(x) else "-inf")


def _run_method(method, scenario, trace, utility, epsilon):
    """Return (eta, no_outage_ratio, status)."""
    if method == "proposed":
        return bisect_eta(scenario, trace, epsilon=epsilon, utility=utility).eta_star, 1.0, "ok"
    if method == "greedy":
        res, _, _ = greedy_policy(scenario, trace, utility=utility)
        if res.extra["qos_infeasible_blocks"]:
            return res.eta_star, res.extra["no_outage_ratio"], \
                f"outage: served blocks peak at {res.extra['eta_served']!r} W"
        return res.eta_star, res.extra["no_outage_ratio"], "ok"
    if method == "lp_bound":
        if scenario.M * scenario.K * scenario.N > LP_BOUND_MAX_VARS:
            return None, None, "skipped: bound requires desk-scale N"
        return lp_bound(scenario, trace, epsilon=epsilon, utility=utility).eta_star, 1.0, "ok"
    if method == "online":
        out, _ = run_online_mode(scenario, trace, epsilon=epsilon, utility=utility)
        etas = [e for e in out.eta_per_interval if not math.isnan(e)]
        eta = float(np.mean(etas)) if etas else math.inf
        return eta, out.no_outage_ratio, "ok"
    raise ValueError(method)


def run_trial(spec: ExperimentSpec, series_value, sweep_value: int, trial: int, timing: bool = False):
    """All method rows for one (series, sweep point, trial)."""
    overrides = {spec.sweep_field: sweep_value}
    if spec.series_field is not None and series_value is not None:
        overrides[spec.series_field] = series_value
    base = dataclasses.replace(spec.scenario, **overrides, relay_positions=None)
    # fig3 keeps one instance across the block sweep
    key = 0 if spec.experiment == "fig3_power_vs_blocks" else sweep_value
    place_rng, trace_rng = trial_rngs(spec.seed, spec.experiment, key, trial)
    rows = []
    try:
        scenario = (base.with_relays(spec.scenario.relay_positions)
                    if spec.scenario.relay_positions is not None and spec.sweep_field != "K"
                    else place_relays(base, place_rng))
        trace = gen_eh_trace(scenario, trace_rng)
        utility = AfUtility(scenario, compute_gains(scenario))
    except (ScenarioError, ValueError) as exc:
        return [_row(spec, series_value, sweep_value, trial, m, None, None, None, f"error: {exc}")
                for m in spec.methods]
    for method in spec.methods:
        t0 = time.perf_counter()
        try:
            eta, ratio, status = _run_method(method, scenario, trace, utility, spec.epsilon)
        except ScenarioInfeasible:
            eta, ratio, status = math.inf, None, "infeasible"
        except SolverStall:
            raise
        except Exception as exc:  # recorded as an error row, the sweep goes on
            log.exception("trial failed")
            eta, ratio, status = None, None, f"error: {exc}"
        ms = (time.perf_counter() - t0) * 1e3 if timing else None
        rows.append(_row(spec, series_value, sweep_value, trial, method, eta, ratio, ms, status))
    return rows


def _row(spec, series_value, sweep_value, trial, method, eta, ratio, ms, status):
    return {
        "experiment": spec.experiment,
        "series": "" if series_value is None else _fmt(series_value),
        "sweep_value": sweep_value,
        "trial": trial,
        "method": method,
        "eta_watts": _fmt(eta),
        "no_outage_ratio": _fmt(ratio),
        "runtime_ms": "" if ms is None else f"{ms:.3f}",
        "status": status,
    }


def _aggregate(rows, spec):
    out = []
    groups = {}
    for r in rows:
        groups.setdefault((r["series"], r["sweep_value"], r["method"]), []).append(r)
    for (series, sweep_value, method), grp in sorted(groups.items(), key=_group_key(spec)):
        eta = np.array([float(r["eta_watts"]) for r in grp if r["eta_watts"] != ""])
        ratio = np.array([float(r["no_outage_ratio"]) for r in grp if r["no_outage_ratio"] != ""])
        for label, fn in (("median", lambda a: np.median(a)),
                          ("iqr", lambda a: np.subtract(*np.percentile(a, [75, 25])))):
            with np.errstate(invalid="ignore"):
                e = fn(eta) if eta.size else None
                q = fn(ratio) if ratio.size else None
            out.append({"experiment": spec.experiment, "series": series, "sweep_value": sweep_value,
                        "trial": label, "method": method, "eta_watts": _fmt(e),
                        "no_outage_ratio": _fmt(q), "runtime_ms": "", "status": f"n={eta.size}"})
    return out


def _group_key(spec):
    order = {m: i for i, m in enumerate(spec.methods)}
    return lambda item: (item[0][0] == "", float(item[0][0]) if item[0][0] else 0.0,
                         item[0][1], order[item[0][2]])


def _row_key(spec):
    order = {m: i for i, m in enumerate(spec.methods)}
    return lambda r: (float(r["series"]) if r["series"] else 0.0, r["sweep_value"], r["trial"],
                      order[r["method"]])


def _task(args):
    return run_trial(*args)


def run_experiment(spec: ExperimentSpec, out_path=None, jobs: int = 1, timing: bool = False) -> str:
    """Run every trial, write the CSV (if ``out_path``) and return its text.

    Rows are sorted before writing so the file does not depend on ``jobs``.
    On a solver stall the rows finished so far are flushed and the error re-raised.
    """
    series = spec.series or [None]
    tasks = [(spec, s, v, t, timing) for s in series for v in spec.sweep for t in range(spec.trials)]
    rows: list = []
    stall = None
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for r in pool.map(_task, tasks):
                    rows.extend(r)
        else:
            for t in tasks:
                rows.extend(_task(t))
    except SolverStall as exc:
        stall = exc
    rows.sort(key=_row_key(spec))
    if stall is None:
        rows += _aggregate(rows, spec)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\r\n")
    w.writeheader()
    w.writerows(rows)
    text = buf.getvalue()
    if out_path is not None:
        Path(out_path).write_text(text, newline="")
    if stall is not None:
        raise stall
    return text
