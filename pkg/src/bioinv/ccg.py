"""Column-and-cut generation: alternating master and adversarial subproblem
solves with bound tracking and best-lower-bound allocation retention.

The master optimizes over the scenario pool; the subproblem returns the
worst demand for the current first-stage commitments.  With the exact MIP
subproblem the loop converges to the global optimum; the alternating
heuristic trades exactness for speed and is also used to warm-start the MIP.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .formulations import (
    Allocation,
    BioConfig,
    build_master,
    build_subproblem,
    evaluate_profit,
    extract_allocation,
    extract_worst_scenario,
    solve_subproblem_for_scenario,
    stage_one_value,
)
from .instance import Instance
from .solver import solve
from .uncertainty import CHANNELS, DemandScenario, UncertaintySet

EXACT_MIP = "exact_mip"
ALTERNATING = "alternating_heuristic"
AH_THEN_MIP = "ah_then_mip"

_AH_VALUE_TOL = 1e-9


class CcgError(Exception):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class CcgOptions:
    epsilon: float = 1e-4          # relative gap tolerance
    delta: float = 1e-5            # denominator guard in the gap test
    max_iterations: int = 20
    max_seconds: float = 300.0
    subproblem_mode: str = EXACT_MIP
    ah_rounds: int = 25
    mip_node_limit: int | None = None   # deterministic polish cap for ah_then_mip
    rescore_worst_case: bool = True

    def __post_init__(self):
        if self.epsilon <= 0 or self.delta <= 0:
            raise CcgError("epsilon and delta must be positive")
        if self.max_iterations < 1 or self.max_seconds <= 0:
            raise CcgError("limits must be >= 1")
        if self.subproblem_mode not in (EXACT_MIP, ALTERNATING, AH_THEN_MIP):
            raise CcgError(f"unknown subproblem mode {self.subproblem_mode!r}")


@dataclass
class SolveReport:
    allocation: Allocation
    objective: float
    lam: float
    lower_bounds: list = field(default_factory=list)
    upper_bounds: list = field(default_factory=list)
    scenario_pool: list = field(default_factory=list)
    iterations: int = 0
    wall_time: float = 0.0
    termination: str = ""          # converged | iteration_limit | time_limit
    certified: bool = True         # exact subproblem solves throughout
    d_plus: np.ndarray | None = None
    worst_case_scenario: DemandScenario | None = None
    worst_case_profit: float | None = None

    def to_dict(self) -> dict:
        def clean(v):
            return None if v is None or not np.isfinite(v) else float(v)
        d = {
            "objective": clean(self.objective),
            "lambda": self.lam,
            "termination": self.termination,
            "certified": self.certified,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "lower_bounds": [clean(v) for v in self.lower_bounds],
            "upper_bounds": [clean(v) for v in self.upper_bounds],
            "allocation": self.allocation.to_dict(),
            "scenario_pool": [s.to_dict() for s in self.scenario_pool],
            "worst_case_profit": clean(self.worst_case_profit),
        }
        if self.d_plus is not None:
            d["d_plus"] = np.asarray(self.d_plus).tolist()
        if self.worst_case_scenario is not None:
            d["worst_case_scenario"] = self.worst_case_scenario.to_dict()
        return d


# ---------------------------------------------------------------------------
# demand step helpers
# ---------------------------------------------------------------------------

def minimize_linear_over_cell(coeffs, lo, hi, bl, bu):
    """Exact greedy minimum of c.d over {lo <= d <= hi, bl <= sum d <= bu};
    integral whenever the bounds are integral.  Deterministic tie-breaking by
    index."""
    c = np.asarray(coeffs, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = np.where(c > 0, lo, hi).astype(float)
    d = np.where(c == 0, lo, d)
    s = d.sum()
    if s < bl:
        need = bl - s
        order = sorted(range(len(c)), key=lambda i: (c[i], i))
        for i in order:
            room = hi[i] - d[i]
            step = min(room, need)
            d[i] += step
            need -= step
            if need <= 1e-12:
                break
    elif s > bu:
        excess = s - bu
        order = sorted(range(len(c)), key=lambda i: (-c[i], i))
        for i in order:
            room = d[i] - lo[i]
            step = min(room, excess)
            d[i] -= step
            excess -= step
            if excess <= 1e-12:
                break
    return d


def seed_scenario(uset: UncertaintySet) -> DemandScenario:
    """Canonical pool seed: box lower bounds, lifted minimally (ascending
    index) onto the budget lower bound where needed."""
    arrs = {}
    for ch in CHANNELS:
        lo = uset.local_lower[ch].copy()
        for t in range(uset.horizon):
            s = lo[t].sum()
            need = uset.budget_lower[ch][t] - s
            i = 0
            while need > 1e-12 and i < lo.shape[1]:
                room = uset.local_upper[ch][t, i] - lo[t, i]
                step = min(room, need)
                lo[t, i] += step
                need -= step
                i += 1
        arrs[ch] = lo
    return DemandScenario(arrs["b"], arrs["o"])


def upper_seed_scenario(uset: UncertaintySet) -> DemandScenario:
    """Box upper bounds trimmed (ascending index) onto the budget upper
    bound; the default start of the alternating heuristic."""
    arrs = {}
    for ch in CHANNELS:
        hi = uset.local_upper[ch].copy()
        for t in range(uset.horizon):
            excess = hi[t].sum() - uset.budget_upper[ch][t]
            i = 0
            while excess > 1e-12 and i < hi.shape[1]:
                room = hi[t, i] - uset.local_lower[ch][t, i]
                step = min(room, excess)
                hi[t, i] -= step
                excess -= step
                i += 1
        arrs[ch] = hi
    return DemandScenario(arrs["b"], arrs["o"])


def alternating_heuristic_subproblem(inst: Instance, uset: UncertaintySet,
                                     alloc: Allocation, lam: float, rounds: int = 25,
                                     allied: str = "walkin",
                                     start: DemandScenario | None = None):
    """Alternate dual solves (fixed demand) with demand moves (fixed duals)
    until the dual objective stalls.  Returns a feasible scenario and its
    subproblem value, an upper bound on the exact subproblem minimum."""
    if rounds < 1:
        raise CcgError("rounds must be >= 1")
    scen = start if start is not None else upper_seed_scenario(uset)
    e = inst.econ
    lam_online = lam if allied == "both" else 0.0
    value = None
    for _ in range(rounds):
        val, a, b = solve_subproblem_for_scenario(inst, alloc, lam, scen, allied, uset)
        if value is not None and abs(val - value) < _AH_VALUE_TOL:
            value = val
            break
        value = val
        walkin = np.zeros_like(scen.walkin)
        online = np.zeros_like(scen.online)
        for t in range(inst.horizon):
            cw = (1.0 - lam) * (a[t] - e.walkin_penalty[t])
            walkin[t] = minimize_linear_over_cell(
                cw, uset.local_lower["b"][t], uset.local_upper["b"][t],
                uset.budget_lower["b"][t], uset.budget_upper["b"][t])
            if inst.num_zones:
                co = (1.0 - lam_online) * (b[t] - e.online_penalty[t])
                online[t] = minimize_linear_over_cell(
                    co, uset.local_lower["o"][t], uset.local_upper["o"][t],
                    uset.budget_lower["o"][t], uset.budget_upper["o"][t])
        nxt = DemandScenario(walkin, online)
        if nxt.key() == scen.key():
            break
        scen = nxt
        value = None  # value belongs to the previous scenario
    if value is None:
        value, _, _ = solve_subproblem_for_scenario(inst, alloc, lam, scen, allied, uset)
    return scen, float(value)


def _mip_incumbent_from_scenario(inst: Instance, model, alloc: Allocation, lam: float,
                                 scenario: DemandScenario, allied: str,
                                 uset: UncertaintySet):
    """Feasible subproblem-MIP point built from a scenario: selectors pinned
    to the scenario, duals from the fixed-demand LP."""
    val, a, b = solve_subproblem_for_scenario(inst, alloc, lam, scenario, allied, uset)
    fixed = build_subproblem(inst, uset, alloc, lam, allied, fixed_scenario=scenario)
    sol = solve(fixed)
    x = np.zeros(model.num_vars)
    name_to_col = {n: j for j, n in enumerate(model.var_names)}
    for j, name in enumerate(fixed.var_names):
        if name in name_to_col:
            x[name_to_col[name]] = sol.x[j]
    info = model.info
    for (t, l), (wcols, vals) in info["w"]["b"].items():
        target = float(scenario.walkin[t, l])
        picked = 0
        for wc, v in zip(wcols, vals):
            pick = 1.0 if v == target else 0.0
            picked += int(pick)
            x[wc] = pick
            # alpha-star column sits right after its selector by construction
            x[wc + 1] = x[name_to_col[f"a[{t},{l}]"]] * pick
        if picked != 1:
            return None
    for (t, z), (wcols, vals) in info["w"]["o"].items():
        target = float(scenario.online[t, z])
        picked = 0
        for wc, v in zip(wcols, vals):
            pick = 1.0 if v == target else 0.0
            picked += int(pick)
            x[wc] = pick
            x[wc + 1] = x[name_to_col[f"b[{t},{z}]"]] * pick
        if picked != 1:
            return None
    return float(val), x


def _best_heuristic_scenario(inst, uset, alloc, lam, options, allied,
                             extra_starts=()):
    """Multi-start alternating heuristic; the lowest value wins."""
    starts = [upper_seed_scenario(uset), seed_scenario(uset), *extra_starts]
    best = None
    seen = set()
    for st in starts:
        if st.key() in seen:
            continue
        seen.add(st.key())
        scen, val = alternating_heuristic_subproblem(
            inst, uset, alloc, lam, options.ah_rounds, allied, start=st)
        if best is None or val < best[1] - 1e-12:
            best = (scen, val)
    return best


def _solve_subproblem(inst, uset, alloc, cfg, options, deadline, pool=()):
    """One adversarial solve per the configured mode.  Returns
    (scenario, value, certified)."""
    lam, allied = cfg.lam, cfg.allied_channels
    mode = options.subproblem_mode
    extra = list(pool)[-2:] if mode == ALTERNATING else ()
    ah_scen, ah_val = _best_heuristic_scenario(inst, uset, alloc, lam, options,
                                               allied, extra)
    if mode == ALTERNATING:
        return ah_scen, ah_val, False
    model = build_subproblem(inst, uset, alloc, lam, allied)
    incumbent = _mip_incumbent_from_scenario(inst, model, alloc, lam, ah_scen,
                                             allied, uset)
    remaining = None if deadline is None else max(1e-3, deadline - time.perf_counter())
    limits = {"time": remaining}
    if options.mip_node_limit is not None:
        limits["nodes"] = options.mip_node_limit
    sol = solve(model, limits=limits, incumbent=incumbent)
    if sol.status == "optimal":
        try:
            scen = extract_worst_scenario(model, sol)
        except Exception:
            scen = ah_scen
        return scen, float(sol.objective), True
    if sol.status == "limit" and sol.x is not None:
        try:
            scen = extract_worst_scenario(model, sol)
            return scen, float(sol.objective), False
        except Exception:
            pass
    return ah_scen, ah_val, False


# ---------------------------------------------------------------------------
# the main loop
# ---------------------------------------------------------------------------

def solve_two_stage(inst: Instance, uset: UncertaintySet, cfg: BioConfig,
                    options: CcgOptions | None = None,
                    fixed_x: np.ndarray | None = None) -> SolveReport:
    """Column-and-cut generation for the two-stage robust / BIO problem.

    Master and subproblem alternate; the retained allocation is the one
    achieving the best lower bound, not the last master iterate.  Converged
    reports with the exact subproblem are globally optimal.
    """
    options = options or CcgOptions()
    t0 = time.perf_counter()
    deadline = t0 + options.max_seconds
    pool = [seed_scenario(uset)]
    pool_keys = {pool[0].key()}
    lb = -np.inf
    ub = np.inf
    lbs, ubs = [], []
    best_alloc = None
    best_dplus = None
    certified_run = True
    termination = "iteration_limit"
    iterations = 0

    for _ in range(options.max_iterations):
        iterations += 1
        master = build_master(inst, uset, pool, cfg, fixed_x)
        remaining = max(1e-3, deadline - time.perf_counter())
        msol = solve(master, limits={"time": remaining})
        if msol.status not in ("optimal", "limit") or msol.x is None:
            report = _finish(inst, uset, cfg, options, best_alloc, best_dplus, lb,
                             lbs, ubs, pool, iterations, t0, "iteration_limit",
                             certified_run)
            raise CcgError(f"master solve failed with status {msol.status}", report)
        if msol.status == "limit":
            certified_run = False
        alloc, d_plus, _eta = extract_allocation(master, msol, inst, cfg)
        ub = min(ub, float(msol.objective))
        ubs.append(ub)

        scen, sp_val, certified = _solve_subproblem(inst, uset, alloc, cfg, options,
                                                    deadline, pool)
        if not certified:
            certified_run = False
        stage1 = stage_one_value(inst, cfg, alloc, d_plus,
                                 None if d_plus is None else _online_dplus(master, msol, inst, cfg))
        cand = sp_val + stage1
        if cand > lb + 1e-12:
            lb = cand
            best_alloc, best_dplus = alloc, d_plus
        lbs.append(lb)

        gap = (ub - lb) / (abs(lb) + options.delta) if np.isfinite(lb) else np.inf
        if gap <= options.epsilon:
            termination = "converged" if certified_run else "iteration_limit"
            break
        if scen.key() in pool_keys:
            termination = "iteration_limit"  # stalled: subproblem repeated a scenario
            break
        pool.append(scen)
        pool_keys.add(scen.key())
        if time.perf_counter() > deadline:
            termination = "time_limit"
            break
    if best_alloc is None:
        best_alloc, best_dplus = alloc, d_plus

    return _finish(inst, uset, cfg, options, best_alloc, best_dplus, lb, lbs, ubs,
                   pool, iterations, t0, termination, certified_run)


def _online_dplus(master, msol, inst, cfg):
    info = master.info
    if info.get("doplus") is None:
        return None
    T, Z = inst.horizon, inst.num_zones
    return np.array([[msol.x[info["doplus"][t, z]] for z in range(Z)] for t in range(T)])


def _finish(inst, uset, cfg, options, alloc, d_plus, lb, lbs, ubs, pool,
            iterations, t0, termination, certified):
    report = SolveReport(
        allocation=alloc,
        objective=float(lb) if np.isfinite(lb) else float("nan"),
        lam=cfg.lam,
        lower_bounds=list(lbs),
        upper_bounds=list(ubs),
        scenario_pool=list(pool),
        iterations=iterations,
        wall_time=time.perf_counter() - t0,
        termination=termination,
        certified=certified,
        d_plus=d_plus,
    )
    if options.rescore_worst_case and alloc is not None:
        try:
            plain = Allocation(alloc.x, alloc.x_repo)
            model = build_subproblem(inst, uset, plain, 0.0)
            sol = solve(model, limits={"time": 60.0})
            if sol.status == "optimal":
                scen = extract_worst_scenario(model, sol)
                report.worst_case_scenario = scen
                report.worst_case_profit = evaluate_profit(inst, plain, scen)
        except Exception:
            pass
    return report
