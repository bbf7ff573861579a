"""Model builders: fulfillment LP, CCG master, exact adversarial subproblem
MIP, SAA model, PWL baseline, and the basestock heuristic.

Sign conventions: all models maximize retailer profit except the subproblem,
which minimizes the adversary's value of the inner max (its optimum equals
the worst-case recourse profit given the first-stage commitments).  Purchase
cost is a first-stage term and never appears in the subproblem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instance import Instance
from .solver import BINARY, INF, LinearModel, Solution, solve
from .uncertainty import DemandScenario, UncertaintySet, poisson_quantile

WALKIN_ONLY = "walkin"
BOTH_CHANNELS = "both"


class FormulationError(Exception):
    pass


@dataclass
class Allocation:
    """First-stage decision: supplier orders, optional repositioning flows,
    optional committed optimistic walk-in sales (BIO)."""

    x: np.ndarray                      # (T, n_nodes)
    x_repo: np.ndarray | None = None   # (T, from_node, to_node)
    s_plus: np.ndarray | None = None   # (T, n_nodes)
    y_plus: np.ndarray | None = None   # (T, n_nodes, n_zones), allied-both mode

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.x_repo is not None:
            self.x_repo = np.asarray(self.x_repo, dtype=float)
        if self.s_plus is not None:
            self.s_plus = np.atleast_2d(np.asarray(self.s_plus, dtype=float))
        if self.y_plus is not None:
            self.y_plus = np.asarray(self.y_plus, dtype=float)

    def to_dict(self) -> dict:
        d = {"x": self.x.tolist()}
        if self.x_repo is not None:
            d["x_repo"] = self.x_repo.tolist()
        if self.s_plus is not None:
            d["s_plus"] = self.s_plus.tolist()
        if self.y_plus is not None:
            d["y_plus"] = self.y_plus.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Allocation":
        return cls(
            np.array(d["x"], dtype=float),
            None if "x_repo" not in d else np.array(d["x_repo"], dtype=float),
            None if "s_plus" not in d else np.array(d["s_plus"], dtype=float),
            None if "y_plus" not in d else np.array(d["y_plus"], dtype=float),
        )


@dataclass
class FulfillmentPlan:
    walkin_sales: np.ndarray     # (T, n_nodes)
    shipments: np.ndarray        # (T, n_nodes, n_zones)
    end_inventory: np.ndarray    # (T, n_nodes), on-hand after period t
    profit: float

    def to_dict(self) -> dict:
        return {
            "walkin_sales": self.walkin_sales.tolist(),
            "shipments": self.shipments.tolist(),
            "end_inventory": self.end_inventory.tolist(),
            "profit": self.profit,
        }


@dataclass
class BioConfig:
    lam: float = 0.0
    allied_channels: str = WALKIN_ONLY     # "walkin" | "both"
    integer_allocations: bool = False
    repositioning: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise FormulationError(f"lambda must lie in [0,1], got {self.lam}")
        if self.allied_channels not in (WALKIN_ONLY, BOTH_CHANNELS):
            raise FormulationError(f"unknown allied_channels {self.allied_channels!r}")


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def pipeline_arrival(inst: Instance, t: int, l: int) -> float:
    """Initial-pipeline units becoming sellable at node l in period t
    (on-hand I0 is handled separately)."""
    if t < inst.inventory.lead_time[l]:
        return inst.inventory.arriving(l, t + 1)
    return 0.0


def allowed_edges(inst: Instance) -> list[tuple[int, int, int]]:
    """(node_idx, zone_idx, delivery_days) for every allowed fulfillment edge."""
    eligible = set(inst.network.sfs_eligible)
    out = []
    for n, z, d in inst.network.ship_edges:
        if n in eligible:
            out.append((inst.network.node_index(n), inst.network.zone_index(z), d))
    return out


def first_stage_cost(inst: Instance, alloc: Allocation) -> float:
    cost = float(np.sum(inst.econ.purchase_cost[None, :] * alloc.x))
    if alloc.x_repo is not None:
        if inst.econ.reposition_cost is None:
            raise FormulationError("repositioning flows given but reposition_cost missing")
        cost += float(np.sum(inst.econ.reposition_cost[None, :, :] * alloc.x_repo))
    return cost


def _x_arrival_terms(inst: Instance, t: int, l: int, x_idx, repo_idx):
    """Variable columns contributing sellable units at (t, l): lead-shifted
    supplier orders, plus repositioning inflows minus outflows."""
    terms = []
    L = inst.inventory.lead_time[l]
    if t >= L:
        terms.append((x_idx[t - L, l], 1.0))
    if repo_idx is not None:
        rl = inst.inventory.reposition_lead
        nn = inst.num_nodes
        for src in range(nn):
            if src == l:
                continue
            lag = int(rl[src, l]) if rl is not None else 0
            if t >= lag:
                terms.append((repo_idx[t - lag, src, l], 1.0))
        for dst in range(nn):
            if dst == l:
                continue
            terms.append((repo_idx[t, l, dst], -1.0))
    return terms


def _x_arrival_const(inst: Instance, t: int, l: int, alloc: Allocation) -> float:
    val = 0.0
    L = inst.inventory.lead_time[l]
    if t >= L:
        val += float(alloc.x[t - L, l])
    if alloc.x_repo is not None:
        rl = inst.inventory.reposition_lead
        nn = inst.num_nodes
        for src in range(nn):
            if src == l:
                continue
            lag = int(rl[src, l]) if rl is not None else 0
            if t >= lag:
                val += float(alloc.x_repo[t - lag, src, l])
        val -= float(alloc.x_repo[t, l, :].sum()) - float(alloc.x_repo[t, l, l])
    return val


def _add_business_rule_rows(m: LinearModel, inst: Instance, t: int, y_idx: dict,
                            extra_y: dict | None = None):
    """Fulfillment capacity and service-window rows for one period; y_idx maps
    (l, z) -> column for this period's shipment variables."""
    br = inst.business_rules
    if not br.any_active:
        return
    edges = {(l, z): d for l, z, d in allowed_edges(inst)}
    if br.fulfill_capacity is not None:
        by_node: dict[int, list] = {}
        for (l, z), col in y_idx.items():
            by_node.setdefault(l, []).append(col)
        if extra_y:
            for (l, z), col in extra_y.items():
                by_node.setdefault(l, []).append(col)
        for l, cols in by_node.items():
            m.add_constr({c: 1.0 for c in cols}, "<=", float(br.fulfill_capacity[t, l]),
                         name=f"fulfill_cap[{t},{l}]")
    if br.service_window_fraction is not None:
        rho = float(br.service_window_fraction)
        coeffs: dict[int, float] = {}
        pools = [y_idx] + ([extra_y] if extra_y else [])
        for pool in pools:
            for (l, z), col in pool.items():
                fast = edges.get((l, z), 0) <= br.service_window_days
                coeffs[col] = coeffs.get(col, 0.0) + ((1.0 - rho) if fast else -rho)
        m.add_constr(coeffs, ">=", 0.0, name=f"service_window[{t}]")


# ---------------------------------------------------------------------------
# fulfillment LP (inner maximization at a fixed allocation and scenario)
# ---------------------------------------------------------------------------

def build_fulfillment_model(inst: Instance, alloc: Allocation,
                            scenario: DemandScenario) -> LinearModel:
    """LP over sales, shipments and carried inventory with the allocation
    fixed; always feasible (zero fulfillment)."""
    T, L = inst.horizon, inst.num_nodes
    e = inst.econ
    if scenario.walkin.shape != (T, L) or scenario.online.shape != (T, inst.num_zones):
        raise FormulationError(
            f"scenario dims {scenario.walkin.shape}/{scenario.online.shape} do not match "
            f"instance ({T},{L})/({T},{inst.num_zones})")
    if alloc.x.shape != (T, L):
        raise FormulationError(f"allocation shape {alloc.x.shape}, expected {(T, L)}")
    m = LinearModel("fulfillment", sense="max")
    edges = allowed_edges(inst)

    s_idx = np.empty((T, L), dtype=int)
    I_idx = np.empty((T, L), dtype=int)
    y_idx: dict[tuple[int, int, int], int] = {}
    obj: dict[int, float] = {}
    const = -first_stage_cost(inst, alloc)
    for t in range(T):
        for l in range(L):
            s_idx[t, l] = m.add_var(f"s[{t},{l}]", 0.0, float(scenario.walkin[t, l]))
            obj[s_idx[t, l]] = e.walkin_price[t, l] + e.walkin_penalty[t, l]
            const -= e.walkin_penalty[t, l] * scenario.walkin[t, l]
            I_idx[t, l] = m.add_var(f"I[{t + 1},{l}]", 0.0, INF)
            obj[I_idx[t, l]] = -e.holding[l]
        for (l, z, _d) in edges:
            col = m.add_var(f"y[{t},{l},{z}]", 0.0, INF)
            y_idx[t, l, z] = col
            obj[col] = e.online_price[t] + e.online_penalty[t] - e.fulfill_cost[l, z]
        for z in range(inst.num_zones):
            const -= e.online_penalty[t] * scenario.online[t, z]

    for t in range(T):
        for z in range(inst.num_zones):
            cols = {y_idx[t, l, z]: 1.0 for l in range(L) if (t, l, z) in y_idx}
            m.add_constr(cols, "<=", float(scenario.online[t, z]), name=f"ecom[{t},{z}]")
        for l in range(L):
            coeffs = {s_idx[t, l]: 1.0, I_idx[t, l]: 1.0}
            for z in range(inst.num_zones):
                if (t, l, z) in y_idx:
                    coeffs[y_idx[t, l, z]] = 1.0
            rhs = pipeline_arrival(inst, t, l) + _x_arrival_const(inst, t, l, alloc)
            if t == 0:
                rhs += inst.inventory.on_hand(l)
            else:
                coeffs[I_idx[t - 1, l]] = -1.0
            m.add_constr(coeffs, "==", rhs, name=f"balance[{t},{l}]")
        _add_business_rule_rows(m, inst, t,
                                {(l, z): y_idx[t, l, z] for (tt, l, z) in y_idx if tt == t})
    m.set_objective(obj, const=const)
    m.info = {"s": s_idx, "I": I_idx, "y": y_idx, "T": T, "L": L, "Z": inst.num_zones}
    return m


def evaluate_allocation(inst: Instance, alloc: Allocation,
                        scenario: DemandScenario) -> FulfillmentPlan:
    """Optimal fulfillment plan and realized profit for one scenario."""
    m = build_fulfillment_model(inst, alloc, scenario)
    sol = solve(m)
    if sol.status != "optimal":
        raise FormulationError(f"fulfillment LP ended with status {sol.status}")
    T, L, Z = m.info["T"], m.info["L"], m.info["Z"]
    sales = np.zeros((T, L))
    ship = np.zeros((T, L, Z))
    inv = np.zeros((T, L))
    for t in range(T):
        for l in range(L):
            sales[t, l] = sol.x[m.info["s"][t, l]]
            inv[t, l] = sol.x[m.info["I"][t, l]]
    for (t, l, z), col in m.info["y"].items():
        ship[t, l, z] = sol.x[col]
    return FulfillmentPlan(sales, ship, inv, float(sol.objective))


def evaluate_profit(inst: Instance, alloc: Allocation, scenario: DemandScenario) -> float:
    m = build_fulfillment_model(inst, alloc, scenario)
    sol = solve(m)
    if sol.status != "optimal":
        raise FormulationError(f"fulfillment LP ended with status {sol.status}")
    return float(sol.objective)


# ---------------------------------------------------------------------------
# master problem (and SAA sibling)
# ---------------------------------------------------------------------------

def _integer_cap(inst: Instance, uset: UncertaintySet) -> int:
    cap = float(uset.budget_upper["b"].sum() + uset.budget_upper["o"].sum())
    return max(1, int(math.ceil(cap - 1e-9)))


def _add_first_stage(m: LinearModel, inst: Instance, uset: UncertaintySet | None,
                     cfg: BioConfig, fixed_x: np.ndarray | None):
    """x (and repositioning / integer-expansion) variables plus their cost
    terms; returns (x_idx, repo_idx, obj_terms)."""
    T, L = inst.horizon, inst.num_nodes
    e = inst.econ
    br = inst.business_rules
    obj: dict[int, float] = {}
    cap = INF
    if cfg.integer_allocations:
        if uset is None:
            raise FormulationError("integer mode requires an uncertainty set for the cap")
        cap = float(_integer_cap(inst, uset))
    x_idx = np.empty((T, L), dtype=int)
    for t in range(T):
        for l in range(L):
            hi = cap
            if br.transport_capacity is not None:
                hi = min(hi, float(br.transport_capacity[t, l]))
            if fixed_x is not None:
                col = m.add_var(f"x[{t},{l}]", float(fixed_x[t, l]), float(fixed_x[t, l]))
            else:
                col = m.add_var(f"x[{t},{l}]", 0.0, hi)
            x_idx[t, l] = col
            obj[col] = obj.get(col, 0.0) - float(e.purchase_cost[l])
    repo_idx = None
    if cfg.repositioning:
        if e.reposition_cost is None:
            raise FormulationError("repositioning enabled but reposition_cost missing")
        repo_idx = np.zeros((T, L, L), dtype=int)
        for t in range(T):
            for src in range(L):
                for dst in range(L):
                    if src == dst:
                        continue
                    col = m.add_var(f"xr[{t},{src},{dst}]", 0.0, INF)
                    repo_idx[t, src, dst] = col
                    obj[col] = obj.get(col, 0.0) - float(e.reposition_cost[src, dst])
    if cfg.integer_allocations and fixed_x is None:
        nbits = max(1, int(math.ceil(math.log2(cap + 1))))
        for t in range(T):
            for l in range(L):
                coeffs = {int(x_idx[t, l]): 1.0}
                for k in range(nbits):
                    bcol = m.add_var(f"xbit[{t},{l},{k}]", 0.0, 1.0, BINARY)
                    coeffs[bcol] = -float(2 ** k)
                m.add_constr(coeffs, "==", 0.0, name=f"int_x[{t},{l}]")
    return x_idx, repo_idx, obj


def _add_optimism(m: LinearModel, inst: Instance, uset: UncertaintySet, cfg: BioConfig):
    """Optimistic demand D+ in U, committed sales s+ <= lam*D+ (walk-in; plus
    y+ when both channels are allied); returns index maps and objective terms."""
    T, L, Z = inst.horizon, inst.num_nodes, inst.num_zones
    e = inst.econ
    lam = cfg.lam
    obj: dict[int, float] = {}
    dplus_idx = np.empty((T, L), dtype=int)
    splus_idx = np.empty((T, L), dtype=int)
    for t in range(T):
        for l in range(L):
            dplus_idx[t, l] = m.add_var(
                f"Dp[{t},{l}]", float(uset.local_lower["b"][t, l]),
                float(uset.local_upper["b"][t, l]))
            splus_idx[t, l] = m.add_var(f"sp[{t},{l}]", 0.0, INF)
            obj[int(splus_idx[t, l])] = e.walkin_price[t, l] + e.walkin_penalty[t, l]
            obj[int(dplus_idx[t, l])] = -lam * e.walkin_penalty[t, l]
            m.add_constr({int(splus_idx[t, l]): 1.0, int(dplus_idx[t, l]): -lam},
                         "<=", 0.0, name=f"sp_cap[{t},{l}]")
        cols = {int(dplus_idx[t, l]): 1.0 for l in range(L)}
        m.add_constr(cols, ">=", float(uset.budget_lower["b"][t]), name=f"Dp_bl[{t}]")
        m.add_constr(cols, "<=", float(uset.budget_upper["b"][t]), name=f"Dp_bu[{t}]")

    doplus_idx = yplus_idx = None
    if cfg.allied_channels == BOTH_CHANNELS and Z > 0:
        doplus_idx = np.empty((T, Z), dtype=int)
        yplus_idx = {}
        for t in range(T):
            for z in range(Z):
                doplus_idx[t, z] = m.add_var(
                    f"Dop[{t},{z}]", float(uset.local_lower["o"][t, z]),
                    float(uset.local_upper["o"][t, z]))
                obj[int(doplus_idx[t, z])] = -lam * e.online_penalty[t]
            for (l, z, _d) in allowed_edges(inst):
                col = m.add_var(f"yp[{t},{l},{z}]", 0.0, INF)
                yplus_idx[t, l, z] = col
                obj[col] = e.online_price[t] + e.online_penalty[t] - e.fulfill_cost[l, z]
            for z in range(Z):
                coeffs = {yplus_idx[t, l, z]: 1.0 for l in range(L) if (t, l, z) in yplus_idx}
                coeffs[int(doplus_idx[t, z])] = -lam
                m.add_constr(coeffs, "<=", 0.0, name=f"yp_cap[{t},{z}]")
            cols = {int(doplus_idx[t, z]): 1.0 for z in range(Z)}
            m.add_constr(cols, ">=", float(uset.budget_lower["o"][t]), name=f"Dop_bl[{t}]")
            m.add_constr(cols, "<=", float(uset.budget_upper["o"][t]), name=f"Dop_bu[{t}]")
    return dplus_idx, splus_idx, doplus_idx, yplus_idx, obj


def _add_scenario_block(m: LinearModel, inst: Instance, scenario: DemandScenario,
                        lam: float, allied: str, x_idx, repo_idx,
                        splus_idx, yplus_idx, tag: str):
    """Recourse variables and rows for one pool scenario.  Returns the profit
    expression (terms dict, constant) of the block."""
    T, L, Z = inst.horizon, inst.num_nodes, inst.num_zones
    e = inst.econ
    terms: dict[int, float] = {}
    const = 0.0
    walkin_frac = 1.0 - lam if splus_idx is not None else 1.0
    online_frac = 1.0 - lam if (yplus_idx is not None) else 1.0
    s_idx = np.empty((T, L), dtype=int)
    I_idx = np.empty((T, L), dtype=int)
    y_idx: dict[tuple[int, int, int], int] = {}
    for t in range(T):
        for l in range(L):
            cap_s = walkin_frac * float(scenario.walkin[t, l])
            s_idx[t, l] = m.add_var(f"s{tag}[{t},{l}]", 0.0, cap_s)
            terms[int(s_idx[t, l])] = e.walkin_price[t, l] + e.walkin_penalty[t, l]
            const -= e.walkin_penalty[t, l] * walkin_frac * float(scenario.walkin[t, l])
            I_idx[t, l] = m.add_var(f"I{tag}[{t + 1},{l}]", 0.0, INF)
            terms[int(I_idx[t, l])] = -e.holding[l]
        for (l, z, _d) in allowed_edges(inst):
            col = m.add_var(f"y{tag}[{t},{l},{z}]", 0.0, INF)
            y_idx[t, l, z] = col
            terms[col] = e.online_price[t] + e.online_penalty[t] - e.fulfill_cost[l, z]
        for z in range(Z):
            const -= e.online_penalty[t] * online_frac * float(scenario.online[t, z])
            cols = {y_idx[t, l, z]: 1.0 for l in range(L) if (t, l, z) in y_idx}
            m.add_constr(cols, "<=", online_frac * float(scenario.online[t, z]),
                         name=f"ecom{tag}[{t},{z}]")
        for l in range(L):
            coeffs = {int(s_idx[t, l]): 1.0, int(I_idx[t, l]): 1.0}
            for z in range(Z):
                if (t, l, z) in y_idx:
                    coeffs[y_idx[t, l, z]] = 1.0
            if splus_idx is not None:
                coeffs[int(splus_idx[t, l])] = coeffs.get(int(splus_idx[t, l]), 0.0) + 1.0
            if yplus_idx is not None:
                for z in range(Z):
                    if (t, l, z) in yplus_idx:
                        coeffs[yplus_idx[t, l, z]] = coeffs.get(yplus_idx[t, l, z], 0.0) + 1.0
            for col, sign in _x_arrival_terms(inst, t, l, x_idx, repo_idx):
                coeffs[col] = coeffs.get(col, 0.0) - sign
            rhs = pipeline_arrival(inst, t, l)
            if t == 0:
                rhs += inst.inventory.on_hand(l)
            else:
                coeffs[int(I_idx[t - 1, l])] = -1.0
            m.add_constr(coeffs, "==", rhs, name=f"bal{tag}[{t},{l}]")
        block_y = {(l, z): y_idx[t, l, z] for (tt, l, z) in y_idx if tt == t}
        extra = None
        if yplus_idx is not None:
            extra = {(l, z): yplus_idx[t, l, z] for (tt, l, z) in yplus_idx if tt == t}
        _add_business_rule_rows(m, inst, t, block_y, extra)
    return terms, const, s_idx, y_idx, I_idx


def build_master(inst: Instance, uset: UncertaintySet, scenarios: list[DemandScenario],
                 cfg: BioConfig, fixed_x: np.ndarray | None = None) -> LinearModel:
    """CCG master over the scenario pool.  With lam = 0 the optimistic block
    is omitted (pure-robust master); with an empty pool the epigraph variable
    is omitted so the first iteration stays bounded."""
    m = LinearModel("master", sense="max")
    obj: dict[int, float] = {}
    x_idx, repo_idx, terms = _add_first_stage(m, inst, uset, cfg, fixed_x)
    obj.update(terms)
    dplus_idx = splus_idx = doplus_idx = yplus_idx = None
    if cfg.lam > 0.0:
        dplus_idx, splus_idx, doplus_idx, yplus_idx, terms = _add_optimism(m, inst, uset, cfg)
        for k, v in terms.items():
            obj[k] = obj.get(k, 0.0) + v
    eta = None
    if scenarios:
        eta = m.add_var("eta", -INF, INF)
        obj[eta] = 1.0
        for i, scen in enumerate(scenarios):
            terms, const, _s, _y, _I = _add_scenario_block(
                m, inst, scen, cfg.lam, cfg.allied_channels, x_idx, repo_idx,
                splus_idx, yplus_idx, tag=f"_{i}")
            row = {eta: 1.0}
            for col, coeff in terms.items():
                row[col] = row.get(col, 0.0) - coeff
            m.add_constr(row, "<=", const, name=f"cut[{i}]")
    m.set_objective(obj)
    m.info = {"x": x_idx, "repo": repo_idx, "eta": eta, "dplus": dplus_idx,
              "splus": splus_idx, "doplus": doplus_idx, "yplus": yplus_idx}
    return m


def extract_allocation(model: LinearModel, sol: Solution, inst: Instance,
                       cfg: BioConfig) -> tuple[Allocation, np.ndarray | None, float | None]:
    """Allocation, optimistic demand, and eta value from a master solution."""
    info = model.info
    T, L = inst.horizon, inst.num_nodes
    x = np.array([[sol.x[info["x"][t, l]] for l in range(L)] for t in range(T)])
    x[np.abs(x) < 1e-10] = 0.0
    repo = None
    if info["repo"] is not None:
        repo = np.zeros((T, L, L))
        for t in range(T):
            for a in range(L):
                for b in range(L):
                    if a != b:
                        repo[t, a, b] = sol.x[info["repo"][t, a, b]]
    s_plus = d_plus = None
    y_plus = None
    if cfg.lam > 0.0:
        s_plus = np.array([[sol.x[info["splus"][t, l]] for l in range(L)] for t in range(T)])
        d_plus = np.array([[sol.x[info["dplus"][t, l]] for l in range(L)] for t in range(T)])
        if info["yplus"] is not None:
            Z = inst.num_zones
            y_plus = np.zeros((T, L, Z))
            for (t, l, z), col in info["yplus"].items():
                y_plus[t, l, z] = sol.x[col]
    eta_val = None if info["eta"] is None else float(sol.x[info["eta"]])
    return Allocation(x, repo, s_plus, y_plus), d_plus, eta_val


def stage_one_value(inst: Instance, cfg: BioConfig, alloc: Allocation,
                    d_plus: np.ndarray | None,
                    d_o_plus: np.ndarray | None = None) -> float:
    """First-stage objective part: optimistic revenue/penalty minus purchase
    cost (the eta-free part of the master objective)."""
    e = inst.econ
    val = -first_stage_cost(inst, alloc)
    if cfg.lam > 0.0 and alloc.s_plus is not None:
        val += float(np.sum((e.walkin_price + e.walkin_penalty) * alloc.s_plus))
        val -= cfg.lam * float(np.sum(e.walkin_penalty * d_plus))
        if alloc.y_plus is not None:
            T, L, Z = alloc.y_plus.shape
            for t in range(T):
                for l in range(L):
                    for z in range(Z):
                        val += (e.online_price[t] + e.online_penalty[t]
                                - e.fulfill_cost[l, z]) * alloc.y_plus[t, l, z]
                val -= cfg.lam * e.online_penalty[t] * float(np.sum(d_o_plus[t]))
    return val


def build_saa_model(inst: Instance, scenarios: list[DemandScenario],
                    integer_allocations: bool = False,
                    uset: UncertaintySet | None = None,
                    weights: list[float] | None = None) -> LinearModel:
    """Sample-average model: maximize the mean recourse profit minus the
    first-stage cost, with one recourse block per sample."""
    if not scenarios:
        raise FormulationError("SAA model needs at least one scenario")
    cfg = BioConfig(lam=0.0, integer_allocations=integer_allocations)
    m = LinearModel("saa", sense="max")
    obj: dict[int, float] = {}
    x_idx, repo_idx, terms = _add_first_stage(m, inst, uset, cfg, None)
    obj.update(terms)
    n = len(scenarios)
    w = weights if weights is not None else [1.0 / n] * n
    const = 0.0
    for i, scen in enumerate(scenarios):
        terms, c, _s, _y, _I = _add_scenario_block(
            m, inst, scen, 0.0, WALKIN_ONLY, x_idx, repo_idx, None, None, tag=f"_{i}")
        for col, coeff in terms.items():
            obj[col] = obj.get(col, 0.0) + w[i] * coeff
        const += w[i] * c
    m.set_objective(obj, const=const)
    m.info = {"x": x_idx, "repo": repo_idx}
    return m


# ---------------------------------------------------------------------------
# exact adversarial subproblem (RLT mixed-binary reformulation)
# ---------------------------------------------------------------------------

def _walkin_big_m(inst: Instance, t: int, l: int) -> float:
    T = inst.horizon
    return float(inst.econ.walkin_price[t, l] + inst.econ.walkin_penalty[t, l]
                 + (T - t) * inst.econ.holding[l])

def _online_big_m(inst: Instance, t: int, z: int) -> float:
    T = inst.horizon
    best = -INF
    for (l, zz, _d) in allowed_edges(inst):
        if zz == z:
            best = max(best, (T - t) * inst.econ.holding[l] - inst.econ.fulfill_cost[l, z])
    if best == -INF:
        return 0.0
    return max(0.0, float(inst.econ.online_price[t] + inst.econ.online_penalty[t] + best))


def build_subproblem(inst: Instance, uset: UncertaintySet, alloc: Allocation,
                     lam: float, allied: str = WALKIN_ONLY,
                     fixed_scenario: DemandScenario | None = None) -> LinearModel:
    """Adversary's problem at fixed first-stage commitments.

    Without `fixed_scenario` this is the exact mixed-binary reformulation:
    binary selectors w pick one discrete demand value per cell, budget rows
    keep the selection inside the set, and big-M links linearize the
    dual-times-demand products.  With `fixed_scenario` the selectors are
    dropped and the model is the plain dual LP at that demand (used by the
    alternating heuristic and for strong-duality checks).
    """
    T, L, Z = inst.horizon, inst.num_nodes, inst.num_zones
    e = inst.econ
    br = inst.business_rules
    lam_online = lam if allied == BOTH_CHANNELS else 0.0
    s_plus = alloc.s_plus if alloc.s_plus is not None else np.zeros((T, L))
    y_plus = alloc.y_plus

    m = LinearModel("subproblem", sense="min")
    obj: dict[int, float] = {}
    const = 0.0

    gamma = np.empty((T, L), dtype=int)
    for t in range(T):
        for l in range(L):
            gamma[t, l] = m.add_var(f"g[{t},{l}]", -INF, INF)
    alpha = np.empty((T, L), dtype=int)
    for t in range(T):
        for l in range(L):
            alpha[t, l] = m.add_var(f"a[{t},{l}]", 0.0, INF)
    beta = np.empty((T, Z), dtype=int) if Z else None
    for t in range(T):
        for z in range(Z):
            beta[t, z] = m.add_var(f"b[{t},{z}]", 0.0, INF)
    kappa = None
    if br.fulfill_capacity is not None:
        kappa = np.empty((T, L), dtype=int)
        for t in range(T):
            for l in range(L):
                kappa[t, l] = m.add_var(f"k[{t},{l}]", 0.0, INF)
                obj[int(kappa[t, l])] = float(br.fulfill_capacity[t, l])
    sigma = None
    if br.service_window_fraction is not None:
        sigma = np.empty(T, dtype=int)
        for t in range(T):
            sigma[t] = m.add_var(f"sg[{t}]", 0.0, INF)

    # dual feasibility
    edge_days = {(l, z): d for l, z, d in allowed_edges(inst)}
    for t in range(T):
        for l in range(L):
            m.add_constr({int(alpha[t, l]): 1.0, int(gamma[t, l]): 1.0}, ">=",
                         float(e.walkin_price[t, l] + e.walkin_penalty[t, l]),
                         name=f"dual_s[{t},{l}]")
        for (l, z), d in edge_days.items():
            row = {int(beta[t, z]): 1.0, int(gamma[t, l]): 1.0}
            if kappa is not None:
                row[int(kappa[t, l])] = 1.0
            if sigma is not None:
                rho = float(br.service_window_fraction)
                fast = d <= br.service_window_days
                row[int(sigma[t])] = (rho - 1.0) if fast else rho
            m.add_constr(row, ">=",
                         float(e.online_price[t] + e.online_penalty[t] - e.fulfill_cost[l, z]),
                         name=f"dual_y[{t},{l},{z}]")
        for l in range(L):
            row = {int(gamma[t, l]): 1.0}
            if t + 1 < T:
                row[int(gamma[t + 1, l])] = -1.0
            m.add_constr(row, ">=", -float(e.holding[l]), name=f"dual_I[{t},{l}]")

    # gamma objective terms: initial stock plus lead-shifted arrivals net of
    # committed optimistic sales
    for l in range(L):
        obj[int(gamma[0, l])] = obj.get(int(gamma[0, l]), 0.0) + inst.inventory.on_hand(l)
    for t in range(T):
        for l in range(L):
            coeff = pipeline_arrival(inst, t, l) + _x_arrival_const(inst, t, l, alloc)
            coeff -= float(s_plus[t, l])
            if y_plus is not None:
                coeff -= float(y_plus[t, l, :].sum())
            obj[int(gamma[t, l])] = obj.get(int(gamma[t, l]), 0.0) + coeff

    winfo = {"b": {}, "o": {}}
    if fixed_scenario is None:
        for t in range(T):
            for l in range(L):
                vals = list(range(int(uset.local_lower["b"][t, l]),
                                  int(uset.local_upper["b"][t, l]) + 1))
                M = _walkin_big_m(inst, t, l)
                wcols, acols = [], []
                for k, val in enumerate(vals):
                    wc = m.add_var(f"wb[{t},{l},{k}]", 0.0, 1.0, BINARY)
                    ac = m.add_var(f"as[{t},{l},{k}]", 0.0, INF)
                    wcols.append(wc)
                    acols.append(ac)
                    obj[ac] = obj.get(ac, 0.0) + (1.0 - lam) * val
                    obj[wc] = obj.get(wc, 0.0) - (1.0 - lam) * val * float(e.walkin_penalty[t, l])
                    m.add_constr({ac: 1.0, wc: -M}, "<=", 0.0, name=f"link_a[{t},{l},{k}]")
                    # lower RLT link keeps the relaxation tight
                    m.add_constr({ac: 1.0, int(alpha[t, l]): -1.0, wc: -M}, ">=", -M,
                                 name=f"linklo_a[{t},{l},{k}]")
                m.add_constr({c: 1.0 for c in wcols}, "==", 1.0, name=f"pick_b[{t},{l}]")
                row = {c: 1.0 for c in acols}
                row[int(alpha[t, l])] = -1.0
                m.add_constr(row, "==", 0.0, name=f"sum_a[{t},{l}]")
                m.add_sos1(wcols, vals)
                winfo["b"][t, l] = (wcols, vals)
            row = {}
            for l in range(L):
                wcols, vals = winfo["b"][t, l]
                for wc, val in zip(wcols, vals):
                    if val:
                        row[wc] = float(val)
            m.add_constr(row, ">=", float(uset.budget_lower["b"][t]), name=f"bud_bl[{t}]")
            m.add_constr(row, "<=", float(uset.budget_upper["b"][t]), name=f"bud_bu[{t}]")
            for z in range(Z):
                vals = list(range(int(uset.local_lower["o"][t, z]),
                                  int(uset.local_upper["o"][t, z]) + 1))
                M = _online_big_m(inst, t, z)
                wcols, bcols = [], []
                for k, val in enumerate(vals):
                    wc = m.add_var(f"wo[{t},{z},{k}]", 0.0, 1.0, BINARY)
                    bc = m.add_var(f"bs[{t},{z},{k}]", 0.0, INF)
                    wcols.append(wc)
                    bcols.append(bc)
                    obj[bc] = obj.get(bc, 0.0) + (1.0 - lam_online) * val
                    obj[wc] = obj.get(wc, 0.0) - (1.0 - lam_online) * val * float(e.online_penalty[t])
                    m.add_constr({bc: 1.0, wc: -M}, "<=", 0.0, name=f"link_b[{t},{z},{k}]")
                    m.add_constr({bc: 1.0, int(beta[t, z]): -1.0, wc: -M}, ">=", -M,
                                 name=f"linklo_b[{t},{z},{k}]")
                m.add_constr({c: 1.0 for c in wcols}, "==", 1.0, name=f"pick_o[{t},{z}]")
                row = {c: 1.0 for c in bcols}
                row[int(beta[t, z])] = -1.0
                m.add_constr(row, "==", 0.0, name=f"sum_b[{t},{z}]")
                m.add_sos1(wcols, vals)
                winfo["o"][t, z] = (wcols, vals)
            if Z:
                row = {}
                for z in range(Z):
                    wcols, vals = winfo["o"][t, z]
                    for wc, val in zip(wcols, vals):
                        if val:
                            row[wc] = float(val)
                m.add_constr(row, ">=", float(uset.budget_lower["o"][t]), name=f"bud_ol[{t}]")
                m.add_constr(row, "<=", float(uset.budget_upper["o"][t]), name=f"bud_ou[{t}]")
    else:
        d = fixed_scenario
        for t in range(T):
            for l in range(L):
                v = float(d.walkin[t, l])
                obj[int(alpha[t, l])] = obj.get(int(alpha[t, l]), 0.0) + (1.0 - lam) * v
                const -= (1.0 - lam) * float(e.walkin_penalty[t, l]) * v
            for z in range(Z):
                v = float(d.online[t, z])
                obj[int(beta[t, z])] = obj.get(int(beta[t, z]), 0.0) + (1.0 - lam_online) * v
                const -= (1.0 - lam_online) * float(e.online_penalty[t]) * v

    m.set_objective(obj, const=const)
    m.info = {"gamma": gamma, "alpha": alpha, "beta": beta, "w": winfo,
              "T": T, "L": L, "Z": Z}
    return m


def extract_worst_scenario(model: LinearModel, sol: Solution) -> DemandScenario:
    """Demand selected by the subproblem's binary selectors."""
    winfo = model.info["w"]
    T, L, Z = model.info["T"], model.info["L"], model.info["Z"]
    walkin = np.zeros((T, L))
    online = np.zeros((T, Z))
    for (t, l), (wcols, vals) in winfo["b"].items():
        walkin[t, l] = _selected_value(sol, wcols, vals, f"walk-in cell ({t},{l})")
    for (t, z), (wcols, vals) in winfo["o"].items():
        online[t, z] = _selected_value(sol, wcols, vals, f"online cell ({t},{z})")
    return DemandScenario(walkin, online)


def _selected_value(sol: Solution, wcols, vals, where: str) -> float:
    picked = None
    for wc, val in zip(wcols, vals):
        wv = float(sol.x[wc])
        if wv > 0.5:
            if abs(wv - 1.0) > 1e-4:
                raise FormulationError(f"non-binary selector at {where}: {wv}")
            picked = val
    if picked is None:
        raise FormulationError(f"no selector chosen at {where}")
    return float(picked)


def solve_subproblem_for_scenario(inst: Instance, alloc: Allocation, lam: float,
                                  scenario: DemandScenario,
                                  allied: str = WALKIN_ONLY,
                                  uset: UncertaintySet | None = None):
    """Dual LP value and multipliers at a fixed demand (strong-duality twin of
    the inner fulfillment problem)."""
    m = build_subproblem(inst, uset, alloc, lam, allied, fixed_scenario=scenario)
    sol = solve(m)
    if sol.status != "optimal":
        raise FormulationError(f"scenario dual LP status {sol.status}")
    info = m.info
    T, L, Z = info["T"], info["L"], info["Z"]
    a = np.array([[sol.x[info["alpha"][t, l]] for l in range(L)] for t in range(T)])
    bta = (np.array([[sol.x[info["beta"][t, z]] for z in range(Z)] for t in range(T)])
           if Z else np.zeros((T, 0)))
    return float(sol.objective), a, bta


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def build_pwl_baseline(inst: Instance, mean_demand, quantile_demand,
                       discount: float = 0.5) -> LinearModel:
    """Deterministic two-class network model: class 1 is the mean demand at
    full price/penalty, class 2 the excess up to the critical quantile at a
    discounted price/penalty."""
    T, L, Z = inst.horizon, inst.num_nodes, inst.num_zones
    e = inst.econ
    mw, mo = np.atleast_2d(mean_demand.walkin), np.atleast_2d(mean_demand.online)
    qw, qo = np.atleast_2d(quantile_demand.walkin), np.atleast_2d(quantile_demand.online)
    if (qw < mw - 1e-9).any() or (qo < mo - 1e-9).any():
        raise FormulationError("critical-quantile demand must dominate the mean")
    exw = np.maximum(0.0, qw - mw)
    exo = np.maximum(0.0, qo - mo)

    cfg = BioConfig(lam=0.0)
    m = LinearModel("pwl", sense="max")
    obj: dict[int, float] = {}
    x_idx, repo_idx, terms = _add_first_stage(m, inst, None, cfg, None)
    obj.update(terms)
    const = 0.0
    I_idx = np.empty((T, L), dtype=int)
    classes = ((mw, mo, 1.0, "1"), (exw, exo, discount, "2"))
    s_cols = {}
    y_cols = {}
    for cw, co, f, tag in classes:
        for t in range(T):
            for l in range(L):
                col = m.add_var(f"s{tag}[{t},{l}]", 0.0, float(cw[t, l]))
                s_cols[tag, t, l] = col
                obj[col] = f * (e.walkin_price[t, l] + e.walkin_penalty[t, l])
                const -= f * e.walkin_penalty[t, l] * float(cw[t, l])
            for (l, z, _d) in allowed_edges(inst):
                col = m.add_var(f"y{tag}[{t},{l},{z}]", 0.0, INF)
                y_cols[tag, t, l, z] = col
                obj[col] = f * (e.online_price[t] + e.online_penalty[t]) - e.fulfill_cost[l, z]
            for z in range(Z):
                const -= f * e.online_penalty[t] * float(co[t, z])
                cols = {y_cols[tag, t, l, z]: 1.0 for l in range(L) if (tag, t, l, z) in y_cols}
                m.add_constr(cols, "<=", float(co[t, z]), name=f"ecom{tag}[{t},{z}]")
    for t in range(T):
        for l in range(L):
            I_idx[t, l] = m.add_var(f"I[{t + 1},{l}]", 0.0, INF)
            obj[int(I_idx[t, l])] = -e.holding[l]
            coeffs = {int(I_idx[t, l]): 1.0}
            for tag in ("1", "2"):
                coeffs[s_cols[tag, t, l]] = 1.0
                for z in range(Z):
                    if (tag, t, l, z) in y_cols:
                        coeffs[y_cols[tag, t, l, z]] = 1.0
            for col, sign in _x_arrival_terms(inst, t, l, x_idx, repo_idx):
                coeffs[col] = coeffs.get(col, 0.0) - sign
            rhs = pipeline_arrival(inst, t, l)
            if t == 0:
                rhs += inst.inventory.on_hand(l)
            else:
                coeffs[int(I_idx[t - 1, l])] = -1.0
            m.add_constr(coeffs, "==", rhs, name=f"bal[{t},{l}]")
        y_all = {(l, z): y_cols["1", t, l, z] for (tag, tt, l, z) in y_cols
                 if tt == t and tag == "1"}
        extra = {(l, z): y_cols["2", t, l, z] for (tag, tt, l, z) in y_cols
                 if tt == t and tag == "2"}
        _add_business_rule_rows(m, inst, t, y_all, extra)
    m.set_objective(obj, const=const)
    m.info = {"x": x_idx, "repo": repo_idx}
    return m


def pwl_allocation(inst: Instance, mean_demand, quantile_demand,
                   discount: float = 0.5) -> Allocation:
    m = build_pwl_baseline(inst, mean_demand, quantile_demand, discount)
    sol = solve(m)
    if sol.status != "optimal":
        raise FormulationError(f"PWL model status {sol.status}")
    T, L = inst.horizon, inst.num_nodes
    x = np.array([[sol.x[m.info["x"][t, l]] for l in range(L)] for t in range(T)])
    x[np.abs(x) < 1e-10] = 0.0
    return Allocation(x)


def infer_warehouses(inst: Instance, means) -> list[int]:
    """Nodes with no walk-in demand act as warehouses for the heuristics."""
    mw = np.atleast_2d(means.walkin)
    return [l for l in range(inst.num_nodes) if float(mw[:, l].sum()) == 0.0]


def basestock_policy(inst: Instance, means) -> Allocation:
    """Order-up-to heuristic: store orders cover lead-time-plus-cycle walk-in
    demand at the margin-ratio critical quantile; a chain-level e-commerce
    order-up-to is split across warehouses in proportion to their individual
    base-stock quantities (zones mapped to their nearest warehouse)."""
    T, L, Z = inst.horizon, inst.num_nodes, inst.num_zones
    e = inst.econ
    mw = np.atleast_2d(means.walkin)
    mo = np.atleast_2d(means.online)
    x = np.zeros((T, L))
    position = np.array([sum(inst.inventory.pipeline[l]) for l in range(L)])

    warehouses = infer_warehouses(inst, means)
    store_excess = np.zeros(L)
    for l in range(L):
        horizon_l = min(T, int(inst.inventory.lead_time[l]) + 1)
        mu = float(mw[:horizon_l, l].sum())
        price = float(e.walkin_price[0, l])
        margin = price - float(e.purchase_cost[l])
        cr = margin / price if price > 0 else 0.0
        target = float(poisson_quantile(cr, mu)) if cr > 0.0 and mu > 0 else 0.0
        if l not in warehouses:
            x[0, l] = max(0.0, target - position[l])
            store_excess[l] = max(0.0, position[l] - target)

    if Z == 0:
        return Allocation(x)
    candidates = warehouses if warehouses else list(range(L))
    # zone -> nearest candidate by fulfillment cost; ties to the lower index
    zone_home = {}
    for z in range(Z):
        best, best_c = None, INF
        for l in candidates:
            c = float(e.fulfill_cost[l, z])
            if c < best_c - 1e-12:
                best, best_c = l, c
        zone_home[z] = best
    price_o = float(e.online_price[0])
    avg_ship = float(np.mean([e.fulfill_cost[l, z] for l, z, _ in allowed_edges(inst)])
                     ) if allowed_edges(inst) else 0.0
    avg_cost = float(np.mean([e.purchase_cost[l] for l in candidates]))
    cr_o = (price_o - avg_cost - avg_ship) / price_o if price_o > 0 else 0.0

    lead_o = max((int(inst.inventory.lead_time[l]) for l in candidates), default=0)
    horizon_o = min(T, lead_o + 1)
    chain_mu = float(mo[:horizon_o, :].sum())
    chain_target = float(poisson_quantile(cr_o, chain_mu)) if cr_o > 0.0 and chain_mu > 0 else 0.0
    chain_position = float(sum(position[l] for l in warehouses) + store_excess.sum())
    chain_order = max(0.0, chain_target - chain_position)
    if chain_order <= 0.0:
        return Allocation(x)

    per_wh = np.zeros(L)
    for l in candidates:
        mu_l = float(sum(mo[:horizon_o, z].sum() for z in range(Z) if zone_home[z] == l))
        tgt = float(poisson_quantile(cr_o, mu_l)) if cr_o > 0.0 and mu_l > 0 else 0.0
        per_wh[l] = max(0.0, tgt - position[l])
    total = per_wh.sum()
    if total > 0:
        for l in candidates:
            x[0, l] += chain_order * per_wh[l] / total
    else:
        share = chain_order / len(candidates)
        for l in candidates:
            x[0, l] += share
    return Allocation(x)
