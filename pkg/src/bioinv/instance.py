"""Omnichannel network instance: nodes, zones, economics, lead times,
initial inventory pipeline, horizon, and optional business rules.

Instances are immutable after construction and validated against the standing
assumptions of the planning model: service priority of walk-in customers over
cross-channel fulfillment, prices and penalties non-increasing over time, and
dimensional consistency of every parameter array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class InstanceError(Exception):
    pass


def _as_2d(name: str, arr, rows: int, cols: int) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1 and rows == 1 and a.size == cols:
        a = a.reshape(1, cols)
    if a.shape != (rows, cols):
        raise InstanceError(f"{name}: expected shape ({rows}, {cols}), got {a.shape}")
    return a


def _as_1d(name: str, arr, size: int) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if a.shape != (size,):
        raise InstanceError(f"{name}: expected length {size}, got shape {a.shape}")
    return a


def _reject_unknown(d: dict, known: set, where: str):
    unknown = set(d) - known
    if unknown:
        raise InstanceError(f"{where}: unknown fields {sorted(unknown)}")


@dataclass(frozen=True)
class Network:
    nodes: tuple            # stores and warehouses
    zones: tuple            # online demand regions
    supplier: str
    sfs_eligible: tuple     # nodes allowed to ship to zones
    ship_edges: tuple       # (node, zone, delivery_days)

    @classmethod
    def create(cls, nodes, zones, supplier, sfs_eligible=None, ship_edges=None):
        nodes = tuple(nodes)
        zones = tuple(zones)
        if sfs_eligible is None:
            sfs_eligible = nodes
        if ship_edges is None:
            ship_edges = tuple((n, z, 0) for n in sfs_eligible for z in zones)
        edges = tuple((str(n), str(z), int(d)) for n, z, d in ship_edges)
        return cls(nodes, zones, str(supplier), tuple(sfs_eligible), edges)

    def node_index(self, name) -> int:
        return self.nodes.index(name)

    def zone_index(self, name) -> int:
        return self.zones.index(name)

    def edge_pairs(self) -> list[tuple[int, int]]:
        """Allowed (node_idx, zone_idx) fulfillment pairs."""
        return [(self.nodes.index(n), self.zones.index(z)) for n, z, _ in self.ship_edges]


@dataclass(frozen=True)
class EconParams:
    walkin_price: np.ndarray    # (T, n_nodes)
    walkin_penalty: np.ndarray  # (T, n_nodes)
    online_price: np.ndarray    # (T,)
    online_penalty: np.ndarray  # (T,)
    holding: np.ndarray         # (n_nodes,)
    fulfill_cost: np.ndarray    # (n_nodes, n_zones)
    purchase_cost: np.ndarray   # (n_nodes,)
    reposition_cost: np.ndarray | None = None  # (n_nodes, n_nodes)


@dataclass(frozen=True)
class InventoryState:
    pipeline: tuple             # per node: arrivals in j periods, j = 0..lead_time
    lead_time: np.ndarray       # (n_nodes,), integer periods
    reposition_lead: np.ndarray | None = None  # (n_nodes, n_nodes)

    def on_hand(self, l: int) -> float:
        return float(self.pipeline[l][0])

    def arriving(self, l: int, j: int) -> float:
        row = self.pipeline[l]
        return float(row[j]) if j < len(row) else 0.0


@dataclass(frozen=True)
class BusinessRules:
    transport_capacity: np.ndarray | None = None   # (T, n_nodes), cap on x
    fulfill_capacity: np.ndarray | None = None     # (T, n_nodes), cap on sum_z y
    service_window_fraction: float | None = None   # rho in [0,1]
    service_window_days: int | None = None         # day threshold defining fast edges

    @property
    def any_active(self) -> bool:
        return (self.transport_capacity is not None
                or self.fulfill_capacity is not None
                or self.service_window_fraction is not None)


@dataclass(frozen=True)
class Instance:
    network: Network
    econ: EconParams
    inventory: InventoryState
    horizon: int
    business_rules: BusinessRules = field(default_factory=BusinessRules)

    @property
    def num_nodes(self) -> int:
        return len(self.network.nodes)

    @property
    def num_zones(self) -> int:
        return len(self.network.zones)

    def zero_initial_inventory(self) -> bool:
        return all(all(v == 0 for v in row) for row in self.inventory.pipeline)


def build_instance(nodes, zones, horizon, *, walkin_price, walkin_penalty,
                   online_price=None, online_penalty=None, holding=None,
                   fulfill_cost=None, purchase_cost=None, lead_time=None,
                   pipeline=None, supplier="S", sfs_eligible=None, ship_edges=None,
                   reposition_cost=None, reposition_lead=None,
                   business_rules=None) -> Instance:
    """Convenience constructor with broadcasting of scalars; dimensions are
    still checked strictly."""
    nodes = list(nodes)
    zones = list(zones)
    T, L, Z = int(horizon), len(nodes), len(zones)

    def grid2(val, rows, cols, name):
        a = np.asarray(val, dtype=float)
        if a.ndim == 0:
            a = np.full((rows, cols), float(a))
        return _as_2d(name, a, rows, cols)

    def grid1(val, size, name):
        a = np.asarray(val, dtype=float)
        if a.ndim == 0:
            a = np.full(size, float(a))
        return _as_1d(name, a, size)

    econ = EconParams(
        walkin_price=grid2(walkin_price, T, L, "walkin_price"),
        walkin_penalty=grid2(walkin_penalty, T, L, "walkin_penalty"),
        online_price=grid1(0.0 if online_price is None else online_price, T, "online_price"),
        online_penalty=grid1(0.0 if online_penalty is None else online_penalty, T, "online_penalty"),
        holding=grid1(0.0 if holding is None else holding, L, "holding"),
        fulfill_cost=grid2(0.0 if fulfill_cost is None else fulfill_cost, L, Z, "fulfill_cost"),
        purchase_cost=grid1(0.0 if purchase_cost is None else purchase_cost, L, "purchase_cost"),
        reposition_cost=None if reposition_cost is None
        else _as_2d("reposition_cost", np.asarray(reposition_cost, dtype=float), L, L),
    )
    lt = grid1(0 if lead_time is None else lead_time, L, "lead_time").astype(int)
    if pipeline is None:
        pipe = tuple(tuple(0.0 for _ in range(lt[l] + 1)) for l in range(L))
    else:
        pipe = tuple(tuple(float(v) for v in row) for row in pipeline)
    inv = InventoryState(
        pipeline=pipe,
        lead_time=lt,
        reposition_lead=None if reposition_lead is None
        else _as_2d("reposition_lead", np.asarray(reposition_lead, dtype=float), L, L).astype(int),
    )
    net = Network.create(nodes, zones, supplier, sfs_eligible, ship_edges)
    inst = Instance(net, econ, inv, T, business_rules or BusinessRules())
    structural = structural_problems(inst)
    if structural:
        raise InstanceError("; ".join(structural))
    return inst


def structural_problems(inst: Instance) -> list[str]:
    """Hard shape/reference errors that make the instance unusable (as
    opposed to assumption violations reported by validate_instance)."""
    out = []
    net = inst.network
    T, L, Z = inst.horizon, inst.num_nodes, inst.num_zones
    if T < 1:
        out.append(f"horizon: must be >= 1, got {T}")
    if len(set(net.nodes)) != L:
        out.append("network.nodes: duplicate node identifiers")
    if len(set(net.zones)) != Z:
        out.append("network.zones: duplicate zone identifiers")
    for n in net.sfs_eligible:
        if n not in net.nodes:
            out.append(f"network.sfs_eligible: unknown node {n!r}")
    for n, z, d in net.ship_edges:
        if n not in net.nodes:
            out.append(f"network.ship_edges: unknown node {n!r}")
        if z not in net.zones:
            out.append(f"network.ship_edges: unknown zone {z!r}")
    e = inst.econ
    for name, arr, shape in (
        ("walkin_price", e.walkin_price, (T, L)),
        ("walkin_penalty", e.walkin_penalty, (T, L)),
        ("fulfill_cost", e.fulfill_cost, (L, Z)),
    ):
        if arr.shape != shape:
            out.append(f"econ.{name}: expected shape {shape}, got {arr.shape}")
    for name, arr, size in (
        ("online_price", e.online_price, T),
        ("online_penalty", e.online_penalty, T),
        ("holding", e.holding, L),
        ("purchase_cost", e.purchase_cost, L),
    ):
        if arr.shape != (size,):
            out.append(f"econ.{name}: expected length {size}, got {arr.shape}")
    if len(inst.inventory.pipeline) != L:
        out.append("inventory.pipeline: one row per node required")
    else:
        for l in range(L):
            if len(inst.inventory.pipeline[l]) != inst.inventory.lead_time[l] + 1:
                out.append(
                    f"inventory.pipeline[{net.nodes[l]}]: expected lead_time+1 = "
                    f"{inst.inventory.lead_time[l] + 1} entries, got {len(inst.inventory.pipeline[l])}")
    return out


def validate_instance(inst: Instance) -> list[str]:
    """Check the standing model assumptions; each violation names the failing
    constraint, indices, and values.  Violations are data, not failures."""
    out = []
    net, e = inst.network, inst.econ
    T, L = inst.horizon, inst.num_nodes

    for name, arr in (("walkin_price", e.walkin_price), ("walkin_penalty", e.walkin_penalty),
                      ("online_price", e.online_price), ("online_penalty", e.online_penalty),
                      ("holding", e.holding), ("fulfill_cost", e.fulfill_cost),
                      ("purchase_cost", e.purchase_cost)):
        if (np.asarray(arr) < 0).any():
            out.append(f"nonnegativity: econ.{name} has negative entries")
    if e.reposition_cost is not None and (e.reposition_cost < 0).any():
        out.append("nonnegativity: econ.reposition_cost has negative entries")
    for l in range(L):
        for j, v in enumerate(inst.inventory.pipeline[l]):
            if v < 0:
                out.append(f"nonnegativity: inventory.pipeline[{net.nodes[l]}][{j}] = {v}")
    if (inst.inventory.lead_time < 0).any():
        out.append("nonnegativity: negative lead time")

    # service priority: p_b + b_b > p_o + b_o - c over every allowed edge
    for li, zi in net.edge_pairs():
        for t in range(T):
            lhs = e.walkin_price[t, li] + e.walkin_penalty[t, li]
            rhs = e.online_price[t] + e.online_penalty[t] - e.fulfill_cost[li, zi]
            if not lhs > rhs:
                out.append(
                    f"service-priority: node {net.nodes[li]}, zone {net.zones[zi]}, period {t}: "
                    f"p_b+b_b = {lhs} <= p_o+b_o-c = {rhs}")

    # prices and penalties non-increasing over time
    for t in range(1, T):
        for li in range(L):
            if e.walkin_price[t, li] > e.walkin_price[t - 1, li]:
                out.append(f"monotonicity: walkin_price increases at period {t}, "
                           f"node {net.nodes[li]} ({e.walkin_price[t-1, li]} -> {e.walkin_price[t, li]})")
            if e.walkin_penalty[t, li] > e.walkin_penalty[t - 1, li]:
                out.append(f"monotonicity: walkin_penalty increases at period {t}, "
                           f"node {net.nodes[li]} ({e.walkin_penalty[t-1, li]} -> {e.walkin_penalty[t, li]})")
        if e.online_price[t] > e.online_price[t - 1]:
            out.append(f"monotonicity: online_price increases at period {t} "
                       f"({e.online_price[t-1]} -> {e.online_price[t]})")
        if e.online_penalty[t] > e.online_penalty[t - 1]:
            out.append(f"monotonicity: online_penalty increases at period {t} "
                       f"({e.online_penalty[t-1]} -> {e.online_penalty[t]})")

    eligible = set(net.sfs_eligible)
    for n, z, _ in net.ship_edges:
        if n in net.nodes and n not in eligible:
            out.append(f"eligibility: ship_edge from non-SFS-eligible node {n!r}")

    br = inst.business_rules
    if br.service_window_fraction is not None:
        if not 0.0 <= br.service_window_fraction <= 1.0:
            out.append(f"business-rules: service_window_fraction {br.service_window_fraction} "
                       "outside [0,1]")
        if br.service_window_days is None:
            out.append("business-rules: service_window_fraction set without service_window_days")
    for name, cap in (("transport_capacity", br.transport_capacity),
                      ("fulfill_capacity", br.fulfill_capacity)):
        if cap is not None:
            if cap.shape != (T, L):
                out.append(f"business-rules: {name} expected shape {(T, L)}, got {cap.shape}")
            elif (cap < 0).any():
                out.append(f"business-rules: {name} has negative entries")
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def instance_to_dict(inst: Instance) -> dict:
    d = {
        "network": {
            "nodes": list(inst.network.nodes),
            "zones": list(inst.network.zones),
            "supplier": inst.network.supplier,
            "sfs_eligible": list(inst.network.sfs_eligible),
            "ship_edges": [{"node": n, "zone": z, "days": d_} for n, z, d_ in inst.network.ship_edges],
        },
        "econ": {
            "walkin_price": inst.econ.walkin_price.tolist(),
            "walkin_penalty": inst.econ.walkin_penalty.tolist(),
            "online_price": inst.econ.online_price.tolist(),
            "online_penalty": inst.econ.online_penalty.tolist(),
            "holding": inst.econ.holding.tolist(),
            "fulfill_cost": inst.econ.fulfill_cost.tolist(),
            "purchase_cost": inst.econ.purchase_cost.tolist(),
        },
        "inventory": {
            "pipeline": [list(row) for row in inst.inventory.pipeline],
            "lead_time": inst.inventory.lead_time.tolist(),
        },
        "horizon": inst.horizon,
    }
    if inst.econ.reposition_cost is not None:
        d["econ"]["reposition_cost"] = inst.econ.reposition_cost.tolist()
    if inst.inventory.reposition_lead is not None:
        d["inventory"]["reposition_lead"] = inst.inventory.reposition_lead.tolist()
    br = inst.business_rules
    if br.any_active:
        rules = {}
        if br.transport_capacity is not None:
            rules["transport_capacity"] = br.transport_capacity.tolist()
        if br.fulfill_capacity is not None:
            rules["fulfill_capacity"] = br.fulfill_capacity.tolist()
        if br.service_window_fraction is not None:
            rules["service_window_fraction"] = br.service_window_fraction
            rules["service_window_days"] = br.service_window_days
        d["business_rules"] = rules
    return d


def instance_from_dict(d: dict) -> Instance:
    _reject_unknown(d, {"network", "econ", "inventory", "horizon", "business_rules"}, "instance")
    try:
        net_d = d["network"]
        econ_d = d["econ"]
        inv_d = d["inventory"]
        T = int(d["horizon"])
    except KeyError as exc:
        raise InstanceError(f"instance: missing section {exc}") from None
    _reject_unknown(net_d, {"nodes", "zones", "supplier", "sfs_eligible", "ship_edges"}, "network")
    _reject_unknown(econ_d, {"walkin_price", "walkin_penalty", "online_price", "online_penalty",
                             "holding", "fulfill_cost", "purchase_cost", "reposition_cost"}, "econ")
    _reject_unknown(inv_d, {"pipeline", "lead_time", "reposition_lead"}, "inventory")

    nodes = [str(n) for n in net_d["nodes"]]
    zones = [str(z) for z in net_d.get("zones", [])]
    edges = []
    for i, e in enumerate(net_d.get("ship_edges", [])):
        _reject_unknown(e, {"node", "zone", "days"}, f"network.ship_edges[{i}]")
        if e["zone"] not in zones:
            raise InstanceError(f"network.ship_edges[{i}]: unknown zone {e['zone']!r}")
        if e["node"] not in nodes:
            raise InstanceError(f"network.ship_edges[{i}]: unknown node {e['node']!r}")
        edges.append((e["node"], e["zone"], int(e.get("days", 0))))

    br = None
    if "business_rules" in d:
        rd = d["business_rules"]
        _reject_unknown(rd, {"transport_capacity", "fulfill_capacity",
                             "service_window_fraction", "service_window_days"}, "business_rules")
        br = BusinessRules(
            transport_capacity=None if "transport_capacity" not in rd
            else np.array(rd["transport_capacity"], dtype=float),
            fulfill_capacity=None if "fulfill_capacity" not in rd
            else np.array(rd["fulfill_capacity"], dtype=float),
            service_window_fraction=rd.get("service_window_fraction"),
            service_window_days=rd.get("service_window_days"),
        )
    return build_instance(
        nodes, zones, T,
        walkin_price=np.array(econ_d["walkin_price"], dtype=float),
        walkin_penalty=np.array(econ_d["walkin_penalty"], dtype=float),
        online_price=np.array(econ_d["online_price"], dtype=float),
        online_penalty=np.array(econ_d["online_penalty"], dtype=float),
        holding=np.array(econ_d["holding"], dtype=float),
        fulfill_cost=(np.array(econ_d["fulfill_cost"], dtype=float).reshape(len(nodes), -1)
                      if econ_d.get("fulfill_cost") else np.zeros((len(nodes), 0))),
        purchase_cost=np.array(econ_d["purchase_cost"], dtype=float),
        lead_time=np.array(inv_d["lead_time"], dtype=float),
        pipeline=inv_d["pipeline"],
        supplier=net_d.get("supplier", "S"),
        sfs_eligible=net_d.get("sfs_eligible"),
        ship_edges=edges,
        reposition_cost=econ_d.get("reposition_cost"),
        reposition_lead=inv_d.get("reposition_lead"),
        business_rules=br,
    )


def save_instance(inst: Instance, path: str):
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1)
        fh.write("\n")


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from None
    return instance_from_dict(d)
