"""Embedded LP / mixed-binary solver.

Self-contained two-phase bounded-variable simplex plus best-bound
branch-and-bound on binary variables.  Every optimization model in this
package goes through `LinearModel` and `solve`, so an external backend could
be swapped in behind the same interface.

Conventions:
  - variables carry individual bounds; free variables are split internally,
  - constraints are dense-ified at solve time (desk-scale models only),
  - the simplex uses Dantzig pricing with lowest-index tie-breaking and falls
    back to Bland's rule after a degenerate streak, which keeps every solve
    deterministic and cycle-free.

Tolerances: feasibility 1e-7, relative optimality 1e-6, binary integrality
1e-6.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

INF = float("inf")

FEAS_TOL = 1e-7
OPT_TOL = 1e-6
INT_TOL = 1e-6
REDUCED_COST_TOL = 1e-9
_PIVOT_TOL = 1e-9

CONTINUOUS = "continuous"
BINARY = "binary"

LESS_EQUAL = "<="
EQUAL = "=="
GREATER_EQUAL = ">="

_SENSES = (LESS_EQUAL, EQUAL, GREATER_EQUAL)


class SolverError(Exception):
    pass


@dataclass
class _Constraint:
    cols: list
    vals: list
    sense: str
    rhs: float
    name: str = ""


class LinearModel:
    """A linear program or mixed-binary program in natural (row) form."""

    def __init__(self, name: str = "", sense: str = "max"):
        if sense not in ("min", "max"):
            raise SolverError(f"objective sense must be min or max, got {sense!r}")
        self.name = name
        self.obj_sense = sense
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.kind: list[str] = []
        self.constraints: list[_Constraint] = []
        self.obj: dict[int, float] = {}
        self.obj_const = 0.0
        # SOS1 groups (cols, weights): exactly one member is nonzero; used
        # for dichotomy branching when every member is binary
        self.sos1: list[tuple[list[int], list[float]]] = []
        # builder metadata (variable index maps etc.), free-form
        self.info: dict = {}

    def add_sos1(self, cols: list[int], weights: list[float]):
        self.sos1.append((list(cols), [float(w) for w in weights]))

    @property
    def num_vars(self) -> int:
        return len(self.lb)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def add_var(self, name: str, lb: float = 0.0, ub: float = INF,
                kind: str = CONTINUOUS) -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise SolverError(f"unknown variable kind {kind!r}")
        if kind == BINARY and not (lb >= 0.0 and ub <= 1.0):
            raise SolverError(f"binary variable {name!r} must have bounds within [0,1]")
        if lb > ub:
            raise SolverError(f"variable {name!r} has lb {lb} > ub {ub}")
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.kind.append(kind)
        return len(self.lb) - 1

    def add_constr(self, coeffs, sense: str, rhs: float, name: str = "") -> int:
        if sense not in _SENSES:
            raise SolverError(f"unknown constraint sense {sense!r}")
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        acc: dict[int, float] = {}
        for j, v in items:
            v = float(v)
            if v == 0.0:
                continue
            acc[j] = acc.get(j, 0.0) + v
        cols, vals = [], []
        for j in acc:
            if not 0 <= j < self.num_vars:
                raise SolverError(f"constraint {name!r} references unknown column {j}")
            cols.append(j)
            vals.append(acc[j])
        self.constraints.append(_Constraint(cols, vals, sense, float(rhs), name))
        return len(self.constraints) - 1

    def set_objective(self, coeffs, sense: str | None = None, const: float = 0.0):
        if sense is not None:
            if sense not in ("min", "max"):
                raise SolverError(f"objective sense must be min or max, got {sense!r}")
            self.obj_sense = sense
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        self.obj = {}
        for j, v in items:
            if not 0 <= j < self.num_vars:
                raise SolverError(f"objective references unknown column {j}")
            if v != 0.0:
                self.obj[j] = self.obj.get(j, 0.0) + float(v)
        self.obj_const = float(const)

    def validate(self) -> list[str]:
        """Invariant check; returns human-readable problems (empty when clean)."""
        problems = []
        for j, (lo, hi, kd) in enumerate(zip(self.lb, self.ub, self.kind)):
            if lo > hi:
                problems.append(f"var {self.var_names[j]}: lb {lo} > ub {hi}")
            if kd == BINARY and (lo < 0.0 or hi > 1.0):
                problems.append(f"binary var {self.var_names[j]} bounds outside [0,1]")
        return problems

    def to_lp_text(self) -> str:
        """Dump in CPLEX LP text format for debugging against external solvers."""
        lines = ["Maximize" if self.obj_sense == "max" else "Minimize"]
        terms = " ".join(f"{self.obj[j]:+.17g} {self.var_names[j]}" for j in sorted(self.obj))
        lines.append(" obj: " + (terms or "0"))
        lines.append("Subject To")
        for i, con in enumerate(self.constraints):
            body = " ".join(
                f"{v:+.17g} {self.var_names[j]}" for j, v in zip(con.cols, con.vals)
            )
            op = {"<=": "<=", "==": "=", ">=": ">="}[con.sense]
            lines.append(f" c{i}: {body or '0'} {op} {con.rhs:.17g}")
        lines.append("Bounds")
        for j in range(self.num_vars):
            lo = "-inf" if self.lb[j] == -INF else f"{self.lb[j]:.17g}"
            hi = "+inf" if self.ub[j] == INF else f"{self.ub[j]:.17g}"
            lines.append(f" {lo} <= {self.var_names[j]} <= {hi}")
        bins = [self.var_names[j] for j in range(self.num_vars) if self.kind[j] == BINARY]
        if bins:
            lines.append("Binary")
            lines.append(" " + " ".join(bins))
        lines.append("End")
        return "\n".join(lines)


@dataclass
class SolveStats:
    simplex_iterations: int = 0
    nodes: int = 0
    wall_time: float = 0.0


@dataclass
class Solution:
    status: str  # optimal | infeasible | unbounded | limit
    objective: float
    x: np.ndarray | None
    stats: SolveStats = field(default_factory=SolveStats)

    def value(self, j: int) -> float:
        return float(self.x[j])


# ---------------------------------------------------------------------------
# standard form
# ---------------------------------------------------------------------------

class _StandardLP:
    """min c'x, A x = b, l <= x <= u, with a map back to user variables.

    Free variables are split into a difference of nonnegative columns;
    variables with only an upper bound are mirrored first.
    """

    def __init__(self, model: LinearModel):
        ncols = 0
        self.pos: list[int] = []
        self.neg: list[int | None] = []
        self.negated: list[bool] = []
        lbs: list[float] = []
        ubs: list[float] = []
        for j in range(model.num_vars):
            lo, hi = model.lb[j], model.ub[j]
            negated = False
            if lo == -INF and hi < INF:
                lo, hi = -hi, INF
                negated = True
            self.negated.append(negated)
            if lo == -INF:
                self.pos.append(ncols)
                self.neg.append(ncols + 1)
                lbs.extend([0.0, 0.0])
                ubs.extend([INF, INF])
                ncols += 2
            else:
                self.pos.append(ncols)
                self.neg.append(None)
                lbs.append(lo)
                ubs.append(hi)
                ncols += 1

        m = model.num_constraints
        nslack = sum(1 for c in model.constraints if c.sense != EQUAL)
        A = np.zeros((m, ncols + nslack))
        b = np.empty(m)
        k = ncols
        for i, con in enumerate(model.constraints):
            for j, v in zip(con.cols, con.vals):
                sign = -v if self.negated[j] else v
                A[i, self.pos[j]] += sign
                if self.neg[j] is not None:
                    A[i, self.neg[j]] -= sign
            b[i] = con.rhs
            if con.sense != EQUAL:
                A[i, k] = 1.0 if con.sense == LESS_EQUAL else -1.0
                lbs.append(0.0)
                ubs.append(INF)
                k += 1
        self.A = A
        self.b = b
        self.lb = np.array(lbs)
        self.ub = np.array(ubs)

        c = np.zeros(ncols + nslack)
        sgn = 1.0 if model.obj_sense == "min" else -1.0
        for j, v in model.obj.items():
            vv = sgn * (-v if self.negated[j] else v)
            c[self.pos[j]] += vv
            if self.neg[j] is not None:
                c[self.neg[j]] -= vv
        self.c = c
        self.min_sign = sgn  # user objective = min_sign * standard objective
        self.model = model

    def recover(self, xs: np.ndarray) -> np.ndarray:
        x = np.empty(self.model.num_vars)
        for j in range(self.model.num_vars):
            v = xs[self.pos[j]]
            if self.neg[j] is not None:
                v -= xs[self.neg[j]]
            x[j] = -v if self.negated[j] else v
        return x


# ---------------------------------------------------------------------------
# bounded-variable two-phase simplex
# ---------------------------------------------------------------------------

_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2

_BLAND_TRIGGER = 60  # consecutive degenerate pivots before switching rules


class _Simplex:
    def __init__(self, A, b, c, lb, ub):
        self.m, self.n = A.shape
        self.ntot = self.n + self.m
        self.T = np.hstack([A.astype(float), np.eye(self.m)])
        self.b = b.astype(float)
        self.c = c
        self.lb = np.concatenate([lb, np.zeros(self.m)])
        self.ub = np.concatenate([ub, np.zeros(self.m)])
        self.status = np.full(self.ntot, _AT_LOWER, dtype=np.int8)
        self.basis = np.arange(self.n, self.ntot)
        self.iterations = 0

    def _nonbasic_values(self) -> np.ndarray:
        v = np.where(self.status == _AT_UPPER, self.ub, self.lb)
        v[self.basis] = 0.0
        return v

    def _setup_phase1(self):
        xN = self._nonbasic_values()[: self.n]
        resid = self.b - self.T[:, : self.n] @ xN
        flip = resid < 0
        self.T[flip, : self.n] *= -1.0
        resid[flip] *= -1.0
        self.T[:, self.n:] = np.eye(self.m)
        self.bhat = resid.copy()  # values of the basic (artificial) variables
        self.ub[self.n:] = INF

    def _pivot_tableau(self, row: int, col: int):
        piv = self.T[row, col]
        self.T[row] = self.T[row] / piv
        colvals = self.T[:, col].copy()
        colvals[row] = 0.0
        self.T -= np.outer(colvals, self.T[row])
        self.T[:, col] = 0.0
        self.T[row, col] = 1.0

    def _run(self, cost: np.ndarray, allow: np.ndarray) -> str:
        degenerate = 0
        max_iter = 50000 + 200 * (self.m + self.n)
        while True:
            self.iterations += 1
            if self.iterations > max_iter:
                raise SolverError("simplex iteration safety cap reached")
            z = cost - cost[self.basis] @ self.T
            span = self.ub - self.lb
            cand = allow & (span > 0) & (
                ((self.status == _AT_LOWER) & (z < -REDUCED_COST_TOL))
                | ((self.status == _AT_UPPER) & (z > REDUCED_COST_TOL))
            )
            cand[self.basis] = False
            idx = np.nonzero(cand)[0]
            if idx.size == 0:
                return "optimal"
            if degenerate >= _BLAND_TRIGGER:
                enter = int(idx[0])
            else:
                enter = int(idx[int(np.argmax(np.abs(z[idx])))])
            increasing = self.status[enter] == _AT_LOWER
            # movement of basics: x_B = bhat - theta * d
            d = self.T[:, enter].copy()
            if not increasing:
                d = -d
            bl = self.lb[self.basis]
            bu = self.ub[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                drop = np.where(d > _PIVOT_TOL, (self.bhat - bl) / d, INF)
                rise = np.where(d < -_PIVOT_TOL, (bu - self.bhat) / (-d), INF)
            drop = np.where(np.isfinite(bl), drop, INF)
            rise = np.where(np.isfinite(bu), rise, INF)
            row_ratio = np.minimum(drop, rise)
            row_ratio = np.maximum(row_ratio, 0.0)  # degenerate guard
            if self.m:
                r = int(np.argmin(row_ratio))
                theta_rows = float(row_ratio[r])
                if degenerate >= _BLAND_TRIGGER and theta_rows < INF:
                    # Bland's leaving rule: smallest basic variable index
                    # among the rows tied at the minimum ratio
                    ties = np.nonzero(row_ratio <= theta_rows + 1e-12)[0]
                    r = int(ties[int(np.argmin(self.basis[ties]))])
                    theta_rows = float(row_ratio[r])
            else:
                r, theta_rows = -1, INF
            theta_enter = span[enter]  # may be INF
            theta = min(theta_rows, theta_enter)
            if theta == INF:
                return "unbounded"
            degenerate = degenerate + 1 if theta <= 1e-11 else 0
            if theta_enter <= theta_rows:
                # bound flip, no basis change
                self.bhat -= d * theta_enter
                self.status[enter] = _AT_UPPER if increasing else _AT_LOWER
                continue
            leaving = int(self.basis[r])
            self.status[leaving] = _AT_LOWER if drop[r] <= rise[r] else _AT_UPPER
            self.bhat = self.bhat - d * theta
            self._pivot_tableau(r, enter)
            self.basis[r] = enter
            self.status[enter] = _BASIC
            self.bhat[r] = (self.lb[enter] + theta) if increasing else (self.ub[enter] - theta)

    def _assemble(self) -> np.ndarray:
        xs = self._nonbasic_values()
        xs[self.basis] = self.bhat
        return xs

    def solve(self):
        self._setup_phase1()
        phase1 = np.zeros(self.ntot)
        phase1[self.n:] = 1.0
        allow = np.ones(self.ntot, dtype=bool)
        result = self._run(phase1, allow)
        if result != "optimal":
            raise SolverError("phase-1 simplex did not terminate optimally")
        if float(np.sum(self._assemble()[self.n:])) > 1e-6:
            return "infeasible", None, None
        # artificials pinned at zero; they may linger in the basis at value 0
        self.ub[self.n:] = 0.0
        allow[self.n:] = False
        cost2 = np.concatenate([self.c, np.zeros(self.m)])
        result = self._run(cost2, allow)
        xs = self._assemble()[: self.n]
        if result == "unbounded":
            return "unbounded", None, xs
        return "optimal", float(self.c @ xs), xs


def _solve_relaxation(model: LinearModel, lb_over=None, ub_over=None):
    saved = None
    if lb_over or ub_over:
        saved = (list(model.lb), list(model.ub))
        for j, v in (lb_over or {}).items():
            model.lb[j] = v
        for j, v in (ub_over or {}).items():
            model.ub[j] = v
    try:
        std = _StandardLP(model)
        sx = _Simplex(std.A, std.b, std.c, std.lb, std.ub)
        status, obj, xs = sx.solve()
        if status == "optimal":
            x = std.recover(xs)
            return "optimal", std.min_sign * obj + model.obj_const, x, sx.iterations
        return status, None, None, sx.iterations
    finally:
        if saved is not None:
            model.lb, model.ub = saved


def constraint_violation(model: LinearModel, x: np.ndarray) -> float:
    """Max violation of constraints and bounds at x (diagnostic)."""
    worst = 0.0
    for con in model.constraints:
        lhs = sum(v * x[j] for j, v in zip(con.cols, con.vals))
        if con.sense == LESS_EQUAL:
            worst = max(worst, lhs - con.rhs)
        elif con.sense == GREATER_EQUAL:
            worst = max(worst, con.rhs - lhs)
        else:
            worst = max(worst, abs(lhs - con.rhs))
    for j in range(model.num_vars):
        worst = max(worst, model.lb[j] - x[j], x[j] - model.ub[j])
    return worst


def solve(model: LinearModel, limits: dict | None = None,
          incumbent: tuple[float, np.ndarray] | None = None) -> Solution:
    """Solve an LP or mixed-binary model.

    `limits` may carry `time` (seconds) and `nodes`; exceeding either returns
    status "limit" with the incumbent if one exists.  `incumbent` optionally
    warm-starts branch-and-bound with a known feasible (objective, x) pair.
    """
    problems = model.validate()
    if problems:
        raise SolverError("invalid model: " + "; ".join(problems))
    t0 = time.perf_counter()
    limits = limits or {}
    time_limit = limits.get("time")
    node_limit = limits.get("nodes")

    binaries = [j for j in range(model.num_vars) if model.kind[j] == BINARY]
    stats = SolveStats()

    if not binaries:
        status, obj, x, iters = _solve_relaxation(model)
        stats.simplex_iterations = iters
        stats.wall_time = time.perf_counter() - t0
        if status != "optimal":
            return Solution(status, float("nan"), None, stats)
        return Solution("optimal", obj, x, stats)

    maximize = model.obj_sense == "max"

    def better(a, b):
        return a > b if maximize else a < b

    best_obj = None
    best_x = None
    if incumbent is not None:
        best_obj = float(incumbent[0])
        best_x = np.asarray(incumbent[1], dtype=float).copy()

    def prune_target():
        # nodes whose bound cannot beat the incumbent by > tolerance are cut
        slack = abs(best_obj) * OPT_TOL + 1e-9
        return best_obj + (slack if maximize else -slack)

    def frac_binary(xv):
        worst_j, worst_f = -1, INT_TOL
        for j in binaries:
            f = abs(xv[j] - round(xv[j]))
            if f > worst_f:
                worst_f = f
                worst_j = j
        return worst_j

    def accept(xv, ob):
        nonlocal best_obj, best_x
        if best_obj is None or better(ob, best_obj):
            best_obj = ob
            best_x = xv.copy()
            for j in binaries:
                best_x[j] = round(best_x[j])

    def branch_children(xv, fixings):
        """Dichotomy on an unresolved SOS1 group when possible, else a 0/1
        split on the most fractional binary.  Children are bound-override
        dicts col -> (lb, ub)."""
        best_g, best_spread = -1, 0.0
        for gi, (cols, weights) in enumerate(model.sos1):
            support = [(c, w) for c, w in zip(cols, weights)
                       if fixings.get(c, (0.0, 1.0))[1] > 0.5 and xv[c] > INT_TOL]
            if len(support) <= 1:
                continue
            spread = max(w for _, w in support) - min(w for _, w in support)
            if spread > best_spread + 1e-12:
                best_spread, best_g = spread, gi
        if best_g >= 0:
            cols, weights = model.sos1[best_g]
            support = [(c, w) for c, w in zip(cols, weights)
                       if fixings.get(c, (0.0, 1.0))[1] > 0.5]
            support.sort(key=lambda cw: cw[1])
            mass = 0.0
            cut = len(support) // 2
            for i, (c, _w) in enumerate(support):
                mass += xv[c]
                if mass >= 0.5 - 1e-12:
                    cut = min(max(i + 1, 1), len(support) - 1)
                    break
            low = [c for c, _ in support[:cut]]
            high = [c for c, _ in support[cut:]]
            low_mass = sum(xv[c] for c in low)
            halves = (low, high) if low_mass >= 0.5 else (high, low)
            out = []
            for keep, drop in ((halves[0], halves[1]), (halves[1], halves[0])):
                child = dict(fixings)
                for c in drop:
                    child[c] = (0.0, 0.0)
                out.append(child)
            return out
        j = frac_binary(xv)
        if j < 0:
            return None
        out = []
        for v in ((1.0, 0.0) if xv[j] >= 0.5 else (0.0, 1.0)):
            child = dict(fixings)
            child[j] = (v, v)
            out.append(child)
        return out

    status, obj, x, iters = _solve_relaxation(model)
    stats.simplex_iterations += iters
    stats.nodes += 1
    if status == "infeasible":
        stats.wall_time = time.perf_counter() - t0
        if best_x is not None:
            return Solution("optimal", best_obj, best_x, stats)
        return Solution("infeasible", float("nan"), None, stats)
    if status == "unbounded":
        stats.wall_time = time.perf_counter() - t0
        return Solution("unbounded", float("nan"), None, stats)

    heap: list = []
    counter = 0

    def push(bound, fixings):
        nonlocal counter
        heapq.heappush(heap, (-bound if maximize else bound, counter, fixings, bound))
        counter += 1

    if frac_binary(x) < 0:
        accept(x, obj)
    else:
        push(obj, {})

    hit_limit = False
    while heap:
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            hit_limit = True
            break
        if node_limit is not None and stats.nodes >= node_limit:
            hit_limit = True
            break
        _, _, fixings, bound = heapq.heappop(heap)
        if best_obj is not None and not better(bound, prune_target()):
            continue
        lb_over = {j: b[0] for j, b in fixings.items()}
        ub_over = {j: b[1] for j, b in fixings.items()}
        status, obj, x, iters = _solve_relaxation(model, lb_over, ub_over)
        stats.simplex_iterations += iters
        stats.nodes += 1
        if status != "optimal":
            continue
        if best_obj is not None and not better(obj, prune_target()):
            continue
        children = branch_children(x, fixings)
        if children is None:
            accept(x, obj)
            continue
        for child in children:
            push(obj, child)

    stats.wall_time = time.perf_counter() - t0
    if best_x is None:
        return Solution("limit" if hit_limit else "infeasible", float("nan"), None, stats)
    return Solution("limit" if hit_limit else "optimal", best_obj, best_x, stats)
