"""Optimism-parameter theory layer: superposition of robust and optimistic
solutions, closed-form single-location oracles, out-of-sample scoring, and
lambda selection by grid search or bisection.

Under zero initial inventory the optimal bimodal allocation is a convex blend
of the pure-robust (lam = 0) and pure-optimistic (lam = 1) allocations, so a
one-dimensional search over the blend weight replaces repeated two-stage
solves.  Grid search re-solves per lambda and works unconditionally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ccg import CcgOptions, SolveReport, solve_two_stage
from .formulations import Allocation, BioConfig, build_saa_model, evaluate_profit
from .instance import Instance
from .solver import solve
from .uncertainty import DemandScenario, UncertaintySet

DEFAULT_GRID = (0.05, 0.10, 0.25, 0.50, 0.75)


class TuningError(Exception):
    pass


def superpose(x0: Allocation, x1: Allocation, lam: float) -> Allocation:
    """Element-wise lam * x1 + (1 - lam) * x0."""
    if not 0.0 <= lam <= 1.0:
        raise TuningError(f"lambda must lie in [0,1], got {lam}")
    if x0.x.shape != x1.x.shape:
        raise TuningError(f"allocation shapes differ: {x0.x.shape} vs {x1.x.shape}")

    def blend(a, b):
        if a is None and b is None:
            return None
        aa = a if a is not None else np.zeros_like(b)
        bb = b if b is not None else np.zeros_like(aa)
        return lam * bb + (1.0 - lam) * aa

    return Allocation(
        lam * x1.x + (1.0 - lam) * x0.x,
        blend(x0.x_repo, x1.x_repo),
        blend(x0.s_plus, x1.s_plus),
        blend(x0.y_plus, x1.y_plus),
    )


def closed_form_single_location(p: float, b: float, h: float, c: float,
                                d_min: float, d_max: float) -> dict:
    """Single walk-in location, one period, zero lead time and inventory:
    optimal robust and optimistic order quantities and objectives.

    The optimistic order matches the largest demand when the margin is
    positive and the smallest otherwise (buying below the demand floor only
    adds lost-sales penalty, so the floor is where the negative-margin
    optimum sits, with value (p - c) * d_min)."""
    if not (p + b >= c > 0):
        raise TuningError(f"requires p+b >= c > 0, got p+b={p + b}, c={c}")
    if d_min > d_max:
        raise TuningError(f"requires d_min <= d_max, got [{d_min}, {d_max}]")
    if min(p, b, h) < 0:
        raise TuningError("parameters must be nonnegative")
    if p >= c:
        x1, z1 = d_max, (p - c) * d_max
    else:
        x1, z1 = d_min, (p - c) * d_min
    denom = p + b + h
    x0 = ((p + h) * d_min + b * d_max) / denom
    z0 = ((p + b - c) * (p + h) * d_min - (h + c) * b * d_max) / denom
    return {"x_bio0": x0, "z_bio0": z0, "x_bio1": x1, "z_bio1": z1}


@dataclass
class ScoringObjective:
    kind: str = "mean"             # mean | worst_case | best_case | cvar | mixture
    level: float = 0.05            # cvar tail fraction
    components: list = field(default_factory=list)  # [(weight, ScoringObjective)]

    def __post_init__(self):
        kinds = ("mean", "worst_case", "best_case", "cvar", "mixture")
        if self.kind not in kinds:
            raise TuningError(f"unknown scoring kind {self.kind!r}")
        if self.kind == "cvar" and not 0.0 < self.level <= 1.0:
            raise TuningError(f"cvar level must be in (0,1], got {self.level}")
        if self.kind == "mixture":
            if not self.components:
                raise TuningError("mixture needs components")
            w = [float(wt) for wt, _ in self.components]
            if any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
                raise TuningError("mixture weights must be >= 0 and sum to 1")

    def min_samples(self) -> int:
        if self.kind == "cvar":
            return int(np.ceil(1.0 / self.level))
        if self.kind == "mixture":
            return max(obj.min_samples() for _, obj in self.components)
        return 1

    def score(self, profits: np.ndarray) -> float:
        profits = np.asarray(profits, dtype=float)
        if self.kind == "mean":
            return float(profits.mean())
        if self.kind == "worst_case":
            return float(profits.min())
        if self.kind == "best_case":
            return float(profits.max())
        if self.kind == "cvar":
            k = int(np.ceil(self.level * len(profits)))
            return float(np.sort(profits)[:k].mean())
        return float(sum(w * obj.score(profits) for w, obj in self.components))


def score_allocation(inst: Instance, alloc: Allocation, scenarios: list[DemandScenario],
                     objective: ScoringObjective) -> float:
    if not scenarios:
        raise TuningError("at least one scenario is required")
    if len(scenarios) < objective.min_samples():
        raise TuningError(
            f"{objective.kind} at level {objective.level} needs at least "
            f"{objective.min_samples()} samples, got {len(scenarios)}")
    profits = np.array([evaluate_profit(inst, alloc, s) for s in scenarios])
    return objective.score(profits)


def split_scenarios(scenarios: list[DemandScenario], validation_fraction: float = 0.8):
    """Deterministic order-preserving validation/holdout split."""
    n = len(scenarios)
    k = max(1, int(round(validation_fraction * n)))
    k = min(k, n)
    return scenarios[:k], scenarios[k:]


@dataclass
class TuneResult:
    lam: float
    allocation: Allocation
    score: float                   # holdout score (validation score when no holdout)
    validation_score: float
    curve: list = field(default_factory=list)   # (lambda, validation score)
    reports: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "score": self.score,
            "validation_score": self.validation_score,
            "curve": [[l, s] for l, s in self.curve],
            "allocation": self.allocation.to_dict(),
        }


def tune_lambda(inst: Instance, uset: UncertaintySet, scenarios: list[DemandScenario],
                objective: ScoringObjective | None = None, method: str = "grid",
                grid: tuple = DEFAULT_GRID, options: CcgOptions | None = None,
                cfg_base: BioConfig | None = None,
                validation_fraction: float = 0.8,
                bisection_tol: float = 1e-9) -> TuneResult:
    """Pick the optimism weight against out-of-sample scenario scores.

    grid: one CCG solve per candidate lambda, scored on the validation split,
    ties to the smaller lambda.  bisection: solves the lam = 0 and lam = 1
    problems once and searches the superposition segment by ternary search on
    the concave score (requires zero initial inventory and continuous
    allocations); the default interval tolerance is far below the 1e-3 the
    selection needs so piecewise-linear kinks are resolved exactly."""
    objective = objective or ScoringObjective("mean")
    options = options or CcgOptions()
    cfg_base = cfg_base or BioConfig()
    validation, holdout = split_scenarios(scenarios, validation_fraction)

    def vscore(alloc):
        return score_allocation(inst, alloc, validation, objective)

    def hscore(alloc):
        pool = holdout if holdout else validation
        return score_allocation(inst, alloc, pool, objective)

    if method == "grid":
        best = None
        curve = []
        reports = {}
        for lam in grid:
            cfg = BioConfig(lam=float(lam), allied_channels=cfg_base.allied_channels,
                            integer_allocations=cfg_base.integer_allocations,
                            repositioning=cfg_base.repositioning)
            rep = solve_two_stage(inst, uset, cfg, options)
            sc = vscore(rep.allocation)
            curve.append((float(lam), sc))
            reports[float(lam)] = rep
            # strict improvement keeps the smaller lambda on ties
            if best is None or sc > best[1] + 1e-12:
                best = (float(lam), sc, rep.allocation)
        lam, vsc, alloc = best
        return TuneResult(lam, alloc, hscore(alloc), vsc, curve, reports)

    if method == "bisection":
        if cfg_base.integer_allocations:
            raise TuningError("bisection is unavailable with integer allocations; use grid")
        if not inst.zero_initial_inventory():
            raise TuningError("bisection requires zero initial inventory; use grid")
        rep0 = solve_two_stage(inst, uset, BioConfig(lam=0.0), options)
        rep1 = solve_two_stage(inst, uset, BioConfig(lam=1.0), options)
        x0, x1 = rep0.allocation, rep1.allocation
        cache: dict[float, float] = {}

        def phi(lam):
            key = round(lam, 12)
            if key not in cache:
                cache[key] = vscore(superpose(x0, x1, lam))
            return cache[key]

        a, b = 0.0, 1.0
        while b - a > bisection_tol:
            m1 = a + (b - a) / 3.0
            m2 = b - (b - a) / 3.0
            if phi(m1) < phi(m2):
                a = m1
            else:
                b = m2
        candidates = sorted(set([0.0, 1.0, a, b, 0.5 * (a + b)]))
        lam = max(candidates, key=lambda v: (phi(v), -v))
        alloc = superpose(x0, x1, lam)
        curve = sorted((k, v) for k, v in cache.items())
        return TuneResult(float(lam), alloc, hscore(alloc), phi(lam), curve,
                          {0.0: rep0, 1.0: rep1})

    raise TuningError(f"unknown tuning method {method!r}")


def solve_saa(inst: Instance, scenarios: list[DemandScenario],
              integer_allocations: bool = False,
              uset: UncertaintySet | None = None) -> tuple[Allocation, float]:
    """Explicit sample-average optimum over the given scenarios (oracle for
    the bisection search)."""
    m = build_saa_model(inst, scenarios, integer_allocations, uset)
    sol = solve(m)
    if sol.status != "optimal":
        raise TuningError(f"SAA model ended with status {sol.status}")
    T, L = inst.horizon, inst.num_nodes
    x = np.array([[sol.x[m.info["x"][t, l]] for l in range(L)] for t in range(T)])
    x[np.abs(x) < 1e-10] = 0.0
    return Allocation(x), float(sol.objective)


def bio_value_of_allocation(inst: Instance, uset: UncertaintySet, lam: float,
                            x: np.ndarray, options: CcgOptions | None = None,
                            allied: str = "walkin") -> SolveReport:
    """Exact BIO-lambda objective of a fixed allocation (the optimistic block
    and the adversary still optimize)."""
    cfg = BioConfig(lam=lam, allied_channels=allied)
    return solve_two_stage(inst, uset, cfg, options, fixed_x=np.asarray(x, dtype=float))


def verify_superposition(inst: Instance, uset: UncertaintySet, lam: float,
                         options: CcgOptions | None = None,
                         allied: str = "both") -> dict:
    """Solve lam = 0, lam = 1 and lam problems to convergence and report the
    superposition residual, plus whether the superposed allocation re-scores
    to the lam objective.

    The identity is a property of the fully blended formulation, so the
    optimistic side defaults to both channels here; restricting optimism to
    the walk-in channel breaks the exact equality once online demand exists
    (the blend then only lower-bounds the lam objective).
    """
    options = options or CcgOptions()
    rep0 = solve_two_stage(inst, uset, BioConfig(lam=0.0, allied_channels=allied),
                           options)
    rep1 = solve_two_stage(inst, uset, BioConfig(lam=1.0, allied_channels=allied),
                           options)
    repl = solve_two_stage(inst, uset, BioConfig(lam=lam, allied_channels=allied),
                           options)
    predicted = lam * rep1.objective + (1.0 - lam) * rep0.objective
    residual = abs(repl.objective - predicted)
    mixed = superpose(rep0.allocation, rep1.allocation, lam)
    rescore = bio_value_of_allocation(inst, uset, lam, mixed.x, options, allied=allied)
    return {
        "z0": rep0.objective,
        "z1": rep1.objective,
        "z_lambda": repl.objective,
        "predicted": predicted,
        "residual": residual,
        "superposed_rescore": rescore.objective,
        "rescore_residual": abs(rescore.objective - repl.objective),
        "converged": all(r.termination == "converged" for r in (rep0, rep1, repl)),
        "reports": {"bio0": rep0, "bio1": rep1, "bio_lambda": repl},
    }
