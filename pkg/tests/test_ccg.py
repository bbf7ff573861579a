import numpy as np
import pytest
from itertools import product

from bioinv.ccg import (
    ALTERNATING,
    CcgOptions,
    alternating_heuristic_subproblem,
    minimize_linear_over_cell,
    seed_scenario,
    solve_two_stage,
    upper_seed_scenario,
)
from bioinv.formulations import (
    Allocation,
    BioConfig,
    build_subproblem,
    evaluate_profit,
    stage_one_value,
)
from bioinv.instance import build_instance
from bioinv.reference import example_walkin_instance, example_walkin_uncertainty
from bioinv.solver import solve
from bioinv.uncertainty import DemandScenario, UncertaintySet


def walkin_set(lo, hi, bl, bu):
    return UncertaintySet(
        local_lower={"b": np.array([lo], dtype=float), "o": np.zeros((1, 0))},
        local_upper={"b": np.array([hi], dtype=float), "o": np.zeros((1, 0))},
        budget_lower={"b": np.array([bl], dtype=float), "o": np.zeros(1)},
        budget_upper={"b": np.array([bu], dtype=float), "o": np.zeros(1)},
    )


class TestAlgorithmOnExamples:
    def test_pure_ro_walkin_example(self):
        inst = example_walkin_instance(0.0, 160.0)
        uset = example_walkin_uncertainty()
        rep = solve_two_stage(inst, uset, BioConfig(lam=0.0), CcgOptions())
        assert rep.termination == "converged"
        assert rep.objective == pytest.approx(-360.0, abs=1e-6)
        assert rep.worst_case_profit == pytest.approx(-360.0, abs=1e-6)

    def test_bio50_integer_example(self):
        inst = example_walkin_instance(0.0, 160.0)
        uset = example_walkin_uncertainty()
        rep = solve_two_stage(inst, uset,
                              BioConfig(lam=0.5, integer_allocations=True),
                              CcgOptions())
        assert rep.termination == "converged"
        assert rep.objective == pytest.approx(-240.0, abs=1e-6)
        assert sorted(rep.allocation.x[0]) == pytest.approx([2.0, 2.0, 2.0])
        assert rep.worst_case_profit == pytest.approx(-560.0, abs=1e-6)

    def test_empty_demand_set(self):
        inst = example_walkin_instance(0.0, 160.0)
        uset = walkin_set([0, 0, 0], [0, 0, 0], 0, 0)
        rep = solve_two_stage(inst, uset, BioConfig(lam=0.0), CcgOptions())
        assert rep.termination == "converged"
        assert rep.iterations <= 2
        assert rep.objective == pytest.approx(0.0, abs=1e-9)
        assert rep.allocation.x.sum() == pytest.approx(0.0, abs=1e-9)


class TestBounds:
    def test_bound_traces_monotone_and_sandwich(self):
        inst = example_walkin_instance(80.0, 80.0)
        uset = example_walkin_uncertainty()
        rep = solve_two_stage(inst, uset, BioConfig(lam=0.25), CcgOptions())
        lbs, ubs = rep.lower_bounds, rep.upper_bounds
        assert all(a <= b + 1e-9 for a, b in zip(lbs, lbs[1:]))
        assert all(a >= b - 1e-9 for a, b in zip(ubs, ubs[1:]))
        assert lbs[-1] <= ubs[-1] + 1e-9
        gap = (ubs[-1] - lbs[-1]) / (abs(lbs[-1]) + 1e-5)
        assert gap <= 1e-4

    def test_returned_allocation_rescans_to_lb(self):
        inst = example_walkin_instance(0.0, 160.0)
        uset = example_walkin_uncertainty()
        cfg = BioConfig(lam=0.5)
        rep = solve_two_stage(inst, uset, cfg, CcgOptions())
        sp = build_subproblem(inst, uset, rep.allocation, 0.5)
        val = solve(sp).objective
        stage1 = stage_one_value(inst, cfg, rep.allocation, rep.d_plus)
        assert val + stage1 == pytest.approx(rep.objective, abs=1e-6)

    def test_ccg_equals_exhaustive_search_integer(self):
        # tiny enough for full enumeration over integer x and scenarios
        inst = build_instance(["A", "B"], [], 1, walkin_price=50.0,
                              walkin_penalty=70.0, purchase_cost=30.0)
        uset = walkin_set([0, 0], [2, 2], 1, 3)
        rep = solve_two_stage(inst, uset,
                              BioConfig(lam=0.0, integer_allocations=True),
                              CcgOptions())
        pts = uset.enumerate_discrete_points("b", 0)
        best = None
        for x in product(range(4), repeat=2):
            alloc = Allocation(np.array([list(x)], dtype=float))
            worst = min(evaluate_profit(inst, alloc, DemandScenario([list(p)], np.zeros((1, 0))))
                        for p in pts)
            if best is None or worst > best:
                best = worst
        assert rep.objective == pytest.approx(best, abs=1e-6)

    def test_scenario_pool_never_repeats(self):
        inst = example_walkin_instance(80.0, 80.0)
        uset = example_walkin_uncertainty()
        rep = solve_two_stage(inst, uset, BioConfig(lam=0.0), CcgOptions())
        keys = [s.key() for s in rep.scenario_pool]
        assert len(keys) == len(set(keys))


class TestAlternatingHeuristic:
    def test_single_location_finds_true_worst(self):
        inst = build_instance(["A"], [], 1, walkin_price=0.0, walkin_penalty=160.0,
                              purchase_cost=40.0)
        uset = walkin_set([0], [3], 0, 3)
        scen, val = alternating_heuristic_subproblem(inst, uset, Allocation([[1.0]]), 0.0)
        assert scen.walkin[0, 0] == 3.0
        assert val == pytest.approx(-320.0)

    def test_zero_width_box_single_round(self):
        inst = build_instance(["A", "B"], [], 1, walkin_price=10.0,
                              walkin_penalty=5.0, purchase_cost=3.0)
        uset = walkin_set([1, 2], [1, 2], 3, 3)
        scen, val = alternating_heuristic_subproblem(
            inst, uset, Allocation([[1.0, 1.0]]), 0.0, rounds=1)
        assert np.array_equal(scen.walkin, [[1.0, 2.0]])

    def test_value_upper_bounds_exact_min(self):
        rng = np.random.default_rng(5)
        for _ in range(8):
            inst = build_instance(
                ["A", "B"], [], 1,
                walkin_price=float(rng.integers(0, 100)),
                walkin_penalty=float(rng.integers(10, 150)),
                purchase_cost=float(rng.integers(10, 60)))
            lo = rng.integers(0, 2, size=2)
            hi = lo + rng.integers(1, 3, size=2)
            uset = walkin_set(list(lo), list(hi), int(lo.sum()), int(hi.sum()))
            alloc = Allocation(rng.integers(0, 3, size=(1, 2)).astype(float))
            _scen, val = alternating_heuristic_subproblem(inst, uset, alloc, 0.0)
            exact = solve(build_subproblem(inst, uset, alloc, 0.0)).objective
            assert val >= exact - 1e-9

    def test_heuristic_mode_never_claims_convergence(self):
        inst = example_walkin_instance(0.0, 160.0)
        uset = example_walkin_uncertainty()
        rep = solve_two_stage(inst, uset, BioConfig(lam=0.0),
                              CcgOptions(subproblem_mode=ALTERNATING))
        assert rep.termination in ("iteration_limit", "time_limit")
        assert not rep.certified

    def test_heuristic_scenario_is_integral_and_contained(self):
        inst = example_walkin_instance(80.0, 80.0)
        uset = example_walkin_uncertainty()
        scen, _ = alternating_heuristic_subproblem(
            inst, uset, Allocation([[1.5, 2.0, 0.5]]), 0.0)
        assert uset.contains(scen)
        assert np.allclose(scen.walkin, np.round(scen.walkin))


class TestGreedyDemandStep:
    def test_matches_lp_on_random_cells(self):
        rng = np.random.default_rng(9)
        from bioinv.solver import LinearModel
        for _ in range(40):
            n = int(rng.integers(1, 6))
            lo = rng.integers(0, 3, size=n).astype(float)
            hi = lo + rng.integers(0, 4, size=n)
            bl = float(rng.integers(int(lo.sum()), int(hi.sum()) + 1))
            bu = float(rng.integers(int(bl), int(hi.sum()) + 1))
            c = rng.normal(size=n)
            d = minimize_linear_over_cell(c, lo, hi, bl, bu)
            m = LinearModel(sense="min")
            cols = [m.add_var(f"d{i}", lo[i], hi[i]) for i in range(n)]
            m.add_constr({j: 1.0 for j in cols}, ">=", bl)
            m.add_constr({j: 1.0 for j in cols}, "<=", bu)
            m.set_objective({cols[i]: c[i] for i in range(n)})
            ref = solve(m)
            assert float(c @ d) == pytest.approx(ref.objective, abs=1e-8)
            assert bl - 1e-9 <= d.sum() <= bu + 1e-9

    def test_seed_scenarios_feasible(self):
        uset = example_walkin_uncertainty()
        assert uset.contains(seed_scenario(uset))
        assert uset.contains(upper_seed_scenario(uset))
        assert seed_scenario(uset).walkin.sum() == pytest.approx(1.0)
        assert upper_seed_scenario(uset).walkin.sum() == pytest.approx(6.0)


class TestAlliedBothMode:
    def test_ccg_matches_full_pool_master(self):
        # omnichannel instance: the CCG optimum equals the exact master over
        # every discrete scenario, in the fully blended mode
        from bioinv.formulations import build_master
        from bioinv.uncertainty import DemandScenario as DS
        inst = build_instance(
            ["A", "B"], ["Z"], 1,
            walkin_price=50.0, walkin_penalty=79.0,
            online_price=11.0, online_penalty=23.0,
            fulfill_cost=[[5.0], [6.0]], purchase_cost=25.0)
        uset = UncertaintySet(
            local_lower={"b": [[1, 0]], "o": [[1]]},
            local_upper={"b": [[3, 2]], "o": [[2]]},
            budget_lower={"b": [1], "o": [1]},
            budget_upper={"b": [5], "o": [2]})
        scens = [DS([list(b)], [list(o)])
                 for b in uset.enumerate_discrete_points("b", 0)
                 for o in uset.enumerate_discrete_points("o", 0)]
        for lam in (0.0, 0.5, 1.0):
            cfg = BioConfig(lam=lam, allied_channels="both")
            full = solve(build_master(inst, uset, scens, cfg)).objective
            rep = solve_two_stage(inst, uset, cfg, CcgOptions())
            assert rep.termination == "converged"
            assert rep.objective == pytest.approx(full, abs=1e-6)


class TestOptions:
    def test_bad_options_rejected(self):
        from bioinv.ccg import CcgError
        with pytest.raises(CcgError):
            CcgOptions(epsilon=0.0)
        with pytest.raises(CcgError):
            CcgOptions(max_iterations=0)
        with pytest.raises(CcgError):
            CcgOptions(subproblem_mode="magic")

    def test_iteration_limit_respected(self):
        inst = example_walkin_instance(80.0, 80.0)
        uset = example_walkin_uncertainty()
        rep = solve_two_stage(inst, uset, BioConfig(lam=0.0),
                              CcgOptions(max_iterations=1))
        assert rep.iterations == 1

    def test_report_serializes(self):
        inst = example_walkin_instance(0.0, 160.0)
        uset = example_walkin_uncertainty()
        rep = solve_two_stage(inst, uset, BioConfig(lam=0.5), CcgOptions())
        d = rep.to_dict()
        assert d["termination"] == "converged"
        assert isinstance(d["lower_bounds"], list)
        assert d["allocation"]["x"]
        import json
        json.dumps(d)
