import numpy as np
import pytest

from bioinv.formulations import Allocation
from bioinv.reference import (
    MONTE_CARLO_SEED,
    example_walkin_instance,
    example_walkin_means,
    reference_sim_setup,
)
from bioinv.simulate import (
    DayState,
    Order,
    PolicySpec,
    SimulationError,
    batch_evaluate,
    fulfill_order_stream,
    kpi_table,
    lower_quantile,
    run_rolling_horizon,
    spread_down,
)
from bioinv.uncertainty import DemandMeans, DemandScenario, sample_scenarios


def wscen(walkin):
    return DemandScenario(np.atleast_2d(np.asarray(walkin, dtype=float)),
                          np.zeros((1, 0)))


class TestBatchEvaluate:
    def test_single_scenario_all_stats_equal(self):
        inst = example_walkin_instance(0.0, 160.0)
        out = batch_evaluate(inst, Allocation([[3.0, 3.0, 3.0]]), [wscen([1, 1, 1])])
        assert out["min"] == out["median"] == out["mean"] == out["max"]

    def test_example_median_and_max(self):
        # pure RO allocation never beats -360 and attains it on most samples
        inst = example_walkin_instance(0.0, 160.0)
        scen = sample_scenarios(example_walkin_means(), 2000, seed=MONTE_CARLO_SEED)
        out = batch_evaluate(inst, Allocation([[3.0, 3.0, 3.0]]), scen)
        assert out["median"] == pytest.approx(-360.0)
        assert out["max"] == pytest.approx(-360.0)
        assert out["mean"] == pytest.approx(-372.32, rel=0.02)

    def test_empty_scenarios_rejected(self):
        inst = example_walkin_instance(0.0, 160.0)
        with pytest.raises(SimulationError):
            batch_evaluate(inst, Allocation(np.zeros((1, 3))), [])

    def test_lower_quantile_convention(self):
        vals = np.array(sorted([5.0, 1.0, 3.0, 2.0, 4.0]))
        assert lower_quantile(vals, 0.05) == 1.0
        assert lower_quantile(vals, 0.5) == 3.0
        assert lower_quantile(vals, 1.0) == 5.0


class TestSpreadDown:
    def test_zero_demand_no_orders(self):
        days = spread_down([0, 0], 7, seed=1)
        assert all(not lst for lst in days)

    def test_conservation(self):
        days = spread_down([7, 3], 7, seed=5)
        total = sum(len(lst) for lst in days)
        assert total == 10
        by_loc = {0: 0, 1: 0}
        for lst in days:
            for od in lst:
                assert od.channel == "walkin"
                by_loc[od.location] += 1
        assert by_loc == {0: 7, 1: 3}

    def test_determinism(self):
        a = spread_down([5, 2], 7, seed=9)
        b = spread_down([5, 2], 7, seed=9)
        assert [(o.location, o.rank) for lst in a for o in lst] == \
               [(o.location, o.rank) for lst in b for o in lst]

    def test_multinomial_concentration(self):
        n, days = 70000, 7
        out = spread_down([n], days, seed=3)
        counts = np.array([len(lst) for lst in out])
        expect = n / days
        sigma = np.sqrt(n * (1 / days) * (1 - 1 / days))
        assert np.all(np.abs(counts - expect) < 5 * sigma)


class TestFulfillOrderStream:
    def test_walkin_priority_then_ecom_lost(self):
        state = DayState(on_hand=np.array([1.0]), reserves=np.array([0.0]),
                         edges={0: [(5.0, 0)]}, stores={0})
        orders = [Order("walkin", 0, 0.1), Order("ecom", 0, 0.9)]
        events = fulfill_order_stream(orders, state)
        assert events[0]["type"] == "walkin_sale"
        assert events[1]["type"] == "ecom_lost"
        assert state.on_hand[0] == 0.0

    def test_cheapest_node_within_tier(self):
        state = DayState(on_hand=np.array([3.0, 3.0]), reserves=np.zeros(2),
                         edges={0: [(5.0, 0), (7.0, 1)]}, stores={0, 1})
        events = fulfill_order_stream([Order("ecom", 0, 0.5)], state)
        assert events[0]["type"] == "ecom_ship"
        assert events[0]["node"] == 0 and events[0]["cost"] == 5.0

    def test_tier_precedence_over_cost(self):
        # node A cheap but below reserve, node B above reserve: ship from B
        state = DayState(on_hand=np.array([2.0, 2.0]),
                         reserves=np.array([5.0, 0.0]),
                         edges={0: [(5.0, 0), (7.0, 1)]}, stores={0, 1})
        events = fulfill_order_stream([Order("ecom", 0, 0.5)], state)
        assert events[0]["node"] == 1

    def test_tier_two_ships_when_tier_one_empty(self):
        state = DayState(on_hand=np.array([2.0]), reserves=np.array([5.0]),
                         edges={0: [(5.0, 0)]}, stores={0})
        events = fulfill_order_stream([Order("ecom", 0, 0.5)], state)
        assert events[0]["type"] == "ecom_ship"

    def test_no_ship_from_empty_node(self):
        state = DayState(on_hand=np.array([0.0]), reserves=np.array([0.0]),
                         edges={0: [(5.0, 0)]}, stores={0})
        events = fulfill_order_stream([Order("ecom", 0, 0.5)], state)
        assert events[0]["type"] == "ecom_lost"

    def test_orders_processed_in_rank_order(self):
        state = DayState(on_hand=np.array([1.0]), reserves=np.array([0.0]),
                         edges={0: [(5.0, 0)]}, stores={0})
        orders = [Order("ecom", 0, 0.2), Order("walkin", 0, 0.8)]
        events = fulfill_order_stream(orders, state)
        # the e-com order arrived first and took the unit
        assert events[0]["type"] == "ecom_ship"
        assert events[1]["type"] == "walkin_lost"


class TestRollingHorizon:
    def setup_method(self):
        self.inst, self.means = reference_sim_setup()

    def test_zero_demand_zero_everything(self):
        means = DemandMeans(np.zeros((3, self.inst.num_nodes)),
                            np.zeros((3, self.inst.num_zones)))
        for kind in ("basestock", "pwl", "bio"):
            agg, reps = run_rolling_horizon(self.inst, PolicySpec(kind), means,
                                            weeks=3, replications=2, seed=1)
            assert agg["total_sales_qty"][0] == 0.0
            assert agg["replenish_qty"][0] == 0.0
            assert agg["realized_profit"][0] == 0.0
            assert agg["walkin_service_level"][0] == 1.0

    def test_replication_determinism(self):
        pol = PolicySpec("basestock")
        a, ra = run_rolling_horizon(self.inst, pol, self.means, 3, 3, seed=77)
        b, rb = run_rolling_horizon(self.inst, pol, self.means, 3, 3, seed=77)
        for x, y in zip(ra, rb):
            assert x.as_row() == y.as_row()

    def test_accounting_identity_and_conservation(self):
        pol = PolicySpec("bio", lam=0.10)
        agg, reps = run_rolling_horizon(self.inst, pol, self.means, 3, 4, seed=5)
        e = self.inst.econ
        for r in reps:
            assert r.realized_profit == pytest.approx(
                r.satisfied_revenue - r.shipping_cost - r.purchase_cost, abs=1e-9)
            assert r.penalized_profit <= r.realized_profit + 1e-9
            assert 0.0 <= r.walkin_service_level <= 1.0
            assert 0.0 <= r.total_service_level <= 1.0
            # conservation: everything bought or initially held is sold,
            # still on hand (valued at cost), or in transit
            assert r.total_sales_qty <= r.replenish_qty + sum(
                sum(row) for row in self.inst.inventory.pipeline) + 1e-9

    def test_perfect_service_with_deterministic_cover(self):
        # zero-variance demand of 0 everywhere except ample initial stock
        inst, _ = reference_sim_setup()
        means = DemandMeans(np.zeros((2, inst.num_nodes)), np.zeros((2, inst.num_zones)))
        agg, _ = run_rolling_horizon(inst, PolicySpec("basestock"), means, 2, 2, seed=3)
        assert agg["walkin_service_level"][0] == 1.0

    def test_service_level_one_when_stock_always_suffices(self):
        from bioinv.instance import build_instance
        inst = build_instance(
            ["A", "B"], [], 2, walkin_price=100.0, walkin_penalty=10.0,
            purchase_cost=40.0, lead_time=0, pipeline=[[500.0], [500.0]])
        means = DemandMeans(np.full((3, 2), 2.0), np.zeros((3, 0)))
        agg, reps = run_rolling_horizon(inst, PolicySpec("basestock"), means,
                                        weeks=3, replications=3, seed=8)
        assert agg["walkin_service_level"][0] == 1.0
        assert agg["total_sales_qty"][0] > 0

    def test_weeks_must_cover_lead_time(self):
        with pytest.raises(SimulationError):
            run_rolling_horizon(self.inst, PolicySpec("basestock"), self.means,
                                weeks=1, replications=1, seed=0)

    def test_kpi_table_format(self):
        pol = PolicySpec("basestock")
        res = run_rolling_horizon(self.inst, pol, self.means, 3, 2, seed=4)
        text = kpi_table({"basestock": res})
        lines = text.strip().splitlines()
        assert lines[0].startswith("policy,replication,replenish_qty")
        assert len(lines) == 1 + 2 + 1  # header, two reps, aggregate
        assert lines[-1].split(",")[1] == "aggregate"


class TestNoNegativeInventory:
    def test_on_hand_never_negative(self):
        inst, means = reference_sim_setup()
        # run with instrumented day states via a small replication count
        agg, reps = run_rolling_horizon(inst, PolicySpec("bio", lam=0.25),
                                        means, 3, 3, seed=11)
        # sales never exceed supply: implied by nonnegative on-hand rule
        for r in reps:
            assert r.total_sales_qty >= 0
            assert r.excess_inventory_at_cost >= -1e-9
