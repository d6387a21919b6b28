"""Simulation loop, metrics, paired comparisons and incident diagnostics."""

import csv

import numpy as np
import pytest

from backpressure.engine import (compare_policies, hop_groups,
                                 incident_locality_stats, long_rows, metrics, paired_seeds,
                                 per_link_log_ratio, simulate, summary, total_time_spent,
                                 write_long_csv)
from backpressure.junction import (JunctionParams, mean_queue_estimate,
                                   simulate_junction, steady_state_bounds, upstream_series)
from backpressure.network import single_queue_spec
from backpressure.policies import INVERSE_CAPACITY, Backpressure, FixedCycle
from backpressure.scenarios import DemandConfig, GridConfig, Scenario, incident_scenario, link_name


@pytest.fixture(scope="module")
def small_grid():
    spec, _ = Scenario(GridConfig(4, 4, 2), DemandConfig(1.0, seed=3)).build()
    return spec


class TestSimulate:
    def test_rejects_nonpositive_horizon(self):
        with pytest.raises(ValueError):
            simulate(single_queue_spec(1.0), Backpressure(), 0)

    def test_zero_demand_drains(self):
        spec = single_queue_spec(3.0, 0.0)
        tr = simulate(spec, Backpressure(), 10, initial=[10.0])
        np.testing.assert_array_equal(tr.states[:5, 0], [10, 7, 4, 1, 0])
        assert tr.states[-1, 0] == 0

    def test_deterministic(self, small_grid):
        a = simulate(small_grid, Backpressure(), 80, seed=5)
        b = simulate(small_grid, Backpressure(), 80, seed=5)
        for x, y in [(a.states, b.states), (a.activations, b.activations), (a.inflows, b.inflows)]:
            np.testing.assert_array_equal(x, y)

    def test_replay_bit_exact(self, small_grid):
        tr = simulate(small_grid, Backpressure(INVERSE_CAPACITY), 120, seed=2)
        np.testing.assert_array_equal(tr.replay(), tr.states)

    def test_replay_with_incident(self):
        sc = incident_scenario(rows=6, cols=6, h=3, T=60, t_start=10, duration=20)
        spec, ov = sc.build()
        tr = simulate(spec, FixedCycle(), 60, seed=1, incident=ov, **sc.run_kwargs())
        np.testing.assert_array_equal(tr.replay(), tr.states)

    def test_common_random_numbers(self, small_grid):
        a = simulate(small_grid, Backpressure(), 50, seed=8)
        b = simulate(small_grid, FixedCycle(), 50, seed=8)
        np.testing.assert_array_equal(a.inflows, b.inflows)

    def test_explicit_inflows(self):
        spec = single_queue_spec(1.0)
        tr = simulate(spec, Backpressure(), 3, inflows=np.array([[2.0], [0.0], [0.0]]))
        np.testing.assert_array_equal(tr.states[:, 0], [0, 2, 1, 0])
        with pytest.raises(ValueError):
            simulate(spec, Backpressure(), 3, inflows=np.zeros((2, 1)))

    def test_junction_bounds_after_transient(self):
        p = JunctionParams(10, 4, 0.5, 0)
        q, _, _ = upstream_series(simulate_junction(p, 10_000, q0=(0, 0)))
        b = steady_state_bounds(p)
        tail = q[200:]
        assert tail[:, 1].min() >= b.q_u_lo - 1e-9 and tail[:, 1].max() <= b.q_u_hi + 1e-9
        assert tail[:, 0].min() >= b.q_s_lo - 1e-9 and tail[:, 0].max() <= b.q_s_hi + 1e-9


class TestMetrics:
    def test_zero_trajectory(self):
        tr = simulate(single_queue_spec(1.0), Backpressure(), 5)
        assert total_time_spent(tr) == 0

    def test_constant_queue(self):
        # a queue with no capacity keeps q = 5 for 10 slots
        tr = simulate(single_queue_spec(0.0), Backpressure(), 10, initial=[5.0])
        assert total_time_spent(tr) == 50

    def test_cumulative_nondecreasing(self, small_grid):
        m = metrics(simulate(small_grid, Backpressure(), 60, seed=1))
        assert np.all(np.diff(m.cumulative_time_spent) >= 0)
        np.testing.assert_allclose(m.cumulative_time_spent, np.cumsum(m.total_queue))

    def test_junction_time_spent_estimate(self):
        p = JunctionParams(10, 2, 0.4, 50)
        tr = simulate_junction(p, 6000)
        q, _, _ = upstream_series(tr)
        T = 3000
        got = q[3000:6000].sum()
        f_u = p.inflow(1)
        assert got == pytest.approx(T * (1.5 * f_u + mean_queue_estimate(p)), rel=0.15)

    def test_warmup(self):
        tr = simulate(single_queue_spec(0.0), Backpressure(), 10, initial=[5.0])
        assert total_time_spent(tr, warmup=4) == 30


class TestCompare:
    def test_identical_policies(self, small_grid):
        c = compare_policies(small_grid, [Backpressure(), Backpressure()], n_runs=3, T=40)
        assert c.ratio("bp", "bp'") == 1.0
        np.testing.assert_array_equal(c.paired_ratios("bp", "bp'"), np.ones(3))

    def test_stats(self, small_grid):
        c = compare_policies(small_grid, [Backpressure(), FixedCycle()], n_runs=4, T=40)
        s = c.stats["fixed"]
        assert s.mean == pytest.approx(np.mean(s.values))
        assert s.std == pytest.approx(np.std(s.values, ddof=1))
        assert set(c.ratio_table()) == {(a, b) for a in ("bp", "fixed") for b in ("bp", "fixed")}

    def test_needs_a_run(self, small_grid):
        with pytest.raises(ValueError):
            compare_policies(small_grid, [Backpressure()], n_runs=0)

    def test_paired_seeds(self):
        assert paired_seeds(1, 5) == paired_seeds(1, 5)
        assert len(set(paired_seeds(1, 50))) == 50


class TestIncidentStats:
    def test_hop_groups(self):
        spec, _ = Scenario(GridConfig(5, 5, 0), DemandConfig(1.0)).build()
        lk = link_name((2, 1), (2, 2))
        g = hop_groups(spec, lk)
        assert g["0"] == [lk]
        assert set(g["up1"]) == {link_name((2, 0), (2, 1)), link_name((1, 1), (2, 1)), link_name((3, 1), (2, 1))}
        assert link_name((2, 2), (2, 3)) in g["down1"]
        assert not set(g["up2"]) & set(g["up1"])

    def test_unknown_link(self, small_grid):
        with pytest.raises(KeyError):
            hop_groups(small_grid, "nowhere")

    def test_no_incident_equals_background(self, small_grid):
        tr = simulate(small_grid, Backpressure(), 40, seed=2)
        lk = link_name((1, 1), (1, 2))
        st = incident_locality_stats(tr, lk)
        cols = [i for i, m in enumerate(small_grid.movements) if m.upstream_link == lk]
        assert st["0"] == tr.states[:, cols].sum(axis=1).max()


class TestLogRatio:
    def test_self_is_zero(self, small_grid):
        tr = simulate(small_grid, Backpressure(), 60, seed=2)
        ratios, classes, n_excl = per_link_log_ratio(tr, tr)
        assert all(v == 0 for v in ratios.values())
        assert n_excl == len(small_grid.movements) - len(ratios)
        assert set(classes.values()) <= {"arterial", "secondary"}

    def test_different_networks(self, small_grid):
        tr = simulate(small_grid, Backpressure(), 5)
        other = simulate(single_queue_spec(1.0), Backpressure(), 5)
        with pytest.raises(ValueError):
            per_link_log_ratio(tr, other)


class TestExport:
    def test_long_csv(self, tmp_path):
        tr = simulate(single_queue_spec(0.0), Backpressure(), 3, initial=[2.0])
        p = tmp_path / "m.csv"
        write_long_csv(p, long_rows(tr, "r0"))
        rows = list(csv.DictReader(open(p)))
        assert rows[0].keys() == {"run_id", "policy", "t", "metric", "value"}
        cum = [float(r["value"]) for r in rows if r["metric"] == "cumulative_time_spent"]
        assert cum == [2.0, 4.0, 6.0]

    def test_summary(self):
        tr = simulate(single_queue_spec(0.0), Backpressure(), 3, initial=[2.0])
        assert summary(tr)["total_time_spent"] == 6.0
