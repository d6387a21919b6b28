"""Priorities, phase selection and the non-adaptive schedules."""

import numpy as np
import pytest

from backpressure.junction import DOWN, Q1, Q2, JunctionParams, build_junction
from backpressure.network import MovementId, NetworkSpec, QueueState
from backpressure.policies import (CUSTOM, INVERSE_CAPACITY, UNIFORM, Alternating, Backpressure,
                                   Controller, FixedCycle, alternating_select, backpressure_select,
                                   fixed_cycle_select, policy_from_flag, priorities, select_phases,
                                   weights_for)


def _junction_state(params, q1, q2):
    spec = build_junction(params)
    return spec, QueueState.initial(spec, {Q1: q1, Q2: q2})


def _two_phase_node(caps=(1.0, 1.0, 1.0, 1.0)):
    a, b, c, d = (MovementId(x, "o" + x) for x in "abcd")
    ms = (a, b, c, d)
    return NetworkSpec(
        movements=ms, capacity=dict(zip(ms, caps)), weight={m: 1.0 for m in ms},
        routing={m: 1.0 for m in ms}, inflow_mean={}, phases={"n": ((a, b), (c, d))},
    )


def _phase_network(n_phases, caps):
    ms = tuple(MovementId(f"l{i}", f"o{i}") for i in range(n_phases))
    return NetworkSpec(movements=ms, capacity=dict(zip(ms, caps)), weight={m: 1.0 for m in ms},
                       routing={m: 1.0 for m in ms}, inflow_mean={},
                       phases={"n": tuple((m,) for m in ms)})


class TestPriorities:
    def test_classical_is_capacity_times_queue(self):
        spec, s = _junction_state(JunctionParams(c=10, k=2, Q=0), 8.0, 0.0)
        p = spec.as_map(priorities(s, spec, weights_for(spec, Backpressure(UNIFORM))))
        assert p[Q1] == 80.0

    def test_downstream_term(self):
        spec, s = _junction_state(JunctionParams(c=10, k=2, Q=50), 0.0, 40.0)
        p = spec.as_map(priorities(s, spec, weights_for(spec, Backpressure(UNIFORM))))
        assert p[Q2] == (40 - 50) * 20

    def test_empty_sink_movement_is_zero(self):
        spec, s = _junction_state(JunctionParams(Q=0), 0.0, 0.0)
        assert spec.as_map(priorities(s, spec))[DOWN] == 0.0

    def test_inverse_capacity_weights(self):
        spec, s = _junction_state(JunctionParams(c=10, k=2, Q=30), 6.0, 10.0)
        g = weights_for(spec, Backpressure(INVERSE_CAPACITY))
        np.testing.assert_allclose(spec.as_map(g)[Q2], 1 / 20)
        p = spec.as_map(priorities(s, spec, g))
        # (q/c - Q/(3c)) * c
        assert p[Q1] == pytest.approx((6 / 10 - 30 / 30) * 10)
        assert p[Q2] == pytest.approx((10 / 20 - 30 / 30) * 20)

    def test_custom_requires_every_movement(self):
        spec = build_junction(JunctionParams())
        with pytest.raises(ValueError):
            weights_for(spec, Backpressure(CUSTOM, custom={Q1: 1.0}))
        g = weights_for(spec, Backpressure(CUSTOM, custom={Q1: 2.0, Q2: 3.0, DOWN: 4.0}))
        np.testing.assert_array_equal(g, [2.0, 3.0, 4.0])

    def test_custom_defaults_to_spec_weights(self):
        spec = build_junction(JunctionParams(gamma_mode=INVERSE_CAPACITY, c=10, k=2))
        np.testing.assert_allclose(weights_for(spec, Backpressure(CUSTOM)), [0.1, 0.05, 1 / 30])


class TestSelection:
    def test_higher_priority_wins(self):
        spec = build_junction(JunctionParams())
        u = spec.as_map(backpressure_select(spec.vector({Q1: 80.0, Q2: 160.0}), spec))
        assert u[Q2] == 1 and u[Q1] == 0 and u[DOWN] == 1

    def test_phase_sum(self):
        spec = _two_phase_node()
        u = backpressure_select(np.array([5.0, -1.0, 3.0, 3.0]), spec)
        np.testing.assert_array_equal(u, [0, 0, 1, 1])

    def test_tie_with_equal_capacity_takes_first_phase(self):
        spec = _phase_network(3, (2.0, 2.0, 2.0))
        np.testing.assert_array_equal(backpressure_select(np.zeros(3), spec), [1, 0, 0])

    def test_tie_prefers_larger_capacity(self):
        spec = _phase_network(3, (2.0, 5.0, 5.0))
        np.testing.assert_array_equal(backpressure_select(np.full(3, 7.0), spec), [0, 1, 0])

    def test_near_tie_within_relative_tolerance(self):
        spec = _phase_network(2, (1.0, 4.0))
        np.testing.assert_array_equal(backpressure_select(np.array([1000.0, 1000.0 - 1e-8]), spec), [0, 1])
        np.testing.assert_array_equal(backpressure_select(np.array([1000.0, 999.0]), spec), [1, 0])

    def test_brute_force_max_weight(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            caps = rng.uniform(0.5, 20, n)
            spec = _phase_network(n, caps)
            q = rng.uniform(0, 50, n)
            p = priorities(q, spec)
            best = max(range(n), key=lambda i: (caps[i] * q[i], -i))
            assert select_phases(p, spec)[0] == best


class TestFixedCycle:
    @pytest.mark.parametrize("n,dwell,t,expected", [(2, 1, 0, 0), (2, 1, 1, 1), (2, 3, 5, 1), (3, 2, 10, 2)])
    def test_examples(self, n, dwell, t, expected):
        spec = _phase_network(n, [1.0] * n)
        u = fixed_cycle_select(t, FixedCycle(dwell=dwell), spec)
        assert int(np.argmax(u)) == expected

    def test_explicit_cycle(self):
        spec = _phase_network(3, [1.0] * 3)
        order = [int(np.argmax(fixed_cycle_select(t, FixedCycle(cycle=(2, 0, 1)), spec))) for t in range(4)]
        assert order == [2, 0, 1, 2]

    def test_validation(self):
        with pytest.raises(ValueError):
            FixedCycle(dwell=0)
        with pytest.raises(ValueError):
            FixedCycle(cycle=())
        with pytest.raises(ValueError):
            fixed_cycle_select(-1, FixedCycle(), _phase_network(2, [1, 1]))


class TestAlternating:
    def test_parity(self):
        spec = build_junction(JunctionParams())
        assert spec.as_map(alternating_select(0, spec))[Q1] == 1
        assert spec.as_map(alternating_select(7, spec))[Q2] == 1

    def test_rejects_other_networks(self):
        with pytest.raises(ValueError):
            alternating_select(0, _two_phase_node())


class TestFlags:
    @pytest.mark.parametrize("flag,kind", [("bp", Backpressure), ("new", Backpressure),
                                           ("fixed", FixedCycle), ("alt", Alternating)])
    def test_names(self, flag, kind):
        pol = policy_from_flag(flag)
        assert isinstance(pol, kind) and pol.name == flag

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown policy"):
            policy_from_flag("greedy")

    def test_controller_records_priorities_for_fixed(self):
        spec, s = _junction_state(JunctionParams(c=10, k=2), 8.0, 1.0)
        u, p = Controller(spec, FixedCycle()).decide(s, 0)
        assert spec.as_map(p)[Q1] == 80.0
