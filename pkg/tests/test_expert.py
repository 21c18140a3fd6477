import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import DimensionMismatch
from expert.controller import ExpertPolicy, NmpcExpert, expert_action
from expert.cost import recompose, stage_cost, total_cost, trajectory_cost
from expert.ocp import Ocp, SolveStatus, SqpSolver, solve
from feasibility.check import is_feasible, rollout
from tests.conftest import make_toy_ingredients, make_toy_model


def finite_horizon_lqr(x0, N, P_f):
    """Оптимум скалярной задачи x+ = x + u, Q = R = 1 обратной рекурсией Риккати"""
    P = P_f
    gains = []
    for _ in range(N):
        K = P / (1.0 + P)
        gains.append(K)
        P = 1.0 + P - P * K
    gains.reverse()
    x, u = x0, []
    for K in gains:
        u.append(-K * x)
        x = x + u[-1]
    return np.array(u)


class TestCost:
    def test_zero_at_reference(self, quad):
        assert stage_cost(quad.x_ref, quad.u_ref, quad) == 0.0

    def test_quadcopter_position_weight(self, quad):
        e1 = np.zeros(10)
        e1[0] = 1.0
        assert stage_cost(e1, quad.u_ref, quad) == pytest.approx(20.0)

    def test_kinematic_steering_weight(self, kinematic):
        assert stage_cost(kinematic.x_ref, np.array([1.0, 0.0]), kinematic) == pytest.approx(2.0)

    def test_single_stage_toy(self):
        model = make_toy_model(N=1)
        ing = make_toy_ingredients(P=1.0)
        assert total_cost(np.array([1.0]), np.array([[-1.0]]), model, ing) == pytest.approx(2.0)

    def test_matches_stage_sum(self, quad, quad_ing, rng):
        x0 = rng.uniform(-0.05, 0.05, size=10)
        v = rng.uniform(-0.01, 0.01, size=(quad.N, 3))
        states, inputs = recompose(quad, quad_ing, x0, v)
        expected = sum(stage_cost(states[k], inputs[k], quad) for k in range(quad.N))
        expected += quad_ing.terminal_value(states[-1])
        assert total_cost(x0, v, quad, quad_ing) == pytest.approx(expected, abs=1e-12)
        assert trajectory_cost(quad, quad_ing, states, inputs) == pytest.approx(expected, abs=1e-12)

    def test_wrong_horizon(self, quad, quad_ing):
        with pytest.raises(DimensionMismatch):
            total_cost(np.zeros(10), np.zeros((3, 3)), quad, quad_ing)


class TestSqp:
    def test_linear_quadratic_toy(self):
        model = make_toy_model(N=3)
        ing = make_toy_ingredients(P=2.0)
        sol = solve(Ocp(model, ing, np.array([1.0])))
        assert sol.status == SolveStatus.CONVERGED
        assert sol.iterations == 1
        assert_allclose(sol.u_seq[:, 0], finite_horizon_lqr(1.0, 3, 2.0), atol=1e-6)

    def test_equilibrium_start(self, quad, quad_ing):
        sol = solve(Ocp(quad, quad_ing, quad.x_ref))
        assert sol.converged
        assert_allclose(sol.v_seq, 0.0, atol=1e-6)
        assert sol.cost == pytest.approx(0.0, abs=1e-8)

    def test_near_reference_solution_is_feasible(self, quad, quad_ing):
        x0 = np.zeros(10)
        x0[0], x0[4] = 0.1, -0.05
        sol = solve(Ocp(quad, quad_ing, x0))
        assert sol.converged
        assert sol.max_violation <= 1e-6
        assert is_feasible(quad, quad_ing, x0, sol.u_seq).feasible
        assert_allclose(rollout(quad, x0, sol.u_seq), sol.x_traj, atol=1e-10)

    def test_first_order_optimality(self, quad, quad_ing, rng):
        x0 = np.zeros(10)
        x0[1] = 0.1
        sol = solve(Ocp(quad, quad_ing, x0))
        assert sol.converged
        for _ in range(10):
            d = rng.normal(size=sol.v_seq.shape)
            d *= 1e-3 / np.linalg.norm(d)
            assert total_cost(x0, sol.v_seq + d, quad, quad_ing) >= sol.cost - 1e-7

    def test_warm_start_shape(self, quad, quad_ing):
        with pytest.raises(DimensionMismatch):
            SqpSolver().solve(Ocp(quad, quad_ing, quad.x_ref), warm_start=np.zeros((2, 3)))

    def test_ocp_validates_state(self, quad, quad_ing):
        with pytest.raises(DimensionMismatch):
            Ocp(quad, quad_ing, np.zeros(3))


class TestExpert:
    def test_action_at_equilibrium(self, quad, quad_ing):
        u, sol = expert_action(NmpcExpert(quad, quad_ing), quad.x_ref)
        assert_allclose(u, quad.u_ref, atol=1e-6)

    def test_warm_started_resolve(self, quad, quad_ing):
        expert = NmpcExpert(quad, quad_ing)
        x0 = np.zeros(10)
        x0[0] = 0.1
        sol = expert.solve(x0)
        assert sol.converged
        assert np.all(sol.u_seq >= quad.input_lower) and np.all(sol.u_seq <= quad.input_upper)
        nxt = expert.solve(sol.x_traj[1], expert.shifted_warm_start(sol))
        assert nxt.converged
        assert nxt.iterations <= 5

    def test_nominal_decrease(self, quad, quad_ing):
        expert = NmpcExpert(quad, quad_ing)
        x = np.zeros(10)
        x[2] = 0.2
        prev = None
        for _ in range(3):
            u, sol = expert.action(x, prev)
            assert sol.converged
            x_next = quad.step(x, u)
            if prev is not None:
                assert sol.cost <= prev.cost - float(stage_cost(x_prev, u_prev, quad)) + 1e-6
            prev, x_prev, u_prev, x = sol, x, u, x_next

    def test_policy_interface(self, quad, quad_ing):
        policy = ExpertPolicy(NmpcExpert(quad, quad_ing))
        u_seq = policy(quad.x_ref)
        assert u_seq.shape == (quad.N, quad.n_u)
        assert policy.batch(np.stack([quad.x_ref, quad.x_ref])).shape == (2, quad.N, quad.n_u)
