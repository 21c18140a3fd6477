import asyncio
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import EmptyTestSet
from expert.controller import ExpertPolicy, NmpcExpert
from expert.ocp import Ocp, solve
from harness.evaluation import closed_loop_eval, open_loop_eval, summarize
from harness.rollout import ExpertController, NaiveController, Outcome, WrappedController, closed_loop_run
from policy.networks import MlpPolicy
from policy.normalized import NeuralPolicy, Normalizer
from tests.conftest import ConstantPolicy, terminal_point, terminal_sequence
from wrapper.safe import CandidateSource, shift_append


def tilt_policy(quad):
    """Постоянный крен на границе входа: вывод угла за +-pi/9"""
    u_seq = np.tile(quad.u_ref, (quad.N, 1))
    u_seq[:, 0] = math.pi / 4
    return ConstantPolicy(u_seq)


def random_policy(model, seed):
    """Необученная MLP, выдающая входы вокруг u_ref в масштабе всего диапазона"""
    rng = np.random.default_rng(seed)
    net = MlpPolicy.initialize(model.n_x, [16], model.n_u, model.N, rng)
    for W in net.weights:
        W *= 3.0
    span = model.input_upper - model.input_lower
    norm = Normalizer(model.x_ref.copy(), np.ones(model.n_x), model.u_ref.copy(), 0.75 * span)
    return NeuralPolicy(net, norm)


@pytest.fixture(scope="module")
def expert_rows(quad, quad_ing):
    xs, us = [], []
    for dx in (0.1, -0.1):
        x0 = np.zeros(10)
        x0[0] = dx
        sol = solve(Ocp(quad, quad_ing, x0))
        assert sol.converged
        xs.append(x0)
        us.append(sol.u_seq.reshape(-1))
    return np.array(xs), np.array(us)


def wrapped_from_row(quad, quad_ing, policy, x0, u_row):
    u_seq = u_row.reshape(quad.N, quad.n_u)
    cand = shift_append(u_seq, x0, quad, quad_ing, source=CandidateSource.INITIAL)
    return WrappedController(policy, quad, quad_ing, cand), quad.step(x0, u_seq[0])


class TestClosedLoopRun:
    def test_naive_violation_stops_early(self, quad, quad_ing):
        record = closed_loop_run(quad, quad_ing, NaiveController(tilt_policy(quad)), quad.x_ref,
                                 steps=30, eps=0.0, seed=0)
        assert record.outcome == Outcome.VIOLATED
        assert record.violated_step < 30
        assert len(record.inputs) == record.violated_step + 1
        assert record.violation_flags[record.violated_step]
        assert record.violations

    def test_wrapper_keeps_bad_policy_safe(self, quad, quad_ing, expert_rows):
        x0, u_row = expert_rows[0][0], expert_rows[1][0]
        controller, x_start = wrapped_from_row(quad, quad_ing, tilt_policy(quad), x0, u_row)
        record = closed_loop_run(quad, quad_ing, controller, x_start, steps=20, eps=0.0, seed=0)
        assert record.outcome == Outcome.SAFE_COMPLETE
        assert not record.violation_flags.any()
        assert record.intervened
        assert len(record.decisions) == 20

    def test_wrapper_with_zero_policy(self, quad, quad_ing, expert_rows):
        x0, u_row = expert_rows[0][1], expert_rows[1][1]
        zero = ConstantPolicy(np.zeros((quad.N, quad.n_u)))
        controller, x_start = wrapped_from_row(quad, quad_ing, zero, x0, u_row)
        record = closed_loop_run(quad, quad_ing, controller, x_start, steps=20, eps=0.0, seed=0)
        assert record.outcome == Outcome.SAFE_COMPLETE

    def test_expert_controller(self, quad, quad_ing):
        x0 = np.zeros(10)
        x0[2] = 0.2
        controller = ExpertController(ExpertPolicy(NmpcExpert(quad, quad_ing)))
        record = closed_loop_run(quad, quad_ing, controller, x0, steps=10, eps=0.0, seed=0)
        assert record.outcome == Outcome.SAFE_COMPLETE
        assert abs(record.states[-1][2]) < 0.2

    def test_disturbance_bounds_and_trace(self, quad, quad_ing, hover_seq):
        record = closed_loop_run(quad, quad_ing, NaiveController(ConstantPolicy(hover_seq)), quad.x_ref,
                                 steps=20, eps=0.1, seed=4, index=2)
        assert record.outcome == Outcome.SAFE_COMPLETE
        assert record.disturbances.shape == (20, 3)
        assert np.all(np.abs(record.disturbances) <= 0.1)
        assert record.trace().shape == (21, 10 + 3 + 3 + 1)
        assert np.all(np.isnan(record.trace()[-1, 10:16]))

    def test_same_seed_same_rollout(self, quad, quad_ing, hover_seq):
        runs = [
            closed_loop_run(quad, quad_ing, NaiveController(ConstantPolicy(hover_seq)), quad.x_ref,
                            steps=10, eps=0.05, seed=7, index=3)
            for _ in range(2)
        ]
        assert np.array_equal(runs[0].states, runs[1].states)
        other = closed_loop_run(quad, quad_ing, NaiveController(ConstantPolicy(hover_seq)), quad.x_ref,
                                steps=10, eps=0.05, seed=7, index=4)
        assert not np.array_equal(runs[0].disturbances, other.disturbances)

    def test_zero_disturbance_matches_nominal(self, quad, quad_ing, hover_seq):
        record = closed_loop_run(quad, quad_ing, NaiveController(ConstantPolicy(hover_seq)), quad.x_ref,
                                 steps=5, eps=0.0, seed=0)
        assert_allclose(record.states, np.zeros((6, 10)), atol=1e-10)


class TestClosedLoopEval:
    def test_wrapped_is_always_safe(self, quad, quad_ing, expert_rows):
        xs, us = expert_rows
        summary, naive, wrapped = asyncio.run(
            closed_loop_eval(quad, quad_ing, tilt_policy(quad), xs, us, steps=15, eps=0.0, seed=0)
        )
        assert summary.n_rollouts == 2
        assert summary.safe_pct == 0.0
        assert summary.wrapped_safe_pct == 100.0
        assert summary.interv_pct == 100.0
        assert summary.reason_pcts["State"] == 100.0
        assert all(r.outcome == Outcome.VIOLATED for r in naive)
        assert len(wrapped) == 2

    @pytest.mark.parametrize("name", ["quadcopter", "kinematic", "dynamic"])
    def test_random_weights_are_wrapped_safely(self, name, request):
        model = request.getfixturevalue("quad" if name == "quadcopter" else name)
        ing = request.getfixturevalue("quad_ing" if name == "quadcopter" else f"{name}_ing")
        policy = random_policy(model, seed=5)
        rng = np.random.default_rng(17)
        xs = np.array([terminal_point(model, ing, rng, 0.2) for _ in range(6)])
        us = np.array([terminal_sequence(model, ing, x).reshape(-1) for x in xs])
        summary, naive, wrapped = asyncio.run(
            closed_loop_eval(model, ing, policy, xs, us, steps=25, eps=0.0, seed=0)
        )
        assert summary.wrapped_safe_pct == 100.0
        assert summary.candidate_infeasible == 0
        assert all(not r.violation_flags.any() for r in wrapped)
        assert all(len(r.decisions) == 25 for r in wrapped)

    def test_repeatable(self, quad, quad_ing, expert_rows):
        xs, us = expert_rows
        first, _, _ = asyncio.run(closed_loop_eval(quad, quad_ing, tilt_policy(quad), xs, us, 10, 0.01, seed=3))
        second, _, _ = asyncio.run(closed_loop_eval(quad, quad_ing, tilt_policy(quad), xs, us, 10, 0.01, seed=3))
        assert first.to_dict() == second.to_dict()

    def test_empty_rows(self, quad, quad_ing):
        with pytest.raises(EmptyTestSet):
            asyncio.run(closed_loop_eval(quad, quad_ing, tilt_policy(quad), np.zeros((0, 10)),
                                         np.zeros((0, 30)), 10, 0.0, seed=0))

    def test_summarize_without_interventions(self, quad, quad_ing, hover_seq):
        record = closed_loop_run(quad, quad_ing, NaiveController(ConstantPolicy(hover_seq)), quad.x_ref,
                                 steps=3, eps=0.0, seed=0)
        summary = summarize([record], [record])
        assert summary.safe_pct == 100.0
        assert summary.interv_pct == 0.0
        assert summary.reason_pcts == {"State": 0.0, "Terminal": 0.0, "Cost": 0.0}


class TestOpenLoopEval:
    def test_expert_is_feasible(self, quad, quad_ing, expert_rows):
        policy = ExpertPolicy(NmpcExpert(quad, quad_ing))
        assert open_loop_eval(quad, quad_ing, policy, expert_rows[0]) == 100.0

    def test_falling_policy_is_infeasible(self, quad, quad_ing, expert_rows):
        zero = ConstantPolicy(np.zeros((quad.N, quad.n_u)))
        assert open_loop_eval(quad, quad_ing, zero, expert_rows[0]) == 0.0

    def test_empty(self, quad, quad_ing, hover_seq):
        with pytest.raises(EmptyTestSet):
            open_loop_eval(quad, quad_ing, ConstantPolicy(hover_seq), np.zeros((0, 10)))
