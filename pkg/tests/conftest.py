import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models.benchmarks import BenchmarkModel, build_model  # noqa: E402
from terminal.design import design_terminal  # noqa: E402
from terminal.ingredients import TerminalIngredients, terminal_control  # noqa: E402


def integrator_step(x, u, T_s, params=None):
    """x+ = x + u (скалярный интегратор для задач с известным ответом)"""
    return np.asarray(x, dtype=np.float64) + np.asarray(u, dtype=np.float64)


def make_toy_model(N=3, lower=-math.inf, upper=math.inf, u_lower=-math.inf, u_upper=math.inf):
    return BenchmarkModel(
        name="toy",
        n_x=1,
        n_u=1,
        T_s=1.0,
        N=N,
        Q=[[1.0]],
        R=[[1.0]],
        x_ref=[0.0],
        u_ref=[0.0],
        input_lower=[u_lower],
        input_upper=[u_upper],
        state_lower=[lower],
        state_upper=[upper],
        step_fn=integrator_step,
    )


def make_toy_ingredients(P=1.0, K_f=0.0, alpha=math.inf, K_delta=0.0,
                         u_lower=-math.inf, u_upper=math.inf):
    return TerminalIngredients(
        P=[[P]], K_f=[[K_f]], alpha=alpha, K_delta=[[K_delta]],
        x_ref=[0.0], u_ref=[0.0], input_lower=[u_lower], input_upper=[u_upper],
    )


@pytest.fixture
def toy_model():
    return make_toy_model()


@pytest.fixture
def toy_ingredients():
    return make_toy_ingredients()


@pytest.fixture(scope="session")
def quad():
    return build_model("quadcopter")


@pytest.fixture(scope="session")
def kinematic():
    return build_model("kinematic")


@pytest.fixture(scope="session")
def dynamic():
    return build_model("dynamic")


@pytest.fixture(scope="session")
def quad_ing(quad):
    return design_terminal(quad)


@pytest.fixture
def hover_seq(quad):
    return np.tile(quad.u_ref, (quad.N, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class ConstantPolicy:
    """Политика, всегда предлагающая одну и ту же последовательность"""

    def __init__(self, u_seq):
        self.u_seq = np.asarray(u_seq, dtype=np.float64)

    def __call__(self, x):
        return self.u_seq.copy()

    def batch(self, X):
        return np.stack([self.u_seq] * len(X))


def dummy_ingredients(model, alpha=1.0):
    """Ингредиенты без синтеза: P = I по отслеживаемым координатам, K = 0"""
    return TerminalIngredients(
        P=np.diag(model.tracked_mask), K_f=np.zeros((model.n_u, model.n_x)), alpha=alpha,
        K_delta=np.zeros((model.n_u, model.n_x)), x_ref=model.x_ref, u_ref=model.u_ref,
        input_lower=model.input_lower, input_upper=model.input_upper,
    )


@pytest.fixture(scope="session")
def kinematic_ing(kinematic):
    return design_terminal(kinematic)


@pytest.fixture(scope="session")
def dynamic_ing(dynamic):
    return design_terminal(dynamic)


def terminal_point(model, ing, rng, level):
    """Состояние на уровне level * alpha терминального множества в случайном направлении"""
    e = np.zeros(model.n_x)
    e[model.tracked_states] = rng.normal(size=len(model.tracked_states))
    scale = math.sqrt(level * ing.alpha / float(ing.terminal_value(ing.x_ref + e)))
    return ing.x_ref + scale * e


def terminal_sequence(model, ing, x0):
    """Входы терминального регулятора вдоль номинального прогона из x0"""
    x = np.asarray(x0, dtype=np.float64)
    rows = []
    for _ in range(model.N):
        u, _ = terminal_control(x, ing)
        rows.append(u)
        x = model.step(x, u)
    return np.array(rows)
