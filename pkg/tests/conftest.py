import numpy as np
import pytest

from mfpg.market import AgentType, CoefficientModel, PopulationSpec, TimeGrid


def tau1_type(theta: float = 1.0) -> AgentType:
    return AgentType(1.0, 0.5, theta, CoefficientModel.constant(0.1, 0.2, 0.2))


def tau2_type() -> AgentType:
    return AgentType(1.0, -1.0, 0.5, CoefficientModel.constant(0.05, 0.3, 0.1))


def mixture() -> PopulationSpec:
    return PopulationSpec(((0.5, tau1_type()), (0.5, tau2_type())))


def markov_coeffs() -> CoefficientModel:
    return CoefficientModel.common_noise_markov(
        lambda t, w: 0.1 + 0.05 * np.tanh(w), 0.2, 0.2,
        {"h": (0.05, 0.15), "sigma": (0.2, 0.2), "sigma0": (0.2, 0.2)})


@pytest.fixture
def tau1():
    return tau1_type()


@pytest.fixture
def pop1():
    return PopulationSpec.single(tau1_type())


@pytest.fixture
def mix():
    return mixture()


@pytest.fixture
def grid16():
    return TimeGrid(1.0, 16)


def pytest_terminal_summary(terminalreporter):
    import sys

    test_acceptance = sys.modules.get("tests.test_acceptance")
    if test_acceptance is not None and test_acceptance.RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            ok, info = test_acceptance.RESULTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {info}")
