import dataclasses

import numpy as np
import pytest
from scipy import linalg

from dkf_ode import get_model
from dkf_ode.verify import scalar_model

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


class ExactSignal:
    """``C x(t)`` for ``x' = A x + r`` from ``x0``, by matrix exponentials."""

    def __init__(self, A, r, C, x0):
        d = A.shape[0]
        self.M = np.zeros((d + 1, d + 1))
        self.M[:d, :d] = A
        self.M[:d, d] = r
        self.C = C
        self.z0 = np.append(x0, 1.0)
        self.d = d

    def state(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        return np.array([(linalg.expm(self.M * s) @ self.z0)[: self.d] for s in t])

    def __call__(self, t):
        return self.state(t) @ self.C.T


@pytest.fixture(scope="session")
def toy():
    return get_model("toy1")


@pytest.fixture(scope="session")
def short_toy():
    return dataclasses.replace(get_model("toy1"), T=5.0)


@pytest.fixture(scope="session")
def scalar():
    return scalar_model(1.0)


def exact_signal(model, theta, x0):
    A, r = model.sample(theta, [0.0])
    return ExactSignal(A[0], r[0], model.C, np.asarray(x0, float))
