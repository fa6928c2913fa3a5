import numpy as np
import pytest

from vfusion import ops
from vfusion.gradcheck import finite_diff_grad, rel_error
from vfusion.tensor import Tensor

EPS = 1e-5
TOL = 1e-4


def dtensor(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def weighted_sum(out, weights):
    """Scalar loss with a non-trivial upstream gradient."""
    return ops.sum_all(ops.hadamard(out, Tensor(weights, dtype=np.float64)))


def grad_errors(loss_fn, inputs):
    """Max relative error between backward and central differences for each input tensor."""
    for t in inputs:
        t.grad = None
    loss_fn().backward()
    analytic = [t.grad.copy() for t in inputs]
    return [rel_error(a, finite_diff_grad(lambda _: loss_fn(), t, EPS)) for a, t in zip(analytic, inputs)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
