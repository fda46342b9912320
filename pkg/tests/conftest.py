import math

import numpy as np
import pytest

from tinyvim.tensor import GradTape, Tensor, default_dtype

# lines printed in the terminal summary by the acceptance module
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


def leaf(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def check_gradients(fn, inputs, probes=10, h=1e-5, seed=0, tol=1e-6, joint=False):
    """Compare tape gradients with central differences along random directions.

    ``fn`` maps the list of input tensors to an output tensor; the loss is a
    fixed random projection of that output (or the output itself when it is
    a scalar). Returns the worst relative error
    |analytic - numeric| / (|analytic| + 1e-8) over ``probes`` directions per
    input, or over ``probes`` unit directions spanning all inputs when ``joint``.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    weights = rng.normal(size=fn(inputs).shape)

    def loss_value():
        return float(np.sum(fn(inputs).data * weights))

    with GradTape() as tape:
        out = fn(inputs)
        loss = (out * Tensor(weights)).sum()
    tape.backward(loss)
    worst = 0.0
    if joint:
        grads = [np.zeros(t.shape) if t.grad is None else t.grad for t in inputs]
        bases = [t.data.copy() for t in inputs]
        for _ in range(probes):
            vs = [rng.normal(size=t.shape) for t in inputs]
            # unit length, so h is the step in the joint space however many scalars it has
            norm = math.sqrt(sum(float(np.sum(v * v)) for v in vs))
            vs = [v / norm for v in vs]
            analytic = float(sum(np.sum(g * v) for g, v in zip(grads, vs)))
            values = []
            for sign in (1.0, -1.0):
                for t, b, v in zip(inputs, bases, vs):
                    t.data = b + sign * h * v
                values.append(loss_value())
            for t, b in zip(inputs, bases):
                t.data = b
            numeric = (values[0] - values[1]) / (2 * h)
            worst = max(worst, abs(analytic - numeric) / (abs(analytic) + 1e-8))
        assert worst <= tol, f"finite-difference mismatch: {worst:.3e}"
        return worst
    for t in inputs:
        grad = np.zeros(t.shape) if t.grad is None else t.grad
        base = t.data.copy()
        for _ in range(probes):
            v = rng.normal(size=t.shape)
            analytic = float(np.sum(grad * v))
            t.data = base + h * v
            plus = loss_value()
            t.data = base - h * v
            minus = loss_value()
            t.data = base
            numeric = (plus - minus) / (2 * h)
            worst = max(worst, abs(analytic - numeric) / (abs(analytic) + 1e-8))
    assert worst <= tol, f"finite-difference mismatch: {worst:.3e}"
    return worst
