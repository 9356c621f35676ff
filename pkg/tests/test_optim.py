import math

import numpy as np
import pytest

from tapnet.errors import ConfigError, NumericError
from tapnet.optim import Adam, lr_schedule

from conftest import param


def scalar_adam(w, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Straight-line scalar Adam used as an oracle."""
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(w)
    return out


def test_first_step_is_signed_lr():
    w = param([1.0, -3.0, 0.5])
    w.grad = np.array([0.2, -7.0, 1e-3])
    Adam().step({"w": w}, 0.01)
    np.testing.assert_allclose(w.data, [1.0 - 0.01, -3.0 + 0.01, 0.5 - 0.01], atol=1e-7)


def test_zero_grad_leaves_params():
    w = param([1.0, 2.0])
    w.grad = np.zeros(2)
    Adam().step({"w": w}, 0.1)
    np.testing.assert_array_equal(w.data, [1.0, 2.0])


def test_missing_grad_counts_as_zero():
    w = param([1.0, 2.0])
    Adam().step({"w": w}, 0.1)
    np.testing.assert_array_equal(w.data, [1.0, 2.0])


def test_two_steps_on_square_match_oracle():
    w = param([1.0])
    opt = Adam()
    seen = []
    for _ in range(2):
        w.grad = None
        (w * w).sum().backward()
        opt.step({"w": w}, 0.1)
        seen.append(w.data[0])
    expected = scalar_adam(1.0, lambda x: 2 * x, 0.1, 2)
    np.testing.assert_allclose(seen, expected, rtol=0, atol=1e-15)
    assert 1.0 > seen[0] > seen[1] > 0.0


def test_non_finite_grad_aborts_before_update():
    a, b = param([1.0]), param([2.0])
    a.grad = np.array([0.5])
    b.grad = np.array([np.nan])
    opt = Adam()
    with pytest.raises(NumericError, match="b"):
        opt.step({"a": a, "b": b}, 0.1)
    assert a.data[0] == 1.0 and opt.t == 0


def test_state_dict_resumes_identically():
    w1, w2 = param([1.0, -1.0]), param([1.0, -1.0])
    o1 = Adam()
    for g in ([0.3, 0.1], [0.2, -0.4]):
        w1.grad = np.array(g)
        o1.step({"w": w1}, 0.05)
    o2 = Adam()
    o2.load_state_dict(o1.state_dict())
    w2.data = w1.data.copy()
    w1.grad = w2.grad = np.array([1.0, 1.0])
    o1.step({"w": w1}, 0.05)
    o2.step({"w": w2}, 0.05)
    np.testing.assert_array_equal(w1.data, w2.data)


def test_lr_schedule_examples():
    assert lr_schedule(0) == 1e-3
    assert lr_schedule(40_000, 1e-3, 40_000, 0.5) == 5e-4
    assert lr_schedule(39_999, 1e-3, 40_000, 0.5) == 1e-3
    assert lr_schedule(120_000, 1e-3, 40_000, 0.5) == 1.25e-4
    assert lr_schedule(10**6, 0.2, 7, 1.0) == 0.2


@pytest.mark.parametrize("K, f", [(0, 0.5), (10, 0.0), (10, 1.5)])
def test_lr_schedule_rejects_bad(K, f):
    with pytest.raises(ConfigError):
        lr_schedule(0, 1e-3, K, f)
