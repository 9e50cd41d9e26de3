"""AdamW update semantics: bias correction and decoupled decay."""

import numpy as np
import pytest

from fvcslope.optim import AdamW, AdamWState, adamw_step
from fvcslope.tensor import Tensor


def make_state(params, **kw):
    return AdamWState.for_params(params, **kw)


def test_zero_grad_zero_decay_leaves_params():
    p = np.array([1.0, -2.0, 3.0])
    state = make_state([p], weight_decay=0.0)
    adamw_step([p], [np.zeros(3)], state)
    assert np.array_equal(p, [1.0, -2.0, 3.0])


def test_decay_only_step_scales_params():
    p = np.array([1.0, -2.0, 3.0])
    orig = p.copy()
    state = make_state([p], learning_rate=0.1, weight_decay=0.01)
    adamw_step([p], [np.zeros(3)], state)
    assert np.allclose(p, orig * (1 - 0.001), rtol=0, atol=1e-15)


def test_first_step_matches_reference_formula():
    # scalar reference evaluation of the standard bias-corrected update
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    p = np.array([1.0])
    g = np.array([1.0])
    state = make_state([p], learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps,
                       weight_decay=0.0)
    adamw_step([p], [g], state)

    m = (1 - b1) * 1.0
    v = (1 - b2) * 1.0
    m_hat = m / (1 - b1)
    v_hat = v / (1 - b2)
    expected = 1.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert abs(p[0] - expected) < 1e-15


def plain_adam(p0, grads, lr, b1, b2, eps):
    p = p0.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_zero_decay_reproduces_plain_adam():
    rng = np.random.default_rng(3)
    p = rng.normal(size=4)
    p0 = p.copy()
    grads = [rng.normal(size=4) for _ in range(7)]
    state = make_state([p], weight_decay=0.0)
    for g in grads:
        adamw_step([p], [g], state)
    assert np.allclose(p, plain_adam(p0, grads, 1e-3, 0.9, 0.999, 1e-8),
                       rtol=0, atol=1e-14)


def test_decay_term_independent_of_gradient():
    lr, wd = 0.05, 0.02
    for g_val in (0.0, 1.0, -3.0, 100.0):
        p_wd = np.array([2.0])
        p_plain = np.array([2.0])
        g = np.array([g_val])
        adamw_step([p_wd], [g], make_state([p_wd], learning_rate=lr,
                                           weight_decay=wd))
        adamw_step([p_plain], [g], make_state([p_plain], learning_rate=lr,
                                              weight_decay=0.0))
        # the decay contribution is exactly -lr*wd*p_prev regardless of g
        assert abs((p_wd[0] - p_plain[0]) - (-lr * wd * 2.0)) < 1e-15


def test_step_count_increments():
    p = np.array([1.0])
    state = make_state([p])
    for expected in (1, 2, 3):
        adamw_step([p], [np.array([0.1])], state)
        assert state.step_count == expected


@pytest.mark.parametrize("kw", [
    {"learning_rate": 0.0}, {"learning_rate": -1e-3},
    {"beta1": 0.0}, {"beta1": 1.0}, {"beta2": 1.5},
])
def test_invalid_hyperparameters_rejected(kw):
    p = np.array([1.0])
    state = make_state([p], **kw)
    with pytest.raises(ValueError):
        adamw_step([p], [np.array([0.0])], state)


def test_missing_gradient_rejected():
    p = np.array([1.0])
    state = make_state([p])
    with pytest.raises(ValueError, match="missing gradient"):
        adamw_step([p], [None], state)


def test_adamw_wrapper_steps_and_zeroes():
    t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = AdamW({"w": t}, weight_decay=0.0)
    with pytest.raises(ValueError, match="no gradient"):
        opt.step()
    t.grad = np.array([0.5, -0.5])
    before = t.data.copy()
    opt.step()
    opt.zero_grad()
    assert t.grad is None
    assert not np.array_equal(t.data, before)
