"""Adam and EMA updates against scalar simulation oracles."""

import numpy as np

from blobgen.grad import Adam, AdamState, Tensor, adam_step, ema_update


def test_zero_gradient_keeps_params_advances_step():
    p = {"w": np.ones(3, dtype=np.float32)}
    g = {"w": np.zeros(3, dtype=np.float32)}
    new, state = adam_step(p, g, AdamState(), lr=0.1)
    np.testing.assert_array_equal(new["w"], p["w"])
    assert state.step == 1


def test_zero_lr_keeps_params():
    p = {"w": np.ones(3, dtype=np.float32)}
    g = {"w": np.full(3, 2.5, dtype=np.float32)}
    new, _ = adam_step(p, g, AdamState(), lr=0.0)
    np.testing.assert_array_equal(new["w"], p["w"])


def adam_scalar_oracle(g, steps, lr, b1, b2, eps):
    """Independent scalar Adam recurrence."""
    p, m, v = 0.0, 0.0, 0.0
    trace = []
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        trace.append(p)
    return trace


def test_constant_gradient_matches_scalar_oracle():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    p = {"w": np.zeros(1, dtype=np.float32)}
    state = AdamState()
    gval = 0.37
    trace = adam_scalar_oracle(gval, 40, lr, b1, b2, eps)
    for t in range(40):
        p, state = adam_step(p, {"w": np.full(1, gval, dtype=np.float32)}, state,
                             lr, b1, b2, eps)
        np.testing.assert_allclose(p["w"][0], trace[t], rtol=1e-4, atol=1e-6)
    # after warmup each step moves ~lr against the gradient sign
    assert trace[-1] < 0
    np.testing.assert_allclose(trace[-1] - trace[-2], -lr, rtol=0.05)


def test_adam_wrapper_updates_tensors():
    w = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    opt = Adam({"w": w}, lr=0.5)
    w.grad = np.ones(2, dtype=np.float32)
    opt.step()
    assert np.all(w.data < 0)
    opt.zero_grad()
    assert w.grad is None


def test_ema_endpoints_and_geometric_convergence():
    ema = {"w": np.zeros(4, dtype=np.float32)}
    live = {"w": np.ones(4, dtype=np.float32)}
    np.testing.assert_array_equal(ema_update(ema, live, 1.0)["w"], ema["w"])
    np.testing.assert_array_equal(ema_update(ema, live, 0.0)["w"], live["w"])
    cur = ema
    decay = 0.9
    for n in range(1, 20):
        cur = {"w": ema_update(cur, live, decay)["w"]}
        gap = 1.0 - cur["w"][0]
        np.testing.assert_allclose(gap, decay ** n, rtol=1e-4)
