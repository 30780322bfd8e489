import numpy as np
import pytest

from mfglab.errors import DivergenceError
from mfglab.nets import (Adam, Mlp, Sgd, make_optimizer, softplus_reverse,
                         softplus_vjh)

# architectures actually used elsewhere in the repo
ARCHITECTURES = [(1, 32, 32, 1), (2, 32, 32, 1), (2, 40, 40, 40, 1), (2, 16, 1)]


def straight_line_eval(net, x):
    """Independent re-implementation of the forward pass."""
    a = np.asarray(x, dtype=float)
    layers = net.layers()
    for i, (w, b) in enumerate(layers):
        z = w @ a + b
        a = z if i == len(layers) - 1 else np.tanh(z)
    return a


def test_zero_net_outputs_zero():
    net = Mlp.create((3, 8, 2), rng_seed=0)
    zero = net.with_params(np.zeros_like(net.params))
    assert np.all(zero.forward(np.array([0.3, -1.0, 2.0])) == 0.0)


def test_single_linear_layer_is_affine():
    net = Mlp.create((2, 3), rng_seed=1, activation="identity")
    w, b = net.layers()[0]
    x = np.array([0.7, -0.2])
    np.testing.assert_allclose(net.forward(x), w @ x + b, rtol=0, atol=0)


def test_forward_matches_straight_line_reimplementation():
    rng = np.random.Generator(np.random.PCG64(7))
    net = Mlp.create((3, 10, 7, 2), rng_seed=5)
    for _ in range(5):
        x = rng.normal(size=3)
        np.testing.assert_allclose(net.forward(x), straight_line_eval(net, x),
                                   atol=1e-14)


def test_grad_params_linear_layer():
    net = Mlp.create((2, 1), rng_seed=3, activation="identity")
    x = np.array([0.4, -1.3])
    grad = net.grad_params(x, np.array([1.0]))
    # layout: weight row then bias
    np.testing.assert_allclose(grad[:2], x)
    np.testing.assert_allclose(grad[2], 1.0)


def test_zero_upstream_gives_zero_gradient():
    net = Mlp.create((2, 5, 1), rng_seed=4)
    grad = net.grad_params(np.array([0.2, 0.9]), np.array([0.0]))
    assert np.all(grad == 0.0)


def fd_param_grad(net, x, upstream, h=1e-5):
    grad = np.empty_like(net.params)
    for i in range(net.params.size):
        plus = net.params.copy()
        plus[i] += h
        minus = net.params.copy()
        minus[i] -= h
        fp = float(upstream @ np.atleast_1d(net.with_params(plus).forward(x)))
        fm = float(upstream @ np.atleast_1d(net.with_params(minus).forward(x)))
        grad[i] = (fp - fm) / (2 * h)
    return grad


@pytest.mark.parametrize("widths", ARCHITECTURES)
def test_grad_params_matches_finite_differences(widths):
    rng = np.random.Generator(np.random.PCG64(11))
    for trial in range(10):
        net = Mlp.create(widths, rng_seed=100 + trial)
        x = rng.normal(size=widths[0])
        upstream = rng.normal(size=widths[-1])
        exact = net.grad_params(x, upstream)
        approx = fd_param_grad(net, x, upstream)
        err = np.abs(exact - approx)
        ok = (err <= 1e-7) | (err <= 1e-4 * np.abs(approx))
        assert ok.all(), f"max abs err {err.max():.2e}"


def test_input_partials_linear_net():
    net = Mlp.create((3, 2), rng_seed=9, activation="identity")
    w, _ = net.layers()[0]
    jac, hess = net.input_partials(np.array([0.1, 0.2, 0.3]))
    np.testing.assert_allclose(jac, w)
    np.testing.assert_allclose(hess, 0.0)


def test_input_partials_single_tanh_unit_closed_form():
    # net(x) = w * tanh(v x + c) with zero biases
    net = Mlp.create((1, 1, 1), rng_seed=2)
    (w1, _), (w2, _) = net.layers()
    v, w = w1[0, 0], w2[0, 0]
    x = np.array([0.37])
    jac, hess = net.input_partials(x)
    t = np.tanh(v * x[0])
    np.testing.assert_allclose(jac[0, 0], w * v * (1 - t ** 2), atol=1e-12)
    np.testing.assert_allclose(hess[0, 0, 0],
                               w * v * v * (-2 * t) * (1 - t ** 2), atol=1e-12)


@pytest.mark.parametrize("widths", ARCHITECTURES)
def test_input_partials_match_finite_differences(widths):
    rng = np.random.Generator(np.random.PCG64(21))
    d = widths[0]
    for trial in range(10):
        net = Mlp.create(widths, rng_seed=300 + trial)
        x = rng.normal(size=d)
        jac, hess = net.input_partials(x)
        h = 1e-5
        for i in range(d):
            step = np.zeros(d)
            step[i] = h
            fd = (net.forward(x + step) - net.forward(x - step)) / (2 * h)
            np.testing.assert_allclose(jac[:, i], fd, rtol=1e-4, atol=1e-7)
        h2 = 1e-4
        for i in range(d):
            for j in range(d):
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i] = h2
                ej[j] = h2
                fd = (net.forward(x + ei + ej) - net.forward(x + ei - ej)
                      - net.forward(x - ei + ej) + net.forward(x - ei - ej)) \
                    / (4 * h2 * h2)
                err = np.abs(hess[:, i, j] - fd)
                assert np.all((err <= 1e-3 * np.abs(fd) + 1e-6)), \
                    f"hess[{i},{j}] err {err.max():.2e}"


def test_second_partials_symmetric():
    net = Mlp.create((3, 12, 12, 2), rng_seed=8)
    x = np.random.Generator(np.random.PCG64(0)).normal(size=(6, 3))
    _, hess = net.input_partials(x)
    assert np.abs(hess - np.swapaxes(hess, -1, -2)).max() <= 1e-10


def test_backprop_through_input_partials_matches_fd():
    """Parameter gradient of scalars built from (value, J, H)."""
    rng = np.random.Generator(np.random.PCG64(31))
    net = Mlp.create((2, 7, 6, 1), rng_seed=77)
    x = rng.normal(size=(4, 2))
    vbar = rng.normal(size=(4, 1))
    jbar = rng.normal(size=(4, 1, 2))
    hbar = rng.normal(size=(4, 1, 2, 2))

    def scalar(params):
        m = net.with_params(params)
        v, j, h, _ = m.value_and_partials(x, order=2)
        return float((vbar * v).sum() + (jbar * j).sum() + (hbar * h).sum())

    _, _, _, cache = net.value_and_partials(x, order=2)
    exact = net.backprop(cache, value_bar=vbar, jac_bar=jbar, hess_bar=hbar)
    h = 1e-6
    for i in rng.choice(net.params.size, size=25, replace=False):
        plus = net.params.copy()
        plus[i] += h
        minus = net.params.copy()
        minus[i] -= h
        fd = (scalar(plus) - scalar(minus)) / (2 * h)
        assert abs(exact[i] - fd) <= 1e-5 * max(1.0, abs(fd)), \
            f"param {i}: exact {exact[i]:.6e} vs fd {fd:.6e}"


def test_softplus_chain_forward_and_reverse():
    rng = np.random.Generator(np.random.PCG64(41))
    net = Mlp.create((2, 6, 1), rng_seed=13)
    x = rng.normal(size=(5, 2))
    vbar = rng.normal(size=5)
    jbar = rng.normal(size=(5, 2))
    hbar = rng.normal(size=(5, 2, 2))

    def scalar(params):
        m = net.with_params(params)
        v, j, h, _ = m.value_and_partials(x, order=2)
        sv, sj, sh, _ = softplus_vjh(v[:, 0], j[:, 0], h[:, 0])
        return float((vbar * sv).sum() + (jbar * sj).sum() + (hbar * sh).sum())

    v, j, h, cache = net.value_and_partials(x, order=2)
    _, _, _, sig = softplus_vjh(v[:, 0], j[:, 0], h[:, 0])
    rv, rj, rh = softplus_reverse(sig, j[:, 0], h[:, 0], vbar, jbar, hbar)
    exact = net.backprop(cache, value_bar=rv[:, None], jac_bar=rj[:, None],
                         hess_bar=rh[:, None])
    step = 1e-6
    for i in rng.choice(net.params.size, size=15, replace=False):
        plus = net.params.copy()
        plus[i] += step
        minus = net.params.copy()
        minus[i] -= step
        fd = (scalar(plus) - scalar(minus)) / (2 * step)
        assert abs(exact[i] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_sgd_and_adam_fixed_points():
    params = np.array([1.0, -2.0])
    zero = np.zeros(2)
    assert np.all(Sgd(0.5).step(params, zero) == params)
    assert np.all(Adam(0.1).step(params, zero) == params)


def test_sgd_arithmetic():
    out = Sgd(0.5).step(np.zeros(2), np.array([2.0, -2.0]))
    np.testing.assert_allclose(out, [-1.0, 1.0])


def test_sgd_contracts_quadratic_bowl():
    # f(theta) = ||theta||^2, gradient 2 theta, contraction (1 - 2 beta)^k
    theta = np.array([1.0, 1.0])
    opt = Sgd(0.1)
    for _ in range(100):
        theta = opt.step(theta, 2.0 * theta)
    assert np.linalg.norm(theta) <= 1e-8


def test_non_finite_gradient_raises():
    with pytest.raises(DivergenceError):
        Sgd(0.1).step(np.zeros(2), np.array([np.nan, 1.0]))
    with pytest.raises(DivergenceError):
        make_optimizer("adam", 0.1).step(np.zeros(2), np.array([np.inf, 0.0]))


def test_initialization_scale_and_determinism():
    net1 = Mlp.create((50, 80, 1), rng_seed=123)
    net2 = Mlp.create((50, 80, 1), rng_seed=123)
    assert np.array_equal(net1.params, net2.params)
    w, b = net1.layers()[0]
    assert np.all(b == 0.0)
    assert abs(w.var() - 1.0 / 50) < 0.2 / 50
    zo = Mlp.create((2, 8, 1), rng_seed=5, zero_output=True)
    assert np.all(zo.forward(np.array([[0.3, 0.4]])) == 0.0)
