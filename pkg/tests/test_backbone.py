import numpy as np
import pytest

from morf.backbone import Backbone, BackboneConfig
from morf.exceptions import InputShapeError, InvalidStateError

from gradcheck import numerical_grad, rel_error

# seed-0 network 3 -> 4 -> 5 applied to x = (0.5, -1.0, 2.0); cross-checked with
# the loop-based reference below before freezing
GOLDEN = np.array([0.19539518168668538, -0.07575039613718837, 0.023101740822342752,
                   -0.5921282827567456, 0.0554946003840153])


def reference_forward(x, layers, act):
    """Plain-Python dense layers, independent of the vectorised code."""
    a = list(x)
    for i, (W, b) in enumerate(layers):
        z = [b[j] + sum(a[k] * W[k][j] for k in range(len(a))) for j in range(len(b))]
        a = z if i == len(layers) - 1 else [act(v) for v in z]
    return np.array(a)


def make(input_dim=3, hidden=(4,), feature_dim=5, activation="relu", seed=0):
    net = Backbone(BackboneConfig(input_dim, hidden, feature_dim, activation, seed))
    return net, net.init_params()


def test_zero_params_give_zero_features():
    net, theta = make()
    F, _ = net.forward(np.array([[1.0, -2.0, 3.0]]), np.zeros_like(theta))
    np.testing.assert_array_equal(F, 0.0)


def test_identity_layer_passes_nonnegative_input():
    net = Backbone(BackboneConfig(3, (3,), 3, "relu"))
    theta = np.zeros(net.n_params)
    (W1, _), (W2, _) = net.unpack(theta)
    W1[...] = np.eye(3)
    W2[...] = np.eye(3)
    x = np.array([[0.0, 1.5, 2.0]])
    np.testing.assert_array_equal(net.forward(x, theta)[0], x)


def test_golden_vector_and_reference():
    net, theta = make()
    x = np.array([0.5, -1.0, 2.0])
    F, _ = net.forward(x, theta)
    layers = [(W.tolist(), b.tolist()) for W, b in net.unpack(theta)]
    np.testing.assert_allclose(F[0], reference_forward(x, layers, lambda v: max(v, 0.0)), rtol=1e-13)
    np.testing.assert_allclose(F[0], GOLDEN, rtol=1e-12)


def test_forward_is_deterministic():
    net, theta = make()
    x = np.random.default_rng(1).normal(size=(7, 3))
    assert net.forward(x, theta)[0].tobytes() == net.forward(x.copy(), theta.copy())[0].tobytes()
    assert make()[1].tobytes() == theta.tobytes()


def test_glorot_bounds():
    net, theta = make(input_dim=10, hidden=(20,), feature_dim=30)
    for W, b in net.unpack(theta):
        assert np.abs(W).max() <= np.sqrt(6 / sum(W.shape))
        assert not b.any()


def test_shape_errors():
    net, theta = make()
    with pytest.raises(InputShapeError):
        net.forward(np.ones((2, 4)), theta)
    F, cache = net.forward(np.ones((2, 3)), theta)
    with pytest.raises(InvalidStateError):
        net.backward(np.ones((3, 5)), cache, theta)
    other, otheta = make(input_dim=2)
    with pytest.raises(InvalidStateError):
        other.backward(np.ones((2, 5)), cache, otheta)


def test_zero_upstream_gives_zero_gradient():
    net, theta = make()
    F, cache = net.forward(np.ones((2, 3)), theta)
    g, gx = net.backward(np.zeros_like(F), cache, theta)
    assert not g.any() and not gx.any()


def test_scalar_linear_gradient():
    net = Backbone(BackboneConfig(1, (), 1))
    theta = np.array([0.7, 0.0])
    x = np.array([[2.5]])
    F, cache = net.forward(x, theta)
    g, _ = net.backward(np.ones_like(F), cache, theta)
    np.testing.assert_allclose(g, [2.5, 1.0])


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(3)
    for trial in range(10):
        net, theta = make(4, (6, 5), 3, activation, seed=trial)
        theta = theta + rng.normal(0, 0.1, theta.shape)
        x = rng.normal(size=(5, 4))
        c = rng.normal(size=(5, 3))
        loss = lambda th: np.sum(c * np.sin(net.forward(x, th)[0]))
        F, cache = net.forward(x, theta)
        g, gx = net.backward(c * np.cos(F), cache, theta)
        assert rel_error(g, numerical_grad(loss, theta)) <= 1e-6
        lx = lambda xx: np.sum(c * np.sin(net.forward(xx, theta)[0]))
        assert rel_error(gx, numerical_grad(lx, x)) <= 1e-6


def test_jvp_matches_directional_difference():
    rng = np.random.default_rng(4)
    net, theta = make(4, (6,), 5, "tanh")
    x = rng.normal(size=(3, 4))
    v = rng.normal(size=theta.shape)
    F, cache = net.forward(x, theta)
    h = 1e-6
    fd = (net.forward(x, theta + h * v)[0] - net.forward(x, theta - h * v)[0]) / (2 * h)
    np.testing.assert_allclose(net.jvp(v, cache, theta), fd, rtol=1e-6, atol=1e-9)
