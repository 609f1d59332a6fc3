import numpy as np
import pytest

from vie import autodiff as ad
from vie import nn
from vie.errors import ContractError, TrainingError


def test_identity_layer_relu():
    params = {"l.0.W": np.eye(2), "l.0.b": np.zeros(2), "l.1.W": np.eye(2), "l.1.b": np.zeros(2)}
    out = nn.mlp_forward(params, "l", np.array([[-1.0, 2.0]]))
    np.testing.assert_array_equal(out.value, [[0.0, 2.0]])


def test_zero_weights_return_bias():
    b = np.array([0.3, -1.5])
    params = {"l.0.W": np.zeros((3, 2)), "l.0.b": b}
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(nn.mlp_forward(params, "l", rng.normal(size=(4, 3))).value, np.tile(b, (4, 1)))


def test_fan_in_mismatch():
    params = nn.init_params([3, 4, 1], 0, "l")
    with pytest.raises(ContractError):
        nn.mlp_forward(params, "l", np.ones((2, 5)))


def test_mlp_gradient_check():
    rng = np.random.default_rng(1)
    params = nn.init_params([2, 32, 1], rng, "l")
    x = rng.normal(size=(5, 2))
    for k in params:
        err = ad.finite_diff_check(lambda w, k=k: ad.reduce_sum(nn.mlp_forward({**params, k: w}, "l", x)), params[k])
        assert err < 1e-5
    assert ad.finite_diff_check(lambda xx: ad.reduce_sum(nn.mlp_forward(params, "l", xx)), x) < 1e-5


def test_init_determinism_and_bounds():
    a, b, c = nn.init_params([5, 7, 3], 4), nn.init_params([5, 7, 3], 4), nn.init_params([5, 7, 3], 5)
    for k in a:
        assert np.array_equal(a[k], b[k])
    assert not np.array_equal(a["mlp.0.W"], c["mlp.0.W"])
    assert np.all(np.abs(a["mlp.0.W"]) <= np.sqrt(6 / 5))
    assert np.all(np.abs(a["mlp.1.W"]) <= np.sqrt(6 / 7))
    with pytest.raises(ContractError):
        nn.init_params([3, 0, 1], 0)


def _made(p, reverse=False, seed=0):
    masks = nn.made_masks(p, [32, 32], 2, reverse)
    params = nn.init_made(p, [32, 32], seed, "m")
    return masks, params


def _jacobian(fn, z, h=1e-6):
    base = fn(z)
    J = np.zeros((base.size, z.size))
    for k in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[0, k] += h
        zm[0, k] -= h
        J[:, k] = (fn(zp) - fn(zm)).ravel() / (2 * h)
    return J


@pytest.mark.parametrize("reverse", [False, True])
def test_made_jacobian_strictly_triangular(reverse):
    p = 5
    masks, params = _made(p, reverse)
    z = np.random.default_rng(2).normal(size=(1, p))
    order = np.arange(p)[::-1] if reverse else np.arange(p)
    for head in (0, 1):
        J = _jacobian(lambda zz: nn.masked_forward(params, "m", masks, zz)[head].value, z)
        for i in range(p):
            for k in range(p):
                if order[k] >= order[i]:
                    assert abs(J[i, k]) < 1e-8


def test_perturbing_coordinate_leaves_earlier_outputs():
    p = 4
    masks, params = _made(p)
    z = np.random.default_rng(3).normal(size=(1, p))
    for j in range(p):
        z2 = z.copy()
        z2[0, j] += 0.7
        a = nn.masked_forward(params, "m", masks, z)
        b = nn.masked_forward(params, "m", masks, z2)
        for head in (0, 1):
            np.testing.assert_array_equal(a[head].value[0, :j + 1], b[head].value[0, :j + 1])


def test_single_dimension_is_constant():
    masks, params = _made(1)
    a = nn.masked_forward(params, "m", masks, np.array([[0.3]]))
    b = nn.masked_forward(params, "m", masks, np.array([[-4.0]]))
    assert a[0].value == b[0].value and a[1].value == b[1].value


def test_bad_degrees_rejected():
    d_in = np.array([1, 2])
    masks = [np.ones((2, 3)), np.ones((3, 4))]
    with pytest.raises(ContractError):
        nn._check_autoregressive(masks, d_in, np.array([1, 2, 1, 2]), 0)


def test_adam_first_step_is_sign():
    params = {"w": np.array([1.0])}
    nn.Adam(lr=1e-4).step(params, {"w": np.array([2.0])})
    assert abs(params["w"][0] - (1.0 - 1e-4)) < 1e-11


def test_zero_gradient_leaves_parameters():
    for opt in (nn.Adam(), nn.RMSprop()):
        params = {"w": np.array([0.5, -2.0])}
        opt.step(params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [0.5, -2.0])


def test_rmsprop_first_step_closed_form():
    params = {"w": np.array([0.0])}
    nn.RMSprop(lr=1e-3, alpha=0.9).step(params, {"w": np.array([1.0])})
    assert abs(params["w"][0] + 1e-3 / (np.sqrt(0.1) + 1e-8)) < 1e-15
    assert abs(params["w"][0] + 3.162e-3) < 1e-6


@pytest.mark.parametrize("opt,steps", [(nn.Adam(lr=0.1), 2), (nn.RMSprop(lr=0.01), 10)])
def test_quadratic_decreases(opt, steps):
    params = {"w": np.array([3.0])}
    before = params["w"][0] ** 2
    for _ in range(steps):
        opt.step(params, {"w": 2 * params["w"]})
    assert params["w"][0] ** 2 < before


def test_nonfinite_gradient_raises():
    with pytest.raises(TrainingError):
        nn.Adam().step({"w": np.zeros(1)}, {"w": np.array([np.nan])})


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert nn.clip_global_norm(grads, 1.0) == 5.0
    assert abs(np.sqrt(grads["a"] ** 2 + grads["b"] ** 2)[0] - 1.0) < 1e-15
