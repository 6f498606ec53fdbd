import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicit_hj import autodiff as ad
from implicit_hj.autodiff import NumericalError, Tape, UnsupportedOperation
from implicit_hj.network import (
    NetworkConfig,
    eval_with_input_grad,
    forward,
    init_network,
    network_jet,
)

from helpers import fd_param_gradient, gradient_rel_error, identity_net


def test_linear_map_jet():
    params = identity_net(dim=1, width=2, out_weight=[2.0, 3.0], out_bias=1.0)
    jet = eval_with_input_grad(params, [1.0], 1.0)
    assert jet.value == 6.0
    np.testing.assert_array_equal(jet.grad_x, [2.0])
    assert jet.grad_t == 3.0


def test_constant_network_jet():
    cfg = NetworkConfig(dim=3, depth=2, width=5)
    p = init_network(cfg, 0)
    p.out_weight = np.zeros_like(p.out_weight)
    p.out_bias = np.array([0.7])
    jet = eval_with_input_grad(p, [0.1, -0.2, 0.3], 0.4)
    assert jet.value == pytest.approx(0.7, abs=0)
    np.testing.assert_array_equal(jet.grad_x, np.zeros(3))
    assert jet.grad_t == 0.0


def test_input_gradient_matches_fd_default_network():
    rng = np.random.default_rng(5)
    worst = 0.0
    for seed in range(100):
        d = int(rng.integers(1, 4))
        p = init_network(NetworkConfig(dim=d), seed)
        x = rng.uniform(-1, 1, d)
        t = float(rng.uniform(0, 1))
        jet = eval_with_input_grad(p, x, t)
        full = np.append(jet.grad_x, jet.grad_t)
        worst = max(worst, ad.fd_check(lambda v: forward(p, v[:d], v[d]), np.append(x, t), analytic=full))
    assert worst <= 1e-6


def test_dimension_mismatch_is_config_error():
    p = init_network(NetworkConfig(dim=2, depth=1, width=3), 0)
    with pytest.raises(ValueError):
        eval_with_input_grad(p, [0.0, 0.0, 0.0], 0.0)


def test_overflow_names_layer():
    cfg = NetworkConfig(dim=1, depth=2, width=3)
    p = init_network(cfg, 0)
    p.weights[0] = np.full((3, 2), 10.0)
    p.weights[1] = np.full((3, 3), 1e308)
    with pytest.raises(NumericalError, match="hidden layer 1"), np.errstate(over="ignore"):
        forward(p, [1.0], 1.0)


def test_output_bias_gradient_quadratic_chain():
    cfg = NetworkConfig(dim=2, depth=2, width=4)
    p = init_network(cfg, 3)
    p.out_weight = np.zeros_like(p.out_weight)
    p.out_bias = np.array([1.75])
    x0 = np.array([[0.2, -0.4]])
    t0 = np.array([0.5])
    from implicit_hj.network import network
    _, g = ad.param_gradient(lambda q: (network(q, x0, t0) ** 2).sum(), p)
    assert g[-1] == pytest.approx(2 * 1.75, rel=1e-15)


def test_nested_gradient_of_input_gradient_norm():
    cfg = NetworkConfig(dim=2, depth=2, width=6)
    p = init_network(cfg, 11)
    x0 = np.array([[0.3, -0.1]])
    t0 = np.array([0.4])

    def loss(q):
        _, gx, _ = network_jet(q, x0, t0)
        return (gx * gx).sum()

    _, g = ad.param_gradient(loss, p)
    fd = fd_param_gradient(loss, p)
    assert gradient_rel_error(g, fd) <= 1e-5


def test_empty_loss_gives_zero_vector():
    cfg = NetworkConfig(dim=1, depth=1, width=3)
    p = init_network(cfg, 0)
    value, g = ad.param_gradient(lambda q: 0.0, p)
    assert value == 0.0
    np.testing.assert_array_equal(g, np.zeros(cfg.param_count))


def test_nan_loss_raises():
    cfg = NetworkConfig(dim=1, depth=1, width=3)
    p = init_network(cfg, 0)
    from implicit_hj.network import network
    with pytest.raises(NumericalError):
        ad.param_gradient(lambda q: network(q, np.zeros((1, 1)), np.zeros(1)).sum() * np.nan, p)


def test_unregistered_primitive():
    tape = Tape()
    v = tape.leaf(np.ones(3))
    with pytest.raises(UnsupportedOperation):
        np.tanh(v)
    with pytest.raises(UnsupportedOperation):
        tape.record("no-such-op", (v,))
    with pytest.raises(UnsupportedOperation):
        v ** v


def test_gradient_is_deterministic():
    cfg = NetworkConfig(dim=2, depth=3, width=8)
    p = init_network(cfg, 1)
    x = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    t = np.linspace(0, 1, 50)

    def loss(q):
        u, gx, _ = network_jet(q, x, t)
        return (u * u).mean() + (gx * gx).mean()

    a = ad.param_gradient(loss, p)[1]
    b = ad.param_gradient(loss, p)[1]
    assert a.tobytes() == b.tobytes()


def test_tape_replay_is_bit_exact():
    cfg = NetworkConfig(dim=2, depth=2, width=5)
    p = init_network(cfg, 2)
    tape = Tape()
    live = p.on_tape(tape)
    u, gx, ut = network_jet(live, np.array([[0.1, 0.2], [0.3, -0.5]]), np.array([0.2, 0.9]))
    ((u * u).sum() + (gx * gx).sum() + ut.sum())
    replayed = tape.replay()
    for node, value in zip(tape.nodes, replayed):
        assert node.value.tobytes() == np.asarray(value).tobytes()


def test_tape_is_topologically_ordered():
    tape = Tape()
    a = tape.leaf(np.array([1.0, 2.0]))
    b = np.sin(a) * a + 3.0
    (b.sum())
    for i, node in enumerate(tape.nodes):
        assert all(j < i for j in node.args)


# ------------------------------------------------------------- fd_check

def test_fd_check_square():
    assert ad.fd_check(lambda x: x * x, 3.0, h=1e-5) <= 1e-9


def test_fd_check_softplus_at_zero():
    assert ad.fd_check(lambda z: ad.softplus(z, 100.0), 0.0, h=1e-5) <= 1e-6


def test_fd_check_constant():
    assert ad.fd_check(lambda x: 0.0 * x + 2.0, [0.5, -1.0]) == 0.0


def test_fd_check_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        ad.fd_check(lambda x: x, 1.0, h=0.0)


# ------------------------------------------------ per-primitive fd sweep

UNARY = {
    "neg": lambda a: -a,
    "square": np.square,
    "pow3": lambda a: a ** 3,
    "sqrt": lambda a: np.sqrt(a * a + 1.0),
    "exp": np.exp,
    "log": lambda a: np.log(a * a + 0.5),
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "softplus": lambda a: ad.softplus(a, 10.0),
    "softplus_slope": lambda a: ad.softplus_slope(a, 3.0),
    "norm": lambda a: ad.norm(a.reshape(1, -1)),
    "norm_eps": lambda a: ad.norm(a.reshape(1, -1) * 0.1, 0.3),
    "sum": lambda a: a.sum(),
    "reshape": lambda a: a.reshape(-1, 1) * np.arange(1.0, 1.0 + a.shape[0]).reshape(-1, 1),
    "getitem": lambda a: a[1:] * a[:-1],
    "transpose": lambda a: (a.reshape(1, -1).T * a.reshape(-1, 1)),
    "stack": lambda a: ad.stack([a, a * a], axis=1),
    "concat": lambda a: ad.concat([a, np.sin(a)], axis=0),
    "where": lambda a: ad.where(np.arange(a.shape[0]) % 2 == 0, a * a, np.sin(a)),
    "sign": lambda a: np.sign(a) * a,
}

BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "maximum": np.maximum,
    "minimum": np.minimum,
    "matmul": lambda a, b: a.reshape(2, 2) @ b.reshape(2, 2),
    "affine": lambda a, b: ad.affine(a.reshape(1, 4), b.reshape(1, 4), a[:1]),
}


def _kink_free(x, name):
    if name in ("abs", "sign"):
        return np.min(np.abs(x)) > 1e-3
    return True


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_matches_fd(name):
    fn = UNARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    done = 0
    while done < 100:
        x = rng.uniform(-2, 2, 4)
        if not _kink_free(x, name):
            continue
        analytic = ad.grad(lambda v: fn(v).sum(), x)
        fd = np.array([
            (np.sum(fn(x + h)) - np.sum(fn(x - h))) / 2e-5
            for h in np.eye(4) * 1e-5
        ])
        assert gradient_rel_error(analytic, fd) <= 1e-6, name
        done += 1


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_matches_fd(name):
    fn = BINARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    done = 0
    while done < 100:
        a = rng.uniform(-2, 2, 4)
        b = rng.uniform(-2, 2, 4)
        if name in ("maximum", "minimum") and np.min(np.abs(a - b)) < 1e-3:
            continue
        point = np.concatenate([a, b])
        analytic = ad.grad(lambda v: fn(v[:4], v[4:]).sum(), point)
        fd = np.array([
            (np.sum(fn(*np.split(point + h, 2))) - np.sum(fn(*np.split(point - h, 2)))) / 2e-5
            for h in np.eye(8) * 1e-5
        ])
        assert gradient_rel_error(analytic, fd) <= 1e-6, name
        done += 1


def test_every_registered_primitive_is_swept():
    swept = (set(UNARY) - {"pow3", "norm_eps"}) | set(BINARY) | {"pow"}
    assert set(ad.PRIMITIVES) <= swept


# ------------------------------------------------------------- properties

@settings(max_examples=40, deadline=None)
@given(
    z=st.floats(min_value=-1e4, max_value=1e4, allow_nan=False),
    beta=st.sampled_from([1.0, 10.0, 100.0]),
)
def test_softplus_slope_in_unit_interval(z, beta):
    s = ad.softplus_slope(np.array([z]), beta)
    v = ad.softplus(np.array([z]), beta)
    assert np.all(np.isfinite(v))
    assert 0.0 <= s[0] <= 1.0
    assert v[0] >= max(z, 0.0) - 1e-12


def test_norm_zero_subgradient_and_regularized_value():
    assert ad.norm(np.zeros((1, 3)))[0] == 0.0
    np.testing.assert_array_equal(ad.grad(lambda v: ad.norm(v.reshape(1, -1)).sum(), np.zeros(3)), np.zeros(3))
    assert ad.norm(np.array([[3.0, 4.0]]), 12.0)[0] == 13.0


def test_softplus_no_overflow_far_out():
    beta = 100.0
    z = np.array([-1e6 / beta, 1e6 / beta, 0.0])
    v = ad.softplus(z, beta)
    assert np.all(np.isfinite(v))
    assert v[1] == pytest.approx(1e4)
    assert v[2] == pytest.approx(np.log(2.0) / beta, rel=1e-15)


def test_softplus_monotone():
    z = np.linspace(-5, 5, 20001)
    v = ad.softplus(z, 100.0)
    assert np.all(np.diff(v) >= 0)
    s = ad.softplus_slope(z[np.abs(z) < 0.3], 100.0)
    assert np.all((s > 0) & (s < 1))
