import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnrl import qnet
from qnrl.errors import InvalidInputError
from qnrl.qnet import NetworkSpec


def naive_forward(spec, w, x):
    """Scalar loops over the documented parameter layout."""
    pos = 0
    h = [float(v) for v in x]
    sizes = spec.layer_sizes
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = [[w[pos + o * fan_in + i] for i in range(fan_in)] for o in range(fan_out)]
        pos += fan_in * fan_out
        b = [w[pos + o] for o in range(fan_out)]
        pos += fan_out
        z = [sum(W[o][i] * h[i] for i in range(fan_in)) + b[o] for o in range(fan_out)]
        h = z if layer == len(sizes) - 2 else [max(v, 0.0) for v in z]
    return np.array(h)


def fd_grad(fun, w, h=1e-5):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (fun(w + e) - fun(w - e)) / (2 * h)
    return g


def rel_err(g, ref):
    scale = max(np.max(np.abs(ref)), np.max(np.abs(g)), 1e-12)
    return float(np.max(np.abs(g - ref)) / scale)


def near_kink(spec, w, x, margin=1e-3):
    h = np.asarray(x, float)
    layers = qnet.unpack(spec, w)
    for W, b in layers[:-1]:
        z = W @ h + b
        if np.any(np.abs(z) < margin):
            return True
        h = np.maximum(z, 0)
    return False


def random_case(rng, max_size=8):
    depth = rng.integers(2, 5)
    sizes = tuple(int(v) for v in rng.integers(1, max_size + 1, size=depth))
    spec = NetworkSpec(sizes)
    w = rng.standard_normal(qnet.num_params(spec))
    while True:
        x = rng.standard_normal(spec.n_inputs)
        if not near_kink(spec, w, x):
            return spec, w, x


def test_num_params_examples():
    assert qnet.num_params(NetworkSpec((2, 3, 2))) == 17
    assert qnet.num_params(NetworkSpec((1, 1))) == 2


def test_num_params_by_enumeration():
    spec = NetworkSpec((4, 8, 8, 3))
    w = np.zeros(139)
    counted = 0
    for W, b in qnet.unpack(spec, w):
        for _ in np.ndindex(W.shape):
            counted += 1
        for _ in np.ndindex(b.shape):
            counted += 1
    assert counted == 139
    assert qnet.num_params(spec) == 139


def test_unpack_layout_is_row_major_then_bias():
    spec = NetworkSpec((2, 3, 2))
    w = np.arange(17, dtype=float)
    (W1, b1), (W2, b2) = qnet.unpack(spec, w)
    np.testing.assert_array_equal(W1, [[0, 1], [2, 3], [4, 5]])
    np.testing.assert_array_equal(b1, [6, 7, 8])
    np.testing.assert_array_equal(W2, [[9, 10, 11], [12, 13, 14]])
    np.testing.assert_array_equal(b2, [15, 16])


@pytest.mark.parametrize("sizes", [(), (3,), (2, 0, 1), (0, 2)])
def test_invalid_specs(sizes):
    with pytest.raises(InvalidInputError):
        NetworkSpec(sizes)


def test_init_bounds_and_zero_biases():
    spec = NetworkSpec((2, 3, 2))
    for seed in range(20):
        (W1, b1), (W2, b2) = qnet.unpack(spec, qnet.init_weights(spec, seed))
        assert np.all(np.abs(W1) <= 1 / np.sqrt(2))
        assert np.all(np.abs(W2) <= 1 / np.sqrt(3))
        assert np.all(b1 == 0) and np.all(b2 == 0)


def test_init_is_deterministic():
    spec = NetworkSpec((5, 4, 3))
    np.testing.assert_array_equal(qnet.init_weights(spec, 7), qnet.init_weights(spec, 7))
    assert not np.array_equal(qnet.init_weights(spec, 7), qnet.init_weights(spec, 8))


def test_forward_affine_example():
    spec = NetworkSpec((2, 1))
    assert qnet.forward(spec, [1.0, 1.0, 0.0], [3.0, 4.0])[0] == 7.0


def test_forward_matches_naive_loops():
    rng = np.random.default_rng(0)
    for _ in range(200):
        spec, w, x = random_case(rng)
        ref = naive_forward(spec, w, x)
        out = qnet.forward(spec, w, x)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_forward_batch_matches_rows():
    rng = np.random.default_rng(1)
    spec = NetworkSpec((6, 5, 4))
    w = rng.standard_normal(qnet.num_params(spec))
    X = rng.standard_normal((9, 6))
    batch = qnet.forward(spec, w, X)
    for i in range(9):
        np.testing.assert_allclose(batch[i], qnet.forward(spec, w, X[i]), rtol=1e-14, atol=1e-14)


def test_forward_rejects_wrong_shapes():
    spec = NetworkSpec((2, 1))
    with pytest.raises(InvalidInputError):
        qnet.forward(spec, np.zeros(4), [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        qnet.forward(spec, np.zeros(3), [1.0, 2.0, 3.0])


def test_zero_features_give_zero_first_layer_weight_gradient():
    spec = NetworkSpec((3, 4, 2))
    w = qnet.init_weights(spec, 0)
    g = qnet.grad_q(spec, w, np.zeros(3), 1)
    assert np.all(g[: 3 * 4] == 0.0)


def test_grad_q_matches_finite_differences():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(120):
        spec, w, x = random_case(rng)
        a = int(rng.integers(spec.n_actions))
        g = qnet.grad_q(spec, w, x, a)
        ref = fd_grad(lambda v: qnet.forward(spec, v, x)[a], w)
        worst = max(worst, rel_err(g, ref))
    assert worst < 1e-6


def test_grad_q_rejects_bad_action():
    spec = NetworkSpec((2, 2))
    with pytest.raises(InvalidInputError):
        qnet.grad_q(spec, np.zeros(6), [0.0, 0.0], 2)


def test_vjp_is_weighted_sum_of_gradients():
    rng = np.random.default_rng(3)
    spec = NetworkSpec((4, 6, 3))
    w = rng.standard_normal(qnet.num_params(spec))
    X = rng.standard_normal((7, 4))
    A = rng.integers(3, size=7)
    c = rng.standard_normal(7)
    q, vjp = qnet.q_and_vjp(spec, w, X, A)
    ref = sum(ci * qnet.grad_q(spec, w, X[i], A[i]) for i, ci in enumerate(c))
    np.testing.assert_allclose(vjp(c), ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(q, qnet.forward(spec, w, X)[np.arange(7), A], rtol=0, atol=0)


@settings(max_examples=50, deadline=None)
@given(sizes=st.lists(st.integers(1, 6), min_size=2, max_size=4), seed=st.integers(0, 2**16))
def test_forward_is_positively_homogeneous_for_linear_nets(sizes, seed):
    # a one-layer net is affine: Q(2x) - Q(0) = 2 (Q(x) - Q(0))
    spec = NetworkSpec((sizes[0], sizes[-1]))
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(qnet.num_params(spec))
    x = rng.standard_normal(sizes[0])
    q0 = qnet.forward(spec, w, np.zeros(sizes[0]))
    np.testing.assert_allclose(qnet.forward(spec, w, 2 * x) - q0,
                               2 * (qnet.forward(spec, w, x) - q0), rtol=1e-9, atol=1e-9)
