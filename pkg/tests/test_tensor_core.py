import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from freqsem import ops
from freqsem.autograd import grad_check, weighted_sum_loss
from freqsem.dyfusnet import dmsd_forward, init_dmsd
from freqsem.errors import ConfigError, ContractError, ShapeError
from freqsem.params import ConvSpec, conv_spec, init_conv
from freqsem.tensor import GradTape, Tensor
from freqsem.weights import dump_tensor, parse_dump


# ---------------------------------------------------------------- conv2d

def test_conv_box_sum_counts_window(backend):
    spec = conv_spec(np.ones((1, 1, 3, 3), np.float32))
    y = ops.conv2d(np.ones((1, 1, 3, 3), np.float32), spec).data[0, 0]
    assert y[1, 1] == 9.0
    assert y[0, 0] == y[0, 2] == y[2, 0] == y[2, 2] == 4.0


def test_conv_identity_kernel_is_exact(backend, rng):
    x = rng.standard_normal((2, 1, 5, 7)).astype(np.float32)
    y = ops.conv2d(x, conv_spec(np.ones((1, 1, 1, 1), np.float32)))
    assert y.data.tobytes() == x.tobytes()


def test_conv_random_matches_loop_oracle(backend, rng):
    x = rng.standard_normal((2, 4, 8, 8)).astype(np.float32)
    w = rng.standard_normal((6, 4, 3, 3)).astype(np.float32)
    assert O.rel_err(ops.conv2d(x, conv_spec(w)), O.conv2d(x, w)) < 1e-6


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-10)])
def test_conv_hundred_instances(backend, dtype, tol):
    rng = np.random.default_rng(7)
    for _ in range(100):
        groups = int(rng.choice([1, 2, 4]))
        cin = groups * int(rng.integers(1, 4))
        cout = groups * int(rng.integers(1, 4))
        k = int(rng.choice([1, 3, 5]))
        h, w = (int(v) for v in rng.integers(k, 12, size=2))
        spec = init_conv(rng, cin, cout, k, groups=groups, stride=int(rng.integers(1, 3)), bias=True,
                         padding_mode=str(rng.choice(["zero", "replicate"])), dtype=dtype)
        spec = ConvSpec(cin, cout, k, k, spec.weight, rng.standard_normal(cout).astype(dtype),
                        spec.stride, groups, spec.padding_mode)
        x = rng.standard_normal((int(rng.integers(1, 3)), cin, h, w)).astype(dtype)
        y = ops.conv2d(x, spec)
        assert y.dtype == dtype
        assert O.rel_err(y, O.conv_spec(x, spec)) < tol


def test_conv_output_extent_formula():
    for h, k, s in [(8, 3, 1), (8, 3, 2), (7, 5, 2), (9, 1, 3)]:
        spec = init_conv(np.random.default_rng(0), 1, 1, k, stride=s)
        y = ops.conv2d(np.zeros((1, 1, h, h)), spec)
        pad = (k - 1) // 2
        assert y.shape[2] == (h + 2 * pad - k) // s + 1


def test_conv_errors():
    w = np.ones((2, 3, 3, 3))
    with pytest.raises(ShapeError):
        ops.conv2d(np.ones((1, 4, 5, 5)), conv_spec(w))
    with pytest.raises(ConfigError):
        ConvSpec(4, 6, 3, 3, np.ones((6, 1, 3, 3)), groups=4)
    with pytest.raises(ConfigError):
        ConvSpec(1, 1, 2, 2, np.ones((1, 1, 2, 2)))


# ---------------------------------------------------------------- conv1d over channels

def test_conv1d_examples():
    d = np.array([[1.0, 2.0, 3.0, 4.0]])
    assert ops.conv1d_channels(d, np.ones((1, 1, 1))).data.tolist() == [[1, 2, 3, 4]]
    y = ops.conv1d_channels(d, np.ones((1, 1, 3))).data
    assert y.tolist() == [[3, 6, 9, 7]]
    assert y.tolist() == O.conv1d_channels(d, np.ones(3)).tolist()
    z = ops.conv1d_channels(np.zeros((1, 3)), np.array([[[0.3, -2.0, 5.0]]])).data
    assert z.tolist() == [[0, 0, 0]]


def test_conv1d_errors():
    with pytest.raises(ConfigError):
        ops.conv1d_channels(np.ones((1, 4)), np.ones((1, 1, 2)))
    with pytest.raises(ConfigError):
        ops.conv1d_channels(np.ones((1, 2)), np.ones((1, 1, 3)))


# ---------------------------------------------------------------- pooling

def test_avg_pool_examples(backend):
    c = np.full((1, 2, 5, 6), 3.25)
    assert np.array_equal(ops.avg_pool2d(c, 3, 1, "replicate").data, c)
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert ops.avg_pool2d(x, 2, 2, "none").data.item() == 2.5


def test_avg_pool_random_matches_oracle(backend, rng):
    x = rng.standard_normal((1, 3, 8, 8))
    assert O.rel_err(ops.avg_pool2d(x, 3, 1, "replicate"), O.pool2d(x, 3, 1, "replicate")) < 1e-7


def test_max_pool_examples(backend, rng):
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert ops.max_pool2d(x, 2, 2, "none").data.item() == 4.0
    c = np.full((1, 1, 4, 4), -2.5)
    assert np.array_equal(ops.max_pool2d(c, 3).data, c)
    r = rng.standard_normal((1, 2, 8, 8))
    assert O.rel_err(ops.max_pool2d(r, 3, 1), O.pool2d(r, 3, 1, is_max=True)) < 1e-12


def test_replicate_max_pool_never_invents_extremes(rng):
    x = rng.uniform(1.0, 2.0, (1, 1, 6, 6))
    y = ops.max_pool2d(x, 3).data
    assert y.min() >= x.min() and y.max() <= x.max()


@pytest.mark.parametrize("is_max", [False, True])
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-10)])
def test_pool_hundred_instances(backend, is_max, dtype, tol):
    rng = np.random.default_rng(11)
    fn = ops.max_pool2d if is_max else ops.avg_pool2d
    for _ in range(100):
        k = int(rng.choice([1, 2, 3, 5]))
        mode = str(rng.choice(["zero", "replicate", "none"]))
        if k % 2 == 0:
            mode = "none"
        h, w = (int(v) for v in rng.integers(k, 11, size=2))
        s = int(rng.integers(1, 3))
        x = rng.standard_normal((1, int(rng.integers(1, 4)), h, w)).astype(dtype)
        assert O.rel_err(fn(x, k, s, mode), O.pool2d(x, k, s, mode, is_max)) < tol


def test_pool_window_too_large():
    with pytest.raises(ShapeError):
        ops.avg_pool2d(np.ones((1, 1, 2, 2)), 3, 1, "none")
    with pytest.raises(ShapeError):
        ops.max_pool2d(np.ones((1, 1, 4, 4)), 5, 1, "none")
    # same padding always leaves room for the window
    assert ops.max_pool2d(np.ones((1, 1, 1, 1)), 5, 1, "replicate").shape == (1, 1, 1, 1)


# ---------------------------------------------------------------- reductions

def test_gap_examples(rng):
    assert np.array_equal(ops.global_avg_pool(np.full((2, 3, 4, 4), 1.5)).data, np.full((2, 3), 1.5))
    assert ops.global_avg_pool(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])).data.item() == 2.5
    x = rng.standard_normal((1, 4, 6, 6))
    perm = rng.permutation(36)
    shuffled = x.reshape(1, 4, 36)[:, :, perm].reshape(1, 4, 6, 6)
    a, b = ops.global_avg_pool(x).data, ops.global_avg_pool(shuffled).data
    assert np.allclose(a, b, rtol=0, atol=1e-15)
    assert O.rel_err(a, O.gap(x)) < 1e-14


def test_spatial_descriptor(rng):
    x = rng.standard_normal((1, 1, 4, 5))
    d = ops.spatial_descriptor_pool(x).data
    assert np.array_equal(d[0, 0], x[0, 0]) and np.array_equal(d[0, 1], x[0, 0])
    pair = np.zeros((1, 2, 1, 1))
    pair[0, :, 0, 0] = [1.0, 3.0]
    assert ops.spatial_descriptor_pool(pair).data.ravel().tolist() == [2.0, 3.0]
    r = rng.standard_normal((2, 5, 4, 4))
    assert O.rel_err(ops.spatial_descriptor_pool(r), O.spatial_descriptor(r)) < 1e-14


# ---------------------------------------------------------------- activations, softmax, linear

def test_activation_examples():
    assert ops.activation(np.array([-1.0, 0.0, 2.0]), "relu").data.tolist() == [0, 0, 2]
    assert ops.activation(np.array([0.0]), "sigmoid").data.item() == 0.5
    g = ops.activation(np.array([1.0]), "gelu").data.item()
    assert abs(g - 0.841345) < 1e-6
    assert abs(g - 0.5 * (1 + math.erf(1 / math.sqrt(2)))) < 1e-15
    with pytest.raises(ConfigError):
        ops.activation(np.zeros(2), "tanh")


@given(st.lists(st.floats(-800, 800), min_size=1, max_size=40))
def test_sigmoid_open_interval(vals):
    for dtype in (np.float32, np.float64):
        s = ops.sigmoid(np.array(vals, dtype=dtype)).data
        assert np.all(s > 0) and np.all(s < 1)


def test_softmax_examples(rng):
    assert np.allclose(ops.softmax_vec(np.zeros(3)).data, 1 / 3, rtol=0, atol=1e-16)
    big = ops.softmax_vec(np.array([1000.0, 0.0])).data
    assert np.all(np.isfinite(big)) and big[0] == 1.0 and big[1] < 1e-300
    v = rng.standard_normal(7)
    assert np.max(np.abs(ops.softmax_vec(v).data - ops.softmax_vec(v + 17.3).data)) < 1e-7


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=16), st.floats(-100, 100))
def test_softmax_properties(vals, shift):
    v = np.array(vals)
    s = ops.softmax(v).data
    assert np.all(s > 0)
    assert abs(s.sum() - 1) < 1e-6
    assert np.max(np.abs(s - ops.softmax(v + shift).data)) < 1e-7
    assert O.rel_err(s, O.softmax(v)) < 1e-12


def test_linear_examples(rng):
    x = rng.standard_normal((3, 4))
    assert np.array_equal(ops.linear(x, np.eye(4)).data, x)
    assert ops.linear(np.array([[2.0, 3.0]]), np.array([[1.0, 1.0]])).data.item() == 5.0
    w, b = rng.standard_normal((5, 4)), rng.standard_normal(5)
    assert O.rel_err(ops.linear(x, w, b), O.linear(x, w, b)) < 1e-12
    with pytest.raises(ShapeError):
        ops.linear(x, np.ones((5, 3)))


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-10)])
def test_linear_hundred_instances(dtype, tol):
    rng = np.random.default_rng(3)
    for _ in range(100):
        n, i, o = (int(v) for v in rng.integers(1, 17, size=3))
        x = rng.standard_normal((n, i)).astype(dtype)
        w = rng.standard_normal((o, i)).astype(dtype)
        b = rng.standard_normal(o).astype(dtype)
        assert O.rel_err(ops.linear(x, w, b), O.linear(x, w, b)) < tol


# ---------------------------------------------------------------- split / concat

def test_split_examples():
    x = np.arange(8 * 4, dtype=np.float64).reshape(1, 8, 2, 2)
    a, b = ops.split_channels(x, 0.5)
    assert a.shape[1] == 4 and b.shape[1] == 4
    a, b = ops.split_channels(x, 1.0)
    assert a.shape == (1, 8, 2, 2) and b.shape == (1, 0, 2, 2)
    for e in (0.0, -0.2, 1.5):
        with pytest.raises(ConfigError):
            ops.split_channels(x, e)


@given(st.integers(1, 16), st.sampled_from([0.25, 0.5, 0.75, 1.0]), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60)
def test_split_concat_roundtrip_bit_exact(c, e, seed):
    if math.floor(e * c + 0.5) < 1:
        return
    x = np.random.default_rng(seed).standard_normal((2, c, 3, 2)).astype(np.float32)
    a, b = ops.split_channels(x, e)
    assert a.shape[1] == math.floor(e * c + 0.5)
    assert np.array_equal(a.data, x[:, :a.shape[1]])
    back = ops.concat_channels(a, b) if b.shape[1] else a
    assert back.data.tobytes() == x.tobytes()


def test_concat_examples(rng):
    a, b = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 5, 4, 4))
    y = ops.concat_channels(a, b)
    assert y.shape == (2, 8, 4, 4)
    assert np.array_equal(y.data[:, :3], a) and np.array_equal(y.data[:, 3:], b)
    assert np.array_equal(ops.concat_channels(a, np.zeros((2, 0, 4, 4))).data, a)
    with pytest.raises(ShapeError):
        ops.concat_channels(a, np.zeros((2, 1, 4, 5)))


# ---------------------------------------------------------------- gradients and tape

def test_grad_check_sum_is_exact():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
    with GradTape() as tape:
        y = ops.sum_all(x)
    (g,) = tape.gradient(y, [x])
    assert np.array_equal(g, np.ones((3, 4)))
    assert grad_check(ops.sum_all, x) < 1e-10


def test_sigmoid_gradient_at_zero():
    x = Tensor(np.zeros(5))
    with GradTape() as tape:
        y = ops.sum_all(ops.sigmoid(x))
    (g,) = tape.gradient(y, [x])
    assert np.array_equal(g, np.full(5, 0.25))
    assert grad_check(lambda t: ops.sum_all(ops.sigmoid(t)), x) < 1e-10


def test_grad_check_dmsd_loss():
    rng = np.random.default_rng(0)
    point = {"x": rng.standard_normal((1, 8, 6, 6)), "p": init_dmsd(rng, 8)}
    err = grad_check(lambda pt: weighted_sum_loss(dmsd_forward(pt["x"], pt["p"])[0]), point)
    assert err < 1e-4


def test_grad_check_rejects_vector_output():
    with pytest.raises(ContractError):
        grad_check(lambda t: ops.sigmoid(t), Tensor(np.zeros(3)))


@pytest.mark.parametrize("name,fn", [
    ("conv_replicate_s2_g2", lambda x, w: ops.conv2d_raw(x, w, None, 2, 2, "replicate")),
    ("conv_zero", lambda x, w: ops.conv2d_raw(x, w, None, 1, 2, "zero")),
    ("avg_pool", lambda x, w: ops.mul(ops.avg_pool2d(x, 3, 2, "zero"), ops.sum_all(w))),
    ("max_pool", lambda x, w: ops.mul(ops.max_pool2d(x, 3, 1), ops.sum_all(w))),
    ("descriptor", lambda x, w: ops.mul(ops.spatial_descriptor_pool(x), ops.sum_all(w))),
])
def test_primitive_gradients(backend, name, fn):
    rng = np.random.default_rng(5)
    point = {"x": rng.standard_normal((2, 4, 5, 6)), "w": rng.standard_normal((4, 2, 3, 3))}
    assert grad_check(lambda pt: weighted_sum_loss(fn(pt["x"], pt["w"])), point) < 1e-6


def test_tape_replay_bit_identical_and_ordered(rng):
    p = init_dmsd(rng, 4)
    x = Tensor(rng.standard_normal((2, 4, 6, 6)).astype(np.float32))
    with GradTape() as tape:
        dmsd_forward(x, p)
    assert tape.replay_matches()
    seen = set(tape.leaves())
    for node in tape.nodes:
        assert all(i in seen for i in node.inputs)
        seen.add(node.output)


# ---------------------------------------------------------------- tensors, purity, dumps

def test_tensor_rejects_empty_extent_and_high_rank():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))
    assert Tensor(np.zeros((1, 0, 2, 2))).size == 0


def test_forwards_are_pure(backend, rng):
    spec = init_conv(rng, 4, 4, 3, bias=True)
    x = rng.standard_normal((2, 4, 7, 7)).astype(np.float32)
    outs = [ops.conv2d(x, spec).data.tobytes() for _ in range(3)]
    assert len(set(outs)) == 1


def test_batch_parallel_equals_sequential(backend, rng):
    spec = init_conv(rng, 3, 5, 3, bias=True)
    x = rng.standard_normal((6, 3, 9, 9)).astype(np.float32)
    whole = ops.conv2d(x, spec).data
    with ThreadPoolExecutor(4) as pool:
        parts = list(pool.map(lambda i: ops.conv2d(x[i:i + 1], spec).data, range(6)))
    assert np.concatenate(parts).tobytes() == whole.tobytes()


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_dump_roundtrip(dtype, rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 5)).astype(dtype))
    text = dump_tensor(x)
    assert text.startswith("shape: 2 3 4 5\n")
    back = parse_dump(text, dtype)
    assert back.data.tobytes() == x.data.tobytes()
