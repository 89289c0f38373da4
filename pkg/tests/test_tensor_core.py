import numpy as np
import pytest

from sar2eo.errors import ContractError, DataError, DimensionError
from sar2eo.tensor_core import Tape, Tensor, backward, no_grad, ops
from sar2eo.tensor_core import checkpoint as ckpt
from sar2eo.tensor_core.gradcheck import op_suite
from sar2eo.tensor_core.nn import Adam, Conv2d, ResidualBlock, adam_step, frozen, residual_block


def naive_conv(x, w, b, stride, pad):
    """Six nested loops over (n, o, i, j, c, kh*kw)."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for a in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for p in range(kh):
                            for q in range(kw):
                                acc += xp[a, c, i * stride + p, j * stride + q] * w[o, c, p, q]
                    out[a, o, i, j] = acc
    return out


# ---------------------------------------------------------------------------
# conv2d

def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), 1, 0)
    np.testing.assert_array_equal(out.data, x)


def test_conv_ones_stride2():
    out = ops.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), None, 2, 0)
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (2, 2), (1, 0)])
def test_conv_matches_naive_loops(rng, stride, pad):
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    want = naive_conv(x, w, b, stride, pad)
    assert np.abs(got - want).max() / np.abs(want).max() < 1e-12


def test_conv_output_size_formula(rng):
    for h, k, s, p in [(7, 3, 2, 1), (9, 4, 2, 2), (5, 5, 1, 0)]:
        out = ops.conv2d(Tensor(rng.normal(size=(1, 1, h, h))), Tensor(rng.normal(size=(1, 1, k, k))), None, s, p)
        assert out.shape[2] == (h + 2 * p - k) // s + 1


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


# ---------------------------------------------------------------------------
# conv_transpose2d

def test_conv_transpose_shape():
    out = ops.conv_transpose2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))), None, 2, 0)
    assert out.shape == (1, 1, 4, 4)


def test_conv_transpose_hand_value():
    out = ops.conv_transpose2d(Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.ones((1, 1, 2, 2))), None, 1, 0)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.0))


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (4, 2, 2), (2, 2, 0)])
def test_adjointness(rng, k, stride, pad):
    x = rng.normal(size=(2, 3, 9, 9))
    w = rng.normal(size=(4, 3, k, k))
    y_shape = ops.conv2d(Tensor(x), Tensor(w), None, stride, pad).shape
    y = rng.normal(size=y_shape)
    lhs = np.sum(ops.conv2d(Tensor(x), Tensor(w), None, stride, pad).data * y)
    # conv_transpose2d weight layout is (Cin, Cout, k, k): the conv's (out, in) swap roles
    back = ops.conv_transpose2d(Tensor(y), Tensor(w), None, stride, pad,
                                output_padding=(9 + 2 * pad - k) % stride)
    rhs = np.sum(x * back.data)
    assert abs(lhs - rhs) / abs(lhs) < 1e-10


def test_conv_transpose_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv_transpose2d(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((3, 1, 3, 3))))


# ---------------------------------------------------------------------------
# elementwise, normalization, pooling

def test_instance_norm_hand_values():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
    out = ops.instance_norm(Tensor(x), eps=1e-5).data.reshape(-1)
    mean, var = 2.5, 1.25
    np.testing.assert_allclose(out, (np.array([1, 2, 3, 4]) - mean) / np.sqrt(var + 1e-5), rtol=1e-12)
    assert abs(out.mean()) < 1e-6
    assert abs(out.var() * (1.25 + 1e-5) / 1.25 - 1) < 1e-5


def test_instance_norm_slices(rng):
    out = ops.instance_norm(Tensor(rng.normal(3, 5, size=(2, 3, 6, 5)))).data
    assert np.abs(out.mean(axis=(2, 3))).max() < 1e-6
    assert np.abs(out.var(axis=(2, 3)) - 1).max() < 1e-5


def test_instance_norm_idempotent_and_constant(rng):
    x = ops.instance_norm(Tensor(rng.normal(size=(1, 2, 4, 4)))).data
    again = ops.instance_norm(Tensor(x)).data
    assert np.abs(again - x).max() < 1e-4
    np.testing.assert_array_equal(ops.instance_norm(Tensor(np.full((1, 1, 3, 3), 7.0))).data, 0.0)


def test_instance_norm_degenerate():
    with pytest.raises(DimensionError):
        ops.instance_norm(Tensor(np.zeros((1, 1, 1, 1))))


def test_activations():
    assert ops.leaky_relu(Tensor(np.array([-1.0])), 0.2).data[0] == pytest.approx(-0.2)
    assert ops.relu(Tensor(np.array([0.0]))).data[0] == 0.0
    assert ops.tanh(Tensor(np.array([0.0]))).data[0] == 0.0
    big = ops.tanh(Tensor(np.array([-50.0, 50.0, 3.0]))).data
    assert np.all(np.abs(big) <= 1.0)


def test_avg_downsample():
    x = np.array([0.0, 0.0, 4.0, 4.0]).reshape(1, 1, 2, 2)
    assert ops.avg_downsample2(Tensor(x)).data.item() == 2.0
    const = ops.avg_downsample2(Tensor(np.full((1, 2, 6, 4), 3.5))).data
    assert const.shape == (1, 2, 3, 2) and np.all(const == 3.5)


def test_avg_downsample_twice_is_block_mean(rng):
    x = rng.normal(size=(1, 1, 8, 8))
    twice = ops.avg_downsample2(ops.avg_downsample2(Tensor(x))).data
    blocks = x.reshape(1, 1, 2, 4, 2, 4).mean(axis=(3, 5))
    np.testing.assert_allclose(twice, blocks, rtol=1e-12)


def test_avg_downsample_odd():
    with pytest.raises(DimensionError):
        ops.avg_downsample2(Tensor(np.zeros((1, 1, 3, 4))))


def test_add_identity_and_mismatch(rng):
    x = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(ops.add(Tensor(x), Tensor(np.zeros_like(x))).data, x)
    with pytest.raises(DimensionError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_residual_block_zero_weights_is_identity(rng):
    x = Tensor(rng.normal(size=(1, 4, 5, 5)))
    params = {"conv1.weight": Tensor(np.zeros((4, 4, 3, 3))), "conv1.bias": Tensor(np.zeros(4)),
              "conv2.weight": Tensor(np.zeros((4, 4, 3, 3))), "conv2.bias": Tensor(np.zeros(4))}
    np.testing.assert_array_equal(residual_block(x, params).data, x.data)
    block = ResidualBlock(4, rng=rng, dtype=np.float64)
    assert block(x).shape == x.shape


def test_losses_hand_values():
    a, b = Tensor(np.array([1.0, 3.0])), Tensor(np.array([0.0, 1.0]))
    assert ops.l1_loss(a, b).item() == 1.5
    assert ops.mse_loss(a, b).item() == 2.5
    assert ops.l1_loss(a, a).item() == 0.0 and ops.mse_loss(a, a).item() == 0.0
    with pytest.raises(DimensionError):
        ops.l1_loss(a, Tensor(np.zeros(3)))


# ---------------------------------------------------------------------------
# tape and backward

def test_sum_gradient_is_ones(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    backward(ops.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(ops.scale(x, 2.0))


def test_tape_topological(rng):
    x = Tensor(rng.normal(size=(1, 1, 4, 4)), requires_grad=True)
    y = ops.relu(ops.conv2d(x, Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True), None, 1, 1))
    loss = ops.mean(ops.add(y, y))
    tape = Tape.from_output(loss)
    position = {node.id: i for i, node in enumerate(tape)}
    for node in tape:
        for t in node.inputs:
            if t.node is not None:
                assert position[t.node.id] < position[node.id]
    assert len({n.id for n in tape}) == len(tape)


def test_replay_twice_identical(rng):
    x = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    loss = ops.mse_loss(ops.instance_norm(ops.conv2d(x, w, None, 1, 1)), Tensor(np.zeros((1, 3, 5, 5))))
    backward(loss)
    first = (x.grad.copy(), w.grad.copy())
    x.zero_grad()
    w.zero_grad()
    backward(loss)
    np.testing.assert_array_equal(x.grad, first[0])
    np.testing.assert_array_equal(w.grad, first[1])


def test_shared_input_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    backward(ops.sum(ops.mul(x, x)))
    assert x.grad[0] == 4.0


def test_no_grad_records_nothing(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with no_grad():
        y = ops.relu(x)
    assert y.node is None


def test_frozen_params_get_no_grad_but_pass_gradient(rng):
    conv = Conv2d(1, 2, 3, 1, 1, rng=rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(1, 1, 4, 4)), requires_grad=True)
    with frozen(conv):
        loss = ops.sum(conv(x))
    backward(loss)
    assert conv.weight.grad is None and conv.bias.grad is None
    assert x.grad is not None and np.any(x.grad != 0)
    assert conv.weight.requires_grad


def test_forward_determinism(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    a = Conv2d(3, 4, 3, 1, 1, rng=np.random.default_rng(5), dtype=np.float64)
    b = Conv2d(3, 4, 3, 1, 1, rng=np.random.default_rng(5), dtype=np.float64)
    np.testing.assert_array_equal(a(Tensor(x)).data, b(Tensor(x)).data)


# ---------------------------------------------------------------------------
# Adam

def test_adam_single_scalar_hand_check():
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = {}
    adam_step({"p": p}, {"p": np.array([0.3])}, state, lr=0.1, beta1=0.5, beta2=0.999, eps=1e-8)
    # t=1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
    assert p.data[0] == pytest.approx(1.0 - 0.1 * 0.3 / (0.3 + 1e-8), rel=1e-14)
    assert state["p"]["t"] == 1
    adam_step({"p": p}, {"p": np.array([-0.1])}, state, lr=0.1, beta1=0.5, beta2=0.999, eps=1e-8)
    m = 0.5 * (0.5 * 0.3) + 0.5 * -0.1
    v = 0.999 * (0.001 * 0.09) + 0.001 * 0.01
    expected = 1.0 - 0.1 * 0.3 / (0.3 + 1e-8) - 0.1 * (m / 0.75) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p.data[0] == pytest.approx(expected, rel=1e-12)


def test_adam_skips_params_without_grad():
    a, b = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
    a.grad = np.ones(2)
    opt = Adam(lr=0.01)
    opt.step({"a": a, "b": b})
    assert np.all(a.data < 1) and np.all(b.data == 1)
    assert "b" not in opt.state


# ---------------------------------------------------------------------------
# finite differences

def test_op_suite_passes():
    results = op_suite(seed=0)
    names = {r.name.split()[0] for r in results}
    for op in ("conv2d", "conv_transpose2d", "instance_norm", "avg_downsample2", "relu", "leaky_relu", "tanh",
               "add", "mul", "concat", "l1_loss", "mse_loss", "residual_block", "conv-norm-relu-conv-mse"):
        assert op in names
        assert sum(r.name.split()[0] == op for r in results) >= 3
    bad = [(r.name, r.max_rel_err) for r in results if not r.ok]
    assert not bad


# ---------------------------------------------------------------------------
# checkpoint archive

def test_checkpoint_layout_and_round_trip(rng):
    tensors = {"a": rng.normal(size=(2, 3)).astype(np.float32), "b.c": np.array([1.5], dtype=np.float32)}
    blob = ckpt.dumps(tensors)
    assert blob[:4] == b"S2E1"
    # first record: name_len=1, "a", rank=2, extents 2 and 3, then six floats
    assert blob[4:8] == (1).to_bytes(4, "little") and blob[8:9] == b"a"
    assert blob[9:13] == (2).to_bytes(4, "little")
    assert np.frombuffer(blob[21:45], dtype="<f4").tolist() == tensors["a"].reshape(-1).tolist()
    back = ckpt.loads(blob)
    assert list(back) == ["a", "b.c"]
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
    assert ckpt.dumps(back) == blob


def test_checkpoint_rejects_garbage():
    with pytest.raises(DataError):
        ckpt.loads(b"XXXX")
    blob = ckpt.dumps({"a": np.zeros((4, 4), dtype=np.float32)})
    with pytest.raises(DataError):
        ckpt.loads(blob[:-3])
