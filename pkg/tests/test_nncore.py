import numpy as np
import pytest

from posescene import nncore as nn
from posescene.errors import ConfigError, DataError, ModelStateError


def test_dense_identity():
    store = nn.ParamStore()
    w = store.add("w", np.eye(3))
    b = store.add("b", np.zeros(3))
    y = nn.dense_forward(nn.Tensor([[1.0, 2.0, 3.0]]), w, b)
    assert np.allclose(y.data, [[1.0, 2.0, 3.0]])


def test_dense_zero_weights_bias_only():
    store = nn.ParamStore()
    w = store.add("w", np.zeros((3, 2)))
    b = store.add("b", [5.0, 5.0])
    y = nn.dense_forward(nn.Tensor([[0.3, -2.0, 7.0]]), w, b)
    assert np.allclose(y.data, [[5.0, 5.0]])


def test_dense_hand_computed():
    store = nn.ParamStore()
    w = store.add("w", [[1.0, 2.0], [3.0, 4.0]])
    b = store.add("b", [0.0, 0.0])
    y = nn.dense_forward(nn.Tensor([[1.0, 1.0]]), w, b)
    assert np.allclose(y.data, [[4.0, 6.0]])


def test_dense_shape_mismatch_rejected():
    store = nn.ParamStore()
    w = store.add("w", np.zeros((3, 2)))
    b = store.add("b", np.zeros(2))
    with pytest.raises(ConfigError):
        nn.dense_forward(nn.Tensor(np.zeros((1, 4))), w, b)


def test_gradcheck_quadratic_exact():
    store = nn.ParamStore()
    w = store.add("w", np.array([3.0]))
    err = nn.grad_check(lambda: (w * w).sum(), store, eps=1e-4)
    assert err < 1e-8
    # analytic derivative of w^2 at 3 is 6
    loss = (w * w).sum()
    store.zero_grad()
    loss.backward()
    assert np.isclose(w.grad[0], 6.0)


def test_gradcheck_dense_mse():
    rng = np.random.default_rng(0)
    store = nn.ParamStore()
    layer = nn.Dense(store, "fc", 4, 3, rng)
    x = nn.Tensor(rng.standard_normal((5, 4)))
    target = rng.standard_normal((5, 3))

    def loss():
        d = layer(x) - nn.Tensor(target)
        return (d * d).mean()

    assert nn.grad_check(loss, store, eps=1e-4) < 1e-4


def test_gradcheck_attention_block():
    rng = np.random.default_rng(1)
    store = nn.ParamStore()
    attn = nn.MultiHeadAttention(store, "attn", 8, 2, rng)
    x = nn.Tensor(rng.standard_normal((2, 4, 8)))
    err = nn.grad_check(lambda: (attn(x, causal=True) ** 2.0).mean(), store, eps=1e-4)
    assert err < 1e-3


def test_gradcheck_eps_validated():
    store = nn.ParamStore()
    store.add("w", np.ones(2))
    with pytest.raises(ConfigError):
        nn.grad_check(lambda: nn.Tensor(0.0), store, eps=1e-2)


def test_gradcheck_composite_ops():
    rng = np.random.default_rng(2)
    store = nn.ParamStore()
    a = store.add("a", rng.standard_normal((3, 4)) + 2.0)
    b = store.add("b", rng.standard_normal((4,)))

    def loss():
        h = nn.tlog(a) * b + nn.texp(b * 0.1)
        h = nn.softmax(h, axis=-1)
        h = nn.concat([h, h * 2.0], axis=1)
        return (h[0:2, 1:5] ** 2.0).mean() + nn.tsqrt((a * a).sum()) + nn.ttanh(b).sum()

    assert nn.grad_check(loss, store, eps=1e-4) < 1e-5


def test_attention_single_token_is_value_projection():
    rng = np.random.default_rng(3)
    store = nn.ParamStore()
    attn = nn.MultiHeadAttention(store, "a", 6, 1, rng)
    x = rng.standard_normal((1, 1, 6))
    out = attn(nn.Tensor(x), causal=True).data
    v = x[0, 0] @ attn.wv.w.data + attn.wv.b.data
    expected = v @ attn.wo.w.data + attn.wo.b.data
    assert np.allclose(out[0, 0], expected)


def test_attention_causal_masking():
    rng = np.random.default_rng(4)
    store = nn.ParamStore()
    attn = nn.MultiHeadAttention(store, "a", 8, 2, rng)
    x = rng.standard_normal((1, 5, 8))
    base = attn(nn.Tensor(x), causal=True).data
    x2 = x.copy()
    x2[0, 4] += 3.0  # perturb the last token
    pert = attn(nn.Tensor(x2), causal=True).data
    assert np.array_equal(base[0, :4], pert[0, :4])
    assert not np.allclose(base[0, 4], pert[0, 4])


def test_attention_identity_projections_equal_tokens():
    store = nn.ParamStore()
    attn = nn.MultiHeadAttention(store, "a", 3, 1, np.random.default_rng(0))
    for lin in (attn.wq, attn.wk, attn.wv, attn.wo):
        lin.w.data = np.eye(3)
        lin.b.data = np.zeros(3)
    tok = np.array([0.5, -1.0, 2.0])
    x = np.stack([tok, tok])[None]
    out = attn(nn.Tensor(x), causal=True).data
    assert np.allclose(out[0], x[0])


def test_attention_head_divisibility():
    store = nn.ParamStore()
    with pytest.raises(ConfigError):
        nn.MultiHeadAttention(store, "a", 10, 3, np.random.default_rng(0))


def test_sinusoidal_zero_alternates():
    out = nn.sinusoidal_embed(0.0, 8)
    assert np.allclose(out, [0, 1] * 4)


def test_sinusoidal_periodicity_first_pair():
    a = nn.sinusoidal_embed(0.0, 6)
    b = nn.sinusoidal_embed(2 * np.pi, 6)
    assert np.allclose(a[:2], b[:2], atol=1e-12)


def test_sinusoidal_direct_formula():
    out = nn.sinusoidal_embed(1.0, 4)
    expected = [np.sin(1.0), np.cos(1.0), np.sin(1e-2), np.cos(1e-2)]
    assert np.allclose(out, expected)


def test_sinusoidal_odd_dim_rejected():
    with pytest.raises(ConfigError):
        nn.sinusoidal_embed(1.0, 5)


def test_forward_deterministic():
    rng = np.random.default_rng(5)
    store = nn.ParamStore()
    block = nn.TransformerBlock(store, "b", 8, 2, rng)
    x = nn.Tensor(rng.standard_normal((2, 3, 8)))
    y1 = block(x, causal=True).data
    y2 = block(x, causal=True).data
    assert np.array_equal(y1, y2)


def test_adam_zero_grad_keeps_params():
    store = nn.ParamStore()
    w = store.add("w", np.array([1.0, -2.0, 3.0]))
    before = w.data.copy()
    opt = nn.Adam(store, lr=0.1)
    w.grad = np.zeros(3)
    opt.step()
    assert np.array_equal(w.data, before)
    w.grad = None
    opt.step()
    assert np.array_equal(w.data, before)


def test_adam_descends_quadratic():
    store = nn.ParamStore()
    w = store.add("w", np.array([5.0]))
    opt = nn.Adam(store, lr=0.1)
    for _ in range(300):
        loss = (w * w).sum()
        store.zero_grad()
        loss.backward()
        opt.step()
    assert abs(w.data[0]) < 0.05


def test_paramstore_rejects_duplicates():
    store = nn.ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(DataError):
        store.add("w", np.ones(2))


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    store = nn.ParamStore()
    store.add("layer.w", rng.standard_normal((3, 4)))
    store.add("layer.b", rng.standard_normal(4))
    store.add("stats", rng.standard_normal(7), trainable=False)
    path = tmp_path / "model.pfck"
    nn.checkpoint.save(path, store)
    values = nn.checkpoint.load(path)
    assert set(values) == {"layer.w", "layer.b", "stats"}
    for name, tensor in store.items():
        assert values[name].shape == tensor.data.shape
        assert np.allclose(values[name], tensor.data, atol=1e-6)
    # float32 payload: save -> load -> save is byte-identical
    store2 = nn.ParamStore()
    for name, tensor in store.items():
        store2.add(name, values[name])
    path2 = tmp_path / "model2.pfck"
    nn.checkpoint.save(path2, store2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_binary_layout(tmp_path):
    store = nn.ParamStore()
    store.add("x", np.array([1.0, 2.0]))
    path = tmp_path / "tiny.pfck"
    nn.checkpoint.save(path, store)
    blob = path.read_bytes()
    assert blob[:4] == b"PFCK"
    assert int.from_bytes(blob[4:8], "little") == 1  # version
    assert int.from_bytes(blob[8:12], "little") == 1  # entry count
    assert int.from_bytes(blob[12:14], "little") == 1  # name length
    assert blob[14:15] == b"x"
    assert blob[15] == 1  # rank
    assert int.from_bytes(blob[16:20], "little") == 2  # dim
    assert np.frombuffer(blob[20:], dtype="<f4").tolist() == [1.0, 2.0]


def test_checkpoint_mismatch_raises(tmp_path):
    store = nn.ParamStore()
    store.add("a", np.zeros(3))
    path = tmp_path / "m.pfck"
    nn.checkpoint.save(path, store)
    other = nn.ParamStore()
    other.add("b", np.zeros(3))
    with pytest.raises(ModelStateError):
        nn.checkpoint.load_into(other, path)


def test_backward_requires_scalar():
    with pytest.raises(DataError):
        nn.Tensor(np.zeros(3), requires_grad=True).backward()


def test_broadcast_gradients():
    store = nn.ParamStore()
    b = store.add("b", np.array([1.0, 2.0]))
    x = nn.Tensor(np.ones((4, 2)))

    def loss():
        return ((x + b) * (x + b)).sum()

    assert nn.grad_check(loss, store, eps=1e-4) < 1e-6


def test_upsample2x_and_gradient():
    store = nn.ParamStore()
    z = store.add("z", np.arange(4.0).reshape(1, 1, 2, 2))
    out = nn.upsample2x(z)
    assert out.shape == (1, 1, 4, 4)
    assert np.array_equal(out.data[0, 0, :2, :2], [[0, 0], [1, 1]])
    assert nn.grad_check(lambda: (nn.upsample2x(z) ** 2.0).mean(), store, eps=1e-4) < 1e-6
