import math

import numpy as np
import pytest

from zsdae.nn import autograd as ag
from zsdae.nn.autograd import GraphError, Tensor
from zsdae.nn.checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from zsdae.nn.gradcheck import sample_gradcheck
from zsdae.nn.inference import IncrementalDecoder
from zsdae.nn.model import ModelConfig, Transformer, init_params, make_batch, param_count
from zsdae.nn.optim import Adam, InverseSqrtSchedule, adam_step

F64 = np.float64


def t64(x, grad=True):
    return Tensor(np.asarray(x, dtype=F64), requires_grad=grad)


def tiny_model(seed=0, dtype=np.float32, **kw):
    cfg = ModelConfig(**{"vocab_size": 12, "d_model": 8, "n_heads": 2, "d_ff": 16,
                         "enc_layers": 1, "dec_layers": 1, "max_len": 16, **kw})
    return init_params(cfg, seed, dtype)


def random_batch(rng, vocab=12, B=3, lo=3, hi=6):
    srcs = [list(rng.integers(4, vocab, size=rng.integers(lo, hi + 1))) for _ in range(B)]
    tgts = [list(rng.integers(4, vocab, size=rng.integers(lo, hi + 1))) for _ in range(B)]
    return make_batch(srcs, tgts)


# -- engine --------------------------------------------------------------------------

def test_product_rule():
    x, y = t64(2.0), t64(3.0)
    (x * y).backward()
    assert x.grad == 3.0 and y.grad == 2.0


def test_zero_weighted_term_gives_zero_grad():
    x, y = t64([1.0, 2.0]), t64([3.0, -1.0])
    ((x * x).sum() + (y * y * y).sum() * 0.0).backward()
    np.testing.assert_array_equal(y.grad, 0.0)
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_on_detached_raises():
    with pytest.raises(GraphError):
        Tensor(np.ones(1)).backward()
    with ag.no_grad():
        out = t64([1.0]) * 2.0
    with pytest.raises(GraphError):
        out.backward()


def test_backward_needs_scalar():
    with pytest.raises(GraphError):
        (t64([1.0, 2.0]) * 2.0).backward()


def _fd_check(fn, inputs, eps=1e-6, tol=1e-6):
    out = fn(*inputs)
    seed = np.random.default_rng(0).normal(size=out.shape)
    loss = (out * Tensor(seed)).sum()
    for t in inputs:
        t.grad = None
    loss.backward()
    for t in inputs:
        num = np.zeros_like(t.data)
        it = np.nditer(t.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = t.data[idx]
            t.data[idx] = orig + eps
            up = float((fn(*inputs).data * seed).sum())
            t.data[idx] = orig - eps
            down = float((fn(*inputs).data * seed).sum())
            t.data[idx] = orig
            num[idx] = (up - down) / (2 * eps)
        np.testing.assert_allclose(t.grad, num, atol=tol, rtol=1e-5)


def test_op_gradients():
    rng = np.random.default_rng(1)
    a, b = t64(rng.normal(size=(2, 3, 4))), t64(rng.normal(size=(4, 5)))
    _fd_check(ag.matmul, [a, b])
    c, d = t64(rng.normal(size=(2, 3, 4))), t64(rng.normal(size=(2, 4, 2)))
    _fd_check(ag.matmul, [c, d])
    x, g, bb = t64(rng.normal(size=(3, 5))), t64(rng.normal(size=5)), t64(rng.normal(size=5))
    _fd_check(ag.layer_norm, [x, g, bb])
    _fd_check(lambda u, v: u - v / (v * v + 1.0), [t64(rng.normal(size=(3, 1))), t64(rng.normal(size=(3, 4)))])
    _fd_check(lambda u: u.transpose(1, 0).reshape(6).relu().exp(), [t64(rng.normal(size=(2, 3)))])
    _fd_check(lambda u: u.mean(axis=1) + u.sum(axis=0, keepdims=True).sum(), [t64(rng.normal(size=(2, 3)))])


def test_masked_softmax_gradient_and_empty_rows():
    rng = np.random.default_rng(2)
    mask = np.array([[True, False, True], [False, False, False], [True, True, True]])
    s = t64(rng.normal(size=(3, 3)))
    p = ag.masked_softmax(s, mask)
    np.testing.assert_allclose(p.data.sum(-1), [1.0, 0.0, 1.0], atol=1e-12)
    assert np.all(np.isfinite(p.data)) and np.all(p.data[~mask] == 0)
    _fd_check(lambda u: ag.masked_softmax(u, mask), [s])


def test_embedding_gradient_and_range():
    w = t64(np.random.default_rng(3).normal(size=(5, 3)))
    ids = np.array([[0, 2, 2], [4, 0, 1]])
    _fd_check(lambda u: ag.embedding(u, ids), [w])
    with pytest.raises(ValueError):
        ag.embedding(w, np.array([5]))


def test_cross_entropy_matches_hand_computation():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(2, 3, 5))
    targets = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[True, True, False], [True, False, False]])
    total, count = 0.0, 0
    for b in range(2):
        for t in range(3):
            if not mask[b, t]:
                continue
            row = logits[b, t]
            lse = math.log(sum(math.exp(v) for v in row))
            total += lse - row[targets[b, t]]
            count += 1
    got = ag.cross_entropy(t64(logits), targets, mask).item()
    assert abs(got - total / count) < 1e-6


def test_cross_entropy_limits():
    V = 7
    assert abs(ag.cross_entropy(t64(np.zeros((1, 2, V))), np.zeros((1, 2), int)).item() - math.log(V)) < 1e-9
    big = np.full((1, 1, V), -50.0)
    big[0, 0, 3] = 50.0
    assert ag.cross_entropy(t64(big), np.array([[3]])).item() < 1e-12


def test_cross_entropy_smoothed_gradient():
    rng = np.random.default_rng(5)
    targets = rng.integers(0, 4, size=(2, 3))
    mask = rng.random((2, 3)) > 0.3
    mask[0, 0] = True
    _fd_check(lambda u: ag.cross_entropy(u, targets, mask, 0.1), [t64(rng.normal(size=(2, 3, 4)))])


# -- model ---------------------------------------------------------------------------

def test_param_count_formula():
    for kw in [{}, {"enc_layers": 2, "dec_layers": 3}, {"d_model": 12, "n_heads": 3, "d_ff": 7}]:
        p = tiny_model(**kw)
        assert p.n_params() == param_count(p.cfg)
    cfg = ModelConfig(vocab_size=264)
    d, f, V = 64, 256, 264
    assert param_count(cfg) == V * d + 2 * (4 * (d * d + d) + 2 * d * f + f + d + 4 * d) \
        + 2 * (8 * (d * d + d) + 2 * d * f + f + d + 6 * d) + 4 * d


def test_heads_must_divide():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=10, n_heads=3)


def test_forward_shape_and_range():
    p = tiny_model()
    m = Transformer(p)
    logits = m.forward(make_batch([[5, 6]], [[]]))
    assert logits.shape == (1, 1, p.cfg.vocab_size)
    with pytest.raises(ValueError):
        m.forward(make_batch([[5, 99]], [[4]]))


def test_forward_deterministic_without_dropout():
    p = tiny_model()
    b = random_batch(np.random.default_rng(0))
    a1 = Transformer(p).forward(b).data
    a2 = Transformer(p).forward(b).data
    assert np.array_equal(a1, a2)


def test_padding_is_invisible():
    p = tiny_model(dtype=F64)
    rng = np.random.default_rng(1)
    b = random_batch(rng)
    base = Transformer(p).forward(b).data
    # widen the source with padding-only columns, then scramble pad token ids
    extra = make_batch([list(r[m]) + [0] * 3 for r, m in zip(b.src, b.src_mask)],
                       [list(r[1:][m[1:]]) for r, m in zip(b.tgt_in, b.tgt_mask)])
    extra.src_mask[:] = False
    for i, m in enumerate(b.src_mask):
        extra.src_mask[i, :m.sum()] = True
    extra.src[~extra.src_mask] = rng.integers(4, 12, size=(~extra.src_mask).sum())
    out = Transformer(p).forward(extra).data
    np.testing.assert_allclose(out[b.tgt_mask], base[b.tgt_mask], atol=1e-12)


def test_causality():
    p = tiny_model(dtype=F64)
    b = make_batch([[5, 6, 7]], [[4, 5, 6, 7]])
    base = Transformer(p).forward(b).data
    for t in range(1, b.tgt_in.shape[1]):
        b2 = make_batch([[5, 6, 7]], [[4, 5, 6, 7]])
        b2.tgt_in[0, t] = 11 if b2.tgt_in[0, t] != 11 else 10
        out = Transformer(p).forward(b2).data
        np.testing.assert_array_equal(out[0, :t], base[0, :t])
        assert not np.allclose(out[0, t:], base[0, t:])


def test_full_model_gradcheck():
    p = tiny_model(seed=3, dtype=F64, enc_layers=2, dec_layers=2)
    m = Transformer(p)
    b = random_batch(np.random.default_rng(3))
    res = sample_gradcheck(lambda: m.loss(b, label_smoothing=0.1), p, n=50, seed=3)
    worst = max(r[-1] for r in res)
    assert worst < 1e-3, res


def test_dropout_changes_output_and_needs_rng():
    p = tiny_model()
    m = Transformer(p)
    b = random_batch(np.random.default_rng(0))
    with pytest.raises(ValueError):
        m.forward(b, dropout=0.1, train=True)
    a = m.forward(b, 0.3, np.random.default_rng(1), True).data
    c = m.forward(b, 0.3, np.random.default_rng(1), True).data
    assert np.array_equal(a, c)
    assert not np.allclose(a, m.forward(b).data)


def test_incremental_decoder_matches_full_forward():
    p = tiny_model(seed=4, dtype=F64, enc_layers=2, dec_layers=2)
    b = random_batch(np.random.default_rng(4), B=4)
    full = ag.log_softmax_np(Transformer(p).forward(b).data)
    dec = IncrementalDecoder(p)
    state = dec.start(dec.encode(b.src, b.src_mask), b.src_mask)
    for t in range(b.tgt_in.shape[1]):
        lp = dec.step(state, b.tgt_in[:, t])
        np.testing.assert_allclose(lp, full[:, t], atol=1e-10)


# -- optimizer -------------------------------------------------------------------------

def test_schedule():
    s = InverseSqrtSchedule(5e-4, 4000)
    assert s(4000) == pytest.approx(5e-4)
    assert s(16000) == pytest.approx(2.5e-4)
    assert s(2000) == pytest.approx(2.5e-4)
    with pytest.raises(ValueError):
        s(0)


def test_adam_zero_betas_closed_form():
    x = {"w": t64([1.5])}
    sched = InverseSqrtSchedule(0.1, 1)
    g = np.array([-0.2])
    adam_step(x, {"w": g}, 1, sched, beta1=0.0, beta2=0.0, eps=1e-8)
    expected = 1.5 - 0.1 * (-0.2) / (0.2 + 1e-8)
    assert x["w"].data[0] == pytest.approx(expected, abs=1e-15)


def test_adam_bias_correction_first_step():
    # with bias correction the first update is lr * sign(g) regardless of betas
    x = {"w": t64([0.0, 0.0])}
    opt = Adam(InverseSqrtSchedule(0.01, 1))
    x["w"].grad = np.array([3.0, -0.5])
    opt.step(x)
    np.testing.assert_allclose(x["w"].data, [-0.01, 0.01], rtol=1e-6)


def test_adam_descends_quadratic():
    x = {"w": t64([3.0, -2.0])}
    opt = Adam(InverseSqrtSchedule(0.1, 10))
    for _ in range(500):
        x["w"].grad = 2 * x["w"].data
        opt.step(x)
    assert np.abs(x["w"].data).max() < 0.05


# -- checkpoints -----------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    p = tiny_model(seed=7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, p, {"step": 3})
    header, _ = read_header(path)
    assert header["format_version"] == 1 and header["hyper"]["d_model"] == 8
    q, extra = load_checkpoint(path)
    assert extra == {"step": 3}
    for k in p:
        assert np.array_equal(p[k].data, q[k].data)


def test_checkpoint_shape_validation(tmp_path):
    p = tiny_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, p)
    raw = bytearray(path.read_bytes())
    header, start = read_header(path)
    # claim a different model width: every shape check must fail
    bad = raw.replace(b'"d_model": 8', b'"d_model": 4')
    path.write_bytes(bytes(bad))
    with pytest.raises((CheckpointError, ValueError)):
        load_checkpoint(path)
