import numpy as np
import pytest

from doppelbaum import tensor as T
from doppelbaum.data import TripleExample, make_batch
from doppelbaum.gradcheck import gradcheck, random_batch
from doppelbaum.model import (BOS, EOS, PAD, APETransformer, ModelConfig, load_checkpoint,
                              parameter_digest, save_checkpoint)
from doppelbaum.symmetry import compute_loss

V = 30


@pytest.fixture(scope="module")
def model():
    return APETransformer(ModelConfig(vocab_size=V), seed=3).eval()


def _encode(model, x, x_len=None):
    x = np.asarray(x)
    return model.encode_source(x, x_len if x_len is not None else [x.shape[1]] * x.shape[0])


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=64, num_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(d_ff=0)
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)
    cfg = ModelConfig(num_layers=6, num_heads=8, d_model=512, d_ff=2048)
    assert cfg.d_k == cfg.d_v == 64


def test_single_token_source_shape(model):
    assert _encode(model, [[5]]).shape == (1, 1, 64)


def test_source_padding_tail_is_ignored(model):
    a = _encode(model, [[5, 6, 7, PAD, PAD]], [3])
    b = _encode(model, [[5, 6, 7, 9, 12]], [3])
    np.testing.assert_allclose(a.data[:, :3], b.data[:, :3], atol=1e-12)


def test_identical_sentences_give_identical_rows(model):
    u = _encode(model, [[5, 6, 7], [5, 6, 7]])
    np.testing.assert_array_equal(u.data[0], u.data[1])


def test_out_of_range_id(model):
    with pytest.raises(IndexError):
        _encode(model, [[V]])


def test_mt_attention_records(model):
    u = _encode(model, [[4, 5, 6, 7], [4, 5, PAD, PAD]], [4, 2])
    v, records = model.encode_mt(np.array([[8, 9, 10], [8, PAD, PAD]]), [3, 1], u, [4, 2])
    assert v.shape == (2, 3, 64)
    assert len(records) == model.config.num_layers
    for probs in records:
        assert probs.shape == (2, 2, 3, 3)
        np.testing.assert_allclose(probs.data[0].sum(-1), 1.0, atol=1e-9)
        np.testing.assert_allclose(probs.data[1, :, 0].sum(-1), 1.0, atol=1e-9)
        assert (probs.data[1, :, :, 1:] == 0).all()


def test_mt_batch_mismatch(model):
    u = _encode(model, [[4, 5]])
    with pytest.raises(ValueError):
        model.encode_mt(np.array([[8], [9]]), [1, 1], u, [2])


def test_zeroed_scores_give_uniform_rows():
    m = APETransformer(ModelConfig(vocab_size=V), seed=0).eval()
    m.mt_score_hook = lambda s: T.scale(s, 0.0)
    u = _encode(m, [[4, 5, 6]])
    _, records = m.encode_mt(np.array([[7, 8, 9, 10, 11]]), [5], u, [3])
    for probs in records:
        np.testing.assert_allclose(probs.data, 0.2, atol=1e-15)


def _logits(model, y):
    y = np.asarray(y)
    u = _encode(model, [[4, 5, 6]])
    v, _ = model.encode_mt(np.array([[7, 8, 9]]), [3], u, [3])
    return model.decode(y, [y.shape[1]], u, [3], v, [3])


def test_decoder_shape_and_causality(model):
    y = [[BOS, 10, 11, 12, 13]]
    base = _logits(model, y)
    assert base.shape == (1, 5, V)
    for t in range(1, 5):
        perturbed = [list(y[0])]
        perturbed[0][t] = 20
        out = _logits(model, perturbed)
        np.testing.assert_allclose(out.data[:, :t], base.data[:, :t], atol=1e-12)
        assert not np.allclose(out.data[:, t:], base.data[:, t:])


def test_decoder_rejects_empty_prefix(model):
    with pytest.raises(ValueError):
        _logits(model, np.zeros((1, 0), dtype=int))


def test_parallel_branches_agree_on_identical_memories():
    m = APETransformer(ModelConfig(vocab_size=V), seed=1).eval()
    for name in list(m.params):
        if ".cross_mt." in name:
            m.params[name].data = m.params[name.replace("cross_mt", "cross_src")].data.copy()
    rng = np.random.default_rng(0)
    h = T.Tensor(rng.normal(size=(1, 3, 64)))
    mem = T.Tensor(rng.normal(size=(1, 4, 64)))
    mask = np.ones((1, 4), dtype=bool)
    merged, a, b = m.parallel_cross(h, mem, mask, mem, mask, "dec.0")
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_allclose(merged.data, a.data)


def test_padding_invariance_of_logits(model):
    ex = TripleExample("", "", "", np.array([4, 5, 6]), np.array([7, 8]), np.array([BOS, 9, 10, EOS]))
    long = TripleExample("", "", "", np.array([4, 5, 6, 7, 8, 9]), np.array([7, 8, 9, 10, 11]),
                         np.array([BOS, 9, 10, 11, 12, 13, EOS]))
    alone = model.forward(make_batch([ex])).logits.data[0]
    padded = model.forward(make_batch([ex, long])).logits.data[0, :3]
    np.testing.assert_allclose(padded, alone, atol=1e-10)


def test_weight_tying():
    m = APETransformer(ModelConfig(vocab_size=V), seed=0).eval()
    assert [k for k in m.params if "embed" in k] == ["embed"]
    assert {k for k in m.params if k.startswith("gate")} == {"gate.w", "gate.b"}
    batch = random_batch(V, np.random.default_rng(0))
    batch.src[0, 0] = 9
    logits_before = m.forward(batch).logits.data
    u_before = m.encode_source(batch.src, batch.src_len).data
    # a random direction: a constant shift is invisible after the final layer norm
    m.params["embed"].data[9] += np.random.default_rng(1).normal(size=64)
    logits_after = m.forward(batch).logits.data
    u_after = m.encode_source(batch.src, batch.src_len).data
    # output projection: the logit of token 9 moves at every position
    assert (np.abs(logits_before[..., 9] - logits_after[..., 9]) > 1e-6).all()
    # input embedding: the source encoding sees the new row
    assert not np.allclose(u_before[0], u_after[0])


def test_forward_shapes_and_determinism(model):
    batch = random_batch(V, np.random.default_rng(1), batch_size=3)
    a = model.forward(batch)
    b = model.forward(batch)
    assert a.logits.shape == (3, batch.tgt_in.shape[1], V)
    assert a.mt_output.shape == (3, batch.mt.shape[1], 64)
    np.testing.assert_array_equal(a.logits.data, b.logits.data)


def test_forward_gradient_finite_difference():
    m = APETransformer(ModelConfig(num_layers=1, vocab_size=16), seed=5)
    rep = gradcheck(m, random_batch(16, np.random.default_rng(2)), "none", coords_per_tensor=1)
    assert rep.passed, rep.summary()


def test_checkpoint_round_trip(tmp_path):
    m = APETransformer(ModelConfig(vocab_size=V), seed=7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    assert loaded.config == m.config
    for k in m.params:
        np.testing.assert_array_equal(loaded.params[k].data, m.params[k].data)
    assert parameter_digest(loaded) == parameter_digest(m)
    save_checkpoint(loaded, tmp_path / "again.ckpt", {"note": "x"})
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()

    batch = random_batch(V, np.random.default_rng(0))
    m.eval(), loaded.eval()
    assert compute_loss(m, batch).total.item() == compute_loss(loaded, batch).total.item()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint\n")
    with pytest.raises(ValueError):
        load_checkpoint(bad)
