import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from doppelbaum import config as C
from doppelbaum.estimator import PostEditor
from doppelbaum.synthetic import ape_task, copy_task

SMALL = {"vocab": {"size": 60}, "model": {"num_layers": 1}}


def _xy(triples):
    return [(s, m) for s, m, _ in triples], [p for _, _, p in triples]


def test_params_and_clone():
    est = PostEditor(overrides=SMALL, max_steps=3, seed=4)
    params = est.get_params()
    assert params["max_steps"] == 3 and params["preset"] == "desk"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(beam_size=2)
    cfg = est.resolved_config()
    assert cfg["decode"]["beam_size"] == 2 and cfg["train"]["max_steps"] == 3 and cfg["seed"] == 4
    assert cfg["model"]["num_layers"] == 1


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        PostEditor().predict([("a", "b")])


def test_fit_predict_score(tmp_path):
    X, y = _xy(copy_task(20, seed=1))
    est = PostEditor(overrides=SMALL, max_steps=4, beam_size=2, seed=3)
    est.fit(X, y, checkpoint_path=tmp_path / "m.ckpt")
    out = est.predict(X[:3])
    assert len(out) == 3 and all(isinstance(o, str) for o in out)
    assert 0.0 <= est.score(X[:3], y[:3]) <= 100.0
    again = PostEditor.from_checkpoint(tmp_path / "m.ckpt", est.vocab_, overrides=SMALL, beam_size=2)
    assert again.predict(X[:3]) == out


def test_fit_is_deterministic():
    X, y = _xy(ape_task(16, seed=2))
    runs = [PostEditor(overrides=SMALL, max_steps=3, seed=9).fit(X, y) for _ in range(2)]
    a, b = (r.model_.state_dict() for r in runs)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_fit_errors():
    with pytest.raises(ValueError):
        PostEditor(max_steps=1).fit([("a", "b")], [])
    with pytest.raises(ValueError):
        PostEditor(max_steps=1).fit([("a",)], ["b"])
    with pytest.raises(ValueError):
        PostEditor(preset="huge").resolved_config()


def test_from_checkpoint_rejects_other_vocabulary(tmp_path):
    X, y = _xy(copy_task(10, seed=1))
    est = PostEditor(overrides=SMALL, max_steps=1).fit(X, y, checkpoint_path=tmp_path / "m.ckpt")
    other = type(est.vocab_)(30).fit(["completely different words here"])
    with pytest.raises(ValueError, match="vocabulary"):
        PostEditor.from_checkpoint(tmp_path / "m.ckpt", other)


def test_config_overrides():
    assert C.parse_override("train.max_steps=100") == {"train": {"max_steps": 100}}
    assert C.parse_override("decode.length_ratio=1.5") == {"decode": {"length_ratio": 1.5}}
    assert C.parse_override("seed=3") == {"seed": 3}
    for bad in ("max_steps", "bogus.x=1", "train=3"):
        with pytest.raises(ValueError):
            C.parse_override(bad)
    with pytest.raises(ValueError):
        C.train_config(C.resolve("desk", overrides=["train.warp=1"]))


def test_presets():
    desk, paper = C.resolve("desk"), C.resolve("paper")
    m = C.model_config(paper, C.vocab_size(paper))
    assert (m.num_layers, m.num_heads, m.d_model, m.d_ff, m.vocab_size) == (6, 8, 512, 2048, 32000)
    t = C.train_config(paper)
    assert (t.lr_factor, t.warmup_steps, t.tokens_per_batch, t.blend_ratio) == (2.0, 18000, 25000, 27)
    assert (t.adam_beta1, t.adam_beta2, t.adam_eps, t.seed) == (0.9, 0.998, 1e-8, 1128)
    d = C.decode_config(paper)
    assert (d.beam_size, d.length_penalty, d.length_ratio) == (5, 0.6, 1.3)
    m = C.model_config(desk, 1000)
    assert (m.num_layers, m.num_heads, m.d_model, m.d_ff) == (2, 2, 64, 128)
