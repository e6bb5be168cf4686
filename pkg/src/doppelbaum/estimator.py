"""scikit-learn style wrapper: ``PostEditor().fit(X, y).predict(X)``.

``X`` is a sequence of ``(source, mt)`` string pairs and ``y`` the matching
postedited strings; all text is whitespace-tokenized.
"""

from __future__ import annotations

import logging

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import config as C
from .data import Vocabulary, corpus_from_triples, numericalize
from .decoding import translate
from .metrics import bleu_corpus
from .model import APETransformer, load_checkpoint
from .training import train

log = logging.getLogger(__name__)


def _triples(X, y, name):
    X = list(X)
    y = list(y)
    if len(X) != len(y):
        raise ValueError(f"{name}: {len(X)} inputs but {len(y)} postedits")
    for i, pair in enumerate(X):
        if len(pair) != 2:
            raise ValueError(f"{name}: item {i} is not a (source, mt) pair")
    return [(s, m, p) for (s, m), p in zip(X, y)]


class PostEditor(BaseEstimator):
    """APE model with the symmetric self-attention regularizer.

    Parameters
    ----------
    preset : "desk" or "paper"
    overrides : optional mapping ``{section: {key: value}}`` applied on top
        of the preset (sections: vocab, model, train, decode)
    regularizer : "doppelbaum", "none" or None (keep the preset's)
    max_steps, beam_size, seed : shortcuts for the most common overrides
    """

    def __init__(self, preset="desk", overrides=None, regularizer=None, max_steps=None,
                 beam_size=None, seed=None):
        self.preset = preset
        self.overrides = overrides
        self.regularizer = regularizer
        self.max_steps = max_steps
        self.beam_size = beam_size
        self.seed = seed

    def resolved_config(self):
        extra = [dict(self.overrides or {})]
        if self.regularizer is not None:
            extra.append({"train": {"regularizer": self.regularizer}})
        if self.max_steps is not None:
            extra.append({"train": {"max_steps": int(self.max_steps)}})
        if self.beam_size is not None:
            extra.append({"decode": {"beam_size": int(self.beam_size)}})
        if self.seed is not None:
            extra.append({"seed": int(self.seed)})
        return C.resolve(self.preset, overrides=extra)

    def fit(self, X, y, pretrain=None, valid=None, vocabulary=None,
            log_path=None, checkpoint_path=None, checkpoint_meta=None):
        """Learn the vocabulary (unless given) and train the model.

        ``pretrain`` and ``valid`` are optional ``(X, y)`` tuples in the same
        format as the training data.
        """
        cfg = self.resolved_config()
        train_cfg = C.train_config(cfg)
        corpus = corpus_from_triples(_triples(X, y, "train"), "train")
        extra = corpus_from_triples(_triples(*pretrain, "pretrain"), "pretrain", "pretrain") if pretrain else None
        dev = corpus_from_triples(_triples(*valid, "valid"), "valid", "valid") if valid else None

        if vocabulary is None:
            text = list(corpus.sentences()) + (list(extra.sentences()) if extra else [])
            vocabulary = Vocabulary(size=C.vocab_size(cfg)).fit(text)
        self.vocab_ = vocabulary
        model_cfg = C.model_config(cfg, len(vocabulary))
        max_len = model_cfg.max_len

        corpus = numericalize(corpus, vocabulary, max_len)
        if not len(corpus):
            raise ValueError(f"no training triple fits within {max_len} subwords")
        if extra is not None:
            extra = numericalize(extra, vocabulary, max_len)
        if dev is not None:
            dev = numericalize(dev, vocabulary, max_len, train=False)

        self.model_ = APETransformer(model_cfg, seed=train_cfg.seed)
        log.info("model has %d parameters, vocabulary %d", self.model_.num_parameters(), len(vocabulary))
        meta = dict(checkpoint_meta or {})
        meta.setdefault("vocab_fingerprint", vocabulary.fingerprint())
        self.train_result_ = train(self.model_, corpus, train_cfg, pretrain_corpus=extra,
                                   valid_corpus=dev, log_path=log_path,
                                   checkpoint_path=checkpoint_path, checkpoint_meta=meta)
        self.config_ = cfg
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = list(X)
        sources = [s for s, _ in X]
        mts = [m for _, m in X]
        return translate(self.model_, self.vocab_, sources, mts, C.decode_config(self.config_))

    def score(self, X, y):
        """Corpus BLEU of the postedits against ``y`` (higher is better)."""
        return bleu_corpus(self.predict(X), list(y))

    @classmethod
    def from_checkpoint(cls, checkpoint_path, vocabulary, **params):
        """Rebuild a fitted estimator from a checkpoint and its vocabulary."""
        model, meta = load_checkpoint(checkpoint_path)
        check_vocabulary(model, meta, vocabulary, checkpoint_path)
        est = cls(**params)
        est.vocab_ = vocabulary
        est.model_ = model
        est.config_ = est.resolved_config()
        est.train_result_ = None
        return est


def check_vocabulary(model, meta, vocabulary, checkpoint_path="checkpoint"):
    """Refuse a vocabulary other than the one the checkpoint was trained with."""
    want = meta.get("vocab_fingerprint")
    got = vocabulary.fingerprint()
    if want is not None and want != got:
        raise ValueError(f"{checkpoint_path} was trained with vocabulary {want}, "
                         f"but the given vocabulary is {got}")
    if model.config.vocab_size != len(vocabulary):
        raise ValueError(f"{checkpoint_path} expects {model.config.vocab_size} "
                         f"subwords, vocabulary has {len(vocabulary)}")

