"""Adam + inverse-sqrt warmup training loop with optional corpus blending."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import blend, epoch_stream, token_batches
from .model import save_checkpoint
from .symmetry import REGULARIZERS, compute_loss
from .tensor import no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_factor: float = 2.0
    warmup_steps: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.998
    adam_eps: float = 1e-8
    tokens_per_batch: int = 512
    max_steps: int = 500
    finetune_steps: int = 0
    blend_ratio: int = 27
    label_smoothing: float = 0.1
    regularizer: str = "doppelbaum"
    valid_every: int = 100
    restart_schedule: bool = False
    seed: int = 1128

    def __post_init__(self):
        positive = ("lr_factor", "warmup_steps", "adam_eps", "tokens_per_batch", "blend_ratio", "valid_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_steps < 0 or self.finetune_steps < 0:
            raise ValueError("step counts must be non-negative")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")

    def to_dict(self):
        return dataclasses.asdict(self)


def lr_schedule(step, d_model, factor, warmup):
    """factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5); peaks at ``warmup``."""
    if step < 1:
        raise ValueError(f"learning-rate step must be >= 1, got {step}")
    return factor * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.998, eps=1e-8):
    """In-place bias-corrected Adam update of every array in ``params``.

    ``params`` and ``grads`` map names to numpy arrays; a missing or None
    gradient counts as zero.
    """
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name} at step {t}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass
class TrainLogRecord:
    step: int
    phase: str
    lr: float
    losses: dict
    tokens: int
    wall_time: float

    def to_json(self):
        rec = {"step": self.step, "phase": self.phase, "lr": self.lr}
        rec.update(self.losses)
        rec.update(tokens=self.tokens, wall_time=round(self.wall_time, 4))
        return json.dumps(rec)


@dataclass
class TrainResult:
    records: list
    best_step: int | None = None
    best_valid_loss: float | None = None
    valid_history: list = field(default_factory=list)


def validation_loss(model, corpus, config):
    """Token-weighted loss on ``corpus`` in eval mode.

    Uses the composite loss for the regularized model and plain CE for the
    baseline, which is also the model-selection criterion.
    """
    was_training = model.training
    model.eval()
    key = "total" if config.regularizer == "doppelbaum" else "ce"
    total = 0.0
    tokens = 0
    with no_grad():
        for batch in token_batches(corpus.examples, config.tokens_per_batch):
            n = batch.num_target_tokens
            loss = compute_loss(model, batch, config.regularizer, config.label_smoothing)
            total += loss.as_dict()[key] * n
            tokens += n
    model.train(was_training)
    return total / tokens


def _phase_plan(train_corpus, pretrain_corpus, config):
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    if pretrain_corpus is not None and config.max_steps:
        first = ("pretrain", blend(pretrain_corpus, train_corpus, config.blend_ratio, seeds[0]))
    else:
        first = ("train", epoch_stream(list(train_corpus), np.random.default_rng(seeds[0])))
    plan = [(first[0], first[1], config.max_steps)]
    if config.finetune_steps:
        plan.append(("finetune", epoch_stream(list(train_corpus), np.random.default_rng(seeds[1])),
                     config.finetune_steps))
    return plan


def train(model, train_corpus, config, pretrain_corpus=None, valid_corpus=None,
          log_path=None, checkpoint_path=None, checkpoint_meta=None):
    """Train ``model`` in place and return a :class:`TrainResult`.

    With ``pretrain_corpus`` the first ``max_steps`` steps draw from the
    blended stream and ``finetune_steps`` more draw from ``train_corpus``
    alone; without it all steps use ``train_corpus``. When a validation
    corpus is given the best-scoring parameters are restored at the end and
    written to ``checkpoint_path``.
    """
    if not len(train_corpus):
        raise ValueError("training corpus is empty")
    if pretrain_corpus is not None and not len(pretrain_corpus):
        raise ValueError("pretraining corpus is empty")

    model.rng = np.random.default_rng(config.seed)
    model.train()
    params = {k: p.data for k, p in model.params.items()}
    state = AdamState()
    d_model = model.config.d_model
    records = []
    result = TrainResult(records)
    best_state = None
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    start = time.perf_counter()
    tokens_seen = 0
    step = 0
    sched_step = 0

    def check_validation():
        nonlocal best_state
        loss = validation_loss(model, valid_corpus, config)
        result.valid_history.append((step, loss))
        log.info("step %d validation loss %.5f", step, loss)
        if result.best_valid_loss is None or loss < result.best_valid_loss:
            result.best_valid_loss, result.best_step = loss, step
            best_state = model.state_dict()

    try:
        for phase, stream, n_steps in _phase_plan(train_corpus, pretrain_corpus, config):
            if phase == "finetune" and config.restart_schedule:
                sched_step = 0
            batches = token_batches(stream, config.tokens_per_batch)
            for _ in range(n_steps):
                step += 1
                sched_step += 1
                batch = next(batches)
                model.zero_grad()
                loss = compute_loss(model, batch, config.regularizer, config.label_smoothing)
                loss.total.backward()
                lr = lr_schedule(sched_step, d_model, config.lr_factor, config.warmup_steps)
                grads = {k: p.grad for k, p in model.params.items()}
                try:
                    adam_step(params, grads, state, lr, config.adam_beta1,
                              config.adam_beta2, config.adam_eps)
                except FloatingPointError as exc:
                    raise FloatingPointError(f"training step {step}: {exc}") from exc
                tokens_seen += batch.num_target_tokens
                rec = TrainLogRecord(step, phase, lr, loss.as_dict(), tokens_seen,
                                     time.perf_counter() - start)
                records.append(rec)
                if log_fh:
                    log_fh.write(rec.to_json() + "\n")
                if valid_corpus is not None and step % config.valid_every == 0:
                    check_validation()
        if valid_corpus is not None and (result.best_step is None or result.valid_history[-1][0] != step):
            check_validation()
    finally:
        if log_fh:
            log_fh.close()

    model.zero_grad()
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if checkpoint_path:
        meta = dict(checkpoint_meta or {})
        meta.update(train=config.to_dict(), best_step=result.best_step or step)
        save_checkpoint(model, checkpoint_path, meta)
    return result
