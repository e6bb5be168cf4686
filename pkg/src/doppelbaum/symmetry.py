"""Symmetric self-attention regularizer.

For every MT token the MT encoder's self-attention row is split into a left
half and a right half (the middle position of an odd-length sentence belongs
to neither). The squared difference of the two masses is the row's skewness.
A per-token sigmoid gate computed from the MT encoder output weights the
batch-mean skewness, and an inducement term ``1 - E[alpha]`` pushes the gate
open:

    total = CE + E[alpha] * E[skew] + (1 - E[alpha])
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import PAD, length_mask
from .tensor import Tensor

REGULARIZERS = ("doppelbaum", "none")


def half_weights(lengths, max_len):
    """[B, L] signed weights: +1 on the left half, -1 on the right half.

    The left half is positions ``0 .. floor(L/2)-1`` and the right half is
    ``ceil(L/2) .. L-1``; middle and padded positions get 0.
    """
    L = np.asarray(lengths)[:, None]
    j = np.arange(max_len)[None, :]
    left = j < L // 2
    right = (j >= (L + 1) // 2) & (j < L)
    return left.astype(np.float64) - right.astype(np.float64)


def mirror_matrix(lengths, max_len):
    """[B, L, L] permutations with ``(p @ M)[j] == p[L_b - 1 - j]`` on true positions.

    Pairing each left position with its mirror before summing makes the
    skewness of a mirror-symmetric row exactly zero, not just zero up to
    summation-order roundoff.
    """
    lengths = np.asarray(lengths)
    M = np.zeros((len(lengths), max_len, max_len))
    for b, n in enumerate(lengths):
        i = np.arange(int(n))
        M[b, n - 1 - i, i] = 1.0
    return M


def _left_mask(lengths, max_len):
    return (np.arange(max_len)[None, :] < np.asarray(lengths)[:, None] // 2).astype(np.float64)


def skewness_row(p, length=None):
    """Squared left-minus-right attention mass of one distribution.

    ``p`` may be a sequence of floats (returns a float) or a 1-d Tensor
    (returns a differentiable scalar Tensor). ``length`` is the true
    sentence length when ``p`` carries padding.
    """
    n = len(p.data if isinstance(p, Tensor) else p) if length is None else int(length)
    if n <= 0:
        raise ValueError("skewness is undefined for an empty sentence")
    if isinstance(p, Tensor):
        L = p.shape[0]
        paired = p - T.matmul(p.reshape(1, L), Tensor(mirror_matrix([n], L)[0])).reshape(L)
        return T.square(T.tsum(paired * _left_mask([n], L)[0]))
    p = np.asarray(p, dtype=np.float64)
    i = np.arange(n // 2)
    diff = float(np.sum(p[i] - p[n - 1 - i]))
    return diff * diff


@dataclass
class SkewnessReport:
    values: np.ndarray  # [B, N, H, L], zero on padded query positions
    mean: Tensor  # E[skew] over true tokens, all layers and heads

    @property
    def expected(self):
        return self.mean.item()


@dataclass
class GateReport:
    alpha: Tensor  # [B, L]
    mean: Tensor  # E[alpha] over true tokens

    @property
    def expected(self):
        return self.mean.item()


def skewness(records, lengths):
    """Skewness of every true MT token in every MT self-attention layer/head."""
    if not records:
        raise ValueError("no attention records")
    lengths = np.asarray(lengths)
    if (lengths <= 0).any():
        raise ValueError("skewness is undefined for an empty sentence")
    B, H, L, _ = records[0].shape
    mirror = Tensor(mirror_matrix(lengths, L)[:, None])  # [B, 1, L, L]
    left = _left_mask(lengths, L)[:, None, None, :]
    qmask = length_mask(lengths, L)[:, None, :].astype(np.float64)
    total = None
    values = []
    for probs in records:
        diff = T.tsum((probs - T.matmul(probs, mirror)) * left, axis=-1)  # [B, H, L]
        sq = T.square(diff) * qmask
        values.append(sq.data)
        s = T.tsum(sq)
        total = s if total is None else total + s
    count = len(records) * H * int(lengths.sum())
    return SkewnessReport(np.stack(values, axis=1), T.scale(total, 1.0 / count))


def gate(v, weight, bias, lengths):
    """alpha[b, i] = sigmoid(weight . v[b, i] + bias) and its mean over true tokens."""
    if v.ndim != 3 or weight.shape != (v.shape[-1],) or bias.size != 1:
        raise ValueError(
            f"gate shape mismatch: v {v.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    B, L, d = v.shape
    lengths = np.asarray(lengths)
    logits = v @ weight.reshape(d, 1) + bias.reshape(1, 1, 1)
    alpha = T.sigmoid(logits).reshape(B, L)
    mask = length_mask(lengths, L).astype(np.float64)
    mean = T.scale(T.tsum(alpha * mask), 1.0 / int(lengths.sum()))
    return GateReport(alpha, mean)


@dataclass
class LossBreakdown:
    ce: Tensor
    total: Tensor
    e_alpha: Tensor | None = None
    e_skew: Tensor | None = None
    inducement: Tensor | None = None

    def as_dict(self):
        out = {"ce": self.ce.item()}
        if self.e_alpha is not None:
            out.update(
                e_alpha=self.e_alpha.item(),
                e_skew=self.e_skew.item(),
                inducement=self.inducement.item(),
                total=self.total.item(),
            )
        return out


def _mean_of(x):
    if isinstance(x, (GateReport, SkewnessReport)):
        return x.mean
    return x if isinstance(x, Tensor) else Tensor(float(x))


def doppelbaum_loss(ce, gates, skew):
    """Composite loss; ``gates``/``skew`` may be reports, Tensors or floats."""
    ce = _mean_of(ce)
    e_alpha = _mean_of(gates)
    e_skew = _mean_of(skew)
    inducement = 1.0 - e_alpha
    total = ce + e_alpha * e_skew + inducement
    return LossBreakdown(ce=ce, total=total, e_alpha=e_alpha, e_skew=e_skew, inducement=inducement)


def cross_entropy_smoothed(logits, targets, epsilon=0.1, mask=None):
    """Label-smoothed cross-entropy averaged over non-padding targets.

    The smoothed target puts ``1 - epsilon`` on the gold token and spreads
    ``epsilon`` evenly over the other ``V - 1`` tokens.
    """
    targets = np.asarray(targets)
    V = logits.shape[-1]
    if mask is None:
        mask = targets != PAD
    n_tokens = int(mask.sum())
    if n_tokens == 0:
        raise ValueError("no target tokens to score")
    if epsilon and V < 2:
        raise ValueError("label smoothing needs at least two classes")
    off = epsilon / (V - 1) if epsilon else 0.0
    q = np.full(targets.shape + (V,), off)
    np.put_along_axis(q, targets[..., None], 1.0 - epsilon, axis=-1)
    q *= mask[..., None]
    logp = T.log_softmax(logits)
    return T.scale(T.tsum(logp * q), -1.0 / n_tokens)


def compute_loss(model, batch, regularizer="doppelbaum", label_smoothing=0.1):
    """Forward ``batch`` and return its :class:`LossBreakdown`."""
    if regularizer not in REGULARIZERS:
        raise ValueError(f"unknown regularizer {regularizer!r}; choose from {REGULARIZERS}")
    out = model.forward(batch)
    ce = cross_entropy_smoothed(out.logits, batch.tgt_out, label_smoothing)
    if regularizer == "none":
        return LossBreakdown(ce=ce, total=ce)
    gates = gate(out.mt_output, model.params["gate.w"], model.params["gate.b"], batch.mt_len)
    skew = skewness(out.attention, batch.mt_len)
    return doppelbaum_loss(ce, gates, skew)


@dataclass
class AttentionSummary:
    tokens: int
    e_skew: float
    e_alpha: float
    per_head: list  # [layer][head] mean skewness

    def to_dict(self):
        return {"tokens": self.tokens, "e_skew": self.e_skew, "e_alpha": self.e_alpha,
                "per_head": self.per_head}

    def render(self):
        lines = [f"MT tokens  {self.tokens}",
                 f"E[alpha]   {self.e_alpha:.6f}",
                 f"E[skew]    {self.e_skew:.6f}"]
        for i, row in enumerate(self.per_head):
            lines.append(f"layer {i}    " + " ".join(f"{x:.6f}" for x in row))
        return "\n".join(lines) + "\n"


def attention_summary(model, batches):
    """Token-weighted skewness and gate statistics of ``model`` in eval mode.

    Works for either training variant: the gate parameters exist (unused)
    in a baseline model too.
    """
    was_training = model.training
    model.eval()
    skew_sum = None
    alpha_sum = 0.0
    tokens = 0
    with T.no_grad():
        for batch in batches:
            out = model.forward(batch)
            n = int(np.asarray(batch.mt_len).sum())
            rep = skewness(out.attention, batch.mt_len)
            per = rep.values.sum(axis=(0, 3))  # [layers, heads]
            skew_sum = per if skew_sum is None else skew_sum + per
            alpha_sum += gate(out.mt_output, model.params["gate.w"], model.params["gate.b"],
                              batch.mt_len).expected * n
            tokens += n
    model.train(was_training)
    if not tokens:
        raise ValueError("no MT tokens to analyze")
    per_head = skew_sum / tokens
    return AttentionSummary(tokens, float(per_head.mean()), alpha_sum / tokens, per_head.tolist())
