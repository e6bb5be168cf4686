"""Central finite-difference check of the model's analytic gradients."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import TripleExample, make_batch
from .model import BOS, EOS, APETransformer, ModelConfig
from .symmetry import compute_loss

CORRUPTIBLE = ("softmax", "sigmoid", "layer_norm", "matmul", "relu", "embedding", "log_softmax")


@dataclass
class Probe:
    tensor: str
    kind: str  # "direction" or "coord[i]"
    analytic: float
    numeric: float

    @property
    def rel_error(self):
        # floor: FD roundoff is ~1e-11, exactly-zero gradients (e.g. key biases) must not blow up
        denom = max(abs(self.analytic), abs(self.numeric), 1e-6)
        return abs(self.analytic - self.numeric) / denom


@dataclass
class GradcheckReport:
    regularizer: str
    seed: int
    tolerance: float
    probes: list = field(default_factory=list)
    skipped_kinks: int = 0

    @property
    def max_rel_error(self):
        return max((p.rel_error for p in self.probes), default=0.0)

    @property
    def failures(self):
        return [p for p in self.probes if p.rel_error > self.tolerance]

    @property
    def passed(self):
        return bool(self.probes) and not self.failures

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} regularizer={self.regularizer} seed={self.seed} "
                f"probes={len(self.probes)} max_rel_error={self.max_rel_error:.3e} "
                f"kinks_skipped={self.skipped_kinks}")


@contextlib.contextmanager
def corrupted_backward(op_name, factor=1.5):
    """Temporarily scale the backward pass of one tensor op (negative control)."""
    if op_name not in CORRUPTIBLE:
        raise ValueError(f"cannot corrupt {op_name!r}; choose from {CORRUPTIBLE}")
    original = getattr(T, op_name)

    def wrapped(*args, **kwargs):
        out = original(*args, **kwargs)
        if out._backward is not None:
            bw = out._backward
            out._backward = lambda g: tuple(None if x is None else x * factor for x in bw(g))
        return out

    setattr(T, op_name, wrapped)
    try:
        yield
    finally:
        setattr(T, op_name, original)


def random_batch(vocab_size, rng, batch_size=2, min_len=2, max_len=5):
    examples = []
    for _ in range(batch_size):
        lx, lz, ly = rng.integers(min_len, max_len + 1, size=3)
        examples.append(TripleExample(
            "", "", "",
            rng.integers(4, vocab_size, lx),
            rng.integers(4, vocab_size, lz),
            np.concatenate([[BOS], rng.integers(4, vocab_size, ly), [EOS]]),
        ))
    return make_batch(examples)


def gradcheck(model, batch, regularizer="doppelbaum", label_smoothing=0.1, step=1e-4,
              tolerance=1e-4, coords_per_tensor=3, seed=0, max_retries=5):
    """Compare backprop gradients with central differences for every parameter.

    Each parameter tensor gets one random-direction probe (covering every
    entry at once) and ``coords_per_tensor`` single-coordinate probes.
    Dropout masks are frozen by reseeding before every evaluation; probes whose
    +/- step flips any ReLU are redrawn, since the loss is not differentiable
    across a kink.
    """
    rng = np.random.default_rng(seed)
    report = GradcheckReport(regularizer, seed, tolerance)

    def loss_value():
        model.rng = np.random.default_rng(seed)
        with T.no_grad(), T.relu_probe() as pattern:
            v = compute_loss(model, batch, regularizer, label_smoothing).total.item()
        return v, pattern

    model.train()
    model.zero_grad()
    model.rng = np.random.default_rng(seed)
    with T.relu_probe() as base_pattern:
        compute_loss(model, batch, regularizer, label_smoothing).total.backward()
    grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for k, p in model.params.items()}

    def same_kinks(pattern):
        return len(pattern) == len(base_pattern) and all(
            np.array_equal(a, b) for a, b in zip(pattern, base_pattern))

    def central(param, direction):
        original = param.data.copy()
        try:
            param.data = original + step * direction
            plus, pat_p = loss_value()
            param.data = original - step * direction
            minus, pat_m = loss_value()
        finally:
            param.data = original
        if not (same_kinks(pat_p) and same_kinks(pat_m)):
            return None
        return (plus - minus) / (2.0 * step)

    for name in sorted(model.params):
        param = model.params[name]
        g = grads[name]
        kinds = ["direction"] + ["coord"] * coords_per_tensor
        for kind in kinds:
            for _ in range(max_retries):
                if kind == "direction":
                    d = rng.standard_normal(param.shape)
                    d /= np.linalg.norm(d)
                    label = "direction"
                else:
                    flat = int(rng.integers(param.size))
                    d = np.zeros(param.size)
                    d[flat] = 1.0
                    d = d.reshape(param.shape)
                    label = f"coord[{flat}]"
                numeric = central(param, d)
                if numeric is None:
                    report.skipped_kinks += 1
                    continue
                report.probes.append(Probe(name, label, float((g * d).sum()), numeric))
                break
    model.zero_grad()
    return report


def desk_gradcheck(regularizer, seed, tolerance=1e-4, vocab_size=24, config=None, **kwargs):
    """Gradient check of a freshly initialized desk-sized model on a random batch."""
    cfg = config or ModelConfig(vocab_size=vocab_size)
    model = APETransformer(cfg, seed=seed)
    batch = random_batch(cfg.vocab_size, np.random.default_rng(seed + 7919))
    return gradcheck(model, batch, regularizer, tolerance=tolerance, seed=seed, **kwargs)
