"""Multi-encoder transformer for automatic postediting.

Two encoders feed one decoder:

* the source encoder is a plain post-norm transformer encoder over the
  source sentence and yields ``u``;
* the MT encoder runs self-attention over the MT sentence, then attends to
  ``u``, then a feed-forward block, and yields ``v``. Its self-attention
  distributions are returned so the symmetry regularizer can read them;
* the decoder runs masked self-attention and then two cross-attention
  branches, one over ``u`` and one over ``v``, which are merged by
  elementwise mean before the feed-forward block.

A single embedding table is shared by all three token streams and by the
output projection.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3

CHECKPOINT_MAGIC = b"DOPPELBAUM-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 2
    d_model: int = 64
    d_ff: int = 128
    dropout: float = 0.1
    vocab_size: int = 1000
    max_len: int = 128
    d_k: int | None = None
    d_v: int | None = None

    def __post_init__(self):
        if self.d_k is None:
            self.d_k = self.d_model // max(self.num_heads, 1)
        if self.d_v is None:
            self.d_v = self.d_k
        dims = (self.num_layers, self.num_heads, self.d_model, self.d_ff,
                self.vocab_size, self.max_len, self.d_k, self.d_v)
        if any(int(d) <= 0 for d in dims):
            raise ValueError(f"model dimensions must be positive: {self}")
        if self.d_model != self.num_heads * self.d_k or self.d_v != self.d_k:
            raise ValueError(
                f"d_model ({self.d_model}) must equal num_heads*d_k "
                f"({self.num_heads}*{self.d_k}) with d_v == d_k"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ForwardOutput:
    logits: Tensor
    mt_output: Tensor
    attention: list = field(default_factory=list)
    mt_lengths: np.ndarray | None = None


def sinusoid_table(max_len, d_model):
    pos = np.arange(max_len)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def length_mask(lengths, max_len):
    """Boolean [B, L] mask, True on real (unpadded) positions."""
    return np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]


def _xavier(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(config, rng):
    """Fresh parameter dictionary, name -> leaf Tensor."""
    d, f = config.d_model, config.d_ff
    params = {}

    def add(name, value):
        params[name] = Tensor(value, requires_grad=True, name=name)

    def linear(prefix, fan_in, fan_out):
        add(prefix + ".w", _xavier(rng, fan_in, fan_out))
        add(prefix + ".b", np.zeros(fan_out))

    def attention(prefix):
        for proj in ("q", "k", "v", "o"):
            linear(f"{prefix}.{proj}", d, d)

    def norm(prefix):
        add(prefix + ".g", np.ones(d))
        add(prefix + ".b", np.zeros(d))

    def ffn(prefix):
        linear(prefix + ".l1", d, f)
        linear(prefix + ".l2", f, d)

    add("embed", rng.normal(0.0, d ** -0.5, size=(config.vocab_size, d)))
    for n in range(config.num_layers):
        p = f"src.{n}"
        attention(p + ".self")
        norm(p + ".ln1")
        ffn(p + ".ffn")
        norm(p + ".ln2")
    for n in range(config.num_layers):
        p = f"mt.{n}"
        attention(p + ".self")
        norm(p + ".ln1")
        attention(p + ".cross")
        norm(p + ".ln2")
        ffn(p + ".ffn")
        norm(p + ".ln3")
    for n in range(config.num_layers):
        p = f"dec.{n}"
        attention(p + ".self")
        norm(p + ".ln1")
        attention(p + ".cross_src")
        attention(p + ".cross_mt")
        norm(p + ".ln2")
        ffn(p + ".ffn")
        norm(p + ".ln3")
    add("gate.w", rng.normal(0.0, d ** -0.5, size=(d,)))
    add("gate.b", np.zeros(1))
    return params


def merge_mean(a, b):
    return T.scale(a + b, 0.5)


class APETransformer:
    """Joint-final multi-encoder / parallel decoder transformer."""

    def __init__(self, config, seed=0):
        self.config = config
        self.params = init_params(config, np.random.default_rng(seed))
        self.training = False
        self.rng = np.random.default_rng(seed + 1)
        self.pe = sinusoid_table(config.max_len, config.d_model)
        self.merge = merge_mean
        # test hook: maps MT self-attention scores before the softmax
        self.mt_score_hook = None

    # -- bookkeeping --------------------------------------------------------

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"state mismatch on keys: {sorted(missing)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    # -- building blocks ----------------------------------------------------

    def _drop(self, x):
        return T.dropout(x, self.config.dropout, self.rng, self.training)

    def _linear(self, x, prefix):
        return x @ self.params[prefix + ".w"] + self.params[prefix + ".b"]

    def _norm(self, x, prefix):
        return T.layer_norm(x, self.params[prefix + ".g"], self.params[prefix + ".b"])

    def _ffn(self, x, prefix):
        h = T.relu(self._linear(x, prefix + ".l1"))
        return self._linear(self._drop(h), prefix + ".l2")

    def _split_heads(self, x):
        B, L, _ = x.shape
        H, dk = self.config.num_heads, self.config.d_k
        return x.reshape(B, L, H, dk).transpose(0, 2, 1, 3)

    def _attention(self, query, memory, key_mask, prefix, causal=False, score_hook=None):
        """Multi-head attention; returns (output, post-softmax probabilities)."""
        B, Lq, _ = query.shape
        Lk = memory.shape[1]
        q = self._split_heads(self._linear(query, prefix + ".q"))
        k = self._split_heads(self._linear(memory, prefix + ".k"))
        v = self._split_heads(self._linear(memory, prefix + ".v"))
        scores = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(self.config.d_k))
        if score_hook is not None:
            scores = score_hook(scores)
        mask = key_mask[:, None, None, :]
        if causal:
            mask = mask & np.tril(np.ones((Lq, Lk), dtype=bool))[None, None]
        probs = T.softmax(scores, mask=mask)
        ctx = self._drop(probs) @ v
        ctx = ctx.transpose(0, 2, 1, 3).reshape(B, Lq, self.config.d_model)
        return self._linear(ctx, prefix + ".o"), probs

    def _embed(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"expected a [batch, length] id array, got shape {ids.shape}")
        L = ids.shape[1]
        if L > self.config.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {self.config.max_len}")
        x = T.scale(T.embedding(self.params["embed"], ids), math.sqrt(self.config.d_model))
        return self._drop(x + self.pe[None, :L])

    def _sublayer(self, x, y, prefix):
        return self._norm(x + self._drop(y), prefix)

    # -- public passes ------------------------------------------------------

    def encode_source(self, x, x_len):
        """Source encoder: ids [B, Lx] -> u [B, Lx, d_model]."""
        x_mask = length_mask(x_len, np.shape(x)[1])
        h = self._embed(x)
        for n in range(self.config.num_layers):
            p = f"src.{n}"
            a, _ = self._attention(h, h, x_mask, p + ".self")
            h = self._sublayer(h, a, p + ".ln1")
            h = self._sublayer(h, self._ffn(h, p + ".ffn"), p + ".ln2")
        return h

    def encode_mt(self, z, z_len, u, x_len):
        """MT encoder: returns (v, per-layer self-attention [B, H, Lz, Lz])."""
        z = np.asarray(z)
        if z.shape[0] != u.shape[0]:
            raise ValueError(f"batch size mismatch: MT {z.shape[0]} vs source {u.shape[0]}")
        z_mask = length_mask(z_len, z.shape[1])
        x_mask = length_mask(x_len, u.shape[1])
        h = self._embed(z)
        records = []
        for n in range(self.config.num_layers):
            p = f"mt.{n}"
            a, probs = self._attention(h, h, z_mask, p + ".self", score_hook=self.mt_score_hook)
            records.append(probs)
            h = self._sublayer(h, a, p + ".ln1")
            c, _ = self._attention(h, u, x_mask, p + ".cross")
            h = self._sublayer(h, c, p + ".ln2")
            h = self._sublayer(h, self._ffn(h, p + ".ffn"), p + ".ln3")
        return h, records

    def parallel_cross(self, h, u, x_mask, v, z_mask, prefix):
        """Both decoder cross-attention branches; returns (merged, branch_u, branch_v)."""
        a_src, _ = self._attention(h, u, x_mask, prefix + ".cross_src")
        a_mt, _ = self._attention(h, v, z_mask, prefix + ".cross_mt")
        return self.merge(a_src, a_mt), a_src, a_mt

    def decode(self, y_prefix, y_len, u, x_len, v, z_len):
        """Decoder logits [B, Ly, vocab] for a BOS-initial prefix batch."""
        y_prefix = np.asarray(y_prefix)
        if y_prefix.ndim != 2 or y_prefix.shape[1] == 0:
            raise ValueError("decoder prefix must be non-empty (it starts with BOS)")
        if not (y_prefix.shape[0] == u.shape[0] == v.shape[0]):
            raise ValueError("batch size mismatch between prefix and encoder outputs")
        y_mask = length_mask(y_len, y_prefix.shape[1])
        x_mask = length_mask(x_len, u.shape[1])
        z_mask = length_mask(z_len, v.shape[1])
        h = self._embed(y_prefix)
        for n in range(self.config.num_layers):
            p = f"dec.{n}"
            a, _ = self._attention(h, h, y_mask, p + ".self", causal=True)
            h = self._sublayer(h, a, p + ".ln1")
            merged, _, _ = self.parallel_cross(h, u, x_mask, v, z_mask, p)
            h = self._sublayer(h, merged, p + ".ln2")
            h = self._sublayer(h, self._ffn(h, p + ".ffn"), p + ".ln3")
        return h @ self.params["embed"].transpose(1, 0)

    def forward(self, batch):
        """Full pass over a :class:`~doppelbaum.data.Batch`."""
        if batch.size == 0:
            raise ValueError("empty batch")
        u = self.encode_source(batch.src, batch.src_len)
        v, records = self.encode_mt(batch.mt, batch.mt_len, u, batch.src_len)
        logits = self.decode(batch.tgt_in, batch.tgt_len, u, batch.src_len, v, batch.mt_len)
        return ForwardOutput(logits=logits, mt_output=v, attention=records,
                             mt_lengths=np.asarray(batch.mt_len))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model, path, meta=None):
    """Write config + every named parameter as raw little-endian float64.

    Layout: magic line, one JSON header line, then the arrays back to back in
    header order. Output is byte-deterministic for a given model.
    """
    names = sorted(model.params)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (model, meta)."""
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        model = APETransformer(ModelConfig(**header["config"]))
        state = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError(f"{path}: truncated at tensor {entry['name']}")
            state[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    model.load_state_dict(state)
    return model, header["meta"]


def parameter_digest(model):
    h = hashlib.sha256()
    for n in sorted(model.params):
        h.update(n.encode())
        h.update(model.params[n].data.tobytes())
    return h.hexdigest()
