"""Tiny pre-norm encoder-decoder transformer on top of :mod:`zsdae.nn.autograd`."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    max_len: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    def to_dict(self):
        return asdict(self)


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; must match ``len`` of :func:`init_params`."""
    d, f = cfg.d_model, cfg.d_ff
    attn = 4 * (d * d + d)
    ffn = d * f + f + f * d + d
    ln = 2 * d
    enc = attn + ffn + 2 * ln
    dec = 2 * attn + ffn + 3 * ln
    return cfg.vocab_size * d + cfg.enc_layers * enc + cfg.dec_layers * dec + 2 * ln


class ModelParams(dict):
    """Named parameter map (``"enc.0.attn.wq"`` -> Tensor) plus its config."""

    def __init__(self, cfg: ModelConfig, tensors=None):
        super().__init__(tensors or {})
        self.cfg = cfg

    def n_params(self):
        return sum(t.data.size for t in self.values())

    def zero_grad(self):
        for t in self.values():
            t.grad = None

    def copy(self):
        return ModelParams(self.cfg, {
            k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.items()})

    def astype(self, dtype):
        return ModelParams(self.cfg, {
            k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.items()})


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.d_ff
    out = {}

    def xavier(name, fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        out[name] = rng.uniform(-lim, lim, size=(fan_in, fan_out))

    def zeros(name, n):
        out[name] = np.zeros(n)

    def ln(prefix):
        out[prefix + ".g"] = np.ones(d)
        zeros(prefix + ".b", d)

    def attn(prefix):
        for w in ("q", "k", "v", "o"):
            xavier(f"{prefix}.w{w}", d, d)
            zeros(f"{prefix}.b{w}", d)

    def ffn(prefix):
        xavier(prefix + ".w1", d, f)
        zeros(prefix + ".b1", f)
        xavier(prefix + ".w2", f, d)
        zeros(prefix + ".b2", d)

    out["embed"] = rng.normal(0.0, d ** -0.5, size=(cfg.vocab_size, d))
    for i in range(cfg.enc_layers):
        p = f"enc.{i}"
        ln(p + ".ln1")
        attn(p + ".attn")
        ln(p + ".ln2")
        ffn(p + ".ffn")
    ln("enc.ln")
    for i in range(cfg.dec_layers):
        p = f"dec.{i}"
        ln(p + ".ln1")
        attn(p + ".self")
        ln(p + ".ln2")
        attn(p + ".cross")
        ln(p + ".ln3")
        ffn(p + ".ffn")
    ln("dec.ln")
    return ModelParams(cfg, {
        k: Tensor(v.astype(dtype), requires_grad=True, name=k) for k, v in out.items()})


def sinusoidal(n_pos, d, dtype=np.float32):
    pos = np.arange(n_pos)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    pe = np.zeros((n_pos, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


@dataclass
class Batch:
    """Padded model inputs. ``*_mask`` arrays are True on real tokens."""

    src: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    src_mask: np.ndarray
    tgt_mask: np.ndarray

    @property
    def n_tokens(self):
        return int(self.tgt_mask.sum())


def make_batch(sources, targets, pad_id=0, bos_id=1, eos_id=2) -> Batch:
    """Pad (source, target) token lists; decoder input gets BOS, output gets EOS."""
    B = len(sources)
    S = max(len(s) for s in sources)
    T = max(len(t) for t in targets) + 1
    src = np.full((B, S), pad_id, dtype=np.int64)
    tin = np.full((B, T), pad_id, dtype=np.int64)
    tout = np.full((B, T), pad_id, dtype=np.int64)
    for b, (s, t) in enumerate(zip(sources, targets)):
        src[b, :len(s)] = s
        tin[b, 0] = bos_id
        tin[b, 1:len(t) + 1] = t
        tout[b, :len(t)] = t
        tout[b, len(t)] = eos_id
    src_mask = np.zeros((B, S), dtype=bool)
    tgt_mask = np.zeros((B, T), dtype=bool)
    for b, (s, t) in enumerate(zip(sources, targets)):
        src_mask[b, :len(s)] = True
        tgt_mask[b, :len(t) + 1] = True
    return Batch(src, tin, tout, src_mask, tgt_mask)


class Transformer:
    """Stateless forward functions over a :class:`ModelParams` map."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.cfg = params.cfg
        self.pe = sinusoidal(self.cfg.max_len, self.cfg.d_model, params["embed"].dtype)

    # -- building blocks ------------------------------------------------
    def _ln(self, x, prefix):
        p = self.params
        return ag.layer_norm(x, p[prefix + ".g"], p[prefix + ".b"])

    def _linear(self, x, w, b):
        return ag.matmul(x, self.params[w]) + self.params[b]

    def _attention(self, xq, xkv, mask, prefix, drop, rng, train):
        B, Tq, d = xq.shape
        Tk = xkv.shape[1]
        H = self.cfg.n_heads
        dh = d // H
        q = self._linear(xq, prefix + ".wq", prefix + ".bq").reshape(B, Tq, H, dh).transpose(0, 2, 1, 3)
        k = self._linear(xkv, prefix + ".wk", prefix + ".bk").reshape(B, Tk, H, dh).transpose(0, 2, 3, 1)
        v = self._linear(xkv, prefix + ".wv", prefix + ".bv").reshape(B, Tk, H, dh).transpose(0, 2, 1, 3)
        scores = ag.matmul(q, k) * (1.0 / math.sqrt(dh))
        att = ag.masked_softmax(scores, mask)
        ctx = ag.matmul(att, v).transpose(0, 2, 1, 3).reshape(B, Tq, d)
        return self._linear(ctx, prefix + ".wo", prefix + ".bo")

    def _ffn(self, x, prefix, drop, rng, train):
        h = self._linear(x, prefix + ".w1", prefix + ".b1").relu()
        return self._linear(h, prefix + ".w2", prefix + ".b2")

    def _embed(self, ids):
        T = ids.shape[1]
        if T > self.cfg.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.cfg.max_len}")
        scale = math.sqrt(self.cfg.d_model)
        return ag.embedding(self.params["embed"], ids) * scale + Tensor(self.pe[:T])

    # -- public -----------------------------------------------------------
    def encode(self, src, src_mask, dropout=0.0, rng=None, train=False):
        x = ag.dropout(self._embed(src), dropout, rng, train)
        mask = src_mask[:, None, None, :]
        for i in range(self.cfg.enc_layers):
            p = f"enc.{i}"
            x = x + ag.dropout(self._self_attn(x, p, mask, dropout, rng, train), dropout, rng, train)
            x = x + ag.dropout(self._ffn(self._ln(x, p + ".ln2"), p + ".ffn", dropout, rng, train),
                               dropout, rng, train)
        return self._ln(x, "enc.ln")

    def _self_attn(self, x, p, mask, dropout, rng, train, name=".attn", ln=".ln1"):
        h = self._ln(x, p + ln)
        return self._attention(h, h, mask, p + name, dropout, rng, train)

    def decode(self, tgt_in, memory, src_mask, dropout=0.0, rng=None, train=False):
        T = tgt_in.shape[1]
        causal = np.tril(np.ones((T, T), dtype=bool))[None, None]
        cross_mask = src_mask[:, None, None, :]
        x = ag.dropout(self._embed(tgt_in), dropout, rng, train)
        for i in range(self.cfg.dec_layers):
            p = f"dec.{i}"
            x = x + ag.dropout(self._self_attn(x, p, causal, dropout, rng, train, ".self", ".ln1"),
                               dropout, rng, train)
            h = self._ln(x, p + ".ln2")
            x = x + ag.dropout(self._attention(h, memory, cross_mask, p + ".cross", dropout, rng, train),
                               dropout, rng, train)
            x = x + ag.dropout(self._ffn(self._ln(x, p + ".ln3"), p + ".ffn", dropout, rng, train),
                               dropout, rng, train)
        x = self._ln(x, "dec.ln")
        # output projection tied to the embedding table
        return ag.matmul(x, self.params["embed"].transpose(1, 0))

    def forward(self, batch: Batch, dropout=0.0, rng=None, train=False):
        """Logits of shape (batch, tgt_len, vocab)."""
        if train and dropout > 0 and rng is None:
            raise ValueError("dropout in train mode needs an rng")
        memory = self.encode(batch.src, batch.src_mask, dropout, rng, train)
        return self.decode(batch.tgt_in, memory, batch.src_mask, dropout, rng, train)

    def loss(self, batch: Batch, label_smoothing=0.0, dropout=0.0, rng=None, train=False):
        logits = self.forward(batch, dropout, rng, train)
        return ag.cross_entropy(logits, batch.tgt_out, batch.tgt_mask, label_smoothing)
