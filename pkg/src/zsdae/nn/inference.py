"""Graph-free incremental decoding with per-layer key/value caches.

Mirrors :class:`zsdae.nn.model.Transformer` exactly (same parameters, same
math) but computes one decoder position per call, which is what beam search
needs.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .model import ModelParams, Transformer


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    return xc / np.sqrt(var + eps) * g + b


def _softmax_masked(s, mask):
    s = np.where(mask, s, -np.inf)
    m = s.max(-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(s - m)
    z = e.sum(-1, keepdims=True)
    return e / np.where(z > 0, z, 1.0)


class IncrementalDecoder:
    def __init__(self, params: ModelParams):
        self.p = {k: v.data for k, v in params.items()}
        self.cfg = params.cfg
        self.pe = Transformer(params).pe
        self.H = self.cfg.n_heads
        self.dh = self.cfg.d_model // self.H

    def encode(self, src, src_mask):
        with ag.no_grad():
            return Transformer(self._as_params()).encode(src, src_mask).data

    def _as_params(self):
        from .autograd import Tensor

        return ModelParams(self.cfg, {k: Tensor(v) for k, v in self.p.items()})

    def _heads(self, x):
        N, T, d = x.shape
        return x.reshape(N, T, self.H, self.dh).transpose(0, 2, 1, 3)

    def start(self, memory, src_mask):
        """Decoder state for a batch of already-encoded sources."""
        p = self.p
        cross = []
        for i in range(self.cfg.dec_layers):
            pre = f"dec.{i}.cross"
            k = self._heads(memory @ p[pre + ".wk"] + p[pre + ".bk"])
            v = self._heads(memory @ p[pre + ".wv"] + p[pre + ".bv"])
            cross.append((k, v))
        return {"cross": cross, "self": [None] * self.cfg.dec_layers,
                "src_mask": src_mask[:, None, None, :], "t": 0}

    def reorder(self, state, index):
        """Select rows ``index`` of every cache (beam bookkeeping)."""
        return {
            "cross": [(k[index], v[index]) for k, v in state["cross"]],
            "self": [None if c is None else (c[0][index], c[1][index]) for c in state["self"]],
            "src_mask": state["src_mask"][index],
            "t": state["t"],
        }

    def step(self, state, tokens):
        """Log-probabilities (N, V) for the next token after feeding ``tokens`` (N,)."""
        p = self.p
        t = state["t"]
        if t >= self.cfg.max_len:
            raise ValueError("decoding past max_len")
        x = p["embed"][tokens][:, None, :] * math.sqrt(self.cfg.d_model) + self.pe[t]
        scale = 1.0 / math.sqrt(self.dh)
        new_self = []
        for i in range(self.cfg.dec_layers):
            pre = f"dec.{i}"
            h = _ln(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"])
            q = self._heads(h @ p[pre + ".self.wq"] + p[pre + ".self.bq"])
            k = self._heads(h @ p[pre + ".self.wk"] + p[pre + ".self.bk"])
            v = self._heads(h @ p[pre + ".self.wv"] + p[pre + ".self.bv"])
            cache = state["self"][i]
            if cache is not None:
                k = np.concatenate([cache[0], k], axis=2)
                v = np.concatenate([cache[1], v], axis=2)
            new_self.append((k, v))
            att = _softmax_masked((q @ k.transpose(0, 1, 3, 2)) * scale, True)
            ctx = (att @ v).transpose(0, 2, 1, 3).reshape(x.shape)
            x = x + ctx @ p[pre + ".self.wo"] + p[pre + ".self.bo"]

            h = _ln(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
            q = self._heads(h @ p[pre + ".cross.wq"] + p[pre + ".cross.bq"])
            ck, cv = state["cross"][i]
            att = _softmax_masked((q @ ck.transpose(0, 1, 3, 2)) * scale, state["src_mask"])
            ctx = (att @ cv).transpose(0, 2, 1, 3).reshape(x.shape)
            x = x + ctx @ p[pre + ".cross.wo"] + p[pre + ".cross.bo"]

            h = _ln(x, p[pre + ".ln3.g"], p[pre + ".ln3.b"])
            f = np.maximum(h @ p[pre + ".ffn.w1"] + p[pre + ".ffn.b1"], 0.0)
            x = x + f @ p[pre + ".ffn.w2"] + p[pre + ".ffn.b2"]
        x = _ln(x, p["dec.ln.g"], p["dec.ln.b"])
        logits = x[:, 0, :] @ p["embed"].T
        state["self"] = new_self
        state["t"] = t + 1
        return ag.log_softmax_np(logits)
