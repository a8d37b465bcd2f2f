"""Text-infilling corruption for building the English denoising corpus."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .synthlang import MASK, PIVOT, DataError, ConfigError, Vocab, format_record

NOISED_LANG = "en-noised"


@dataclass(frozen=True)
class NoiseConfig:
    mask_ratio: float = 0.30
    poisson_lambda: float = 3.0
    mask_token: int = MASK
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio must be in [0, 1)")
        if self.poisson_lambda <= 0:
            raise ConfigError("poisson_lambda must be positive")


@dataclass(frozen=True)
class NoisedExample:
    noised: tuple
    clean: tuple
    tgt_lang: str = PIVOT
    # (position, drawn length, applied length) per span, in sampling order
    spans: tuple = field(default=(), compare=False)

    @property
    def n_removed(self):
        return sum(s[2] for s in self.spans)


def mask_budget(n: int, ratio: float) -> int:
    if n < 2:
        return 0
    return int(math.floor(ratio * n + 0.5))


def noise(tokens, cfg: NoiseConfig, rng: np.random.Generator) -> NoisedExample:
    """Replace Poisson-length spans with one mask each until the budget is spent.

    Span starts are drawn uniformly from positions not yet covered. A span
    stops at the sequence end, at the next covered position, or when the
    remaining budget runs out; a zero-length draw inserts a mask before the
    chosen position.
    """
    tokens = tuple(int(t) for t in tokens)
    if not tokens:
        raise DataError("cannot noise an empty sequence")
    if cfg.mask_token in tokens:
        raise DataError("input already contains the mask token")
    n = len(tokens)
    budget = mask_budget(n, cfg.mask_ratio)
    covered = np.zeros(n, dtype=bool)
    span_at = {}
    inserts = {}
    spans = []
    removed = 0
    while removed < budget:
        drawn = int(rng.poisson(cfg.poisson_lambda))
        free = np.flatnonzero(~covered)
        start = int(free[rng.integers(len(free))])
        length = min(drawn, budget - removed)
        end = start
        while end < n and end - start < length and not covered[end]:
            end += 1
        applied = end - start
        if applied == 0:
            inserts[start] = inserts.get(start, 0) + 1
        else:
            covered[start:end] = True
            span_at[start] = applied
            removed += applied
        spans.append((start, drawn, applied))

    out = []
    i = 0
    while i < n:
        out.extend([cfg.mask_token] * inserts.get(i, 0))
        if i in span_at:
            out.append(cfg.mask_token)
            # inserts falling inside a span stay attached to it
            for j in range(i + 1, i + span_at[i]):
                out.extend([cfg.mask_token] * inserts.get(j, 0))
            i += span_at[i]
        else:
            out.append(tokens[i])
            i += 1
    return NoisedExample(tuple(out), tokens, PIVOT, tuple(spans))


def english_sentences(bundle, directions=None) -> list:
    """Distinct English sides of the training set, in first-seen order.

    ``directions`` restricts the scan to those (src, tgt) pairs.
    """
    wanted = None if directions is None else {tuple(d) for d in directions}
    seen = {}
    for e in bundle.train:
        if wanted is not None and (e.src_lang, e.tgt_lang) not in wanted:
            continue
        if e.src_lang == PIVOT:
            seen.setdefault(tuple(e.src_tokens[1:]), None)
        if e.tgt_lang == PIVOT:
            seen.setdefault(tuple(e.tgt_tokens), None)
    return list(seen)


def build_denoising_corpus(bundle, cfg: NoiseConfig, directions=None) -> list:
    sents = english_sentences(bundle, directions)
    if not sents:
        raise DataError("bundle has no English training sentences")
    rng = np.random.default_rng(cfg.seed)
    return [noise(s, cfg, rng) for s in sents]


def model_source(ex: NoisedExample, vocab: Vocab) -> tuple:
    """Noised side as fed to the model, tagged with ``<2en>``."""
    return (vocab.tag(PIVOT), *ex.noised)


def write_denoising_corpus(path, corpus, vocab: Vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus:
            fh.write(format_record(NOISED_LANG, PIVOT, model_source(ex, vocab), ex.clean, vocab) + "\n")


def read_denoising_corpus(path, vocab: Vocab) -> list:
    from .synthlang import parse_record

    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            sl, tl, src, tgt = parse_record(line, vocab)
            if sl != NOISED_LANG or tl != PIVOT or src[:1] != (vocab.tag(PIVOT),):
                raise DataError("not a denoising record")
            out.append(NoisedExample(src[1:], tgt, PIVOT))
    return out
