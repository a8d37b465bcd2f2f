"""Decoding and scoring: beam search, corpus BLEU, language accuracy, pivoting."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .nn.inference import IncrementalDecoder
from .nn.model import ModelParams, make_batch
from .synthlang import BOS, EOS, PIVOT, DataError, Vocab


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple  # without the end token
    logprob: float
    finished: bool

    @property
    def length(self):
        return len(self.tokens) + (1 if self.finished else 0)

    @property
    def score(self):
        """Length-normalized log-probability (length penalty 1.0)."""
        return self.logprob / max(self.length, 1)


class UnfinishedBeamWarning(RuntimeWarning):
    pass


def decodable_mask(vocab_size, vocab: Vocab | None = None, n_reserved=3):
    """Tokens the decoder may emit: the end token plus all non-special ids."""
    allowed = np.ones(vocab_size, dtype=bool)
    reserved = (len(("<pad>", "<s>", "</s>", "[MASK]")) + vocab.n_tags) if vocab else n_reserved
    allowed[:reserved] = False
    allowed[EOS] = True
    return allowed


def beam_search_batch(params: ModelParams, sources, beam=5, max_len=None, allowed=None,
                      decoder=None):
    """Beam search for a list of already-tagged sources.

    ``max_len`` bounds generated tokens including the end token; it may be an
    int or a callable of the source length (default ``len(src) + 4``). At each
    step all expansions of the live hypotheses compete on raw log-probability;
    of the ``beam`` best, those ending in the end token are retired as
    finished and the rest stay live. On the last allowed step only the end
    token may be emitted. The result is the finished hypothesis with the best
    length-normalized score (an unfinished one, with a warning, if the end
    token is not decodable).
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    n = len(sources)
    if n == 0:
        return []
    dec = decoder or IncrementalDecoder(params)
    V = params.cfg.vocab_size
    if allowed is None:
        allowed = decodable_mask(V)
    allowed_ids = np.flatnonzero(allowed)
    content_ids = allowed_ids[allowed_ids != EOS]
    eos_ok = bool(allowed[EOS])
    if max_len is None:
        limits = [len(s) + 4 for s in sources]
    elif callable(max_len):
        limits = [int(max_len(len(s))) for s in sources]
    else:
        limits = [int(max_len)] * n
    limits = [max(1, min(l, params.cfg.max_len)) for l in limits]

    b = make_batch([list(s) for s in sources], [[0]] * n)
    state = dec.start(dec.encode(b.src, b.src_mask), b.src_mask)

    live = [[((), 0.0)] for _ in range(n)]
    finished = [[] for _ in range(n)]
    unfinished = [[] for _ in range(n)]
    active = list(range(n))
    step = 0
    while active:
        last = np.array([h[-1] if h else BOS for i in active for h, _ in live[i]])
        lp = dec.step(state, last)
        keep_rows = []
        next_active = []
        row = 0
        for i in active:
            hyps = live[i]
            k = len(hyps)
            block = lp[row:row + k]
            base = np.array([s for _, s in hyps])
            final = step + 1 >= limits[i]
            ids = np.array([EOS] if eos_ok else [], dtype=np.int64)
            if not final or not eos_ok:
                ids = np.concatenate([ids, content_ids])
            cand = (base[:, None] + block[:, ids]).reshape(-1)
            hyp_idx = np.repeat(np.arange(k), len(ids))
            tok = np.tile(ids, k)
            order = np.lexsort((tok, hyp_idx, -cand))[:beam]
            new = []
            for o in order:
                toks = hyps[hyp_idx[o]][0]
                if tok[o] == EOS:
                    finished[i].append(BeamHypothesis(toks, float(cand[o]), True))
                else:
                    new.append((toks + (int(tok[o]),), float(cand[o])))
                    keep_rows.append(row + hyp_idx[o])
            if final:
                # only reachable without a decodable end token
                unfinished[i].extend(BeamHypothesis(t, s, False) for t, s in new)
                keep_rows = keep_rows[:len(keep_rows) - len(new)]
                new = []
            live[i] = new
            if new:
                next_active.append(i)
            row += k
        active = next_active
        if active:
            state = dec.reorder(state, np.array(keep_rows))
        step += 1

    results = []
    for i in range(n):
        pool = finished[i]
        if not pool:
            warnings.warn("no finished hypothesis within max_len", UnfinishedBeamWarning)
            pool = unfinished[i]
        results.append(_best(pool))
    return results


def _best(pool):
    # ties broken toward the lexicographically smallest token sequence
    return min(pool, key=lambda h: (-h.score, h.tokens))


def beam_search(params, src_tokens, tgt_lang_tag, beam=5, max_len=None, allowed=None):
    """Best hypothesis for one untagged source; ``tgt_lang_tag`` is prepended."""
    if allowed is not None and tgt_lang_tag < 0:
        raise DataError("unknown language tag")
    return beam_search_batch(params, [(tgt_lang_tag, *src_tokens)], beam, max_len, allowed)[0]


def greedy_decode(params, sources, max_len=None, allowed=None):
    """Argmax decoding under the same length rule as :func:`beam_search_batch`."""
    dec = IncrementalDecoder(params)
    V = params.cfg.vocab_size
    allowed = decodable_mask(V) if allowed is None else allowed
    n = len(sources)
    if max_len is None:
        limits = [len(s) + 4 for s in sources]
    else:
        limits = [int(max_len)] * n
    limits = [max(1, min(l, params.cfg.max_len)) for l in limits]
    b = make_batch([list(s) for s in sources], [[0]] * n)
    state = dec.start(dec.encode(b.src, b.src_mask), b.src_mask)
    out = [[] for _ in range(n)]
    lps = [0.0] * n
    done = [False] * n
    fin = [False] * n
    last = np.full(n, BOS)
    masked = np.where(allowed, 0.0, -np.inf)
    for step in range(max(limits)):
        lp = dec.step(state, last)
        nxt = np.argmax(lp + masked, axis=-1)
        for i in range(n):
            if done[i]:
                continue
            if step + 1 >= limits[i] and allowed[EOS]:
                nxt[i] = EOS
            lps[i] += float(lp[i, nxt[i]])
            if nxt[i] == EOS:
                done[i] = fin[i] = True
            else:
                out[i].append(int(nxt[i]))
                done[i] = step + 1 >= limits[i]
        last = nxt
        if all(done):
            break
    return [BeamHypothesis(tuple(o), l, f) for o, l, f in zip(out, lps, fin)]


# -- BLEU ---------------------------------------------------------------------------

BLEU_EPS = 1e-9


@dataclass(frozen=True)
class BleuReport:
    score: float
    precisions: tuple
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def _ngram_counts(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu(hypotheses, references, max_n=4) -> BleuReport:
    """Corpus-level BLEU over token sequences; one reference per hypothesis.

    Zero match counts are floored to a precision of ``BLEU_EPS``.
    """
    if len(hypotheses) != len(references):
        raise DataError("hypotheses and references differ in length")
    if not hypotheses:
        raise DataError("empty corpus")
    match = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hypotheses, references):
        h, r = list(h), list(r)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngram_counts(h, n), _ngram_counts(r, n)
            match[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(h) - n + 1, 0)
    prec = tuple(m / t if m > 0 else BLEU_EPS for m, t in zip(match, total))
    if hyp_len == 0:
        bp = 0.0
    else:
        bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    score = 100.0 * bp * math.exp(sum(math.log(p) for p in prec) / max_n) if bp > 0 else 0.0
    return BleuReport(score, prec, bp, hyp_len, ref_len)


# -- language identity ------------------------------------------------------------

def is_on_target(hyp, expected_lang, vocab: Vocab) -> bool:
    content = [t for t in hyp if not vocab.is_special(t)]
    if not content:
        return False
    hits = sum(1 for t in content if vocab.token_lang(t) == expected_lang)
    return 2 * hits > len(content)


def language_accuracy(hypotheses, expected_lang, vocab: Vocab) -> float:
    """Fraction of hypotheses whose tokens are mostly from ``expected_lang``."""
    if expected_lang not in vocab.langs:
        raise DataError(f"unknown language {expected_lang!r}")
    if not hypotheses:
        raise DataError("no hypotheses")
    return sum(is_on_target(h, expected_lang, vocab) for h in hypotheses) / len(hypotheses)


# -- corpus-level helpers -----------------------------------------------------------

def translate(params, examples, beam=5, vocab=None, batch_size=256):
    """Decode the (tagged) sources of ``examples``; returns token tuples."""
    allowed = decodable_mask(params.cfg.vocab_size, vocab)
    dec = IncrementalDecoder(params)
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = [e.src_tokens for e in examples[i:i + batch_size]]
        out.extend(h.tokens for h in beam_search_batch(params, chunk, beam, None, allowed, dec))
    return out


def pivot_translate(params, src_tokens, src_lang, tgt_lang, vocab: Vocab, beam=5):
    """Two-step decoding src -> en -> tgt for one untagged source."""
    return pivot_translate_batch(params, [src_tokens], src_lang, tgt_lang, vocab, beam)[0]


def pivot_translate_batch(params, sources, src_lang, tgt_lang, vocab: Vocab, beam=5, batch_size=256):
    if src_lang == PIVOT or tgt_lang == PIVOT:
        raise DataError("pivoting needs non-English source and target")
    allowed = decodable_mask(params.cfg.vocab_size, vocab)
    dec = IncrementalDecoder(params)

    def run(srcs, tag):
        res = []
        for i in range(0, len(srcs), batch_size):
            chunk = [(tag, *s) for s in srcs[i:i + batch_size]]
            res.extend(h.tokens for h in beam_search_batch(params, chunk, beam, None, allowed, dec))
        return res

    english = run([tuple(s) for s in sources], vocab.tag(PIVOT))
    return run(english, vocab.tag(tgt_lang))


def evaluate_directions(params, sets, vocab: Vocab, beam=5, pivot=False, limit=None,
                        keep_hypotheses=False):
    """Per-direction BLEU and language accuracy plus unweighted zero/parallel means.

    ``zero_pooled`` is one corpus BLEU over the concatenated zero-shot sets.
    """
    report = {"directions": {}}
    pooled_h, pooled_r = [], []
    for (s, t), exs in sorted(sets.items()):
        exs = exs[:limit] if limit else exs
        if pivot and PIVOT not in (s, t):
            hyps = pivot_translate_batch(params, [e.src_tokens[1:] for e in exs], s, t, vocab, beam)
        else:
            hyps = translate(params, exs, beam, vocab)
        refs = [e.tgt_tokens for e in exs]
        zero_shot = PIVOT not in (s, t)
        entry = {
            "bleu": corpus_bleu(hyps, refs).score,
            "lang_acc": language_accuracy(hyps, t, vocab),
            "n": len(exs),
            "zero_shot": zero_shot,
        }
        if keep_hypotheses:
            entry["hypotheses"] = [list(h) for h in hyps]
        report["directions"][f"{s}-{t}"] = entry
        if zero_shot:
            pooled_h.extend(hyps)
            pooled_r.extend(refs)
    report.update(aggregate(report["directions"]))
    report["zero_pooled"] = corpus_bleu(pooled_h, pooled_r).score if pooled_h else None
    return report


def aggregate(directions):
    zero = [d["bleu"] for d in directions.values() if d["zero_shot"]]
    par = [d["bleu"] for d in directions.values() if not d["zero_shot"]]
    acc = [d["lang_acc"] for d in directions.values() if d["zero_shot"]]
    return {
        "zero_avg": float(np.mean(zero)) if zero else None,
        "parallel_avg": float(np.mean(par)) if par else None,
        "zero_lang_acc": float(np.mean(acc)) if acc else None,
    }


def language_distribution(hypotheses, vocab: Vocab) -> dict:
    """Share of hypotheses by majority output language (``"mixed"`` / ``"empty"`` otherwise)."""
    counts = Counter()
    for h in hypotheses:
        content = [vocab.token_lang(t) for t in h if not vocab.is_special(t)]
        if not content:
            counts["empty"] += 1
            continue
        lang, n = Counter(content).most_common(1)[0]
        counts[lang if 2 * n > len(content) else "mixed"] += 1
    total = max(len(hypotheses), 1)
    return {k: v / total for k, v in sorted(counts.items())}
