import math

import numpy as np
import pytest

from oracles import exhaustive_decode, naive_bleu, peaked_tiny_params, rand_corpus, sequence_logprob
from zsdae.evaluation import (
    BLEU_EPS, UnfinishedBeamWarning, aggregate, beam_search, beam_search_batch, corpus_bleu,
    decodable_mask, greedy_decode, is_on_target, language_accuracy, pivot_translate,
)
from zsdae.synthlang import DataError, Vocab

# -- BLEU ----------------------------------------------------------------------------


def test_bleu_hand_case():
    rep = corpus_bleu([[1, 2, 3, 4, 5, 6]], [[1, 2, 3, 4, 5, 7]])
    assert rep.precisions == pytest.approx((5 / 6, 4 / 5, 3 / 4, 2 / 3))
    assert rep.brevity_penalty == 1.0
    assert rep.score == pytest.approx(100 * (1 / 3) ** 0.25, abs=1e-9)
    assert round(rep.score, 2) == 75.98


def test_bleu_identical_is_100():
    assert corpus_bleu([[4, 5, 6, 7]] * 3, [[4, 5, 6, 7]] * 3).score == pytest.approx(100.0)


def test_bleu_clipping():
    rep = corpus_bleu([[1, 1, 1, 1]], [[1, 2, 3, 4]])
    assert rep.precisions[0] == pytest.approx(0.25)


def test_bleu_zero_match_floor_and_empty_hyp():
    rep = corpus_bleu([[9, 9, 9, 9]], [[1, 2, 3, 4]])
    assert rep.precisions == (BLEU_EPS,) * 4
    assert 0 < rep.score < 1e-6
    assert corpus_bleu([[]], [[1, 2]]).score == 0.0


def test_bleu_brevity_penalty():
    rep = corpus_bleu([[1, 2, 3]], [[1, 2, 3, 4, 5, 6]])
    assert rep.brevity_penalty == pytest.approx(math.exp(1 - 6 / 3))


def test_bleu_errors():
    with pytest.raises(DataError):
        corpus_bleu([[1]], [])
    with pytest.raises(DataError):
        corpus_bleu([], [])


def test_bleu_matches_naive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(40):
        hyps, refs = rand_corpus(rng, int(rng.integers(1, 12)))
        assert abs(corpus_bleu(hyps, refs).score - naive_bleu(hyps, refs)) < 1e-6


# -- beam search ----------------------------------------------------------------------

def _allowed(vocab):
    return decodable_mask(vocab)


@pytest.mark.parametrize("vocab,max_len", [(7, 2), (4, 4), (4, 3), (5, 2)])
def test_beam_matches_exhaustive_when_search_is_complete(vocab, max_len):
    # EOS + at most 4 content tokens fit a beam of 5 for two steps;
    # one content token never overflows it
    for seed in range(6):
        p = peaked_tiny_params(seed, vocab)
        src = [3 + (seed % (vocab - 3)), 3]
        hyp = beam_search_batch(p, [src], beam=5, max_len=max_len)[0]
        toks, score = exhaustive_decode(p, src, list(range(3, vocab)), max_len)
        assert hyp.tokens == toks
        assert hyp.score == pytest.approx(score, abs=1e-9)


def test_beam_never_beats_exhaustive():
    for seed in range(8):
        p = peaked_tiny_params(seed, 8)
        src = [4, 5, 6]
        hyp = beam_search_batch(p, [src], beam=5, max_len=4)[0]
        _, best = exhaustive_decode(p, src, list(range(3, 8)), 4)
        assert hyp.score <= best + 1e-12


def test_beam_scores_are_true_logprobs():
    p = peaked_tiny_params(1, 8)
    hyp = beam_search_batch(p, [[4, 5]], beam=3, max_len=5)[0]
    assert hyp.finished
    assert hyp.logprob == pytest.approx(sequence_logprob(p, [4, 5], hyp.tokens), abs=1e-9)


def test_beam_one_equals_greedy():
    rng = np.random.default_rng(0)
    for seed in range(5):
        p = peaked_tiny_params(seed, 8)
        srcs = [list(rng.integers(3, 8, size=rng.integers(1, 5))) for _ in range(4)]
        b = beam_search_batch(p, srcs, beam=1)
        g = greedy_decode(p, srcs)
        for x, y in zip(b, g):
            assert x.tokens == y.tokens
            assert x.logprob == pytest.approx(y.logprob, abs=1e-9)


def test_beam_batch_equals_single():
    p = peaked_tiny_params(2, 8)
    srcs = [[4], [5, 6, 7], [3, 3]]
    batch = beam_search_batch(p, srcs, beam=4)
    for s, h in zip(srcs, batch):
        single = beam_search_batch(p, [s], beam=4)[0]
        assert single.tokens == h.tokens
        assert single.logprob == pytest.approx(h.logprob, abs=1e-9)


def test_beam_respects_length_limit_and_mask():
    p = peaked_tiny_params(3, 8)
    allowed = _allowed(8)
    allowed[5] = False
    for h in beam_search_batch(p, [[4, 4, 4]], beam=5, max_len=3, allowed=allowed):
        assert h.length <= 3 and 5 not in h.tokens


def test_beam_unfinished_warning():
    p = peaked_tiny_params(0, 6)
    allowed = _allowed(6)
    allowed[2] = False
    with pytest.warns(UnfinishedBeamWarning):
        h = beam_search_batch(p, [[4]], beam=2, max_len=3, allowed=allowed)[0]
    assert not h.finished and len(h.tokens) == 3


def test_beam_width_validated():
    with pytest.raises(ValueError):
        beam_search_batch(peaked_tiny_params(0), [[4]], beam=0)


def test_beam_search_prepends_tag():
    p = peaked_tiny_params(0, 8)
    assert beam_search(p, [5, 6], 4, beam=2) == beam_search_batch(p, [[4, 5, 6]], beam=2)[0]


# -- language identity and pivoting --------------------------------------------------

VOCAB = Vocab(("en", "aa", "bb"), v_sem=4)


def _tok(lang, j):
    return VOCAB.block_start(lang) + j


def test_language_accuracy_majority():
    en = [_tok("en", 0), _tok("en", 1), _tok("aa", 0)]
    tie = [_tok("en", 0), _tok("aa", 0)]
    assert is_on_target(en, "en", VOCAB)
    assert not is_on_target(tie, "en", VOCAB)
    assert not is_on_target([], "en", VOCAB)
    assert language_accuracy([en, tie, [], en], "en", VOCAB) == 0.5


def test_language_accuracy_ignores_specials():
    hyp = [3, 3, _tok("bb", 1)]
    assert is_on_target(hyp, "bb", VOCAB)


def test_language_accuracy_errors():
    with pytest.raises(DataError):
        language_accuracy([[4]], "zz", VOCAB)
    with pytest.raises(DataError):
        language_accuracy([], "en", VOCAB)


def test_pivot_rejects_pivot_language():
    p = peaked_tiny_params(0, VOCAB.size)
    with pytest.raises(DataError):
        pivot_translate(p, [_tok("aa", 0)], "en", "bb", VOCAB)


def test_pivot_is_two_decodes():
    p = peaked_tiny_params(0, VOCAB.size)
    src = [_tok("aa", 0), _tok("aa", 2)]
    allowed = decodable_mask(VOCAB.size, VOCAB)
    mid = beam_search_batch(p, [(VOCAB.tag("en"), *src)], 3, None, allowed)[0].tokens
    out = beam_search_batch(p, [(VOCAB.tag("bb"), *mid)], 3, None, allowed)[0].tokens
    assert pivot_translate(p, src, "aa", "bb", VOCAB, beam=3) == out


def test_decodable_mask_excludes_tags():
    m = decodable_mask(VOCAB.size, VOCAB)
    assert m[2] and not m[0] and not m[1] and not m[3]
    assert not m[VOCAB.tag("en")] and m[_tok("en", 0)]


def test_aggregate():
    d = {"a": {"bleu": 10.0, "lang_acc": 0.5, "zero_shot": True},
         "b": {"bleu": 30.0, "lang_acc": 1.0, "zero_shot": True},
         "c": {"bleu": 50.0, "lang_acc": 1.0, "zero_shot": False}}
    assert aggregate(d) == {"zero_avg": 20.0, "parallel_avg": 50.0, "zero_lang_acc": 0.75}
