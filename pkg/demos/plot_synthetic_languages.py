"""
Synthetic languages and text infilling
======================================

Every language is a cipher onto its own block of surface tokens plus a fixed
word-order rule, applied to a shared sequence of semantic symbols. English is
the identity language. This walk-through builds a small corpus, prints one
multi-way example, and corrupts English with span masking.
"""
import numpy as np

from zsdae.noiser import NoiseConfig, noise
from zsdae.synthlang import CorpusConfig, build_corpus, realize

bundle = build_corpus(CorpusConfig(n_train=200, n_dev=20, n_test=20, seed=7))
vocab = bundle.vocab
print(f"vocabulary: {vocab.size} ids, languages {vocab.langs}")

###############################################################################
# One semantic sequence in every language
# ---------------------------------------
# The dev and test sets are multi-way: the same semantics appear in every
# language, so every ordered pair has an exact reference.

sem = bundle.test[("aa", "en")][0].sem
for spec in bundle.specs.values():
    surface = realize(sem, spec)
    print(f"{spec.lang_id} ({spec.reorder:>13}): {' '.join(vocab.to_str(t) for t in surface)}")

###############################################################################
# Training directions
# -------------------
# Only English-centric pairs have training data; the six non-English pairs
# are zero-shot.

print("train:", ", ".join(f"{s}-{t}" for s, t in bundle.train_directions()))
print("zero-shot:", ", ".join(f"{s}-{t}" for s, t in bundle.zero_shot_directions()))

###############################################################################
# Text infilling on English
# -------------------------
# Spans with Poisson(3) lengths are replaced by a single mask token until 30%
# of the tokens are gone. A zero-length span inserts a mask.

rng = np.random.default_rng(0)
en = realize(sem, bundle.specs["en"])
for _ in range(3):
    ex = noise(en, NoiseConfig(), rng)
    print(" ".join(vocab.to_str(t) for t in ex.noised), "| spans (pos, drawn, applied):", ex.spans)
