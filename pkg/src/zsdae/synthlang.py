"""Synthetic languages and English-centric parallel corpora.

A language is a bijective cipher from semantic symbols onto its own block of
surface tokens plus a deterministic, length-preserving word-order rule.
All languages share one id space::

    0..3                      <pad> <s> </s> [MASK]
    4..4+n_lang-1             language tags <2xx>
    then one block of v_sem surface tokens per language
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, BOS, EOS, MASK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "[MASK]")
PIVOT = "en"


class ConfigError(ValueError):
    """Invalid generation or training configuration."""


class DataError(ValueError):
    """Input data violating an operation's preconditions."""


# -- word order ---------------------------------------------------------------

def reorder_permutation(rule: str, n: int) -> np.ndarray:
    """Index permutation ``perm`` such that ``out = seq[perm]``."""
    idx = np.arange(n)
    if rule == "identity":
        return idx
    if rule == "reverse":
        return idx[::-1].copy()
    if rule == "adjacent-swap":
        out = idx.copy()
        for i in range(0, n - 1, 2):
            out[i], out[i + 1] = idx[i + 1], idx[i]
        return out
    if rule.startswith("rotate"):
        k = int(rule.split(":", 1)[1]) if ":" in rule else 1
        return np.roll(idx, -(k % n)) if n else idx
    raise ConfigError(f"unknown reorder rule {rule!r}")


@dataclass(frozen=True)
class LanguageSpec:
    lang_id: str
    cipher: tuple  # semantic symbol -> surface token id
    reorder: str = "identity"

    @property
    def vocab(self) -> frozenset:
        return frozenset(self.cipher)

    def to_dict(self):
        return {"lang_id": self.lang_id, "cipher": list(self.cipher), "reorder": self.reorder}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lang_id"], tuple(d["cipher"]), d["reorder"])


def realize(sem, lang: LanguageSpec) -> list:
    """Surface form of a semantic sequence: cipher every symbol, then reorder."""
    n_sem = len(lang.cipher)
    out = []
    for s in sem:
        if not 0 <= s < n_sem:
            raise DataError(f"semantic symbol {s} outside cipher domain [0, {n_sem})")
        out.append(lang.cipher[s])
    perm = reorder_permutation(lang.reorder, len(out))
    return [out[i] for i in perm]


def unrealize(tokens, lang: LanguageSpec) -> list:
    """Inverse of :func:`realize`."""
    inv = {t: s for s, t in enumerate(lang.cipher)}
    perm = reorder_permutation(lang.reorder, len(tokens))
    sem = [0] * len(tokens)
    for pos, src in enumerate(perm):
        if tokens[pos] not in inv:
            raise DataError(f"token {tokens[pos]} not in {lang.lang_id} vocabulary")
        sem[src] = inv[tokens[pos]]
    return sem


def gen_semantic(rng_seed, count, len_min, len_max, v_sem=64) -> list:
    """``count`` i.i.d. semantic sequences, lengths uniform in [len_min, len_max]."""
    if not (1 <= len_min <= len_max) or count < 1 or v_sem < 1:
        raise ConfigError(f"bad semantic range: count={count}, len=[{len_min}, {len_max}]")
    rng = np.random.default_rng(rng_seed)
    lengths = rng.integers(len_min, len_max + 1, size=count)
    flat = rng.integers(0, v_sem, size=int(lengths.sum()))
    out = []
    pos = 0
    for n in lengths:
        out.append(tuple(int(x) for x in flat[pos:pos + n]))
        pos += n
    return out


# -- vocabulary -------------------------------------------------------------------

@dataclass
class Vocab:
    langs: tuple
    v_sem: int

    @property
    def n_tags(self):
        return len(self.langs)

    def tag(self, lang: str) -> int:
        return len(SPECIALS) + self.langs.index(lang)

    def tag_lang(self, token: int):
        i = token - len(SPECIALS)
        return self.langs[i] if 0 <= i < len(self.langs) else None

    def block_start(self, lang: str) -> int:
        return len(SPECIALS) + self.n_tags + self.langs.index(lang) * self.v_sem

    @property
    def size(self):
        return len(SPECIALS) + self.n_tags + len(self.langs) * self.v_sem

    def is_special(self, token: int) -> bool:
        return token < len(SPECIALS) + self.n_tags

    def token_lang(self, token: int):
        j = token - len(SPECIALS) - self.n_tags
        if j < 0 or j >= len(self.langs) * self.v_sem:
            return None
        return self.langs[j // self.v_sem]

    def to_str(self, token: int) -> str:
        if token < len(SPECIALS):
            return SPECIALS[token]
        if token < len(SPECIALS) + self.n_tags:
            return f"<2{self.tag_lang(token)}>"
        lang = self.token_lang(token)
        if lang is None:
            raise DataError(f"token id {token} outside vocabulary")
        return f"{lang}_{token - self.block_start(lang)}"

    def from_str(self, s: str) -> int:
        if s in SPECIALS:
            return SPECIALS.index(s)
        if s.startswith("<2") and s.endswith(">"):
            return self.tag(s[2:-1])
        lang, _, j = s.rpartition("_")
        if lang not in self.langs or not j.isdigit() or int(j) >= self.v_sem:
            raise DataError(f"unknown token {s!r}")
        return self.block_start(lang) + int(j)

    def table(self):
        return [self.to_str(i) for i in range(self.size)]


# -- corpus -----------------------------------------------------------------------

@dataclass(frozen=True)
class ParallelExample:
    src_lang: str
    tgt_lang: str
    src_tokens: tuple  # tag first
    tgt_tokens: tuple
    sem: tuple = ()


DEFAULT_LANGS = (("en", "identity"), ("aa", "reverse"), ("bb", "rotate:1"), ("cc", "rotate:3"))


@dataclass(frozen=True)
class CorpusConfig:
    languages: tuple = DEFAULT_LANGS
    v_sem: int = 64
    n_train: int = 20000  # semantic sequences per X<->en pair
    n_dev: int = 1000
    n_test: int = 1000
    len_min: int = 4
    len_max: int = 16
    seed: int = 0

    def to_dict(self):
        return {"languages": [list(x) for x in self.languages], "v_sem": self.v_sem,
                "n_train": self.n_train, "n_dev": self.n_dev, "n_test": self.n_test,
                "len_min": self.len_min, "len_max": self.len_max, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["languages"] = tuple(tuple(x) for x in d["languages"])
        return cls(**d)


@dataclass
class CorpusBundle:
    config: CorpusConfig
    vocab: Vocab
    specs: dict
    train: list
    dev: dict = field(default_factory=dict)   # (src, tgt) -> list[ParallelExample]
    test: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.config.seed

    @property
    def non_english(self):
        return [l for l in self.vocab.langs if l != PIVOT]

    def train_directions(self):
        return sorted({(e.src_lang, e.tgt_lang) for e in self.train})

    def zero_shot_directions(self):
        return [d for d in self.test if PIVOT not in d]

    def supervised_directions(self):
        return [d for d in self.test if PIVOT in d]


def make_example(sem, src: LanguageSpec, tgt: LanguageSpec, vocab: Vocab) -> ParallelExample:
    return ParallelExample(
        src.lang_id, tgt.lang_id,
        (vocab.tag(tgt.lang_id), *realize(sem, src)),
        tuple(realize(sem, tgt)),
        tuple(sem))


def build_corpus(config: CorpusConfig) -> CorpusBundle:
    langs = tuple(l for l, _ in config.languages)
    if PIVOT not in langs:
        raise ConfigError("languages must include the pivot 'en'")
    if len(langs) < 3 or len(set(langs)) != len(langs):
        raise ConfigError("need English plus at least two distinct non-English languages")
    rules = dict(config.languages)
    if rules[PIVOT] != "identity":
        raise ConfigError("the pivot language uses the identity word order")
    vocab = Vocab(langs, config.v_sem)
    ss = np.random.SeedSequence(config.seed)
    cipher_seed, eval_seed, *pair_seeds = ss.spawn(2 + len(langs))

    crng = np.random.default_rng(cipher_seed)
    specs = {}
    for lang in langs:
        perm = crng.permutation(config.v_sem) + vocab.block_start(lang)
        specs[lang] = LanguageSpec(lang, tuple(int(x) for x in perm), rules[lang])

    # shared multi-way dev/test pools, kept out of train
    held = _unique_semantic(eval_seed, config.n_dev + config.n_test, config, set())
    dev_sem, test_sem = held[:config.n_dev], held[config.n_dev:]
    blocked = set(held)

    train = []
    for lang, seed in zip(langs, pair_seeds):
        if lang == PIVOT:
            continue
        pool = _unique_semantic(seed, config.n_train, config, blocked)
        for sem in pool:
            train.append(make_example(sem, specs[lang], specs[PIVOT], vocab))
            train.append(make_example(sem, specs[PIVOT], specs[lang], vocab))

    def split(sems):
        return {(a, b): [make_example(s, specs[a], specs[b], vocab) for s in sems]
                for a in langs for b in langs if a != b}

    return CorpusBundle(config, vocab, specs, train, split(dev_sem), split(test_sem))


def _unique_semantic(seed, count, config, blocked):
    out, seen = [], set(blocked)
    rng = np.random.default_rng(seed)
    while len(out) < count:
        batch = gen_semantic(int(rng.integers(2 ** 63)), count - len(out),
                             config.len_min, config.len_max, config.v_sem)
        for s in batch:
            if s not in seen:
                seen.add(s)
                out.append(s)
    return out


# -- file format ------------------------------------------------------------------

def format_record(src_lang, tgt_lang, src_tokens, tgt_tokens, vocab: Vocab) -> str:
    return "\t".join([src_lang, tgt_lang,
                      " ".join(vocab.to_str(t) for t in src_tokens),
                      " ".join(vocab.to_str(t) for t in tgt_tokens)])


def parse_record(line: str, vocab: Vocab):
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 4:
        raise DataError(f"expected 4 tab-separated fields, got {len(fields)}")
    src_lang, tgt_lang, src, tgt = fields
    return (src_lang, tgt_lang,
            tuple(vocab.from_str(s) for s in src.split()),
            tuple(vocab.from_str(s) for s in tgt.split()))


def _write_split(path, examples, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(format_record(e.src_lang, e.tgt_lang, e.src_tokens, e.tgt_tokens, vocab) + "\n")


def write_corpus(bundle: CorpusBundle, directory) -> Path:
    """``train.tsv``, ``dev.tsv``, ``test.tsv`` plus ``meta.json`` (specs, vocab table, seed)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_split(d / "train.tsv", bundle.train, bundle.vocab)
    for name in ("dev", "test"):
        _write_split(d / f"{name}.tsv", [e for exs in getattr(bundle, name).values() for e in exs],
                     bundle.vocab)
    meta = {
        "config": bundle.config.to_dict(),
        "seed": bundle.seed,
        "specs": {k: v.to_dict() for k, v in bundle.specs.items()},
        "vocab": bundle.vocab.table(),
        "langs": list(bundle.vocab.langs),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1))
    return d


def read_corpus(directory) -> CorpusBundle:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    config = CorpusConfig.from_dict(meta["config"])
    vocab = Vocab(tuple(meta["langs"]), config.v_sem)
    if vocab.table() != meta["vocab"]:
        raise DataError("vocabulary table in meta.json does not match the language list")
    specs = {k: LanguageSpec.from_dict(v) for k, v in meta["specs"].items()}

    def load(name):
        out = []
        with open(d / f"{name}.tsv", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    sl, tl, s, t = parse_record(line, vocab)
                    out.append(ParallelExample(sl, tl, s, t, tuple(unrealize(list(t), specs[tl]))))
        return out

    def grouped(exs):
        g = {}
        for e in exs:
            g.setdefault((e.src_lang, e.tgt_lang), []).append(e)
        return g

    return CorpusBundle(config, vocab, specs, load("train"), grouped(load("dev")), grouped(load("test")))
