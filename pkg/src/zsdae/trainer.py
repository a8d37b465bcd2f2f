"""Joint training of the translation and denoising objectives.

The model maximizes ``L_m + L_d``: the summed cross-entropy of translation
batches over the English-centric directions and, when enabled, of denoising
batches that reconstruct clean English from its infilled corruption under
the ``<2en>`` tag. Each update draws one batch from the pooled task stream,
so tasks are sampled in proportion to their share of training tokens.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation
from .nn.checkpoint import save_checkpoint
from .nn.model import ModelConfig, Transformer, init_params, make_batch
from .nn.optim import Adam, InverseSqrtSchedule
from .noiser import model_source
from .synthlang import PIVOT, ConfigError, CorpusBundle

log = logging.getLogger(__name__)

DENOISE = "dn"
METRIC_FIELDS = ("step", "lr", "L_m", "L_d", "zero_bleu", "zero_pooled_bleu", "parallel_bleu",
                 "zero_lang_acc", "off_target_rate", "select_score")


@dataclass(frozen=True)
class TrainConfig:
    directions: tuple
    denoising: bool = False
    max_updates: int = 20000
    batch_tokens: int = 2048
    validate_every: int = 500
    peak_lr: float = 5e-4
    warmup: int = 4000
    dropout: float = 0.1
    label_smoothing: float = 0.1
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    seed: int = 0
    dev_limit: int | None = 200
    valid_beam: int = 1
    select_on: str = "all"  # zero | parallel | all
    deterministic: bool = True

    def __post_init__(self):
        if not self.directions:
            raise ConfigError("no training directions")
        if self.select_on not in ("zero", "parallel", "all"):
            raise ConfigError(f"select_on must be zero/parallel/all, got {self.select_on!r}")

    def model_config(self, vocab_size, max_len=64):
        return ModelConfig(vocab_size, self.d_model, self.n_heads, self.d_ff,
                           self.enc_layers, self.dec_layers, max_len)

    def to_dict(self):
        d = asdict(self)
        d["directions"] = [list(x) for x in self.directions]
        return d


@dataclass
class TrainState:
    step: int = 0
    best_score: float = float("-inf")
    best_step: int = 0
    best_path: str | None = None
    rows: list = field(default_factory=list)


@dataclass
class TrainResult:
    params: object
    best_params: object
    state: TrainState
    config: TrainConfig

    @property
    def rows(self):
        return self.state.rows

    def metrics_csv(self) -> str:
        return rows_to_csv(self.state.rows)


def parse_directions(text: str) -> tuple:
    out = []
    for item in text.split(","):
        a, sep, b = item.strip().partition("-")
        if not sep or not a or not b:
            raise ConfigError(f"bad direction {item!r}; expected like aa-en")
        out.append((a, b))
    return tuple(out)


def dev_directions(cfg: TrainConfig):
    """Supervised = trained directions; zero-shot = non-English pairs they imply."""
    srcs = {s for s, t in cfg.directions if s != PIVOT}
    tgts = {t for s, t in cfg.directions if t != PIVOT}
    zero = sorted((s, t) for s in srcs for t in tgts if s != t)
    return sorted(cfg.directions), zero


def task_streams(bundle: CorpusBundle, dn, cfg: TrainConfig) -> dict:
    avail = set(bundle.train_directions())
    for d in cfg.directions:
        if PIVOT not in d:
            raise ConfigError(f"direction {d} has no parallel data (not English-centric)")
        if d not in avail:
            raise ConfigError(f"direction {d} missing from the training corpus")
    streams = {f"{s}-{t}": [] for s, t in cfg.directions}
    for e in bundle.train:
        key = f"{e.src_lang}-{e.tgt_lang}"
        if key in streams:
            streams[key].append((e.src_tokens, e.tgt_tokens))
    if cfg.denoising:
        if not dn:
            raise ConfigError("denoising enabled but no denoising corpus given")
        streams[DENOISE] = [(model_source(x, bundle.vocab), x.clean) for x in dn]
    vs = bundle.vocab.size
    for name, pairs in streams.items():
        for s, t in pairs[:1]:
            if max(max(s), max(t)) >= vs:
                raise ConfigError(f"task {name} has token ids outside the vocabulary")
    return streams


def make_batches(pairs, batch_tokens, rng):
    """Length-bucketed index batches whose padded size stays within ``batch_tokens``."""
    order = rng.permutation(len(pairs))
    lengths = np.array([max(len(pairs[i][0]), len(pairs[i][1]) + 1) for i in order])
    order = order[np.argsort(lengths, kind="stable")]
    batches, cur, cur_max = [], [], 0
    for i in order:
        L = max(len(pairs[i][0]), len(pairs[i][1]) + 1)
        if cur and max(cur_max, L) * (len(cur) + 1) > batch_tokens:
            batches.append(cur)
            cur, cur_max = [], 0
        cur.append(int(i))
        cur_max = max(cur_max, L)
    if cur:
        batches.append(cur)
    return batches


class TaskStream:
    """Endless shuffled stream of single-task batches drawn from all tasks."""

    def __init__(self, streams, batch_tokens, seed):
        self.streams = streams
        self.batch_tokens = batch_tokens
        self.rng = np.random.default_rng(seed)
        self.queue = []
        self.epoch = 0

    def _refill(self):
        items = []
        for name in sorted(self.streams):
            for b in make_batches(self.streams[name], self.batch_tokens, self.rng):
                items.append((name, b))
        perm = self.rng.permutation(len(items))
        self.queue = [items[i] for i in perm][::-1]
        self.epoch += 1

    def next(self):
        if not self.queue:
            self._refill()
        name, idx = self.queue.pop()
        pairs = self.streams[name]
        return name, make_batch([pairs[i][0] for i in idx], [pairs[i][1] for i in idx])


def train_step(model: Transformer, opt: Adam, batches: dict, cfg: TrainConfig, rng):
    """One optimizer step on the sum of per-task cross-entropies.

    Returns ``(total, {task: loss})``; ``total`` is the summed objective the
    gradient was taken of.
    """
    model.params.zero_grad()
    losses = {}
    total = None
    for name in sorted(batches):
        loss = model.loss(batches[name], cfg.label_smoothing, cfg.dropout, rng, train=True)
        losses[name] = loss.item()
        total = loss if total is None else total + loss
    total.backward()
    opt.step(model.params)
    return float(total.data), losses


def validate(params, bundle: CorpusBundle, supervised, zero, beam=5, limit=None,
             split="dev") -> dict:
    """Per-direction BLEU and language accuracy with unweighted Zero/Parallel averages."""
    sets = getattr(bundle, split)
    wanted = {d: sets[d] for d in list(supervised) + list(zero)}
    if any(not v for v in wanted.values()):
        raise ConfigError("empty evaluation set")
    return evaluation.evaluate_directions(params, wanted, bundle.vocab, beam=beam, limit=limit)


def _select_score(report, how):
    z, p = report["zero_avg"], report["parallel_avg"]
    if how == "zero":
        return z
    if how == "parallel":
        return p
    vals = [v for v in (z, p) if v is not None]
    return float(np.mean(vals))


@contextlib.contextmanager
def _single_thread(enabled):
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=1):
        yield


def train(bundle: CorpusBundle, dn, cfg: TrainConfig, out_dir=None, progress=None) -> TrainResult:
    """Train from scratch; writes checkpoints and ``metrics.csv`` when ``out_dir`` is set."""
    streams = task_streams(bundle, dn, cfg)
    mcfg = cfg.model_config(bundle.vocab.size, max_len=max(64, bundle.config.len_max + 8))
    params = init_params(mcfg, seed=cfg.seed)
    model = Transformer(params)
    opt = Adam(InverseSqrtSchedule(cfg.peak_lr, cfg.warmup))
    stream = TaskStream(streams, cfg.batch_tokens, cfg.seed + 1)
    drop_rng = np.random.default_rng(cfg.seed + 2)
    supervised, zero = dev_directions(cfg)
    state = TrainState()
    best = params.copy()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=1))

    window = {"m": [], "d": []}
    t0 = time.time()
    with _single_thread(cfg.deterministic):
        for step in range(1, cfg.max_updates + 1):
            name, batch = stream.next()
            _, losses = train_step(model, opt, {name: batch}, cfg, drop_rng)
            window["d" if name == DENOISE else "m"].append(losses[name])
            state.step = step
            if step % cfg.validate_every == 0 or step == cfg.max_updates:
                rep = validate(params, bundle, supervised, zero, cfg.valid_beam, cfg.dev_limit)
                score = _select_score(rep, cfg.select_on)
                row = {
                    "step": step,
                    "lr": opt.schedule(step),
                    "L_m": float(np.mean(window["m"])) if window["m"] else None,
                    "L_d": float(np.mean(window["d"])) if window["d"] else None,
                    "zero_bleu": rep["zero_avg"],
                    "zero_pooled_bleu": rep["zero_pooled"],
                    "parallel_bleu": rep["parallel_avg"],
                    "zero_lang_acc": rep["zero_lang_acc"],
                    "off_target_rate": None if rep["zero_lang_acc"] is None else 1.0 - rep["zero_lang_acc"],
                    "select_score": score,
                }
                state.rows.append(row)
                window = {"m": [], "d": []}
                if score > state.best_score:
                    state.best_score, state.best_step = score, step
                    best = params.copy()
                    if out:
                        state.best_path = str(out / "best.ckpt")
                        save_checkpoint(state.best_path, best, {"step": step, "score": score})
                log.info("step %d  L_m=%s L_d=%s zero=%.2f par=%.2f acc=%s  (%.0fs)", step,
                         _fmt(row["L_m"]), _fmt(row["L_d"]), rep["zero_avg"] or 0.0,
                         rep["parallel_avg"] or 0.0, _fmt(rep["zero_lang_acc"]), time.time() - t0)
                if progress:
                    progress(row)
    if out:
        save_checkpoint(out / "final.ckpt", params, {"step": state.step})
        (out / "metrics.csv").write_text(rows_to_csv(state.rows))
    return TrainResult(params, best, state, cfg)


def _fmt(x):
    return "-" if x is None else f"{x:.3f}"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow(["" if r[k] is None else repr(r[k]) for k in METRIC_FIELDS])
    return buf.getvalue()
