"""Desk-scale experiment scenarios on synthetic languages.

Scenarios share trained variants through :class:`ExperimentSuite`, so
running ``all`` trains each variant once:

* ``two``      aa=>en + en=>bb
* ``two+dn``   the same plus English denoising
* ``mnmt``     every English-centric direction
* ``mnmt+dn``  the same plus English denoising

Every scenario is a pure function of its settings and seed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import boundlab, evaluation
from .noiser import NoiseConfig, build_denoising_corpus
from .synthlang import CorpusConfig, build_corpus
from .trainer import TrainConfig, dev_directions, train

log = logging.getLogger(__name__)

TWO = (("aa", "en"), ("en", "bb"))
VARIANTS = ("two", "two+dn", "mnmt", "mnmt+dn")
LABELS = {
    "two": "aa=>en+en=>bb",
    "two+dn": "aa=>en+en=>bb+DN",
    "mnmt": "MNMT",
    "mnmt+dn": "MNMT+DN",
}
SUITES = ("table1", "ablation", "curve", "offtarget", "bound", "all")


@dataclass(frozen=True)
class DeskSettings:
    """Budget knobs shared by all variants; defaults fit one CPU core."""

    max_updates: int = 6000
    batch_tokens: int = 1024
    peak_lr: float = 3e-3
    warmup: int = 500
    validate_every: int = 500
    dev_limit: int = 100
    eval_limit: int = 200
    beam: int = 5
    corpus: dict = field(default_factory=dict)  # CorpusConfig overrides
    bound_trials: int = 1000

    def to_dict(self):
        return asdict(self)


def train_config(variant, directions, seed, s: DeskSettings) -> TrainConfig:
    return TrainConfig(
        directions=tuple(directions),
        denoising=variant.endswith("+dn"),
        max_updates=s.max_updates,
        batch_tokens=s.batch_tokens,
        validate_every=s.validate_every,
        peak_lr=s.peak_lr,
        warmup=s.warmup,
        seed=seed,
        dev_limit=s.dev_limit,
        deterministic=True,
    )


@dataclass
class VariantRun:
    name: str
    config: TrainConfig
    result: object
    dev: dict
    test: dict
    seconds: float

    @property
    def metrics_csv(self):
        return self.result.metrics_csv()


class ExperimentSuite:
    """Lazily trains and caches the four variants for one seed."""

    def __init__(self, seed=0, out_dir=None, settings: DeskSettings | None = None):
        self.seed = seed
        self.settings = settings or DeskSettings()
        self.out = Path(out_dir) if out_dir else None
        self.corpus_config = replace(CorpusConfig(seed=seed), **self.settings.corpus)
        self.noise_config = NoiseConfig(seed=seed)
        self._bundle = None
        self._runs = {}

    @property
    def bundle(self):
        if self._bundle is None:
            self._bundle = build_corpus(self.corpus_config)
        return self._bundle

    def directions(self, variant):
        return TWO if variant.startswith("two") else tuple(self.bundle.train_directions())

    def provenance(self):
        return {
            "seed": self.seed,
            "settings": self.settings.to_dict(),
            "corpus": self.corpus_config.to_dict(),
            "noise": asdict(self.noise_config),
        }

    def run(self, variant) -> VariantRun:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if variant in self._runs:
            return self._runs[variant]
        s = self.settings
        dirs = self.directions(variant)
        cfg = train_config(variant, dirs, self.seed, s)
        dn = build_denoising_corpus(self.bundle, self.noise_config, dirs) if cfg.denoising else None
        out = self.out / variant if self.out else None
        t0 = time.time()
        res = train(self.bundle, dn, cfg, out)
        supervised, zero = dev_directions(cfg)
        reports = {}
        for split in ("dev", "test"):
            sets = getattr(self.bundle, split)
            reports[split] = evaluation.evaluate_directions(
                res.best_params, {d: sets[d] for d in supervised + zero}, self.bundle.vocab,
                beam=s.beam, limit=s.eval_limit, keep_hypotheses=split == "test")
        run = VariantRun(variant, cfg, res, reports["dev"], reports["test"], time.time() - t0)
        log.info("%s done in %.0fs: dev zero %.2f par %.2f acc %.3f", variant, run.seconds,
                 run.dev["zero_avg"], run.dev["parallel_avg"], run.dev["zero_lang_acc"])
        self._runs[variant] = run
        return run

    # -- scenarios ------------------------------------------------------------
    def table1(self) -> dict:
        run = self.run("two")
        b = self.bundle
        exs = b.test[("aa", "bb")][:self.settings.eval_limit]
        refs = [e.tgt_tokens for e in exs]
        direct = run.test["directions"]["aa-bb"]
        piv = evaluation.pivot_translate_batch(
            run.result.best_params, [e.src_tokens[1:] for e in exs], "aa", "bb", b.vocab,
            self.settings.beam)
        pivot_bleu = evaluation.corpus_bleu(piv, refs).score
        pivot_acc = evaluation.language_accuracy(piv, "bb", b.vocab)
        report = {
            "scenario": "table1-analog",
            "direction": "aa-bb",
            "direct_bleu": direct["bleu"],
            "pivot_bleu": pivot_bleu,
            "bleu_gap": pivot_bleu - direct["bleu"],
            "direct_lang_acc": direct["lang_acc"],
            "pivot_lang_acc": pivot_acc,
            "direct_off_target_rate": 1.0 - direct["lang_acc"],
            "supervised": {k: v["bleu"] for k, v in run.test["directions"].items() if not v["zero_shot"]},
            "checks": {
                "pivot_beats_direct": pivot_bleu > direct["bleu"],
                "direct_lang_acc_below_pivot": direct["lang_acc"] < pivot_acc,
            },
            "train_config": run.config.to_dict(),
            "provenance": self.provenance(),
        }
        self._write("table1.json", report)
        return report

    def ablation(self) -> dict:
        rows = []
        for v in VARIANTS:
            run = self.run(v)
            rows.append({
                "variant": v,
                "label": LABELS[v],
                "zero_dev_bleu": run.dev["zero_avg"],
                "zero_dev_lang_acc": run.dev["zero_lang_acc"],
                "parallel_dev_bleu": run.dev["parallel_avg"],
                "zero_test_bleu": run.test["zero_avg"],
                "zero_test_lang_acc": run.test["zero_lang_acc"],
                "parallel_test_bleu": run.test["parallel_avg"],
                "best_step": run.result.state.best_step,
                "seconds": run.seconds,
            })
        by = {r["variant"]: r for r in rows}
        report = {
            "scenario": "ablation-analog",
            "rows": rows,
            "checks": {
                "two_dn_beats_two": by["two+dn"]["zero_dev_bleu"] > by["two"]["zero_dev_bleu"],
                "mnmt_dn_beats_mnmt": by["mnmt+dn"]["zero_dev_bleu"] > by["mnmt"]["zero_dev_bleu"],
                "mnmt_dn_at_least_two_dn": by["mnmt+dn"]["zero_dev_bleu"] >= by["two+dn"]["zero_dev_bleu"],
                "mnmt_dn_lang_acc_above_0.95": by["mnmt+dn"]["zero_dev_lang_acc"] > 0.95,
                "mnmt_dn_supervised_within_1": (
                    by["mnmt+dn"]["parallel_dev_bleu"] >= by["mnmt"]["parallel_dev_bleu"] - 1.0),
            },
            "train_configs": {v: self.run(v).config.to_dict() for v in VARIANTS},
            "provenance": self.provenance(),
        }
        self._write("ablation.json", report)
        self._write_text("ablation.csv", _rows_csv(rows))
        return report

    def curve(self) -> str:
        """CSV of (variant, step, pooled zero-shot dev BLEU, mean zero-shot dev BLEU)."""
        rows = []
        for v in ("mnmt", "mnmt+dn"):
            for r in self.run(v).result.rows:
                rows.append({"variant": v, "step": r["step"], "zero_pooled_bleu": r["zero_pooled_bleu"],
                             "zero_bleu": r["zero_bleu"], "zero_lang_acc": r["zero_lang_acc"]})
        text = _rows_csv(rows)
        self._write_text("curve.csv", text)
        final = {v: self.run(v).result.rows[-1]["zero_pooled_bleu"] for v in ("mnmt", "mnmt+dn")}
        checks = {"final_dn_at_least_mnmt": final["mnmt+dn"] >= final["mnmt"]}
        self._write("curve.json", {"scenario": "learning-curve", "final": final, "checks": checks,
                                   "provenance": self.provenance(),
                                   "train_configs": {v: self.run(v).config.to_dict()
                                                     for v in ("mnmt", "mnmt+dn")}})
        return text

    def offtarget(self) -> dict:
        """Output-language shares per zero-shot test direction for MNMT vs MNMT+DN."""
        out = {"scenario": "offtarget-report", "variants": {}, "provenance": self.provenance()}
        for v in ("mnmt", "mnmt+dn"):
            run = self.run(v)
            out["variants"][v] = {
                k: {"lang_acc": d["lang_acc"],
                    "output_languages": evaluation.language_distribution(d["hypotheses"], self.bundle.vocab)}
                for k, d in run.test["directions"].items() if d["zero_shot"]
            }
        self._write("offtarget.json", out)
        return out

    def bound(self) -> dict:
        rows, summary = boundlab.verify(self.settings.bound_trials, self.seed)
        prow, psummary = boundlab.verify(self.settings.bound_trials, self.seed, deterministic_y=True)
        self._write_text("bound.csv", boundlab.rows_to_csv(rows))
        self._write_text("bound_permutation.csv", boundlab.rows_to_csv(prow))
        report = {"scenario": "bound-verify", "general": summary, "permutation": psummary,
                  "seed": self.seed, "trials": self.settings.bound_trials}
        self._write("bound.json", report)
        return report

    def run_suite(self, name) -> dict:
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
        names = ["table1", "ablation", "curve", "offtarget", "bound"] if name == "all" else [name]
        return {n: getattr(self, n)() for n in names}

    # -- output ----------------------------------------------------------------
    def _write(self, name, obj):
        self._write_text(name, json.dumps(obj, indent=1, default=_jsonable) + "\n")

    def _write_text(self, name, text):
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / name).write_text(text)


def _jsonable(x):
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def _rows_csv(rows):
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def run_table1_analog(seed=0, out_dir=None, settings=None):
    return ExperimentSuite(seed, out_dir, settings).table1()


def run_ablation_analog(seed=0, out_dir=None, settings=None):
    return ExperimentSuite(seed, out_dir, settings).ablation()


def run_learning_curve(seed=0, out_dir=None, settings=None):
    return ExperimentSuite(seed, out_dir, settings).curve()

