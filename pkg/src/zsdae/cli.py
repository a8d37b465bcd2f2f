"""Command line entry point: ``python -m zsdae <command>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import boundlab, evaluation
from .experiments import SUITES, DeskSettings, ExperimentSuite
from .nn.checkpoint import load_checkpoint
from .noiser import NoiseConfig, build_denoising_corpus, read_denoising_corpus, write_denoising_corpus
from .synthlang import PIVOT, CorpusConfig, build_corpus, read_corpus, write_corpus
from .trainer import TrainConfig, dev_directions, parse_directions, train

DENOISE_FILE = "denoise.tsv"


def cmd_make_corpus(args):
    cfg = replace(CorpusConfig(seed=args.seed), n_train=args.n_train, n_dev=args.n_dev,
                  n_test=args.n_test)
    bundle = build_corpus(cfg)
    out = write_corpus(bundle, args.out)
    dn = build_denoising_corpus(bundle, NoiseConfig(seed=args.seed))
    write_denoising_corpus(out / DENOISE_FILE, dn, bundle.vocab)
    print(json.dumps({"out": str(out), "train": len(bundle.train), "denoise": len(dn),
                      "vocab_size": bundle.vocab.size}))
    return 0


def cmd_train(args):
    bundle = read_corpus(args.data)
    directions = parse_directions(args.directions)
    cfg = TrainConfig(
        directions=directions, denoising=args.denoising, max_updates=args.max_updates,
        batch_tokens=args.batch_tokens, validate_every=args.validate_every, peak_lr=args.lr,
        warmup=args.warmup, seed=args.seed, dev_limit=args.dev_limit,
        deterministic=not args.nondeterministic)
    dn = None
    if args.denoising:
        path = Path(args.data) / DENOISE_FILE
        if path.exists():
            wanted = {t for d in directions for t in _english_sides(bundle, d)}
            dn = [x for x in read_denoising_corpus(path, bundle.vocab) if tuple(x.clean) in wanted]
        else:
            dn = build_denoising_corpus(bundle, NoiseConfig(seed=args.seed), directions)
    res = train(bundle, dn, cfg, args.out)
    last = res.rows[-1] if res.rows else {}
    print(json.dumps({"out": args.out, "best_step": res.state.best_step,
                      "best_score": res.state.best_score, "last": last}))
    return 0


def _english_sides(bundle, direction):
    s, t = direction
    for e in bundle.train:
        if (e.src_lang, e.tgt_lang) == (s, t):
            yield tuple(e.src_tokens[1:]) if s == PIVOT else tuple(e.tgt_tokens)


def cmd_evaluate(args):
    bundle = read_corpus(args.data)
    params, extra = load_checkpoint(args.ckpt)
    sets = getattr(bundle, args.split)
    directions = parse_directions(args.direction)
    for d in directions:
        if d not in sets:
            print(f"error: no {args.split} set for {d[0]}-{d[1]}", file=sys.stderr)
            return 2
    report = evaluation.evaluate_directions(params, {d: sets[d] for d in directions}, bundle.vocab,
                                            beam=args.beam, pivot=args.pivot, limit=args.limit)
    report.update({"checkpoint": str(args.ckpt), "checkpoint_extra": extra, "split": args.split,
                   "beam": args.beam, "pivot": args.pivot})
    print(json.dumps(report, indent=1))
    return 0


def cmd_bound_verify(args):
    rows, summary = boundlab.verify(args.trials, args.seed, deterministic_y=args.deterministic_y)
    text = boundlab.rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
        print(json.dumps(summary, indent=1))
    else:
        sys.stdout.write(text)
        print(json.dumps(summary), file=sys.stderr)
    print("PASS" if summary["passed"] else "FAIL", file=sys.stderr)
    return 0 if summary["passed"] else 1


def cmd_reproduce(args):
    settings = DeskSettings()
    if args.max_updates:
        settings = replace(settings, max_updates=args.max_updates)
    suite = ExperimentSuite(args.seed, args.out, settings)
    results = suite.run_suite(args.suite)
    failed = []
    for name, rep in results.items():
        if name == "curve":
            rep = json.loads((suite.out / "curve.json").read_text())
        if isinstance(rep, dict):
            checks = rep.get("checks") or {}
            if name == "bound":
                checks = {f"{k}.{c}": v for k in ("general", "permutation")
                          for c, v in rep[k]["checks"].items()}
            for c, ok in checks.items():
                print(f"{name}: {c}: {'PASS' if ok else 'FAIL'}")
                if not ok:
                    failed.append(f"{name}.{c}")
    print(f"reports written to {args.out}")
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="zsdae", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("make-corpus", help="generate a synthetic corpus directory")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--n-train", type=int, default=20000)
    m.add_argument("--n-dev", type=int, default=1000)
    m.add_argument("--n-test", type=int, default=1000)
    m.set_defaults(fn=cmd_make_corpus)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--data", required=True)
    t.add_argument("--directions", required=True, help="comma list like aa-en,en-aa")
    t.add_argument("--denoising", action="store_true")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--max-updates", type=int, default=DeskSettings.max_updates)
    t.add_argument("--batch-tokens", type=int, default=DeskSettings.batch_tokens)
    t.add_argument("--validate-every", type=int, default=DeskSettings.validate_every)
    t.add_argument("--lr", type=float, default=DeskSettings.peak_lr)
    t.add_argument("--warmup", type=int, default=DeskSettings.warmup)
    t.add_argument("--dev-limit", type=int, default=DeskSettings.dev_limit)
    t.add_argument("--nondeterministic", action="store_true", help="allow multithreaded BLAS")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint; prints a JSON report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--direction", required=True, help="e.g. aa-bb (comma list allowed)")
    e.add_argument("--pivot", action="store_true", help="decode non-English pairs through en")
    e.add_argument("--beam", type=int, default=5)
    e.add_argument("--split", choices=("dev", "test"), default="test")
    e.add_argument("--limit", type=int, default=None)
    e.set_defaults(fn=cmd_evaluate)

    b = sub.add_parser("bound-verify", help="random checks of the bound identities")
    b.add_argument("--trials", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--deterministic-y", action="store_true")
    b.add_argument("--out", help="CSV path (default: stdout)")
    b.set_defaults(fn=cmd_bound_verify)

    r = sub.add_parser("reproduce", help="run an experiment suite")
    r.add_argument("--suite", choices=SUITES, default="all")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--max-updates", type=int, default=None)
    r.set_defaults(fn=cmd_reproduce)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
