import csv
import io

import numpy as np
import pytest

from zsdae.nn import Adam, InverseSqrtSchedule, Transformer, init_params
from zsdae.nn.checkpoint import load_checkpoint
from zsdae.noiser import NoiseConfig, build_denoising_corpus
from zsdae.synthlang import ConfigError, CorpusConfig, build_corpus
from zsdae.trainer import (
    DENOISE, METRIC_FIELDS, TaskStream, TrainConfig, dev_directions, make_batches, parse_directions,
    task_streams, train, train_step,
)

TWO = (("aa", "en"), ("en", "bb"))


@pytest.fixture(scope="module")
def bundle():
    return build_corpus(CorpusConfig(n_train=60, n_dev=8, n_test=8, len_max=6, seed=1))


@pytest.fixture(scope="module")
def dn(bundle):
    return build_denoising_corpus(bundle, NoiseConfig(seed=1), TWO)


def tiny(**kw):
    base = dict(directions=TWO, max_updates=6, validate_every=3, d_model=16, n_heads=2, d_ff=32,
                enc_layers=1, dec_layers=1, batch_tokens=96, dev_limit=4, warmup=2, peak_lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def test_parse_directions():
    assert parse_directions("aa-en, en-bb") == TWO
    for bad in ("aaen", "-en", "aa-"):
        with pytest.raises(ConfigError):
            parse_directions(bad)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(directions=())
    with pytest.raises(ConfigError):
        tiny(select_on="best")


def test_dev_directions(bundle):
    sup, zero = dev_directions(tiny())
    assert sup == sorted(TWO) and zero == [("aa", "bb")]
    sup, zero = dev_directions(tiny(directions=tuple(bundle.train_directions())))
    assert len(sup) == 6 and len(zero) == 6
    assert all("en" not in d for d in zero)


def test_task_stream_errors(bundle, dn):
    with pytest.raises(ConfigError):
        task_streams(bundle, None, tiny(directions=(("aa", "bb"),)))
    with pytest.raises(ConfigError):
        task_streams(bundle, None, tiny(directions=(("zz", "en"),)))
    with pytest.raises(ConfigError):
        task_streams(bundle, None, tiny(denoising=True))


def test_denoising_sources_carry_pivot_tag(bundle, dn):
    streams = task_streams(bundle, dn, tiny(denoising=True))
    tag = bundle.vocab.tag("en")
    assert streams[DENOISE] and all(src[0] == tag for src, _ in streams[DENOISE])
    assert set(streams) == {"aa-en", "en-bb", DENOISE}


def test_make_batches_cover_once_within_budget(bundle):
    pairs = task_streams(bundle, None, tiny())["aa-en"]
    batches = make_batches(pairs, 40, np.random.default_rng(0))
    flat = sorted(i for b in batches for i in b)
    assert flat == list(range(len(pairs)))
    for b in batches:
        width = max(max(len(pairs[i][0]), len(pairs[i][1]) + 1) for i in b)
        assert len(b) == 1 or width * len(b) <= 40


def test_task_sampling_is_proportional(bundle, dn):
    streams = task_streams(bundle, dn, tiny(denoising=True))
    ts = TaskStream(streams, 64, 0)
    ts._refill()
    names = [n for n, _ in ts.queue]
    for name, pairs in streams.items():
        expected = len(make_batches(pairs, 64, np.random.default_rng(0)))
        assert abs(names.count(name) - expected) <= 1


def test_total_loss_is_sum_of_task_losses(bundle, dn):
    cfg = tiny(denoising=True, dropout=0.0)
    streams = task_streams(bundle, dn, cfg)
    ts = TaskStream(streams, 64, 0)
    batches = {}
    while len(batches) < 3:
        name, b = ts.next()
        batches.setdefault(name, b)
    p = init_params(cfg.model_config(bundle.vocab.size), 0)
    before = p.copy()
    opt = Adam(InverseSqrtSchedule(1e-3, 10))
    total, losses = train_step(Transformer(p), opt, batches, cfg, np.random.default_rng(0))
    recomputed = {k: Transformer(before).loss(b, cfg.label_smoothing).item() for k, b in batches.items()}
    assert total == pytest.approx(sum(recomputed.values()), rel=1e-5)
    for k in batches:
        assert losses[k] == pytest.approx(recomputed[k], rel=1e-5)
    assert not np.array_equal(p["embed"].data, before["embed"].data)


def test_train_without_denoising_leaves_ld_empty(bundle, tmp_path):
    res = train(bundle, None, tiny(), tmp_path)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "metrics.csv").read_text())))
    assert tuple(rows[0]) == METRIC_FIELDS
    assert [r["step"] for r in rows] == ["3", "6"]
    assert all(r["L_d"] == "" and r["L_m"] != "" for r in rows)
    for f in ("best.ckpt", "final.ckpt", "train_config.json"):
        assert (tmp_path / f).exists()
    params, extra = load_checkpoint(tmp_path / "best.ckpt")
    assert extra["step"] == res.state.best_step


def test_best_is_max_over_validations(bundle, dn):
    res = train(bundle, dn, tiny(denoising=True, max_updates=9))
    scores = [r["select_score"] for r in res.rows]
    assert res.state.best_score == max(scores)
    assert res.state.best_step == res.rows[scores.index(max(scores))]["step"]
    assert any(r["L_d"] is not None for r in res.rows)


def test_training_reduces_loss(bundle):
    res = train(bundle, None, tiny(max_updates=60, validate_every=20, peak_lr=3e-3, warmup=10))
    assert res.rows[-1]["L_m"] < res.rows[0]["L_m"]


def test_deterministic_metrics(bundle, dn):
    a = train(bundle, dn, tiny(denoising=True)).metrics_csv()
    b = train(bundle, dn, tiny(denoising=True)).metrics_csv()
    assert a == b
    c = train(bundle, dn, tiny(denoising=True, seed=5)).metrics_csv()
    assert c != a
