"""Shared fixtures: small corpora for unit tests and the seeded synthetic
benchmark (cohort plus the four trained model variants) for acceptance.

Training the benchmark takes a few minutes per variant. Set
ACTEMBED_BENCH_CACHE=1 to reuse models across sessions via an on-disk cache
under tests/_bench_cache (safe only while the trainer code is unchanged).
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from actembed import (ActivitySequence, Corpus, SynthConfig, TrainConfig,
                      build_vocabulary, describe_planted_effects,
                      generate_cohort, segment, train)
from actembed.model import init_params, load_model, save_model

BENCH_SEED = 7
BENCH_TRAIN_SEED = 1
BENCH_EPOCHS = 20

BENCH_VARIANTS = {
    "day": dict(granularity="day"),
    "week": dict(granularity="week"),
    "day_nosmooth": dict(granularity="day", use_smoothing=False),
    "day_lam0": dict(granularity="day", lambda_max=0.0),
}


@pytest.fixture
def tiny_corpus():
    """4 subjects, length 240 (hour granularity gives K=2), small vocab."""
    rng = np.random.default_rng(11)
    seqs = []
    for i in range(4):
        samples = rng.integers(0, 9, 240)
        samples[rng.random(240) < 0.02] = -1
        labels = {"apnea": i % 2, "diabetes": i % 3}
        seqs.append(ActivitySequence(f"S{i}", samples, labels))
    return Corpus(seqs)


@pytest.fixture
def tiny_trained(tiny_corpus):
    """A quickly trained hour-level model on the tiny corpus."""
    vocab = build_vocabulary(tiny_corpus)
    index = segment(tiny_corpus, "hour")
    config = TrainConfig(granularity="hour", d=12, epochs=3, seed=5)
    params = init_params(vocab, index, tiny_corpus.subjects, d=12, seed=5)
    params, report = train(tiny_corpus, vocab, index, params, config)
    return tiny_corpus, vocab, index, params, config, report


@pytest.fixture(scope="session")
def bench_cohort():
    config = SynthConfig(seed=BENCH_SEED)
    corpus = generate_cohort(config)
    manifest = describe_planted_effects(config)
    vocab = build_vocabulary(corpus)
    return corpus, vocab, manifest


def _train_variant(corpus, vocab, name, overrides):
    import json
    import time

    config = TrainConfig(epochs=BENCH_EPOCHS, seed=BENCH_TRAIN_SEED, **overrides)
    index = segment(corpus, config.granularity)
    cache_dir = Path(__file__).parent / "_bench_cache"
    stem = f"{name}_s{BENCH_SEED}_t{BENCH_TRAIN_SEED}_e{BENCH_EPOCHS}"
    cache = cache_dir / f"{stem}.bin"
    cache_report = cache_dir / f"{stem}.json"
    use_cache = os.environ.get("ACTEMBED_BENCH_CACHE") == "1"
    if use_cache and cache.exists() and cache_report.exists():
        with open(cache_report, encoding="utf-8") as fh:
            return load_model(cache), index, json.load(fh)
    params = init_params(vocab, index, corpus.subjects, d=config.d,
                         seed=config.seed)
    t0 = time.perf_counter()
    params, report = train(corpus, vocab, index, params, config)
    report_dict = report.to_dict()
    report_dict["train_seconds"] = time.perf_counter() - t0
    if use_cache:
        cache_dir.mkdir(exist_ok=True)
        save_model(params, cache)
        with open(cache_report, "w", encoding="utf-8") as fh:
            json.dump(report_dict, fh)
    return params, index, report_dict


@pytest.fixture(scope="session")
def bench_models(bench_cohort):
    """The four benchmark variants: day, week, day w/o smoothing, day lam=0."""
    corpus, vocab, _ = bench_cohort
    out = {}
    for name, overrides in BENCH_VARIANTS.items():
        out[name] = _train_variant(corpus, vocab, name, overrides)
    return out
