"""Per-function surrogate training recipe shared by the CLI and the test suites."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

from .funcgen import SamplingConfig, SymbolicFunction, derive_seed, sample_training_data
from .mlp import DEFAULT_HIDDEN, Dataset, Mlp, TrainConfig, TrainReport, init_mlp, train


def train_surrogate(f: SymbolicFunction, train_cfg: TrainConfig = TrainConfig(),
                    sampling: SamplingConfig = SamplingConfig(),
                    hidden: Sequence[int] = DEFAULT_HIDDEN) -> tuple[Mlp, TrainReport]:
    """Sample ``f``, initialise a fresh network and train it.

    Every random stream (data, initial weights, split and shuffling) is
    derived from ``f.seed``, so the result does not depend on which worker
    runs it or in what order.
    """
    return train_on(f, sample_training_data(f, sampling), train_cfg, hidden)


def train_on(f: SymbolicFunction, data: Dataset, train_cfg: TrainConfig = TrainConfig(),
             hidden: Sequence[int] = DEFAULT_HIDDEN) -> tuple[Mlp, TrainReport]:
    net = init_mlp(f.arity, hidden, seed=derive_seed(f.seed, 1))
    cfg = dataclasses.replace(train_cfg, rng_seed=derive_seed(f.seed, 2))
    return train(net, data, cfg)


def _job(args):
    f, cfg, sampling, hidden = args
    return train_surrogate(f, cfg, sampling, hidden)


def train_corpus(corpus: Sequence[SymbolicFunction], train_cfg: TrainConfig = TrainConfig(),
                 sampling: SamplingConfig = SamplingConfig(), hidden: Sequence[int] = DEFAULT_HIDDEN,
                 workers: int = 1) -> dict[str, tuple[Mlp, TrainReport]]:
    jobs = [(f, train_cfg, sampling, tuple(hidden)) for f in corpus]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    return {f.id: r for f, r in zip(corpus, results)}
