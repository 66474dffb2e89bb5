"""Invariant suites for every module, runnable without pytest (``addsep selftest``).

Each check raises ``AssertionError`` on failure.  Everything is seeded; the
whole suite takes well under a minute apart from the small surrogate batch
behind the classifier-ordering check.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import tempfile
import threading
import time
import traceback
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff
from .classify import ScoreRecord, classify, confusion, optimal_threshold, score
from .core_math import softplus, softplus_double_prime, softplus_prime, softplus_triple_prime
from .derivative_net import build_derivative_network, eval_mixed_partial, eval_mixed_partial_batch
from .finite_diff import CornerQuad, CountingFunction, corner_numerator, corner_test, score_fd
from .funcgen import CorpusConfig, Label, build_grid_testset, generate_corpus, sample_training_data
from .mlp import (
    Dataset,
    Layer,
    Mlp,
    TrainConfig,
    backward,
    forward,
    forward_batch,
    init_mlp,
    mse,
    split_dataset,
    train,
)

CHECKS: list[tuple[str, str, Callable[[], None]]] = []


def check(module: str):
    def register(fn):
        CHECKS.append((module, fn.__name__, fn))
        return fn

    return register


def _close(a, b, tol, rel=False):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    err = np.abs(a - b)
    if rel:
        err = err / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    worst = float(np.max(err)) if err.size else 0.0
    assert worst <= tol, f"max error {worst:.3g} > {tol:g}"


def _random_net(rng, d, widths, scale=1.0) -> Mlp:
    sizes = [d, *widths, 1]
    return Mlp(tuple(
        Layer(rng.normal(0, scale, (o, i)), rng.normal(0, scale, o)) for i, o in zip(sizes[:-1], sizes[1:])
    ))


# -- core_math ------------------------------------------------------------------


@check("core_math")
def sigmoid_complement():
    x = np.random.default_rng(0).uniform(-40, 40, 2000)
    _close(softplus_prime(x) + softplus_prime(-x), 1.0, 1e-12)


@check("core_math")
def second_derivative_identity():
    x = np.random.default_rng(1).uniform(-40, 40, 2000)
    s = softplus_prime(x)
    _close(softplus_double_prime(x), s * (1 - s), 1e-12)


@check("core_math")
def softplus_odd_part():
    x = np.random.default_rng(2).uniform(-30, 30, 2000)
    _close(softplus(x) - softplus(-x), x, 1e-10)


@check("core_math")
def derivatives_match_central_differences():
    x = np.random.default_rng(3).uniform(-10, 10, 1000)
    h = 1e-5
    chain = (softplus, softplus_prime, softplus_double_prime, softplus_triple_prime)
    for lower, upper in zip(chain, chain[1:]):
        fd = (lower(x + h) - lower(x - h)) / (2 * h)
        exact = upper(x)
        # relative to the derivative's own scale; sigma''' crosses zero
        scale = np.max(np.abs(exact))
        assert np.max(np.abs(fd - exact)) <= 1e-7 * max(scale, 1e-300) + 1e-10, upper.__name__


# -- mlp ----------------------------------------------------------------------------


@check("mlp")
def backward_matches_central_differences():
    rng = np.random.default_rng(10)
    h = 1e-5
    for _ in range(20):
        d = int(rng.integers(1, 4))
        net = _random_net(rng, d, [int(w) for w in rng.integers(1, 6, int(rng.integers(1, 4)))])
        n = int(rng.integers(1, 6))
        batch = Dataset(rng.normal(size=(n, d)), rng.normal(size=n))
        analytic = np.concatenate([np.concatenate([g.ravel(), b]) for g, b in backward(net, batch)])
        theta = net.parameters()
        fd = np.empty_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = (mse(net.with_parameters(theta + e), batch) - mse(net.with_parameters(theta - e), batch)) / (2 * h)
        _close(analytic, fd, 1e-6, rel=True)


@check("mlp")
def early_stopping_bounds():
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, (60, 2))
    data = Dataset(x, np.sin(3 * x[:, 0]) * x[:, 1])
    for patience, cap in ((3, 400), (20, 60), (500, 40)):
        cfg = TrainConfig(patience=patience, max_epochs=cap, batch_size=16)
        _, rep = train(init_mlp(2, (5,), seed=1), data, cfg)
        assert rep.epochs_run <= rep.best_epoch + patience + 1
        assert rep.epochs_run <= cap


@check("mlp")
def best_model_reproduces_validation_loss():
    rng = np.random.default_rng(12)
    x = rng.uniform(-2, 2, (80, 2))
    data = Dataset(x, x[:, 0] ** 2 - x[:, 1])
    cfg = TrainConfig(max_epochs=120, patience=30, batch_size=32, rng_seed=4)
    best, rep = train(init_mlp(2, (6, 6), seed=2), data, cfg)
    _, val = split_dataset(data, cfg, np.random.default_rng(cfg.rng_seed))
    _close(mse(best, val), rep.best_validation_loss, 1e-12)


@check("mlp")
def forward_is_deterministic_under_concurrency():
    net = init_mlp(3, seed=5)
    pts = np.random.default_rng(13).normal(size=(200, 3))
    expected = forward_batch(net, pts)
    results = [None] * 4

    def reader(k):
        results[k] = np.array([forward(net, p) for p in pts])

    threads = [threading.Thread(target=reader, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r in results:
        assert np.array_equal(r, np.array([forward(net, p) for p in pts]))
        _close(r, expected, 1e-12)


# -- autodiff -------------------------------------------------------------------------


def _surrogates(n, seed):
    rng = np.random.default_rng(seed)
    return [init_mlp(int(rng.integers(2, 4)), seed=int(rng.integers(1 << 30))) for _ in range(n)], rng


@check("autodiff")
def nested_orders_are_symmetric():
    nets, rng = _surrogates(10, 20)
    for net in nets:
        for p in rng.uniform(-3, 3, (10, net.input_dim)):
            _close(autodiff.mixed_partial_nested(net, p, 0, 1), autodiff.mixed_partial_nested(net, p, 1, 0), 1e-10)


@check("autodiff")
def hessian_entry_equals_nested():
    nets, rng = _surrogates(10, 21)
    for net in nets:
        for p in rng.uniform(-3, 3, (5, net.input_dim)):
            hess = autodiff.hessian(net, p)
            for i in range(net.input_dim):
                for j in range(net.input_dim):
                    if i != j:
                        _close(hess[i, j], autodiff.mixed_partial_nested(net, p, i, j), 1e-10)


@check("autodiff")
def autodiff_matches_derivative_network():
    net = init_mlp(2, seed=22)
    pts = np.random.default_rng(22).uniform(-3, 3, (1000, 2))
    dn = eval_mixed_partial_batch(build_derivative_network(net, 0, 1), pts)
    nested = np.array([autodiff.mixed_partial_nested(net, p, 0, 1) for p in pts])
    _close(nested, dn, 1e-8)
    hess = np.array([autodiff.hessian(net, p)[0, 1] for p in pts[:200]])
    _close(hess, dn[:200], 1e-8)


@check("autodiff")
def backward_is_repeatable():
    tape = autodiff.Tape()
    net = init_mlp(3, seed=23)
    inputs = [tape.variable(v) for v in (0.3, -1.2, 2.0)]
    out = autodiff.record_network(tape, net, inputs)
    size = len(tape)
    first = tape.backward(out)
    assert tape.backward(out) == first
    assert len(tape) == size


# -- derivative_net -------------------------------------------------------------------------


@check("derivative_net")
def linear_in_output_weights():
    rng = np.random.default_rng(30)
    net = init_mlp(3, seed=30)
    pts = rng.uniform(-3, 3, (100, 3))
    base = eval_mixed_partial_batch(build_derivative_network(net, 0, 2), pts)
    last = net.layers[-1]
    for c in (2.0, -0.5, 1e-3):
        scaled = Mlp(net.layers[:-1] + (Layer(last.weights * c, last.bias),))
        _close(eval_mixed_partial_batch(build_derivative_network(scaled, 0, 2), pts), c * base, 1e-12)


@check("derivative_net")
def output_bias_is_irrelevant():
    net = init_mlp(2, seed=31)
    pts = np.random.default_rng(31).uniform(-3, 3, (100, 2))
    last = net.layers[-1]
    shifted = Mlp(net.layers[:-1] + (Layer(last.weights, last.bias + 7.25),))
    a = eval_mixed_partial_batch(build_derivative_network(net, 0, 1), pts)
    b = eval_mixed_partial_batch(build_derivative_network(shifted, 0, 1), pts)
    assert np.array_equal(a, b)


@check("derivative_net")
def swapping_pair_is_symmetric():
    net = init_mlp(3, seed=32)
    pts = np.random.default_rng(32).uniform(-3, 3, (200, 3))
    a = eval_mixed_partial_batch(build_derivative_network(net, 1, 2), pts)
    b = eval_mixed_partial_batch(build_derivative_network(net, 2, 1), pts)
    _close(a, b, 1e-12)


@check("derivative_net")
def matches_nested_and_hessian():
    nets, rng = _surrogates(5, 33)
    for net in nets:
        dnet = build_derivative_network(net, 0, 1)
        for p in rng.uniform(-3, 3, (20, net.input_dim)):
            v = eval_mixed_partial(dnet, p)
            _close(v, autodiff.mixed_partial_nested(net, p, 0, 1), 1e-8)
            _close(v, autodiff.hessian(net, p)[0, 1], 1e-8)


# -- finite_diff -------------------------------------------------------------------------------


@check("finite_diff")
def separable_corpus_scores_vanish():
    corpus = generate_corpus(CorpusConfig(arities=(2,)))
    for f in corpus:
        if f.label is Label.SEPARABLE:
            t = build_grid_testset(f)
            for m in (1, 2, 3, 4):
                assert score_fd(f, t, m).score < 1e-10, (f.formula, m)


@check("finite_diff")
def corner_identity_holds():
    rng = np.random.default_rng(40)
    net = init_mlp(3, seed=40)
    f = lambda x: forward(net, x)  # noqa: E731
    for _ in range(200):
        a, b = rng.uniform(-3, 3, (2, 3))
        q = CornerQuad((a[0], a[2]), (b[0], b[2]), a, 0, 2)
        # same four values summed in a different order: equal up to rounding
        scale = max(abs(f(q.corner(u, v))) for u in (a[0], b[0]) for v in (a[2], b[2]))
        _close(corner_test(f, a, b, 0, 2), corner_numerator(f, q), 8 * np.finfo(float).eps * max(scale, 1.0))


@check("finite_diff")
def evaluation_counts():
    t = build_grid_testset(2)
    f = lambda x: float(x[0] * x[1])  # noqa: E731
    for method, quads in ((1, 435), (2, 435), (3, 30), (4, 30)):
        counter = CountingFunction(f)
        score_fd(counter, t, method)
        assert counter.calls == 4 * quads, (method, counter.calls)


@check("finite_diff")
def swapping_coordinates_leaves_scores():
    rng = np.random.default_rng(41)
    net = init_mlp(2, seed=41)
    f = lambda x: forward(net, x)  # noqa: E731
    t = rng.uniform(-3, 3, (30, 2))
    for m in (1, 2, 3, 4):
        _close(score_fd(f, t, m, 0, 1).score, score_fd(f, t, m, 1, 0).score, 1e-12)


@check("finite_diff")
def held_coordinate_does_not_matter():
    f = lambda x: float(x[0] ** 2 + x[1] * x[2])  # noqa: E731
    t = build_grid_testset(3)
    for z in (-3.0, 0.0, 0.7, 2.5):
        for m in (1, 2, 3, 4):
            assert score_fd(f, t, m, 0, 1, context=np.array([0.0, 0.0, z])).score < 1e-10


# -- funcgen ------------------------------------------------------------------------------------


@check("funcgen")
def labels_are_sound():
    rng = np.random.default_rng(50)
    for f in generate_corpus(CorpusConfig(max_functions=400, rng_seed=50)):
        pts = rng.uniform(-3, 3, (100, f.arity))
        vals = []
        for p in pts:
            for i in f.partition[0]:
                for j in f.partition[1]:
                    vals.append(f.mixed_partial(p, i, j))
        vals = np.abs(vals)
        if f.label is Label.SEPARABLE:
            assert np.max(vals) <= 1e-12, f.formula
        else:
            assert np.max(vals) > 1e-6, f.formula


@check("funcgen")
def corpus_is_balanced():
    for cfg in (CorpusConfig(), CorpusConfig(arities=(2,)), CorpusConfig(max_functions=200, rng_seed=3)):
        corpus = generate_corpus(cfg)
        n_sep = sum(f.label is Label.SEPARABLE for f in corpus)
        assert 2 * n_sep == len(corpus)


@check("funcgen")
def generation_is_deterministic():
    cfg = CorpusConfig(max_functions=40, rng_seed=7)
    a, b = generate_corpus(cfg), generate_corpus(cfg)
    assert a == b
    for f, g in zip(a[:5], b[:5]):
        da, db = sample_training_data(f), sample_training_data(g)
        assert np.array_equal(da.inputs, db.inputs) and np.array_equal(da.outputs, db.outputs)
        assert np.array_equal(build_grid_testset(f), build_grid_testset(g))


# -- classify --------------------------------------------------------------------------------------


def _random_records(rng, n):
    return [
        ScoreRecord(f"f{k}", 1, float(rng.exponential()), 0.0,
                    Label.SEPARABLE if rng.random() < 0.5 else Label.NON_SEPARABLE)
        for k in range(n)
    ] + [ScoreRecord("anchor", 1, float(rng.exponential()) + 0.01, 0.0, Label.NON_SEPARABLE)]


@check("classify")
def no_false_positives_at_threshold():
    rng = np.random.default_rng(60)
    for _ in range(200):
        recs = _random_records(rng, int(rng.integers(1, 40)))
        _, _, fp, _ = confusion(recs, optimal_threshold(recs))
        assert fp == 0


@check("classify")
def threshold_monotonicity():
    rng = np.random.default_rng(61)
    scores = rng.exponential(size=300)
    ts = np.sort(rng.exponential(size=50))
    counts = [sum(classify(s, t) is Label.SEPARABLE for s in scores) for t in ts]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


@check("classify")
def derivative_methods_agree_on_scores():
    corpus = generate_corpus(CorpusConfig(arities=(2, 3), max_functions=20, rng_seed=62))
    rng = np.random.default_rng(62)
    per_method = {m: [] for m in (5, 6, 7, 8)}
    for f in corpus:
        net = init_mlp(f.arity, seed=int(rng.integers(1 << 30)))
        t = build_grid_testset(f)
        i, j = f.tested_pair
        for m in per_method:
            per_method[m].append(score(m, net, t, i, j)[0])
    ref = np.array(per_method[5])
    for m in (6, 7, 8):
        _close(per_method[m], ref, 1e-8)
        # ties broken by index, so near-equal scores may legitimately swap
        gaps = np.diff(np.sort(ref))
        if np.all(gaps > 1e-7):
            assert np.array_equal(np.argsort(per_method[m]), np.argsort(ref))


SURROGATE_PAIRS = 10
SURROGATE_EPOCHS = 1000


@check("classify")
def additive_surrogates_score_below_multiplicative():
    from .experiment import train_surrogate

    corpus = generate_corpus(CorpusConfig(arities=(2,), max_functions=2 * SURROGATE_PAIRS, rng_seed=63))
    cfg = TrainConfig(max_epochs=SURROGATE_EPOCHS)
    scores = {}
    for f in corpus:
        net, _ = train_surrogate(f, cfg)
        scores[f.id] = score(1, net, build_grid_testset(f))[0]
    by_pair: dict[int, dict[Label, float]] = {}
    for f in corpus:
        by_pair.setdefault(f.pair, {})[f.label] = scores[f.id]
    wins = [p[Label.SEPARABLE] < p[Label.NON_SEPARABLE] for p in by_pair.values()]
    assert np.mean(wins) >= 0.9, f"{sum(wins)}/{len(wins)} matched pairs ordered"


# -- cli --------------------------------------------------------------------------------------------


@check("cli")
def parallel_runs_are_identical():
    from .cli import RunConfig, cmd_evaluate, cmd_generate

    with tempfile.TemporaryDirectory() as tmp:
        outputs = []
        for workers in (1, 2):
            out = Path(tmp) / f"w{workers}"
            cfg = RunConfig(seed=5, out=str(out), workers=workers,
                            corpus=CorpusConfig(max_functions=16, rng_seed=5))
            cmd_generate(cfg)
            cmd_evaluate(cfg, oracle=True)
            rows = (out / "oracle" / "scores.csv").read_text().splitlines()
            scores = [",".join(r.split(",")[:3] + r.split(",")[4:]) for r in rows]
            outputs.append(((out / "manifest.json").read_bytes(), scores,
                            (out / "oracle" / "summary.csv").read_text().splitlines()))
        (m1, s1, t1), (m2, s2, t2) = outputs
        assert m1 == m2 and s1 == s2
        strip = lambda rows: [r.rsplit(",", 1)[0] for r in rows]  # noqa: E731
        assert strip(t1) == strip(t2)


@check("cli")
def artifacts_reproduce_from_stored_config():
    from .cli import RunConfig, cmd_generate

    with tempfile.TemporaryDirectory() as tmp:
        first = Path(tmp) / "a"
        cfg = RunConfig(seed=9, out=str(first), corpus=CorpusConfig(max_functions=6, rng_seed=9))
        cmd_generate(cfg)
        stored = RunConfig.from_dict(json.loads((first / "config.json").read_text()))
        second = Path(tmp) / "b"
        cmd_generate(dataclasses.replace(stored, out=str(second)))
        for path in sorted(first.rglob("*")):
            if path.is_file() and path.name != "config.json":
                assert path.read_bytes() == (second / path.relative_to(first)).read_bytes(), path.name


def run_all(seed: int = 0, stream=None, only: str | None = None) -> bool:
    """Run every registered check; prints one PASS/FAIL line each.  ``seed`` is accepted for CLI symmetry."""
    stream = stream or sys.stdout
    ok = True
    t_start = time.perf_counter()
    for module, name, fn in CHECKS:
        if only and module != only:
            continue
        t0 = time.perf_counter()
        try:
            fn()
            status, detail = "PASS", ""
        except Exception as exc:  # noqa: BLE001 - report and keep going
            ok = False
            status = "FAIL"
            detail = f"  {type(exc).__name__}: {exc}"
            if not isinstance(exc, AssertionError):
                detail += "\n" + traceback.format_exc()
        print(f"{status} {module}.{name} ({time.perf_counter() - t0:.2f}s){detail}", file=stream, flush=True)
    print(f"{'all checks passed' if ok else 'FAILURES'} in {time.perf_counter() - t_start:.1f}s", file=stream)
    return ok


if __name__ == "__main__":
    sys.exit(0 if run_all() else 1)
