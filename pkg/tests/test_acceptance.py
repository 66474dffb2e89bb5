"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 1, 3 and 4 share a module-scoped fixture that trains the balanced
60-function two-variable desk corpus for seeds 0, 1 and 2 (about four minutes
on one core).  Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from addsep import autodiff
from addsep.classify import run_evaluation
from addsep.derivative_net import build_derivative_network, eval_mixed_partial_batch
from addsep.experiment import train_corpus
from addsep.finite_diff import CountingFunction, score_fd
from addsep.funcgen import CorpusConfig, Label, build_grid_testset, generate_corpus
from addsep.mlp import Dataset, TrainConfig, backward, forward, init_mlp, mse

DESK_SEEDS = (0, 1, 2)
DESK_FUNCTIONS = 60
# Compute cap for desk-scale training; patience 500 still applies inside it.
DESK_EPOCHS = 1000


@pytest.fixture(scope="module")
def say(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line)
        return ok

    return emit


@pytest.fixture(scope="module")
def desk():
    """{seed: (corpus, surrogates, report, train_seconds)} for the desk corpora."""
    out = {}
    for seed in DESK_SEEDS:
        corpus = generate_corpus(CorpusConfig(arities=(2,), max_functions=DESK_FUNCTIONS, rng_seed=seed))
        t0 = time.perf_counter()
        trained = train_corpus(corpus, TrainConfig(max_epochs=DESK_EPOCHS))
        elapsed = time.perf_counter() - t0
        nets = {fid: net for fid, (net, _) in trained.items()}
        report = run_evaluation(corpus, nets)
        out[seed] = (corpus, nets, report, elapsed + sum(r.wall_time for r in report.records))
    return out


def _fd_mixed(net, p, h=1e-4):
    def at(di, dj):
        return forward(net, p + np.array([di, dj]))

    return (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h)


def test_criterion_1_derivative_engines_agree(desk, say):
    corpus, nets, _, _ = desk[0]
    t0 = time.perf_counter()
    worst_pair = worst_fd = 0.0
    n_points = 0
    for f in corpus[:50]:
        net = nets[f.id]
        pts = build_grid_testset(f)
        m8 = eval_mixed_partial_batch(build_derivative_network(net, 0, 1), pts)
        for p, v8 in zip(pts, m8):
            v5 = autodiff.mixed_partial_nested(net, p, 0, 1)
            v6 = autodiff.mixed_partial_nested(net, p, 1, 0)
            v7 = autodiff.hessian(net, p)[0, 1]
            vals = (v5, v6, v7, v8)
            worst_pair = max(worst_pair, max(vals) - min(vals))
            fd = _fd_mixed(net, p)
            worst_fd = max(worst_fd, max(abs(v - fd) for v in vals))
            n_points += 1
    elapsed = time.perf_counter() - t0
    ok = worst_pair <= 1e-8 and worst_fd <= 1e-4 and elapsed < 120
    say(1, ok, f"{n_points} points on 50 surrogates; max pairwise gap {worst_pair:.2e} (<=1e-8), "
               f"max gap to FD {worst_fd:.2e} (<=1e-4), {elapsed:.1f}s (<120s)")
    assert ok


def test_criterion_2_oracle_classification(say):
    corpus = generate_corpus(CorpusConfig(max_functions=200, rng_seed=0))
    assert 2 * sum(f.label is Label.SEPARABLE for f in corpus) == len(corpus)
    t0 = time.perf_counter()
    report = run_evaluation(corpus, None)
    elapsed = time.perf_counter() - t0
    accs = {m: s.accuracy for m, s in report.summaries.items()}
    worst_t = max(s.threshold for s in report.summaries.values())
    ok = len(accs) == 8 and all(a == 1.0 for a in accs.values()) and worst_t < 1e-8 and elapsed < 60
    say(2, ok, f"oracle accuracies {sorted(set(accs.values()))}, max threshold {worst_t:.2e} (<1e-8), "
               f"{elapsed:.1f}s (<60s)")
    assert ok


def test_criterion_3_desk_table(desk, say):
    lines, ok = [], True
    total = 0.0
    for seed, (corpus, _, report, seconds) in desk.items():
        c1, c5 = report.summaries[1].accuracy, report.summaries[5].accuracy
        ok &= c1 >= 0.75 and c1 >= c5
        total += seconds
        lines.append(f"seed {seed}: C1 {c1:.4f} C5 {c5:.4f}")
    ok &= total < 1800
    say(3, ok, "; ".join(lines) + f"; C1>=0.75 and C1>=C5 on 3/3 seeds required; {total:.0f}s (<1800s)")
    assert ok


def test_criterion_4_cost_structure(desk, say):
    _, _, report, _ = desk[0]
    t = {m: s.mean_time for m, s in report.summaries.items()}
    timing_ok = all(t[7] > t[m] for m in (5, 6, 8))
    counts = {}
    for method in (1, 2, 3, 4):
        counter = CountingFunction(lambda x: float(x[0] * x[1]))
        s = score_fd(counter, build_grid_testset(2), method)
        counts[method] = (s.n_quads, counter.calls)
    count_ok = all(counts[m] == (435, 4 * 435) for m in (1, 2)) and all(counts[m] == (30, 120) for m in (3, 4))
    ok = timing_ok and count_ok
    say(4, ok, f"mean seconds M5 {t[5]:.4f} M6 {t[6]:.4f} M7 {t[7]:.4f} M8 {t[8]:.5f} (M7 largest required); "
               f"corner estimates per function M1/M2 {counts[1][0]}/{counts[2][0]}, "
               f"M3/M4 {counts[3][0]}/{counts[4][0]} (4 evaluations each)")
    assert ok


def test_criterion_5_gradient_correctness(say):
    rng = np.random.default_rng(2024)
    worst_fd = worst_tape = worst_input = 0.0
    h = 1e-5
    for _ in range(100):
        d = int(rng.integers(1, 4))
        net = init_mlp(d, [int(w) for w in rng.integers(1, 6, int(rng.integers(1, 3)))], seed=rng)
        n = int(rng.integers(1, 6))
        batch = Dataset(rng.normal(size=(n, d)), rng.normal(size=n))
        analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in backward(net, batch)])
        theta = net.parameters()
        fd = np.empty_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = (mse(net.with_parameters(theta + e), batch) - mse(net.with_parameters(theta - e), batch)) / (2 * h)
        worst_fd = max(worst_fd, float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd)))))

        loss, params = autodiff.mse_on_tape(net, batch.inputs, batch.outputs)
        flat = [s for w, b in params for s in [*(v for row in w for v in row), *b]]
        tape = np.array(autodiff.grad(loss, flat))
        worst_tape = max(worst_tape, float(np.max(np.abs(tape - analytic))))

        p = rng.normal(size=d)
        fd_in = np.array([(forward(net, p + h * e) - forward(net, p - h * e)) / (2 * h) for e in np.eye(d)])
        worst_input = max(worst_input, float(np.max(np.abs(autodiff.gradient(net, p) - fd_in)
                                                    / np.maximum(1.0, np.abs(fd_in)))))
    ok = worst_fd <= 1e-6 and worst_input <= 1e-6 and worst_tape <= 1e-10
    say(5, ok, f"100 nets: backprop vs FD {worst_fd:.2e}, input gradient vs FD {worst_input:.2e} (<=1e-6 rel); "
               f"tape vs backprop {worst_tape:.2e} (<=1e-10)")
    assert ok


def test_criterion_6_closure(say):
    corpus = generate_corpus(CorpusConfig(max_functions=80, rng_seed=6))
    seps = [f for f in corpus if f.label is Label.SEPARABLE]
    worst, n = 0.0, 0
    for f1, f2 in zip(seps, seps[1:] + seps[:1]):
        if f1.arity != f2.arity:
            continue
        t = build_grid_testset(f1)
        i, j = f1.tested_pair
        variants = [lambda x, a=f1, b=f2: a(x) + b(x)]
        variants += [lambda x, a=f1, c=c: c * a(x) for c in (-3.5, 0.1, 7.0, 250.0)]
        for g in variants:
            for m in (1, 2, 3, 4):
                worst = max(worst, score_fd(g, t, m, i, j).score)
                n += 1
    ok = n > 0 and worst < 1e-10
    say(6, ok, f"{n} scores of f1+f2 and c*f1 in oracle mode, max {worst:.2e} (<1e-10)")
    assert ok


def test_criterion_7_selftest(say):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "addsep", "selftest", "-q"], capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    lines = proc.stdout.splitlines()
    n_pass = sum(line.startswith("PASS") for line in lines)
    n_fail = sum(line.startswith("FAIL") for line in lines)
    ok = proc.returncode == 0 and n_fail == 0 and n_pass > 0 and elapsed < 300
    say(7, ok, f"selftest {n_pass} passed, {n_fail} failed, exit {proc.returncode}, {elapsed:.0f}s (<300s)")
    assert ok, proc.stdout + proc.stderr
