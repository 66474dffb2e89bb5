from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addsep.errors import AllSamplesDegenerate, DimensionMismatch, InsufficientSamples, ZeroStep
from addsep.finite_diff import (
    METHOD_MODES,
    Anchor,
    CornerQuad,
    CountingFunction,
    Denominator,
    corner_mixed_partial,
    corner_numerator,
    corner_test,
    score_fd,
    score_method1,
    score_method2,
    score_method3,
    score_method4,
)
from addsep.funcgen import CorpusConfig, Label, build_grid_testset, generate_corpus
from addsep.mlp import forward, init_mlp


def add(x):
    return x[0] + x[1]


def mul(x):
    return x[0] * x[1]


def quad(a, b):
    return CornerQuad(tuple(a), tuple(b), np.zeros(2))


def test_methods_map_onto_modes():
    combos = {(m.denominator, m.anchor) for m in METHOD_MODES.values()}
    assert len(combos) == 4
    assert METHOD_MODES[1].denominator is Denominator.UNIT_STEP and METHOD_MODES[1].anchor is Anchor.ALL_PAIRS
    assert METHOD_MODES[4].denominator is Denominator.TRUE_STEP and METHOD_MODES[4].anchor is Anchor.MEDIAN_ANCHOR


def test_corner_estimates_by_hand():
    for mode in METHOD_MODES.values():
        assert corner_mixed_partial(add, quad((0.3, -1.0), (2.0, 0.5)), mode) == 0.0
    assert corner_mixed_partial(mul, quad((0, 0), (1, 1)), Denominator.UNIT_STEP) == 1.0
    assert corner_mixed_partial(mul, quad((0, 0), (2, 3)), Denominator.TRUE_STEP) == 1.0
    assert corner_mixed_partial(mul, quad((0, 0), (2, 3)), Denominator.UNIT_STEP) == 6.0
    with pytest.raises(ZeroStep):
        corner_mixed_partial(mul, quad((1, 0), (1, 3)), Denominator.TRUE_STEP)


def test_sum_scores_vanish(rng):
    t = rng.uniform(-3, 3, (12, 2))
    for score in (score_method1, score_method2, score_method3, score_method4):
        assert score(add, t) <= 1e-12


def test_method1_against_brute_force():
    t = np.array([[0.5, -1.0], [2.0, 1.5], [-3.0, 0.25]])
    values = [abs((b[0] - a[0]) * (b[1] - a[1])) for a, b in combinations(t, 2)]
    assert score_method1(mul, t) == pytest.approx(np.mean(values), abs=1e-15)


def test_method2_bilinear_exactness(rng):
    t = rng.uniform(-3, 3, (15, 2))
    assert abs(score_method2(mul, t) - 1.0) <= 1e-12
    assert abs(score_method4(mul, t) - 1.0) <= 1e-12


def test_method2_skips_shared_coordinates():
    t = np.array([[1.0, 0.0], [1.0, 2.0], [3.0, 5.0], [4.0, 5.0]])
    expected_skips = sum(a[0] == b[0] or a[1] == b[1] for a, b in combinations(t, 2))
    s = score_fd(mul, t, 2)
    assert (s.n_skipped, s.n_quads) == (expected_skips, 6 - expected_skips) == (2, 4)
    assert s.score == 1.0


def test_method3_by_hand():
    t = np.array([[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0]])
    assert score_method3(mul, t) == pytest.approx(2 / 3, abs=1e-15)
    assert score_method3(mul, np.array([[0.4, 0.4]])) == 0.0


def test_degenerate_and_small_sets():
    with pytest.raises(AllSamplesDegenerate):
        score_method4(mul, np.array([[0.0, 0.0]]))
    with pytest.raises(AllSamplesDegenerate):
        score_method2(mul, np.array([[1.0, 0.0], [1.0, 2.0]]))
    with pytest.raises(InsufficientSamples):
        score_method1(mul, np.array([[1.0, 0.0]]))
    with pytest.raises(DimensionMismatch):
        score_method1(mul, np.zeros((3, 2)), 0, 0)


def test_corner_test_values(rng):
    assert corner_test(mul, [0, 0], [1, 1], 0, 1) == 1.0
    for a, b in rng.uniform(-3, 3, (20, 2, 2)):
        assert abs(corner_test(add, a, b, 0, 1)) <= 1e-14


def test_corner_test_equals_numerator(rng):
    net = init_mlp(2, seed=3)
    f = lambda x: forward(net, x)  # noqa: E731
    for a, b in rng.uniform(-3, 3, (100, 2, 2)):
        q = CornerQuad(tuple(a), tuple(b), a)
        assert abs(corner_test(f, a, b, 0, 1) - corner_numerator(f, q)) <= 1e-12


@pytest.mark.parametrize("method,quads", [(1, 435), (2, 435), (3, 30), (4, 30)])
def test_evaluation_counts(method, quads):
    counter = CountingFunction(mul)
    s = score_fd(counter, build_grid_testset(2), method)
    assert s.n_quads == quads
    assert counter.calls == 4 * quads


def test_separable_corpus_scores_vanish():
    for f in generate_corpus(CorpusConfig(arities=(2,))):
        if f.label is Label.SEPARABLE:
            t = build_grid_testset(f)
            for m in (1, 2, 3, 4):
                assert score_fd(f, t, m).score < 1e-10, f.formula


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_swap_invariance(seed):
    rng = np.random.default_rng(seed)
    net = init_mlp(2, seed=rng)
    f = lambda x: forward(net, x)  # noqa: E731
    t = rng.uniform(-3, 3, (10, 2))
    for m in (1, 2, 3, 4):
        assert abs(score_fd(f, t, m, 0, 1).score - score_fd(f, t, m, 1, 0).score) <= 1e-12


@pytest.mark.parametrize("z", [-3.0, -0.1, 0.0, 2.9])
def test_held_coordinate_irrelevant_for_partially_separable(z):
    f = lambda x: x[0] ** 2 + x[1] * x[2]  # noqa: E731
    t = build_grid_testset(3)
    for m in (1, 2, 3, 4):
        assert score_fd(f, t, m, 0, 1, context=[0.0, 0.0, z]).score < 1e-10


def test_untested_coordinates_come_from_context():
    seen = []

    def spy(x):
        seen.append(x[2])
        return float(x[0] * x[1])

    score_fd(spy, np.array([[0.0, 1.0, 5.0], [1.0, 2.0, 7.0], [2.0, 0.0, 9.0]]), 1)
    assert set(seen) == {7.0}
