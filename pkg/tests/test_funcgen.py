import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from addsep.errors import FormatError, UnsatisfiableBalance
from addsep.funcgen import (
    ALL_KINDS,
    Add,
    CorpusConfig,
    Label,
    Mul,
    SamplingConfig,
    Sub,
    SubKind,
    SymbolicFunction,
    build_grid_testset,
    eval_partial,
    eval_subfunction,
    eval_symbolic,
    function_from_entry,
    function_to_entry,
    generate_corpus,
    is_separable,
    parse_prefix,
    sample_training_data,
    to_prefix,
)


def fn(expr, arity=2, label=Label.NON_SEPARABLE):
    return SymbolicFunction("t", arity, expr, ((0,), tuple(range(1, arity))), label)


def test_subfunction_values():
    assert eval_subfunction(SubKind.RECIP4, 0.0) == 0.25
    assert eval_subfunction(SubKind.SQRT_ABS, -9.0) == 3.0
    assert eval_subfunction(SubKind.CUBE_THIRD, 3.0) == 1.0
    assert eval_subfunction(SubKind.CBRT, -8.0) == pytest.approx(-2.0, abs=1e-15)
    assert eval_subfunction(SubKind.LOG4, -3.0) == 0.0


@given(st.sampled_from(ALL_KINDS), st.floats(-3, 3))
def test_subfunctions_finite_on_range(kind, n):
    assert math.isfinite(eval_subfunction(kind, n))


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_subfunction_derivatives_match_fd(kind):
    h = 1e-6
    for n in np.linspace(-2.9, 2.9, 12):  # avoids the kinks of sqrt|n| and n^(1/3) at 0
        for order in (0, 1):
            fd = (eval_subfunction(kind, n + h, order) - eval_subfunction(kind, n - h, order)) / (2 * h)
            exact = eval_subfunction(kind, n, order + 1)
            assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact)), (kind, n, order)


def test_two_variable_enumeration():
    corpus = generate_corpus(CorpusConfig(arities=(2,)))
    labels = [f.label for f in corpus]
    assert labels.count(Label.SEPARABLE) == 144 and labels.count(Label.NON_SEPARABLE) == 144
    formulas = {f.formula: f.label for f in corpus}
    assert formulas["sin(x0) + x1^2"] is Label.SEPARABLE
    assert formulas["exp(x0) * log(x1+4)"] is Label.NON_SEPARABLE


def test_full_corpus_size():
    corpus = generate_corpus(CorpusConfig())
    assert len(corpus) == 2 * (12**2 + 12**3) == 3744
    assert {f.arity for f in corpus} == {2, 3}


def test_balance_and_truncation():
    for size in (2, 60, 200):
        corpus = generate_corpus(CorpusConfig(max_functions=size, rng_seed=size))
        assert len(corpus) == size
        assert 2 * sum(f.label is Label.SEPARABLE for f in corpus) == size
    with pytest.raises(UnsatisfiableBalance):
        generate_corpus(CorpusConfig(max_functions=7))
    unbalanced = generate_corpus(CorpusConfig(max_functions=7, balance=False))
    assert len(unbalanced) == 7


def test_structural_labels_agree():
    for f in generate_corpus(CorpusConfig(max_functions=300, rng_seed=1)):
        assert is_separable(f.expr, f.partition) == (f.label is Label.SEPARABLE)


def test_label_soundness(rng):
    for f in generate_corpus(CorpusConfig(max_functions=200, rng_seed=2)):
        values = np.array([
            f.mixed_partial(p, i, j)
            for p in rng.uniform(-3, 3, (100, f.arity))
            for i in f.partition[0] for j in f.partition[1]
        ])
        if f.label is Label.SEPARABLE:
            assert np.max(np.abs(values)) <= 1e-12
        else:
            assert np.max(np.abs(values)) > 1e-6


def test_symbolic_values():
    x, y = Sub(SubKind.ID, 0), Sub(SubKind.ID, 1)
    assert eval_symbolic(fn(Add(x, y)), [1.0, 2.0]) == 3.0
    assert fn(Mul(x, y)).mixed_partial([0.3, -2.0]) == 1.0
    assert fn(Mul(Sub(SubKind.SIN, 0), Sub(SubKind.COS, 1))).mixed_partial([0.0, 0.0]) == 0.0


def test_partial_matches_fd(rng):
    f = generate_corpus(CorpusConfig(arities=(3,), max_functions=2, rng_seed=4))[1]
    h = 1e-5
    for p in rng.uniform(-2.5, 2.5, (10, 3)):
        e0, e1 = np.eye(3)[0] * h, np.eye(3)[1] * h
        fd = (f(p + e0 + e1) - f(p + e0 - e1) - f(p - e0 + e1) + f(p - e0 - e1)) / (4 * h * h)
        assert abs(eval_partial(f.expr, p, (0, 1)) - fd) <= 1e-4 * max(1.0, abs(fd))


def test_prefix_roundtrip():
    for f in generate_corpus(CorpusConfig(max_functions=50, rng_seed=5)):
        assert parse_prefix(to_prefix(f.expr)) == f.expr
        assert function_from_entry(function_to_entry(f)) == f
    for bad in ("(sub nope x0)", "(+ (sub id x0))", "(sub id x0) extra", "(- (sub id x0) (sub id x1))", "(sub id y)"):
        with pytest.raises(FormatError):
            parse_prefix(bad)
    with pytest.raises(FormatError):
        function_from_entry({"id": "f", "arity": 2})


def test_determinism():
    cfg = CorpusConfig(max_functions=20, rng_seed=9)
    a, b = generate_corpus(cfg), generate_corpus(cfg)
    assert a == b
    for f, g in zip(a, b):
        assert np.array_equal(sample_training_data(f).inputs, sample_training_data(g).inputs)
    assert generate_corpus(CorpusConfig(max_functions=20, rng_seed=10)) != a


def test_training_data_contract():
    f = generate_corpus(CorpusConfig(arities=(2,), max_functions=2, rng_seed=3))[0]
    data = sample_training_data(f)
    assert data.inputs.shape == (900, 2)
    assert np.all((data.inputs >= -3) & (data.inputs <= 3))
    assert np.array_equal(data.outputs, [eval_symbolic(f, x) for x in data.inputs])
    assert len(np.unique(data.inputs[:, 0])) == 30
    tuples = sample_training_data(f, SamplingConfig(layout="tuples"))
    assert tuples.inputs.shape == (30, 2)


@pytest.mark.parametrize("arity", [2, 3])
def test_grid_testset(arity):
    t = build_grid_testset(arity)
    assert t.shape == (30, arity)
    assert np.all(t[0] == -3.0) and np.all(t[-1] == 3.0)
    assert np.allclose(np.diff(t, axis=0), 6 / 29, rtol=0, atol=1e-15)
