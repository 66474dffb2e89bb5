"""Finite-difference mixed partials from rectangle corners (classifiers 1-4).

For a base point ``(x, y)`` and an offset point ``(x + h, y + k)`` in the two
tested coordinates, with every other coordinate held at a fixed context value,
the corner estimate is::

    [f(x+h, y+k) - f(x+h, y) - f(x, y+k) + f(x, y)] / D

with ``D = 1`` (unit step) or ``D = h * k`` (true step).  Corner pairs come
either from every unordered pair of test samples, or from each sample paired
with the per-coordinate median of the test set.  A classifier score is the
mean absolute corner estimate; the signed mean is kept alongside.

Sums are sequential in sample order, so scores are reproducible bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import (
    AddsepError,
    AllSamplesDegenerate,
    DimensionMismatch,
    EvaluationError,
    InsufficientSamples,
    ZeroStep,
)

ScalarFn = Callable[[np.ndarray], float]


class Denominator(enum.Enum):
    UNIT_STEP = "unit"
    TRUE_STEP = "true"


class Anchor(enum.Enum):
    ALL_PAIRS = "pairs"
    MEDIAN_ANCHOR = "median"


@dataclass(frozen=True)
class FdMode:
    denominator: Denominator
    anchor: Anchor


METHOD_MODES = {
    1: FdMode(Denominator.UNIT_STEP, Anchor.ALL_PAIRS),
    2: FdMode(Denominator.TRUE_STEP, Anchor.ALL_PAIRS),
    3: FdMode(Denominator.UNIT_STEP, Anchor.MEDIAN_ANCHOR),
    4: FdMode(Denominator.TRUE_STEP, Anchor.MEDIAN_ANCHOR),
}


@dataclass(frozen=True)
class CornerQuad:
    """Two opposite rectangle corners in coordinates ``(i, j)`` of a full input vector."""

    base: tuple[float, float]
    offset: tuple[float, float]
    context: np.ndarray
    i: int = 0
    j: int = 1

    @property
    def h(self) -> float:
        return self.offset[0] - self.base[0]

    @property
    def k(self) -> float:
        return self.offset[1] - self.base[1]

    def corner(self, xi: float, yj: float) -> np.ndarray:
        p = np.array(self.context, dtype=np.float64, copy=True)
        p[self.i] = xi
        p[self.j] = yj
        return p


@dataclass(frozen=True)
class FdScore:
    score: float  # mean |estimate|
    signed: float  # mean estimate
    n_quads: int
    n_skipped: int = 0


class CountingFunction:
    """Wraps a scalar function and counts how many times it is evaluated."""

    def __init__(self, fn: ScalarFn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x) -> float:
        self.calls += 1
        return self.fn(x)


def _evaluate(f: ScalarFn, p: np.ndarray) -> float:
    try:
        v = float(f(p))
    except AddsepError:
        raise
    except Exception as exc:
        raise EvaluationError(f"function failed at {p.tolist()}: {exc}") from exc
    if not math.isfinite(v):
        raise EvaluationError(f"function returned {v} at {p.tolist()}")
    return v


def corner_numerator(f: ScalarFn, quad: CornerQuad) -> float:
    (x, y), (xh, yk) = quad.base, quad.offset
    return (
        _evaluate(f, quad.corner(xh, yk))
        - _evaluate(f, quad.corner(xh, y))
        - _evaluate(f, quad.corner(x, yk))
        + _evaluate(f, quad.corner(x, y))
    )


def corner_mixed_partial(f: ScalarFn, quad: CornerQuad, mode: FdMode | Denominator) -> float:
    denominator = mode.denominator if isinstance(mode, FdMode) else mode
    if denominator is Denominator.TRUE_STEP:
        h, k = quad.h, quad.k
        if h == 0.0 or k == 0.0:
            raise ZeroStep(f"degenerate rectangle: h={h}, k={k}")
        return corner_numerator(f, quad) / (h * k)
    return corner_numerator(f, quad)


def corner_test(f: ScalarFn, a, b, i: int, j: int) -> float:
    """Opposite-corner sum difference for samples ``a`` and ``b`` in coordinates ``(i, j)``.

    Coordinates other than ``i`` and ``j`` are taken from ``a`` at all four corners.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"samples have shapes {a.shape} and {b.shape}")
    if not (0 <= i < a.size and 0 <= j < a.size) or i == j:
        raise DimensionMismatch(f"invalid coordinate pair ({i}, {j}) for dimension {a.size}")
    quad = CornerQuad((a[i], a[j]), (b[i], b[j]), a, i, j)
    fa = _evaluate(f, quad.corner(a[i], a[j]))
    fb = _evaluate(f, quad.corner(b[i], b[j]))
    return (fa + fb) - _evaluate(f, quad.corner(a[i], b[j])) - _evaluate(f, quad.corner(b[i], a[j]))


def default_context(testset) -> np.ndarray:
    """Held-constant values for untested coordinates: the per-coordinate median."""
    return np.median(np.asarray(testset, dtype=np.float64), axis=0)


def _prepare(testset, i, j, context):
    t = np.asarray(testset, dtype=np.float64)
    if t.ndim != 2:
        raise DimensionMismatch(f"test set must be (n, d), got shape {t.shape}")
    d = t.shape[1]
    if not (0 <= i < d and 0 <= j < d) or i == j:
        raise DimensionMismatch(f"invalid coordinate pair ({i}, {j}) for dimension {d}")
    ctx = default_context(t) if context is None else np.asarray(context, dtype=np.float64)
    if ctx.shape != (d,):
        raise DimensionMismatch(f"context must have length {d}")
    return t, ctx


def iter_quads(testset, mode: FdMode, i: int = 0, j: int = 1, context=None):
    """Yield the corner quads a mode evaluates, in deterministic order."""
    t, ctx = _prepare(testset, i, j, context)
    if mode.anchor is Anchor.ALL_PAIRS:
        for a, b in combinations(range(t.shape[0]), 2):
            yield CornerQuad((t[a, i], t[a, j]), (t[b, i], t[b, j]), ctx, i, j)
    else:
        med = default_context(t)
        anchor = (med[i], med[j])
        for s in t:
            yield CornerQuad((s[i], s[j]), anchor, ctx, i, j)


def score_fd(f: ScalarFn, testset, method: int, i: int = 0, j: int = 1, context=None) -> FdScore:
    """Score one of classifiers 1-4 on ``f`` over ``testset``."""
    mode = METHOD_MODES[method]
    t = np.asarray(testset, dtype=np.float64)
    n = t.shape[0] if t.ndim == 2 else 0
    if mode.anchor is Anchor.ALL_PAIRS and n < 2:
        raise InsufficientSamples(f"method {method} needs at least 2 samples, got {n}")
    if n < 1:
        raise InsufficientSamples("empty test set")
    abs_sum = signed_sum = 0.0
    used = skipped = 0
    for quad in iter_quads(t, mode, i, j, context):
        if mode.denominator is Denominator.TRUE_STEP and (quad.h == 0.0 or quad.k == 0.0):
            skipped += 1
            continue
        v = corner_mixed_partial(f, quad, mode)
        abs_sum += abs(v)
        signed_sum += v
        used += 1
    if used == 0:
        raise AllSamplesDegenerate(f"method {method}: every corner pair has a zero step")
    return FdScore(abs_sum / used, signed_sum / used, used, skipped)


def score_method1(f: ScalarFn, testset, i: int = 0, j: int = 1, context=None) -> float:
    return score_fd(f, testset, 1, i, j, context).score


def score_method2(f: ScalarFn, testset, i: int = 0, j: int = 1, context=None) -> float:
    return score_fd(f, testset, 2, i, j, context).score


def score_method3(f: ScalarFn, testset, i: int = 0, j: int = 1, context=None) -> float:
    return score_fd(f, testset, 3, i, j, context).score


def score_method4(f: ScalarFn, testset, i: int = 0, j: int = 1, context=None) -> float:
    return score_fd(f, testset, 4, i, j, context).score
