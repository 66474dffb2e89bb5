"""Ground-truth function corpus built from twelve univariate sub-functions.

Expressions are small trees of ``Sub(kind, var)`` leaves joined by ``Add`` and
``Mul``.  Their text form is a prefix notation::

    expr := (+ expr expr) | (* expr expr) | (sub KIND VAR)
    VAR  := x0 | x1 | x2

Corpus combinatorics, one matched pair per combination of sub-functions:

* two variables, partition x0 | x1::

      g(x0) + h(x1)            separable
      g(x0) * h(x1)            not separable

* three variables, partition x0 | (x1, x2)::

      g(x0) + a(x1) * b(x2)    separable
      g(x0) * (a(x1) + b(x2))  not separable

giving 144 + 144 two-variable and 1728 + 1728 three-variable functions.  The
three-variable non-separable form keeps ``a`` and ``b`` additive so that
holding ``x2`` at a constant never makes the tested ``x0``/``x1`` slice
separable by accident.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from itertools import product
from typing import Union

import numpy as np

from .errors import DimensionMismatch, FormatError, NonFinite, UnsatisfiableBalance
from .mlp import Dataset


def _sqrt_abs_d1(n):
    return math.copysign(1.0, n) / (2.0 * math.sqrt(abs(n)))


def _cbrt(n):
    return math.copysign(abs(n) ** (1.0 / 3.0), n)


def _cbrt_d1(n):
    return 1.0 / (3.0 * abs(n) ** (2.0 / 3.0))


class SubKind(enum.Enum):
    """The twelve univariate forms; values are the prefix-notation tokens."""

    ID = "id"
    SQUARE = "sq"
    CUBE_THIRD = "cube3"
    RECIP4 = "inv4"
    SIN = "sin"
    COS = "cos"
    SIN2 = "sin2"
    COS2 = "cos2"
    EXP = "exp"
    LOG4 = "log4"
    SQRT_ABS = "sqrtabs"
    CBRT = "cbrt"


# kind -> (display template, value, first derivative, second derivative)
_FORMS = {
    SubKind.ID: ("{v}", lambda n: n, lambda n: 1.0, lambda n: 0.0),
    SubKind.SQUARE: ("{v}^2", lambda n: n * n, lambda n: 2.0 * n, lambda n: 2.0),
    SubKind.CUBE_THIRD: ("({v}/3)^3", lambda n: (n / 3.0) ** 3, lambda n: n * n / 9.0, lambda n: 2.0 * n / 9.0),
    SubKind.RECIP4: ("1/({v}+4)", lambda n: 1.0 / (n + 4.0), lambda n: -1.0 / (n + 4.0) ** 2,
                     lambda n: 2.0 / (n + 4.0) ** 3),
    SubKind.SIN: ("sin({v})", math.sin, math.cos, lambda n: -math.sin(n)),
    SubKind.COS: ("cos({v})", math.cos, lambda n: -math.sin(n), lambda n: -math.cos(n)),
    SubKind.SIN2: ("sin({v})^2", lambda n: math.sin(n) ** 2, lambda n: math.sin(2.0 * n),
                   lambda n: 2.0 * math.cos(2.0 * n)),
    SubKind.COS2: ("cos({v})^2", lambda n: math.cos(n) ** 2, lambda n: -math.sin(2.0 * n),
                   lambda n: -2.0 * math.cos(2.0 * n)),
    SubKind.EXP: ("exp({v})", math.exp, math.exp, math.exp),
    SubKind.LOG4: ("log({v}+4)", lambda n: math.log(n + 4.0), lambda n: 1.0 / (n + 4.0),
                   lambda n: -1.0 / (n + 4.0) ** 2),
    SubKind.SQRT_ABS: ("sqrt(|{v}|)", lambda n: math.sqrt(abs(n)), _sqrt_abs_d1,
                       lambda n: -1.0 / (4.0 * abs(n) ** 1.5)),
    SubKind.CBRT: ("{v}^(1/3)", _cbrt, _cbrt_d1, lambda n: -2.0 * math.copysign(1.0, n) / (9.0 * abs(n) ** (5.0 / 3.0))),
}

ALL_KINDS = tuple(SubKind)


def eval_subfunction(kind: SubKind, n: float, order: int = 0) -> float:
    """Value (``order=0``) or derivative (1, 2) of a sub-function at ``n``."""
    fn = _FORMS[kind][1 + order]
    try:
        v = fn(float(n))
    except (ValueError, OverflowError, ZeroDivisionError) as exc:
        raise NonFinite(f"{kind.value} (order {order}) undefined at {n}: {exc}") from None
    if not math.isfinite(v):
        raise NonFinite(f"{kind.value} (order {order}) is {v} at {n}")
    return v


@dataclass(frozen=True)
class Sub:
    kind: SubKind
    var: int


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


Expr = Union[Sub, Add, Mul]


def eval_expr(expr: Expr, x) -> float:
    if isinstance(expr, Sub):
        return eval_subfunction(expr.kind, x[expr.var])
    if isinstance(expr, Add):
        return eval_expr(expr.left, x) + eval_expr(expr.right, x)
    return eval_expr(expr.left, x) * eval_expr(expr.right, x)


def eval_partial(expr: Expr, x, wrt: tuple[int, ...]) -> float:
    """Analytic partial derivative with respect to the variables in ``wrt`` (at most two)."""
    if not wrt:
        return eval_expr(expr, x)
    if isinstance(expr, Sub):
        if any(v != expr.var for v in wrt):
            return 0.0
        if len(wrt) > 2:
            raise ValueError("derivatives above second order are not tabulated")
        return eval_subfunction(expr.kind, x[expr.var], len(wrt))
    if isinstance(expr, Add):
        return eval_partial(expr.left, x, wrt) + eval_partial(expr.right, x, wrt)
    # Leibniz rule over every split of wrt between the two factors
    total = 0.0
    n = len(wrt)
    for mask in range(1 << n):
        left = tuple(wrt[b] for b in range(n) if mask >> b & 1)
        right = tuple(wrt[b] for b in range(n) if not mask >> b & 1)
        total += eval_partial(expr.left, x, left) * eval_partial(expr.right, x, right)
    return total


def variables(expr: Expr) -> set[int]:
    if isinstance(expr, Sub):
        return {expr.var}
    return variables(expr.left) | variables(expr.right)


def to_prefix(expr: Expr) -> str:
    if isinstance(expr, Sub):
        return f"(sub {expr.kind.value} x{expr.var})"
    op = "+" if isinstance(expr, Add) else "*"
    return f"({op} {to_prefix(expr.left)} {to_prefix(expr.right)})"


def to_formula(expr: Expr, parent: str = "") -> str:
    if isinstance(expr, Sub):
        return _FORMS[expr.kind][0].format(v=f"x{expr.var}")
    if isinstance(expr, Add):
        s = f"{to_formula(expr.left, '+')} + {to_formula(expr.right, '+')}"
        return f"({s})" if parent == "*" else s
    return f"{to_formula(expr.left, '*')} * {to_formula(expr.right, '*')}"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_prefix(text: str) -> Expr:
    tokens = _TOKEN.findall(text)
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise FormatError(f"unexpected end of expression: {text!r}")
        pos += 1
        return tokens[pos - 1]

    def parse() -> Expr:
        if take() != "(":
            raise FormatError(f"expected '(' in {text!r}")
        head = take()
        if head == "sub":
            kind_tok, var_tok = take(), take()
            try:
                kind = SubKind(kind_tok)
            except ValueError:
                raise FormatError(f"unknown sub-function {kind_tok!r}") from None
            if not re.fullmatch(r"x\d+", var_tok):
                raise FormatError(f"bad variable {var_tok!r}")
            node: Expr = Sub(kind, int(var_tok[1:]))
        elif head in ("+", "*"):
            left, right = parse(), parse()
            node = Add(left, right) if head == "+" else Mul(left, right)
        else:
            raise FormatError(f"unknown operator {head!r}")
        if take() != ")":
            raise FormatError(f"expected ')' in {text!r}")
        return node

    expr = parse()
    if pos != len(tokens):
        raise FormatError(f"trailing tokens in {text!r}")
    return expr


class Label(enum.Enum):
    SEPARABLE = "separable"
    NON_SEPARABLE = "non_separable"


def is_separable(expr: Expr, partition) -> bool:
    """Structural check: the expression is a sum of terms that each stay inside one group."""
    groups = [set(g) for g in partition]

    def terms(e):
        if isinstance(e, Add):
            return terms(e.left) + terms(e.right)
        return [e]

    return all(any(variables(t) <= g for g in groups) for t in terms(expr))


@dataclass(frozen=True)
class SymbolicFunction:
    id: str
    arity: int
    expr: Expr
    partition: tuple[tuple[int, ...], tuple[int, ...]]
    label: Label
    seed: int = 0
    pair: int = -1

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.arity,):
            raise DimensionMismatch(f"{self.id} takes {self.arity} inputs, got shape {x.shape}")
        return eval_expr(self.expr, x)

    @property
    def tested_pair(self) -> tuple[int, int]:
        """First variable of each partition group: the coordinates classifiers test."""
        return self.partition[0][0], self.partition[1][0]

    def mixed_partial(self, x, i: int | None = None, j: int | None = None) -> float:
        if i is None or j is None:
            i, j = self.tested_pair
        return eval_partial(self.expr, np.asarray(x, dtype=np.float64), (i, j))

    @property
    def formula(self) -> str:
        return to_formula(self.expr)


def eval_symbolic(f: SymbolicFunction, x) -> float:
    return f(x)


@dataclass(frozen=True)
class CorpusConfig:
    arities: tuple[int, ...] = (2, 3)
    max_functions: int | None = None
    balance: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "arities", tuple(sorted(set(self.arities))))
        if not self.arities or not set(self.arities) <= {2, 3}:
            raise ValueError(f"arities must be a non-empty subset of {{2, 3}}, got {self.arities}")
        if self.max_functions is not None and self.max_functions < 1:
            raise ValueError("max_functions must be positive")


def _pair_exprs(arity: int, kinds: tuple[SubKind, ...]) -> tuple[Expr, Expr]:
    if arity == 2:
        g, h = Sub(kinds[0], 0), Sub(kinds[1], 1)
        return Add(g, h), Mul(g, h)
    g, a, b = Sub(kinds[0], 0), Sub(kinds[1], 1), Sub(kinds[2], 2)
    return Add(g, Mul(a, b)), Mul(g, Add(a, b))


def _partition(arity: int):
    return ((0,), (1,)) if arity == 2 else ((0,), (1, 2))


def derive_seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(base), *map(int, keys)]).generate_state(1)[0])


def generate_corpus(cfg: CorpusConfig = CorpusConfig()) -> list[SymbolicFunction]:
    """Enumerate matched (separable, non-separable) pairs, optionally subsampled.

    With ``balance=True`` whole pairs are sampled, so the result is exactly
    half separable and each separable function has its multiplicative twin.
    """
    combos = [(arity, kinds) for arity in cfg.arities for kinds in product(ALL_KINDS, repeat=arity)]
    total = 2 * len(combos)
    rng = np.random.default_rng(cfg.rng_seed)
    if cfg.max_functions is None or cfg.max_functions >= total:
        chosen = [(c, (0, 1)) for c in range(len(combos))]
    elif cfg.balance:
        if cfg.max_functions % 2:
            raise UnsatisfiableBalance(f"cannot balance an odd corpus size {cfg.max_functions}")
        picks = np.sort(rng.choice(len(combos), cfg.max_functions // 2, replace=False))
        chosen = [(int(c), (0, 1)) for c in picks]
    else:
        picks = np.sort(rng.choice(total, cfg.max_functions, replace=False))
        chosen = [(int(p) // 2, (int(p) % 2,)) for p in picks]

    corpus = []
    for c, members in chosen:
        arity, kinds = combos[c]
        exprs = _pair_exprs(arity, kinds)
        for m in members:
            index = len(corpus)
            label = Label.SEPARABLE if m == 0 else Label.NON_SEPARABLE
            corpus.append(
                SymbolicFunction(
                    id=f"f{index:05d}",
                    arity=arity,
                    expr=exprs[m],
                    partition=_partition(arity),
                    label=label,
                    seed=derive_seed(cfg.rng_seed, index),
                    pair=c,
                )
            )
    return corpus


@dataclass(frozen=True)
class SamplingConfig:
    """How training data and grid test sets are drawn.

    ``layout="product"`` draws ``points`` values per variable and trains on
    every combination (``points ** arity`` tuples); ``layout="tuples"`` draws
    ``points`` tuples in total.
    """

    points: int = 30
    low: float = -3.0
    high: float = 3.0
    layout: str = "product"

    def __post_init__(self):
        if self.layout not in ("product", "tuples"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.points < 1 or not self.low < self.high:
            raise ValueError("need points >= 1 and low < high")


def sample_training_data(f: SymbolicFunction, cfg: SamplingConfig = SamplingConfig(),
                         rng_seed: int | None = None) -> Dataset:
    """Inputs drawn uniformly from [low, high] in every coordinate, outputs from the analytic form."""
    rng = np.random.default_rng(f.seed if rng_seed is None else rng_seed)
    if cfg.layout == "tuples":
        x = rng.uniform(cfg.low, cfg.high, size=(cfg.points, f.arity))
    else:
        axes = rng.uniform(cfg.low, cfg.high, size=(f.arity, cfg.points))
        x = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, f.arity)
    y = np.array([eval_expr(f.expr, row) for row in x])
    return Dataset(x, y)


def build_grid_testset(f_or_arity, cfg: SamplingConfig = SamplingConfig()) -> np.ndarray:
    """Index-aligned grid: row t holds the t-th of ``cfg.points`` evenly spaced values in every column."""
    arity = f_or_arity.arity if isinstance(f_or_arity, SymbolicFunction) else int(f_or_arity)
    grid = np.linspace(cfg.low, cfg.high, cfg.points)
    return np.repeat(grid[:, None], arity, axis=1)


# -- manifest ---------------------------------------------------------------


def function_to_entry(f: SymbolicFunction) -> dict:
    return {
        "id": f.id,
        "arity": f.arity,
        "expression": to_prefix(f.expr),
        "formula": f.formula,
        "partition": [list(g) for g in f.partition],
        "label": f.label.value,
        "seed": f.seed,
        "pair": f.pair,
    }


def function_from_entry(entry: dict) -> SymbolicFunction:
    try:
        expr = parse_prefix(entry["expression"])
        partition = tuple(tuple(int(v) for v in g) for g in entry["partition"])
        f = SymbolicFunction(
            id=str(entry["id"]),
            arity=int(entry["arity"]),
            expr=expr,
            partition=partition,  # type: ignore[arg-type]
            label=Label(entry["label"]),
            seed=int(entry["seed"]),
            pair=int(entry.get("pair", -1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed manifest entry: {exc}") from exc
    if max(variables(expr)) >= f.arity or len(partition) != 2:
        raise FormatError(f"{f.id}: expression or partition inconsistent with arity {f.arity}")
    return f
