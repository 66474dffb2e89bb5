"""Scalar reverse-mode automatic differentiation on an explicit tape.

Nodes are appended in evaluation order, so a node's parents always have
smaller indices and a reverse scan of the node list is a valid backward
sweep.  A sweep can itself be recorded (``create_graph=True``): adjoints are
then new nodes on the same tape and can be differentiated again, which is how
second derivatives of a network are obtained (reverse-over-reverse).

Primitive set::

    VAR, CONST              leaves
    ADD(a, b), MUL(a, b)
    AFFINE(p..., c..., b)   sum_k c_k * p_k + b with constant coefficients
    SOFTPLUS(a)             local partial is SP1(a)
    SP1(a)                  softplus'(a), local partial SP2(a)
    SP2(a)                  softplus''(a), local partial softplus'''(a) (float sweeps only)

AFFINE keeps a network layer's constant weights out of the node count while
staying a scalar-valued operation.
"""

from __future__ import annotations

import numpy as np

from .core_math import (
    ActivationKind,
    softplus,
    softplus_double_prime,
    softplus_prime,
    softplus_triple_prime,
)
from .errors import DimensionMismatch, NotDifferentiable, SameVariable, TapeMismatch, UnsupportedActivation

VAR, CONST, ADD, MUL, AFFINE, SOFTPLUS, SP1, SP2 = range(8)
OP_NAMES = ("var", "const", "add", "mul", "affine", "softplus", "softplus'", "softplus''")


class Tape:
    """Append-only record of scalar operations."""

    __slots__ = ("ops", "parents", "coefs", "values")

    def __init__(self):
        self.ops: list[int] = []
        self.parents: list[tuple[int, ...]] = []
        self.coefs: list[tuple[float, ...] | None] = []
        self.values: list[float] = []

    def __len__(self) -> int:
        return len(self.values)

    def _push(self, op: int, parents: tuple[int, ...], value: float, coefs=None) -> int:
        self.ops.append(op)
        self.parents.append(parents)
        self.coefs.append(coefs)
        self.values.append(value)
        return len(self.values) - 1

    # -- primitives (all take and return node indices) -----------------------

    def variable(self, value: float) -> int:
        return self._push(VAR, (), float(value))

    def constant(self, value: float) -> int:
        return self._push(CONST, (), float(value))

    def add(self, a: int, b: int) -> int:
        v = self.values
        return self._push(ADD, (a, b), v[a] + v[b])

    def mul(self, a: int, b: int) -> int:
        v = self.values
        return self._push(MUL, (a, b), v[a] * v[b])

    def affine(self, parents, coefs, bias: float = 0.0) -> int:
        parents = tuple(parents)
        coefs = tuple(float(c) for c in coefs)
        v = self.values
        total = bias
        for p, c in zip(parents, coefs):
            total += c * v[p]
        return self._push(AFFINE, parents, total, coefs + (float(bias),))

    def softplus(self, a: int) -> int:
        return self._push(SOFTPLUS, (a,), softplus(self.values[a]))

    def softplus_prime(self, a: int) -> int:
        return self._push(SP1, (a,), softplus_prime(self.values[a]))

    def softplus_double_prime(self, a: int) -> int:
        return self._push(SP2, (a,), softplus_double_prime(self.values[a]))

    # -- sweeps ---------------------------------------------------------------

    def backward(self, output: int, seed: float = 1.0) -> list[float]:
        """Float adjoints d(output)/d(node) for every node up to ``output``."""
        adj = [0.0] * (output + 1)
        adj[output] = seed
        ops, parents, coefs, values = self.ops, self.parents, self.coefs, self.values
        for i in range(output, -1, -1):
            g = adj[i]
            if g == 0.0:
                continue
            op = ops[i]
            if op <= CONST:
                continue
            ps = parents[i]
            if op == AFFINE:
                for p, c in zip(ps, coefs[i]):
                    adj[p] += g * c
            elif op == ADD:
                adj[ps[0]] += g
                adj[ps[1]] += g
            elif op == MUL:
                a, b = ps
                adj[a] += g * values[b]
                adj[b] += g * values[a]
            elif op == SOFTPLUS:
                adj[ps[0]] += g * softplus_prime(values[ps[0]])
            elif op == SP1:
                adj[ps[0]] += g * softplus_double_prime(values[ps[0]])
            else:
                adj[ps[0]] += g * softplus_triple_prime(values[ps[0]])
        return adj

    def backward_graph(self, output: int, wrt) -> list[int]:
        """Record the backward sweep from ``output`` on this tape.

        Returns, for each node in ``wrt``, a node holding d(output)/d(node)
        that can itself be differentiated by a later sweep.  Nodes never
        reached by the sweep get a fresh zero constant.
        """
        pending: dict[int, list[tuple[float, int]]] = {output: [(1.0, self.constant(1.0))]}
        adjoint: dict[int, int] = {}
        wanted = set(wrt)
        ops, parents, coefs = self.ops, self.parents, self.coefs
        for i in range(output, -1, -1):
            terms = pending.pop(i, None)
            if terms is None:
                continue
            if len(terms) == 1 and terms[0][0] == 1.0:
                g = terms[0][1]
            else:
                g = self.affine([t[1] for t in terms], [t[0] for t in terms])
            if i in wanted:
                adjoint[i] = g
            op = ops[i]
            if op <= CONST:
                continue
            ps = parents[i]
            if op == AFFINE:
                for p, c in zip(ps, coefs[i]):
                    pending.setdefault(p, []).append((c, g))
            elif op == ADD:
                pending.setdefault(ps[0], []).append((1.0, g))
                pending.setdefault(ps[1], []).append((1.0, g))
            elif op == MUL:
                a, b = ps
                pending.setdefault(a, []).append((1.0, self.mul(g, b)))
                pending.setdefault(b, []).append((1.0, self.mul(g, a)))
            elif op == SOFTPLUS:
                local = self.softplus_prime(ps[0])
                pending.setdefault(ps[0], []).append((1.0, self.mul(g, local)))
            elif op == SP1:
                local = self.softplus_double_prime(ps[0])
                pending.setdefault(ps[0], []).append((1.0, self.mul(g, local)))
            else:
                raise NotDifferentiable("softplus'' has no recorded derivative; third order is unsupported")
        return [adjoint[w] if w in adjoint else self.constant(0.0) for w in wrt]


class DiffScalar:
    """A tape node with arithmetic operators, for writing expressions naturally."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape.values[self.index]

    def _coerce(self, other) -> int:
        if isinstance(other, DiffScalar):
            if other.tape is not self.tape:
                raise TapeMismatch("operands were recorded on different tapes")
            return other.index
        return self.tape.constant(float(other))

    def __add__(self, other):
        return DiffScalar(self.tape, self.tape.add(self.index, self._coerce(other)))

    __radd__ = __add__

    def __mul__(self, other):
        return DiffScalar(self.tape, self.tape.mul(self.index, self._coerce(other)))

    __rmul__ = __mul__

    def __neg__(self):
        return DiffScalar(self.tape, self.tape.affine((self.index,), (-1.0,)))

    def __sub__(self, other):
        return self + (-other if isinstance(other, DiffScalar) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __repr__(self):
        return f"DiffScalar({self.value!r}, node={self.index})"


def sp(x: DiffScalar) -> DiffScalar:
    """Softplus of a DiffScalar."""
    return DiffScalar(x.tape, x.tape.softplus(x.index))


def grad(output: DiffScalar, wrt) -> list[float]:
    """Float gradient of ``output`` with respect to each DiffScalar in ``wrt``."""
    for w in wrt:
        if w.tape is not output.tape:
            raise TapeMismatch("gradient requested across tapes")
    adj = output.tape.backward(output.index)
    return [adj[w.index] if w.index < len(adj) else 0.0 for w in wrt]


# -- network recording ------------------------------------------------------


def _check(net, point) -> np.ndarray:
    if net.hidden_activation is not ActivationKind.SOFTPLUS:
        raise UnsupportedActivation(net.hidden_activation.value)
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (net.input_dim,):
        raise DimensionMismatch(f"network takes {net.input_dim} inputs, got shape {point.shape}")
    return point


def record_network(tape: Tape, net, inputs: list[int]) -> int:
    """Record ``net`` applied to the given input nodes; returns the output node."""
    u = inputs
    for layer in net.layers[:-1]:
        w = layer.weights.tolist()
        b = layer.bias.tolist()
        u = [tape.softplus(tape.affine(u, w[r], b[r])) for r in range(len(b))]
    out = net.layers[-1]
    return tape.affine(u, out.weights[0].tolist(), float(out.bias[0]))


def _record(net, point):
    tape = Tape()
    inputs = [tape.variable(v) for v in point.tolist()]
    return tape, inputs, record_network(tape, net, inputs)


def gradient(net, point) -> np.ndarray:
    """d f / d input_i at ``point`` via one reverse sweep."""
    point = _check(net, point)
    tape, inputs, out = _record(net, point)
    adj = tape.backward(out)
    return np.array([adj[i] for i in inputs])


def mixed_partial_nested(net, point, first: int, second: int) -> float:
    """Differentiate w.r.t. input ``first``, then differentiate that result w.r.t. ``second``.

    The first sweep is recorded on the tape; the second sweep runs over the
    recorded gradient node of ``first``.
    """
    point = _check(net, point)
    d = net.input_dim
    if not (0 <= first < d and 0 <= second < d):
        raise DimensionMismatch(f"indices ({first}, {second}) out of range for {d} inputs")
    if first == second:
        raise SameVariable("a mixed partial needs two distinct inputs")
    tape, inputs, out = _record(net, point)
    (g_first,) = tape.backward_graph(out, [inputs[first]])
    adj = tape.backward(g_first)
    return adj[inputs[second]]


def hessian(net, point) -> np.ndarray:
    """Full matrix of second partials: one recorded sweep, then one sweep per row."""
    point = _check(net, point)
    tape, inputs, out = _record(net, point)
    grads = tape.backward_graph(out, inputs)
    d = len(inputs)
    h = np.empty((d, d))
    for r, g in enumerate(grads):
        adj = tape.backward(g)
        h[r] = [adj[i] for i in inputs]
    return h


def mse_on_tape(net, inputs, targets):
    """Record batch-mean squared error with every weight and bias as a variable.

    Returns ``(loss, params)`` where ``params`` mirrors ``mlp.backward``'s
    ``[(weights, bias), ...]`` layout with DiffScalar entries.  Used to check
    analytic backpropagation against the tape.
    """
    tape = Tape()
    params = []
    for layer in net.layers:
        w = [[DiffScalar(tape, tape.variable(x)) for x in row] for row in layer.weights.tolist()]
        b = [DiffScalar(tape, tape.variable(x)) for x in layer.bias.tolist()]
        params.append((w, b))
    total = None
    for x, y in zip(np.asarray(inputs, dtype=np.float64).tolist(), np.asarray(targets, dtype=np.float64).tolist()):
        u = [DiffScalar(tape, tape.constant(v)) for v in x]
        for k, (w, b) in enumerate(params):
            z = []
            for row, bias in zip(w, b):
                acc = bias
                for wi, ui in zip(row, u):
                    acc = acc + wi * ui
                z.append(acc)
            u = z if k == len(params) - 1 else [sp(zi) for zi in z]
        r = u[0] - y
        total = r * r if total is None else total + r * r
    loss = total * (1.0 / len(targets))
    return loss, params
