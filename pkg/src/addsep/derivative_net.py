"""Derivative network: a network that outputs the mixed partial of its source network.

Each unit carries four numbers through the layers: its value ``u``, the
derivatives ``u_i`` and ``u_j`` with respect to the two chosen inputs, and the
mixed second derivative ``u_ij``.  An affine layer maps all four linearly
(the bias only touches ``u``).  A softplus unit with pre-activation ``z``
produces::

    u    = s(z)
    u_i  = s'(z) z_i
    u_j  = s'(z) z_j
    u_ij = s''(z) z_i z_j + s'(z) z_ij

The network's output is the ``u_ij`` of its final affine unit.  Weights are
read from the source network; nothing is trained or copied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import ActivationKind, softplus, softplus_double_prime, softplus_prime
from .errors import DimensionMismatch, SameVariable, UnsupportedActivation
from .mlp import Mlp


@dataclass(frozen=True)
class DerivativeNet:
    source: Mlp
    first_var: int
    second_var: int

    def __call__(self, point) -> float:
        return eval_mixed_partial(self, point)


def build_derivative_network(net: Mlp, i: int, j: int) -> DerivativeNet:
    if net.hidden_activation is not ActivationKind.SOFTPLUS:
        raise UnsupportedActivation(f"derivative network needs softplus, got {net.hidden_activation.value}")
    d = net.input_dim
    if not (0 <= i < d and 0 <= j < d):
        raise DimensionMismatch(f"indices ({i}, {j}) out of range for {d} inputs")
    if i == j:
        raise SameVariable("a mixed partial needs two distinct inputs")
    return DerivativeNet(net, i, j)


def propagate(dnet: DerivativeNet, point) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Per-layer pre-activation quadruples ``(z, z_i, z_j, z_ij)``, input side first.

    For the last hidden layer these are the ``V``, ``VW_i``, ``VW_j`` and
    ``VW''`` accumulators of the hand-expanded single-hidden-layer formula.
    """
    net = dnet.source
    x = np.asarray(point, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise DimensionMismatch(f"network takes {net.input_dim} inputs, got shape {x.shape}")
    u = x
    u_i = np.zeros_like(x)
    u_i[dnet.first_var] = 1.0
    u_j = np.zeros_like(x)
    u_j[dnet.second_var] = 1.0
    u_ij = np.zeros_like(x)
    trace = []
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        w = layer.weights
        z = w @ u + layer.bias
        z_i = w @ u_i
        z_j = w @ u_j
        z_ij = w @ u_ij
        trace.append((z, z_i, z_j, z_ij))
        if k == last:
            break
        s1 = softplus_prime(z)
        u = softplus(z)
        u_i = s1 * z_i
        u_j = s1 * z_j
        u_ij = softplus_double_prime(z) * z_i * z_j + s1 * z_ij
    return trace


def eval_mixed_partial(dnet: DerivativeNet, point) -> float:
    return float(propagate(dnet, point)[-1][3][0])


def eval_mixed_partial_batch(dnet: DerivativeNet, points) -> np.ndarray:
    """Vectorised over rows of an (n, d) array."""
    net = dnet.source
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected (n, {net.input_dim}) points, got shape {x.shape}")
    n, d = x.shape
    u = x
    u_i = np.zeros((n, d))
    u_i[:, dnet.first_var] = 1.0
    u_j = np.zeros((n, d))
    u_j[:, dnet.second_var] = 1.0
    u_ij = np.zeros((n, d))
    for layer in net.layers[:-1]:
        wt = layer.weights.T
        z = u @ wt + layer.bias
        z_i, z_j, z_ij = u_i @ wt, u_j @ wt, u_ij @ wt
        s1 = softplus_prime(z)
        u = softplus(z)
        u_i, u_j = s1 * z_i, s1 * z_j
        u_ij = softplus_double_prime(z) * z_i * z_j + s1 * z_ij
    return u_ij @ net.layers[-1].weights[0]
