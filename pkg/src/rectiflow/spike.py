"""The multivariate spike function and its exact ReLU realization.

phi(x) = max{1 + min{x, 0} - max{x, 0}, 0}, where min/max over a vector
include 0.  Its integer translates form a partition of unity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .relu_net import AffineLayer, ReluNetwork, metrics


def spike(x) -> np.ndarray:
    """phi evaluated along the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    hi = np.maximum(x.max(axis=-1), 0.0)
    lo = np.minimum(x.min(axis=-1), 0.0)
    return np.maximum(1.0 + lo - hi, 0.0)


def partition_of_unity_sum(x, N: int) -> np.ndarray:
    """sum over n in Z^m of phi(N x - n), using only the translates that can be nonzero."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = x.shape[1]
    y = N * x
    base = np.floor(y)
    total = np.zeros(len(x))
    for shift in np.ndindex(*([3] * m)):
        n = base + (np.array(shift) - 1)
        total += spike(y - n)
    return total


def _psi_layers(m: int) -> list[AffineLayer]:
    """Layers of Psi with Psi(rho(x), rho(-x)) = 1 + min{x,0} - max{x,0}.

    The inputs u = rho(x), v = rho(-x) are nonnegative, so max{x,0} is the
    maximum of the u_i and -min{x,0} the maximum of the v_i.  Both maxima
    are formed in balanced binary trees with max(a, b) = rho(a - b) + rho(b),
    valid because every intermediate value is nonnegative.
    """
    trees = [[{i: 1} for i in range(m)], [{m + i: 1} for i in range(m)]]
    n_in = 2 * m
    layers = []
    while len(trees[0]) > 1:
        rows: list[dict] = []
        new_trees = []
        for items in trees:
            merged = []
            for a, b in zip(items[0::2], items[1::2]):
                diff = dict(a)
                for k, v in b.items():
                    diff[k] = diff.get(k, 0) - v
                merged.append({len(rows): 1, len(rows) + 1: 1})
                rows += [diff, dict(b)]
            if len(items) % 2:
                merged.append({len(rows): 1})
                rows.append(dict(items[-1]))
            new_trees.append(merged)
        ent = {(i, j): v for i, row in enumerate(rows) for j, v in row.items()}
        layers.append(AffineLayer.from_sparse(len(rows), n_in, ent))
        n_in = len(rows)
        trees = new_trees
    (u,), (v,) = trees
    final = {(0, j): -c for j, c in u.items()}
    for j, c in v.items():
        final[(0, j)] = final.get((0, j), 0) - c
    layers.append(AffineLayer.from_sparse(1, n_in, final, {0: 1}))
    return layers


def psi_network(m: int) -> ReluNetwork:
    """Psi: R^{2m} -> R as a standalone network."""
    return ReluNetwork(tuple(_psi_layers(m)))


def split_layer(m: int, scale=1, shift=None) -> AffineLayer:
    """x -> (scale*x - shift, -scale*x + shift), i.e. W(x) = scale (I, -I)^T x - (n, -n)."""
    shift = [0] * m if shift is None else list(shift)
    ent = {(i, i): scale for i in range(m)} | {(m + i, i): -scale for i in range(m)}
    off = {i: -shift[i] for i in range(m)} | {m + i: shift[i] for i in range(m)}
    return AffineLayer.from_sparse(2 * m, m, ent, off)


@dataclass(frozen=True)
class SpikeBounds:
    depth: int
    connectivity: int
    width: int
    magnitude: int

    @classmethod
    def for_dim(cls, m: int) -> "SpikeBounds":
        return cls(
            depth=math.ceil(math.log2(m + 1)) + 4,
            connectivity=60 * m - 28,
            width=6 * m,
            magnitude=1,
        )


def spike_network(m: int) -> ReluNetwork:
    """Exact realization W2 o rho o Psi o rho o W1 of phi on R^m.

    Raises if the built network breaks the depth/connectivity/width/weight
    bounds, which would indicate a construction bug.
    """
    if m < 1:
        raise ValueError("dimension must be positive")
    out = AffineLayer.from_sparse(1, 1, {(0, 0): 1})
    net = ReluNetwork((split_layer(m),) + tuple(_psi_layers(m)) + (out,))
    check_spike_bounds(net, m)
    return net


def check_spike_bounds(net: ReluNetwork, m: int) -> None:
    b = SpikeBounds.for_dim(m)
    met = metrics(net)
    problems = []
    if met.depth > b.depth:
        problems.append(f"depth {met.depth} > {b.depth}")
    if met.connectivity > b.connectivity:
        problems.append(f"connectivity {met.connectivity} > {b.connectivity}")
    if met.width > b.width:
        problems.append(f"width {met.width} > {b.width}")
    if not met.weight_set <= {-1, 0, 1}:
        problems.append(f"weights {sorted(met.weight_set)} outside {{-1, 0, 1}}")
    if problems:
        raise RuntimeError(f"spike network for m={m} violates bounds: " + "; ".join(problems))
