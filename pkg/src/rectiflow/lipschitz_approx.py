"""Spike-interpolant approximation of Lipschitz functions on [0,1]^m.

f_N(x) = sum_{n in {0..N}^m} h(f(n/N)) phi(N x - n) is realized exactly as a
ReLU network.  With h the codebook quantizer of step 1/N the weights live in
F_N = {k/N : |k| <= N^2}.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .relu_net import (
    AffineLayer,
    DimensionError,
    ReluNetwork,
    as_fraction,
    compose_with_relu,
    evaluate,
    metrics,
    parallelize,
    pieces_1d,
)
from .spike import _psi_layers, split_layer

REL_TOL = 1e-12


class LipschitzViolation(ValueError):
    """Sample values are inconsistent with the declared Lipschitz constant."""


class PreconditionError(ValueError):
    """A construction precondition does not hold."""


class DomainError(ValueError):
    """Value outside the codebook range."""


@dataclass
class LipschitzSample:
    """Finite sample of f: [0,1]^m -> R^n with declared Lip (sup-norms) and sup norm.

    ``values`` has shape (k, n); a 1-D array is read as n = 1.
    """

    points: np.ndarray
    values: np.ndarray
    lip: float
    sup_norm: float
    scalar: bool = field(default=False, repr=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if np.ndim(self.points) == 1:
            pts = pts.T
        vals = np.asarray(self.values, dtype=np.float64)
        self.scalar = vals.ndim == 1
        vals = vals.reshape(len(vals), -1)
        if len(pts) != len(vals):
            raise DimensionError(f"{len(pts)} points but {len(vals)} values")
        if len(pts) == 0:
            raise ValueError("empty sample")
        self.points, self.values = pts, vals
        self.validate()

    @property
    def input_dim(self) -> int:
        return self.points.shape[1]

    @property
    def output_dim(self) -> int:
        return self.values.shape[1]

    def validate(self, chunk: int = 2048) -> None:
        if self.lip < 0 or self.sup_norm < 0:
            raise ValueError("lip and sup_norm must be nonnegative")
        vmax = float(np.abs(self.values).max())
        if vmax > self.sup_norm * (1 + REL_TOL) + REL_TOL:
            raise LipschitzViolation(f"sample reaches |f| = {vmax} > sup_norm {self.sup_norm}")
        p, v = self.points, self.values
        for s in range(0, len(p), chunk):
            dx = np.abs(p[s : s + chunk, None, :] - p[None, :, :]).max(-1)
            dy = np.abs(v[s : s + chunk, None, :] - v[None, :, :]).max(-1)
            slack = dy - self.lip * dx * (1 + REL_TOL) - REL_TOL * max(1.0, vmax)
            if (slack > 0).any():
                i, j = np.unravel_index(np.argmax(slack), slack.shape)
                raise LipschitzViolation(
                    f"points {s + i} and {j}: |df| = {dy[i, j]:.6g} exceeds "
                    f"lip * |dx| = {self.lip * dx[i, j]:.6g}"
                )

    @classmethod
    def from_function(cls, f: Callable, points, lip: float, sup_norm: float) -> "LipschitzSample":
        pts = np.asarray(points, dtype=np.float64)
        return cls(pts, np.asarray(f(pts), dtype=np.float64), lip, sup_norm)

    def write_csv(self, path) -> None:
        """CSV ``x1..xm,value`` (``value1..valuen`` when vector valued) plus a JSON sidecar."""
        cols = [f"x{i + 1}" for i in range(self.input_dim)]
        cols += ["value"] if self.scalar else [f"value{j + 1}" for j in range(self.output_dim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for x, y in zip(self.points, self.values):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])
        with open(_sidecar(path), "w") as fh:
            json.dump({"lip": self.lip, "sup_norm": self.sup_norm}, fh, sort_keys=True)

    @classmethod
    def read_csv(cls, path) -> "LipschitzSample":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        vcols = [i for i, h in enumerate(header) if h.startswith("value")]
        if not xcols or not vcols:
            raise ValueError(f"{path}: expected columns x1..xm and value")
        data = np.array([[float(v) for v in r] for r in body])
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
        vals = data[:, vcols]
        if header[vcols[0]] == "value":
            vals = vals[:, 0]
        return cls(data[:, xcols], vals, float(meta["lip"]), float(meta["sup_norm"]))


def _sidecar(path) -> str:
    path = str(path)
    return (path[:-4] if path.endswith(".csv") else path) + ".json"


def mcshane_extend(sample: LipschitzSample, x) -> np.ndarray:
    """min_y (f(y) + Lip ||x - y||_inf), coordinatewise; shape (k, n)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != sample.input_dim:
        raise DimensionError(f"expected points in R^{sample.input_dim}, got shape {x.shape}")
    out = np.empty((len(x), sample.output_dim))
    for s in range(0, len(x), 1024):
        d = np.abs(x[s : s + 1024, None, :] - sample.points[None, :, :]).max(-1)
        out[s : s + 1024] = (sample.values[None, :, :] + sample.lip * d[:, :, None]).min(1)
    return out


def quantize_codebook(y, N: int) -> Fraction:
    """[N y] / N with ties rounded away from zero; |result| must be <= N."""
    q = as_fraction(y)
    q = Fraction(y) if q is None else q
    t = abs(q) * N
    k = math.floor(t + Fraction(1, 2))
    if q < 0:
        k = -k
    if abs(k) > N * N:
        raise DomainError(f"quantized value {k}/{N} lies outside [-{N}, {N}]")
    return Fraction(k, N)


def grid_nodes(N: int, m: int) -> list[tuple[int, ...]]:
    """{0..N}^m in lexicographic order."""
    return list(itertools.product(range(N + 1), repeat=m))


def spike_block(node: Sequence[int], N: int) -> ReluNetwork:
    """Psi o rho o W_{n,N}: realizes phi(N x - n) before the final rho."""
    m = len(node)
    return ReluNetwork((split_layer(m, scale=N, shift=node),) + tuple(_psi_layers(m)))


def interpolant_network(coefficients: Sequence, N: int, m: int) -> ReluNetwork:
    """W o rho o P(Phi_{n,N}) with W(x) = F x, F the node coefficients in grid order."""
    nodes = grid_nodes(N, m)
    if len(coefficients) != len(nodes):
        raise DimensionError(f"need {len(nodes)} coefficients, got {len(coefficients)}")
    body = parallelize([spike_block(n, N) for n in nodes], shared_input=True)
    exact = [as_fraction(c) for c in coefficients]
    if all(c is not None for c in exact):
        out = AffineLayer.from_sparse(1, len(nodes), {(0, j): c for j, c in enumerate(exact)})
    else:
        out = AffineLayer(np.array([[float(c) for c in coefficients]]), np.zeros(1))
    return ReluNetwork(body.layers + (out,))


@dataclass
class SpikeApproximant:
    net: ReluNetwork
    N: int
    m: int
    coefficients: list
    sup_norm: float
    delta: float = 0.0

    def bounds(self) -> dict:
        """Architecture bounds for the interpolant (per output coordinate times n)."""
        n = self.net.output_dim
        nodes = (self.N + 1) ** self.m
        return {
            "depth": math.ceil(math.log2(self.m + 1)) + 4,
            "connectivity": n * nodes * (62 * self.m - 28),
            "width": n * nodes * 6 * self.m,
            "magnitude": max(self.N, self.sup_norm + self.delta),
        }

    def check_bounds(self) -> dict[str, tuple]:
        met = metrics(self.net)
        b = self.bounds()
        actual = {
            "depth": met.depth,
            "connectivity": met.connectivity,
            "width": met.width,
            "magnitude": float(met.magnitude),
        }
        return {k: (actual[k], b[k], actual[k] <= b[k] + 1e-12) for k in b}


def build_fN(f: Callable, N: int, m: int, h: Callable | None = None, delta: float = 0.0,
             sup_norm: float | None = None) -> SpikeApproximant:
    """Spike interpolant of scalar f on the grid {0..N}^m / N.

    ``f`` maps an array of nodes (k, m) to k values; ``h`` (default identity)
    is applied to each node value and must move it by at most ``delta``.
    """
    if N < 1 or m < 1:
        raise ValueError("N and m must be positive")
    nodes = grid_nodes(N, m)
    pts = np.array(nodes, dtype=np.float64) / N
    vals = np.asarray(f(pts)).reshape(-1)
    if len(vals) != len(nodes):
        raise DimensionError("f must return one value per node")
    coeffs = [h(v) for v in vals] if h is not None else [float(v) for v in vals]
    if h is not None:
        moved = max(abs(float(c) - float(v)) for c, v in zip(coeffs, vals))
        if moved > delta * (1 + REL_TOL) + REL_TOL:
            raise PreconditionError(f"h moves a value by {moved} > delta = {delta}")
    if sup_norm is None:
        sup_norm = float(np.abs(vals).max())
    return SpikeApproximant(interpolant_network(coeffs, N, m), N, m, coeffs, sup_norm, delta)


@dataclass
class QuantizedApproximant(SpikeApproximant):
    lip: float = 0.0

    @property
    def error_bound(self) -> float:
        return (self.lip + 0.5) / self.N

    @property
    def lip1_bound(self) -> float:
        """Bound on Lip w.r.t. the l1 input norm."""
        return self.lip + 1.0

    @property
    def lip_bound(self) -> float:
        """Bound on Lip w.r.t. the sup input norm."""
        return self.m * (self.lip + 1.0)

    def bounds(self) -> dict:
        b = super().bounds()
        b["magnitude"] = self.N
        return b

    def weights_in_codebook(self) -> bool:
        """Every weight is k/N with |k| <= N^2."""
        met = metrics(self.net)
        if not self.net.is_exact:
            return False
        return all((w * self.N).denominator == 1 and abs(w) <= self.N for w in met.weight_set)


def log2_collection_size(N: int, m: int) -> float:
    """log2 of the number of distinct quantized approximants: (N+1)^m log2(2N^2+1)."""
    return (N + 1) ** m * math.log2(2 * N * N + 1)


def build_quantized_approximant(sample: LipschitzSample, N: int) -> QuantizedApproximant:
    """Quantized spike interpolant of the McShane extension of a sample.

    Requires sup_norm + lip <= N.  Vector-valued samples give one block per
    output coordinate, combined in parallel on a shared input.
    """
    if sample.sup_norm + sample.lip > N:
        raise PreconditionError(
            f"need sup_norm + lip <= N, got {sample.sup_norm} + {sample.lip} > {N}"
        )
    m = sample.input_dim
    nodes = np.array(grid_nodes(N, m), dtype=np.float64) / N
    ext = mcshane_extend(sample, nodes)
    nets, all_coeffs = [], []
    for j in range(sample.output_dim):
        coeffs = [quantize_codebook(float(v), N) for v in ext[:, j]]
        nets.append(interpolant_network(coeffs, N, m))
        all_coeffs.append(coeffs)
    net = parallelize(nets, shared_input=True)
    return QuantizedApproximant(
        net=net,
        N=N,
        m=m,
        coefficients=all_coeffs[0] if sample.scalar else all_coeffs,
        sup_norm=sample.sup_norm,
        delta=1.0 / (2 * N),
        lip=sample.lip,
    )


def clamp_to_unit_cube(net: ReluNetwork) -> ReluNetwork:
    """net o kappa with kappa(x)_i = rho(x_i) - rho(x_i - 1), one extra layer."""
    m = net.input_dim
    first = AffineLayer.from_sparse(
        2 * m, m, {(i, i): 1 for i in range(m)} | {(m + i, i): 1 for i in range(m)},
        {m + i: -1 for i in range(m)},
    )
    sub = AffineLayer.from_sparse(
        m, 2 * m, {(i, i): 1 for i in range(m)} | {(i, m + i): -1 for i in range(m)}
    )
    kappa = ReluNetwork((first, sub))
    # fold the recombination into the first layer of net
    l0 = net.layers[0]
    if l0.is_exact:
        e, o = l0.exact
        ent = {}
        for (i, j), v in e.items():
            ent[(i, j)] = v
            ent[(i, m + j)] = -v
        merged = AffineLayer.from_sparse(l0.out_dim, 2 * m, ent, o)
    else:
        merged = AffineLayer(np.hstack([l0.matrix, -l0.matrix]), l0.offset)
    return ReluNetwork((kappa.layers[0], merged) + net.layers[1:])


@dataclass(frozen=True)
class LipschitzEstimate:
    value: float
    mode: str
    norm: str


def estimate_lipschitz(net: ReluNetwork, box=None, mode: str = "auto", norm: str = "inf",
                       samples: int = 4000, seed: int = 0) -> LipschitzEstimate:
    """Lipschitz constant of ``net`` on a box, outputs in the sup norm.

    ``norm`` is the input norm ('inf' or '1').  ``mode='exact'`` (scalar input)
    takes the largest slope between consecutive breakpoints; ``'sampled'``
    evaluates finite-difference gradients at random points, which gives a
    lower bound that is exact inside each linear region.
    """
    m = net.input_dim
    if box is None:
        box = [(0.0, 1.0)] * m
    lo = np.array([b[0] for b in box], dtype=np.float64)
    hi = np.array([b[1] for b in box], dtype=np.float64)
    if mode == "auto":
        mode = "exact" if m == 1 else "sampled"
    if norm not in ("inf", "1"):
        raise ValueError("norm must be 'inf' or '1'")
    if mode == "exact":
        if m != 1:
            raise DimensionError("exact mode needs a scalar-input network")
        t, y = pieces_1d(net, lo[0], hi[0])
        dt = np.diff(t)
        keep = dt > 0
        slopes = np.abs(np.diff(y, axis=0)[keep]) / dt[keep, None]
        return LipschitzEstimate(float(slopes.max()), "exact", norm)
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    step = 1e-6 * float((hi - lo).max())
    x = lo + (hi - lo - step) * rng.random((samples, m))
    base = evaluate(net, x)
    grads = np.empty((samples, m, net.output_dim))
    for i in range(m):
        xs = x.copy()
        xs[:, i] += step
        grads[:, i, :] = (evaluate(net, xs) - base) / step
    if norm == "1":
        val = np.abs(grads).max()
    else:
        val = np.abs(grads).sum(axis=1).max()
    return LipschitzEstimate(float(val), "sampled", norm)
