"""Transport of Lebesgue measure on [0,1] onto uniform mixtures on the K-grid.

A mixture sum_k w_k U(J_k) on [0,1]^d is reached from [0,1] by a map whose
first coordinate is a piecewise-linear inverse CDF and whose later
coordinates fold the previous coordinate with a sawtooth before applying the
conditional inverse CDF.  Every piece is realized exactly as a ReLU network
with rational weights.
"""

from __future__ import annotations

import bisect
import csv
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .measures import UniformMixture, cell_indices
from .relu_net import (
    AffineLayer,
    ReluNetwork,
    as_fraction,
    compose_with_relu,
    evaluate,
    metrics,
    pad_depth,
    parallelize,
    sum_outputs,
)


class UndefinedRegionError(ValueError):
    """Evaluation reached a cell or slab of zero weight."""


# ------------------------------------------------------------------ sawtooth


def tent(x):
    """g(x) = 2x on [0,1/2], 2 - 2x on [1/2,1], 0 elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    return np.where((x > 0) & (x < 1), np.where(x <= 0.5, 2 * x, 2 - 2 * x), 0.0)


def sawtooth(x, s: int):
    """g_s: 2^(s-1) teeth of height 1 on [0,1], zero outside."""
    if s < 1:
        raise ValueError("s must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    y = x * 2.0**s
    j = np.floor(y)
    frac = y - j
    val = np.where(np.mod(j, 2) == 0, frac, 1 - frac)
    return np.where((x > 0) & (x < 1), val, 0.0)


def sawtooth_exact(x: Fraction, s: int) -> Fraction:
    if not 0 < x < 1:
        return Fraction(0)
    y = x * 2**s
    j = math.floor(y)
    return y - j if j % 2 == 0 else j + 1 - y


def sawtooth_network(s: int) -> ReluNetwork:
    """Depth s+1, connectivity 11s - 3, width 3, weights in {0, +-1, +-2, 4}."""
    if s < 1:
        raise ValueError("s must be >= 1")
    first = AffineLayer.from_dense([[2], [4], [2]], [0, -2, -2])
    mid = AffineLayer.from_dense([[2, -2, 2], [4, -4, 4], [2, -2, 2]], [0, -2, -2])
    last = AffineLayer.from_dense([[1, -1, 1]], [0])
    return ReluNetwork((first,) + (mid,) * (s - 1) + (last,))


def shift_network(ell: int, K: int) -> ReluNetwork:
    """Theta_ell(x) = K x - ell + 1 as V2 o rho o V1."""
    v1 = AffineLayer.from_dense([[1], [-1]], [0, 0])
    v2 = AffineLayer.from_dense([[K, -K]], [1 - ell])
    return ReluNetwork((v1, v2))


# ------------------------------------------------------- inverse CDF pieces


def breakpoints(weights: Sequence) -> list:
    """b_0 = 0, b_k = w_1 + ... + w_k."""
    out = [Fraction(0) if isinstance(weights[0], Fraction) else 0.0]
    for w in weights:
        out.append(out[-1] + w)
    return out


def cdf_inverse_exact(x, weights: Sequence[Fraction], K: int | None = None):
    """Piecewise-linear map sending [b_{k-1}, b_k] onto [(k-1)/K, k/K].

    Identity for x < 0 and slope 1/(K w_K) beyond 1.  All weights must be
    positive for the map to be continuous.
    """
    K = len(weights) if K is None else K
    if any(w <= 0 for w in weights):
        raise UndefinedRegionError("zero-weight conditional encountered")
    if x < 0:
        return x
    if x > 1:
        return (x - 1) / (K * weights[-1]) + 1
    b = breakpoints(list(weights))
    k = min(bisect.bisect_right(b, x), K)
    return (x - b[k - 1]) / (K * weights[k - 1]) + Fraction(k - 1, K)


def cdf_inverse(x, weights: Sequence, K: int | None = None) -> np.ndarray:
    """Vectorized float version of :func:`cdf_inverse_exact`."""
    w = np.array([float(v) for v in weights])
    K = len(w) if K is None else K
    if (w <= 0).any():
        raise UndefinedRegionError("zero-weight conditional encountered")
    b = np.concatenate([[0.0], np.cumsum(w)])
    b[-1] = 1.0
    x = np.asarray(x, dtype=np.float64)
    k = np.clip(np.searchsorted(b, x, side="right"), 1, K)
    val = (x - b[k - 1]) / (K * w[k - 1]) + (k - 1) / K
    val = np.where(x > 1, (x - 1) / (K * w[-1]) + 1, val)
    return np.where(x < 0, x, val)


def cdf_inverse_network(weights: Sequence, K: int | None = None, paired: bool = False) -> ReluNetwork:
    """One-hidden-layer realization of the inverse CDF.

    Compact form: -rho(-x) + sum_k a_{k-1} rho(x - b_{k-1}) with
    a_0 = 1/(K w_1), a_k = 1/(K w_{k+1}) - 1/(K w_k).  The paired form keeps
    the two slopes meeting at each breakpoint on separate neurons, so every
    weight is a single 1/(K w) instead of a difference; its width is 2K.
    """
    ws = [as_fraction(w) for w in weights]
    exact = all(w is not None for w in ws)
    if not exact:
        ws = [float(w) for w in weights]
    K = len(ws) if K is None else K
    if any(w <= 0 for w in ws):
        raise UndefinedRegionError("inverse CDF needs positive weights")
    one = Fraction(1) if exact else 1.0
    slopes = [one / (K * w) for w in ws]
    b = breakpoints(ws)
    if paired:
        shifts = [0 * one, 0 * one] + [bk for bk in b[1:K] for _ in range(2)]
        signs = [-1, 1] + [1, 1] * (K - 1)
        out = [-one, slopes[0]]
        for k in range(1, K):
            out += [slopes[k], -slopes[k - 1]]
    else:
        shifts = [0 * one] + list(b[:K])
        signs = [-1] + [1] * K
        out = [-one, slopes[0]] + [slopes[k] - slopes[k - 1] for k in range(1, K)]
    hid_m = [[sg] for sg in signs]
    hid_b = [-sh for sh in shifts]
    if exact:
        l1 = AffineLayer.from_dense(hid_m, hid_b)
        l2 = AffineLayer.from_dense([out], [0])
    else:
        l1 = AffineLayer(np.array(hid_m, dtype=float), np.array(hid_b, dtype=float))
        l2 = AffineLayer(np.array([out], dtype=float), np.zeros(1))
    return ReluNetwork((l1, l2))


# ---------------------------------------------------------- weight tree


@dataclass
class ConditionalWeightTree:
    """Marginals and conditional weights of a mixture along coordinate prefixes.

    ``marginal[p]`` is the mass of all cells whose index starts with ``p``;
    ``conditional[p]`` lists w_{k | p} for k = 1..K and exists only when
    ``marginal[p] > 0``.
    """

    d: int
    K: int
    marginal: dict
    conditional: dict

    def breaks(self, prefix: tuple) -> list:
        return breakpoints(self.conditional[prefix])

    def is_positive(self) -> bool:
        return all(v > 0 for v in self.marginal.values())


def build_weight_tree(mix: UniformMixture) -> ConditionalWeightTree:
    if not mix.is_exact:
        raise TypeError("the weight tree needs rational mixture weights")
    d, K = mix.d, mix.K
    marg: dict = {(): Fraction(1)}
    for k, w in mix.weights.items():
        for j in range(1, d + 1):
            marg[k[:j]] = marg.get(k[:j], Fraction(0)) + w
    cond = {}
    for j in range(d):
        for p in itertools.product(range(1, K + 1), repeat=j):
            if marg[p] > 0:
                cond[p] = [marg[p + (k,)] / marg[p] for k in range(1, K + 1)]
    return ConditionalWeightTree(d, K, marg, cond)


def transport_map_exact(tree: ConditionalWeightTree, x: Sequence) -> list[Fraction]:
    """The bijection f: sends the slab box K_k affinely onto the cell J_k."""
    K = tree.K
    x = [as_fraction(v) if as_fraction(v) is not None else Fraction(v) for v in x]
    if len(x) != tree.d or any(not 0 <= v <= 1 for v in x):
        raise ValueError("point must lie in [0,1]^d")
    prefix: tuple = ()
    out = []
    for xj in x:
        w = tree.conditional.get(prefix)
        if w is None:
            raise UndefinedRegionError(f"prefix {prefix} has zero mass")
        b = breakpoints(w)
        k = bisect.bisect_right(b, xj)
        if xj == 1:
            k = K
        if w[k - 1] == 0:
            raise UndefinedRegionError(f"point falls in zero-weight slab {prefix + (k,)}")
        out.append((xj - b[k - 1]) / (K * w[k - 1]) + Fraction(k - 1, K))
        prefix += (k,)
    return out


# ------------------------------------------------------------ refined map


def _shift(z, ell: int, K: int):
    return K * z - ell + 1


def refined_map_exact(tree: ConditionalWeightTree, s: int, t) -> list[Fraction]:
    """f~^(s)(t) in rational arithmetic, straight from the sum-of-chains formula."""
    t = as_fraction(t) if as_fraction(t) is not None else Fraction(t)
    K, d = tree.K, tree.d
    y1 = cdf_inverse_exact(t, tree.conditional[()], K)
    out = [y1]
    for j in range(2, d + 1):
        total = Fraction(0)
        for prefix in itertools.product(range(1, K + 1), repeat=j - 1):
            z = y1
            for i in range(j - 1):
                z = sawtooth_exact(_shift(z, prefix[i], K), s)
                w = tree.conditional.get(prefix[: i + 1])
                if w is None:
                    if z != 0:
                        raise UndefinedRegionError(f"prefix {prefix[: i + 1]} has zero mass")
                    continue
                z = cdf_inverse_exact(z, w, K)
            total += z
        out.append(total)
    return out


def refined_map(tree: ConditionalWeightTree, s: int, t) -> np.ndarray:
    """Vectorized float f~^(s) on an array of parameters; shape (k, d)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    K, d = tree.K, tree.d
    y1 = cdf_inverse(t, tree.conditional[()], K)
    cols = [y1]
    for j in range(2, d + 1):
        total = np.zeros_like(t)
        for prefix in itertools.product(range(1, K + 1), repeat=j - 1):
            z = y1
            for i in range(j - 1):
                z = sawtooth(_shift(z, prefix[i], K), s)
                w = tree.conditional.get(prefix[: i + 1])
                if w is None:
                    if np.any(z != 0):
                        raise UndefinedRegionError(f"prefix {prefix[: i + 1]} has zero mass")
                    continue
                z = cdf_inverse(z, w, K)
            total = total + z
        cols.append(total)
    return np.stack(cols, axis=1)


# ------------------------------------------------------- network assembly


def in_weight_grid(w: Fraction, N: int, K: int) -> bool:
    """w = a/b in lowest terms with |a| <= N and b <= N K."""
    return abs(w.numerator) <= N and w.denominator <= N * K


@dataclass
class TransportNetwork:
    net: ReluNetwork
    mixture: UniformMixture
    tree: ConditionalWeightTree
    s: int
    N: int

    @property
    def d(self) -> int:
        return self.mixture.d

    @property
    def K(self) -> int:
        return self.mixture.K

    @property
    def depth_claim(self) -> int:
        return 3 + (self.d - 1) * (5 + self.s)

    @property
    def connectivity_bound(self) -> float:
        K, d, s = self.K, self.d, self.s
        if K < 2:
            return math.inf
        return 4 * d * (2 * K + 3 * s + 4) * K**d / (K - 1)

    @property
    def width_bound(self) -> int:
        return 4 * self.K**self.d

    @property
    def w1_bound(self) -> Fraction:
        return Fraction(1, self.K * 2 ** (self.s - 1))

    @property
    def lip_bound(self) -> Fraction:
        return Fraction(2 ** (self.s * (self.d - 1)) * self.N, self.K)

    def weight_violations(self) -> list:
        return sorted(w for w in metrics(self.net).weight_set if not in_weight_grid(w, self.N, self.K))

    def check_bounds(self) -> dict[str, tuple]:
        met = metrics(self.net)
        rows = {
            "depth": (met.depth, self.depth_claim, met.depth == self.depth_claim),
            "connectivity": (met.connectivity, self.connectivity_bound,
                             met.connectivity <= self.connectivity_bound),
            "width": (met.width, self.width_bound, met.width <= self.width_bound),
            "magnitude": (met.magnitude, self.N, met.magnitude <= self.N),
        }
        bad = self.weight_violations()
        rows["weights_in_grid"] = (len(bad), 0, not bad)
        return rows

    def __call__(self, t):
        return evaluate(self.net, np.asarray(t, dtype=np.float64).reshape(-1, 1))


def _quantization_level(mix: UniformMixture) -> int:
    if mix.N is not None:
        return mix.N
    return math.lcm(*(w.denominator for w in mix.weights.values()))


def _chain(tree: ConditionalWeightTree, prefix: tuple, s: int) -> ReluNetwork:
    """Psi_1, then per level: shift, sawtooth, conditional inverse CDF."""
    K = tree.K
    net = cdf_inverse_network(tree.conditional[()], K, paired=True)
    saw = sawtooth_network(s)
    for i, ell in enumerate(prefix):
        net = compose_with_relu(shift_network(ell, K), net)
        net = compose_with_relu(saw, net)
        net = compose_with_relu(cdf_inverse_network(tree.conditional[prefix[: i + 1]], K, paired=True), net)
    return net


def build_transport_network(mix: UniformMixture, s: int, N: int | None = None) -> TransportNetwork:
    """ReLU network equal to f~^(s) on [0,1].

    Needs rational, strictly positive weights in (1/N) Z.  Weight-grid
    membership is checked by :meth:`TransportNetwork.weight_violations`.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    if not mix.is_exact:
        raise TypeError("transport networks need rational mixture weights")
    if any(w <= 0 for w in mix.weights.values()):
        raise UndefinedRegionError("transport networks need strictly positive weights")
    N = _quantization_level(mix) if N is None else N
    if any((w * N).denominator != 1 for w in mix.weights.values()):
        raise ValueError(f"weights are not multiples of 1/{N}")
    tree = build_weight_tree(mix)
    d, K = mix.d, mix.K
    target = 2 + (d - 1) * (5 + s)
    coords = []
    for j in range(1, d + 1):
        chains = [
            pad_depth(_chain(tree, p, s), target, nonnegative=True)
            for p in itertools.product(range(1, K + 1), repeat=j - 1)
        ]
        coords.append(sum_outputs(parallelize(chains, shared_input=True)))
    net = parallelize(coords, shared_input=True)
    return TransportNetwork(net, mix, tree, s, N)


# ---------------------------------------------------------------- Sigma


@dataclass
class SigmaNetwork(TransportNetwork):
    """Transport network for the histogram of a discrete measure, s = 1."""

    @property
    def w1_claim(self) -> Fraction:
        return Fraction(3, self.K)

    @property
    def depth_claim(self) -> int:
        return 3 + 6 * (self.d - 1)

    @property
    def connectivity_claim(self) -> int:
        return 44 * self.d * self.K**self.d

    @property
    def log2_count_bound(self) -> float:
        return self.K**self.d * math.log2(12 * self.K)


def build_sigma(mu, K: int) -> SigmaNetwork:
    """Sigma: [0,1] -> [0,1]^d with W1(mu, Sigma # lambda) <= 3/K."""
    from .measures import quantized_mixture

    d = mu.dim
    N = 4 * K ** (d + 1)
    mix = quantized_mixture(mu, K, N)
    t = build_transport_network(mix, 1, N)
    return SigmaNetwork(t.net, t.mixture, t.tree, t.s, t.N)


# ------------------------------------------------- exact cell-mass check


class _PL:
    """Continuous piecewise-linear function of t on [0,1] with rational knots."""

    def __init__(self, ts: list, ys: list):
        self.ts, self.ys = ts, ys

    def apply(self, func, knots: Sequence) -> "_PL":
        """func o self, where func is affine between consecutive ``knots``."""
        ts, ys = [self.ts[0]], [self.ys[0]]
        for a in range(len(self.ts) - 1):
            ta, tb, ya, yb = self.ts[a], self.ts[a + 1], self.ys[a], self.ys[a + 1]
            if ya != yb:
                lo, hi = min(ya, yb), max(ya, yb)
                i0 = bisect.bisect_right(knots, lo)
                i1 = bisect.bisect_left(knots, hi)
                cs = knots[i0:i1]
                if yb < ya:
                    cs = cs[::-1]
                for c in cs:
                    ts.append(ta + (c - ya) * (tb - ta) / (yb - ya))
                    ys.append(c)
            ts.append(tb)
            ys.append(yb)
        return _PL(ts, [func(y) for y in ys])

    def at(self, t):
        i = bisect.bisect_right(self.ts, t) - 1
        if i >= len(self.ts) - 1:
            return self.ys[-1]
        ta, tb = self.ts[i], self.ts[i + 1]
        return self.ys[i] + (self.ys[i + 1] - self.ys[i]) * (t - ta) / (tb - ta)

    def __add__(self, other: "_PL") -> "_PL":
        ts = sorted(set(self.ts) | set(other.ts))
        return _PL(ts, [self.at(t) + other.at(t) for t in ts])


def refined_map_pieces(tree: ConditionalWeightTree, s: int) -> list[_PL]:
    """Exact piecewise-linear coordinates of f~^(s) on [0,1]."""
    K, d = tree.K, tree.d
    w1 = tree.conditional[()]
    x1 = _PL([Fraction(0), Fraction(1)], [Fraction(0), Fraction(1)]).apply(
        lambda y: cdf_inverse_exact(y, w1, K), breakpoints(w1)
    )
    saw_knots = [Fraction(i, 2**s) for i in range(2**s + 1)]
    coords = [x1]
    for j in range(2, d + 1):
        total = None
        for prefix in itertools.product(range(1, K + 1), repeat=j - 1):
            z = x1
            for i in range(j - 1):
                ell = prefix[i]
                z = _PL(z.ts, [_shift(y, ell, K) for y in z.ys])
                z = z.apply(lambda y: sawtooth_exact(y, s), saw_knots)
                w = tree.conditional.get(prefix[: i + 1])
                if w is None:
                    if any(z.ys):
                        raise UndefinedRegionError(f"prefix {prefix[: i + 1]} has zero mass")
                    continue
                z = z.apply(lambda y, w=w: cdf_inverse_exact(y, w, K), breakpoints(w))
            total = z if total is None else total + z
        coords.append(total)
    return coords


@dataclass
class CellMassRow:
    k: tuple
    r: tuple
    expected: Fraction | float
    measured: Fraction | float

    @property
    def abs_err(self):
        return abs(self.measured - self.expected)

    @property
    def cell_index(self) -> str:
        return ",".join(map(str, self.k)) + "|" + ",".join(map(str, self.r))


@dataclass
class CellMassReport:
    rows: list
    exact: bool
    tolerance: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def max_abs_err(self):
        return max(r.abs_err for r in self.rows)

    @property
    def passed(self) -> bool:
        if self.exact:
            return all(r.abs_err == 0 for r in self.rows)
        return all(r.abs_err <= self.tolerance for r in self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_index", "expected", "measured", "abs_err"])
            for r in self.rows:
                w.writerow([r.cell_index, str(r.expected), str(r.measured), str(r.abs_err)])


def _grid_index(y: Fraction, G: int) -> int | None:
    if not 0 <= y <= 1:
        return None
    return min(math.floor(y * G), G - 1)


def exact_cell_masses(tree: ConditionalWeightTree, s: int) -> dict:
    """Lebesgue measure of the preimage of every refined cell, in rationals."""
    coords = refined_map_pieces(tree, s)
    K, d = tree.K, tree.d
    G = K * 2 ** (s - 1)
    ts = sorted(set().union(*(c.ts for c in coords)))
    vals = [[c.at(t) for t in ts] for c in coords]
    levels = [Fraction(i, G) for i in range(G + 1)]
    mass: dict = {}
    for a in range(len(ts) - 1):
        ta, tb = ts[a], ts[a + 1]
        cuts = {ta, tb}
        for j in range(d):
            ya, yb = vals[j][a], vals[j][a + 1]
            if ya == yb:
                continue
            lo, hi = min(ya, yb), max(ya, yb)
            for c in levels[bisect.bisect_right(levels, lo) : bisect.bisect_left(levels, hi)]:
                cuts.add(ta + (c - ya) * (tb - ta) / (yb - ya))
        cuts = sorted(cuts)
        for u, v in zip(cuts[:-1], cuts[1:]):
            mid = (u + v) / 2
            lam = (mid - ta) / (tb - ta)
            idx = []
            for j in range(d):
                y = vals[j][a] + (vals[j][a + 1] - vals[j][a]) * lam
                idx.append(_grid_index(y, G))
            key = None if None in idx else tuple(idx)
            mass[key] = mass.get(key, Fraction(0)) + (v - u)
    return mass


def cell_mass_check(tnet: TransportNetwork, method: str = "auto", samples: int = 10**6,
                    seed: int = 0) -> CellMassReport:
    """Compare the mass pushed into each refined cell with w_k / 2^(d(s-1)).

    ``method='exact'`` propagates rational breakpoints through the refined
    map (used for d <= 2 by default).  ``'sampled'`` pushes seeded uniform
    samples through the network and allows 4 binomial standard deviations.
    """
    d, K, s = tnet.d, tnet.K, tnet.s
    if method == "auto":
        method = "exact" if d <= 2 else "sampled"
    half = 2 ** (s - 1)
    G = K * half
    expected = {k: tnet.mixture.weights[k] / Fraction(half**d) for k in cell_indices(d, K)}
    rows = []
    if method == "exact":
        mass = exact_cell_masses(tnet.tree, s)
        for idx in itertools.product(range(G), repeat=d):
            k = tuple(i // half + 1 for i in idx)
            r = tuple(i % half + 1 for i in idx)
            rows.append(CellMassRow(k, r, expected[k], mass.get(idx, Fraction(0))))
        outside = mass.get(None, Fraction(0))
        return CellMassReport(rows, True, 0.0, {"outside": outside})
    if method != "sampled":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    counts = np.zeros((G,) * d, dtype=np.int64)
    done = 0
    while done < samples:
        n = min(200_000, samples - done)
        y = tnet(rng.random(n))
        idx = np.clip(np.floor(y * G).astype(np.int64), 0, G - 1)
        np.add.at(counts, tuple(idx.T), 1)
        done += n
    worst = 0.0
    for idx in itertools.product(range(G), repeat=d):
        k = tuple(i // half + 1 for i in idx)
        r = tuple(i % half + 1 for i in idx)
        p = float(expected[k])
        worst = max(worst, 4 * math.sqrt(p * (1 - p) / samples))
        rows.append(CellMassRow(k, r, p, counts[idx] / samples))
    return CellMassReport(rows, False, max(worst, 4 / samples), {"samples": samples, "seed": seed})
