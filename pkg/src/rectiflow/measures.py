"""Discrete measures, uniform mixtures on the K-grid and simplex quantization."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .relu_net import ReluNetwork, as_fraction, evaluate

MASS_TOL = 1e-10


class MeasureError(ValueError):
    pass


@dataclass
class DiscreteMeasure:
    """Atoms ``points`` (k, n) with nonnegative ``masses`` summing to 1."""

    points: np.ndarray
    masses: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        if len(pts) != len(w):
            raise MeasureError(f"{len(pts)} atoms but {len(w)} masses")
        if len(w) == 0:
            raise MeasureError("empty measure")
        if (w < 0).any():
            raise MeasureError("negative mass")
        total = math.fsum(w)
        if abs(total - 1.0) > MASS_TOL:
            raise MeasureError(f"masses sum to {total}, expected 1")
        self.points, self.masses = pts, w

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.masses)

    @classmethod
    def uniform(cls, points, info: dict | None = None) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=np.float64)
        return cls(pts, np.full(len(pts), 1.0 / len(pts)), info or {})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["mass"])
            for x, m in zip(self.points, self.masses):
                w.writerow([repr(float(v)) for v in x] + [repr(float(m))])

    @classmethod
    def read_csv(cls, path) -> "DiscreteMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-1] != "mass":
            raise MeasureError(f"{path}: expected header x1..xn,mass")
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(data[:, :-1], data[:, -1])


@dataclass
class UniformMixture:
    """sum_k w_k U(J_k) over the K^d cells J_k = prod_j [(k_j-1)/K, k_j/K].

    ``weights`` maps 1-based index tuples to (preferably rational) weights.
    ``N`` records the quantization level when the weights lie in (1/N) Z.
    """

    d: int
    K: int
    weights: dict
    N: int | None = None

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise MeasureError("d and K must be positive")
        keys = set(cell_indices(self.d, self.K))
        w = {}
        for k, v in self.weights.items():
            k = tuple(int(i) for i in k)
            if k not in keys:
                raise MeasureError(f"cell index {k} outside [1..{self.K}]^{self.d}")
            w[k] = v
        for k in keys:
            w.setdefault(k, Fraction(0))
        if any(float(v) < 0 for v in w.values()):
            raise MeasureError("negative mixture weight")
        exact = [as_fraction(v) for v in w.values()]
        if all(e is not None for e in exact):
            if sum(exact) != 1:
                raise MeasureError(f"weights sum to {sum(exact)}, expected 1")
            w = {k: as_fraction(v) for k, v in w.items()}
        elif abs(math.fsum(float(v) for v in w.values()) - 1) > MASS_TOL:
            raise MeasureError("weights do not sum to 1")
        self.weights = dict(sorted(w.items()))

    @property
    def is_exact(self) -> bool:
        return all(isinstance(v, Fraction) for v in self.weights.values())

    def cell_weights(self) -> list:
        """Weights in lexicographic cell order."""
        return [self.weights[k] for k in cell_indices(self.d, self.K)]

    def to_json(self) -> str:
        def enc(v):
            f = as_fraction(v)
            if f is None:
                return float(v)
            return f"{f.numerator}/{f.denominator}"

        doc = {
            "d": self.d,
            "K": self.K,
            "weights": {",".join(map(str, k)): enc(v) for k, v in self.weights.items()},
        }
        if self.N is not None:
            doc["N"] = self.N
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "UniformMixture":
        doc = json.loads(text)
        w = {}
        for key, v in doc["weights"].items():
            idx = tuple(int(s) for s in key.split(","))
            w[idx] = Fraction(v) if isinstance(v, (str, int)) else float(v)
        return cls(int(doc["d"]), int(doc["K"]), w, doc.get("N"))


def cell_indices(d: int, K: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(1, K + 1), repeat=d))


def _cell_of(x: float, K: int) -> int:
    """1-based index l with x in [(l-1)/K, l/K), the last cell closed."""
    if not 0.0 <= x <= 1.0:
        raise MeasureError(f"coordinate {x} outside [0, 1]")
    k = math.floor(x * K)
    # correct float rounding of x*K against the exact cell boundaries
    fx = Fraction(x)
    while k > 0 and Fraction(k, K) > fx:
        k -= 1
    while Fraction(k + 1, K) <= fx:
        k += 1
    return min(k + 1, K)


def histogram(mu: DiscreteMeasure, K: int) -> dict[tuple[int, ...], float]:
    """Mass of mu in each grid cell; total mass is conserved."""
    acc: dict = {k: [] for k in cell_indices(mu.dim, K)}
    for x, w in zip(mu.points, mu.masses):
        acc[tuple(_cell_of(float(v), K) for v in x)].append(float(w))
    return {k: math.fsum(v) for k, v in acc.items()}


def histogram_mixture(mu: DiscreteMeasure, K: int) -> UniformMixture:
    h = histogram(mu, K)
    total = math.fsum(h.values())
    return UniformMixture(mu.dim, K, {k: v / total for k, v in h.items()})


@dataclass(frozen=True)
class SimplexWeights:
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise MeasureError("empty weight vector")
        if any(float(v) < 0 for v in self.values):
            raise MeasureError("negative weight")
        if abs(math.fsum(float(v) for v in self.values) - 1) > MASS_TOL:
            raise MeasureError("weights do not sum to 1")


def quantize_simplex(w: Sequence, N: int) -> list[Fraction]:
    """Probability vector with entries in {1/N, 2/N, ...}, L1-close to ``w``.

    Floors the first n-1 entries to the grid, puts the remainder in the
    last, then lifts every zero entry to 1/N by taking 1/N at a time from
    the currently largest entry.  The L1 error is at most 4(n-1)/N.
    """
    w = SimplexWeights(tuple(w)).values
    n = len(w)
    if N < n:
        raise MeasureError(f"need N >= n, got N={N} < n={n}")
    exact = [as_fraction(v) for v in w]
    exact = [Fraction(float(v)) if e is None else e for v, e in zip(w, exact)]
    ks = [math.floor(e * N) for e in exact[:-1]]
    ks.append(N - sum(ks))
    if ks[-1] < 0:
        raise MeasureError("weights sum exceeds 1 beyond tolerance")
    for z in [i for i, k in enumerate(ks) if k == 0]:
        donor = max(range(n), key=lambda i: (ks[i], -i))
        ks[donor] -= 1
        ks[z] += 1
    return [Fraction(k, N) for k in ks]


def quantized_mixture(mu: DiscreteMeasure, K: int, N: int) -> UniformMixture:
    """Histogram of mu on the K-grid with weights quantized to (1/N) Z, all positive."""
    h = histogram(mu, K)
    keys = cell_indices(mu.dim, K)
    q = quantize_simplex([h[k] for k in keys], N)
    return UniformMixture(mu.dim, K, dict(zip(keys, q)), N)


def sample_pushforward(net: ReluNetwork, count: int, seed: int) -> DiscreteMeasure:
    """Empirical measure of net(U), U uniform on [0,1]^m (numpy PCG64 stream)."""
    rng = np.random.default_rng(seed)
    u = rng.random((count, net.input_dim))
    return DiscreteMeasure.uniform(evaluate(net, u), {"rng": "numpy.PCG64", "seed": seed})


def midpoint_pushforward(net: ReluNetwork, count: int) -> DiscreteMeasure:
    """net pushed through the midpoint rule on [0,1] (scalar input).

    W1 to the exact push-forward of Lebesgue measure is at most Lip/(4 count).
    """
    if net.input_dim != 1:
        raise ValueError("midpoint_pushforward needs a scalar-input network")
    t = (np.arange(count) + 0.5) / count
    return DiscreteMeasure.uniform(evaluate(net, t[:, None]), {"rule": "midpoint", "count": count})


def mixture_to_discrete(mix: UniformMixture, points_per_cell: int) -> DiscreteMeasure:
    """Replace each U(J_k) by a regular q^d sub-grid of centers, q = floor(points_per_cell^(1/d)).

    ``info['slack']`` is a W1 bound between the mixture and the result.
    """
    d, K = mix.d, mix.K
    q = max(1, int(math.floor(points_per_cell ** (1.0 / d) + 1e-9)))
    sub = (np.arange(q) + 0.5) / (q * K)
    offs = np.array(list(itertools.product(sub, repeat=d)))
    pts, mass = [], []
    for k, w in mix.weights.items():
        if w == 0:
            continue
        corner = (np.array(k) - 1) / K
        pts.append(corner + offs)
        mass.append(np.full(len(offs), float(w) / len(offs)))
    half = 1.0 / (2 * K * q)
    info = {"q": q, "slack": half * d / (d + 1)}
    m = np.concatenate(mass)
    return DiscreteMeasure(np.vstack(pts), m / m.sum(), info)
