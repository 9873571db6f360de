"""Generating rectifiable measures with ReLU networks.

A target nu = f # mu with f Lipschitz on a compact A in R^m is reached as
Psi # lambda with Psi = Phi o rho o Sigma: Sigma: [0,1] -> [0,1]^m
transports Lebesgue measure close to the (rescaled) parameter measure and
Phi approximates f with quantized weights.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .lipschitz_approx import (
    LipschitzSample,
    PreconditionError,
    QuantizedApproximant,
    build_quantized_approximant,
    estimate_lipschitz,
)
from .measures import DiscreteMeasure, midpoint_pushforward
from .relu_net import ReluNetwork, compose_with_relu, evaluate, metrics
from .transport import SigmaNetwork, build_sigma, in_weight_grid
from .wasserstein import w1, w1_discrete

SCHEMA_VERSION = 1


class SingularJacobianError(ValueError):
    pass


@dataclass
class RectifiablePiece:
    """f: A -> R^n known on a sample, with A inside the cube center +- side/2.

    ``func`` (optional) evaluates f on arrays of shape (k, m).
    """

    sample: LipschitzSample
    center: np.ndarray
    side: float
    func: Callable | None = None

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        if self.center.shape != (self.sample.input_dim,):
            raise ValueError("cube center must have the sample's input dimension")
        if self.side <= 0:
            raise ValueError("cube side must be positive")
        lo, hi = self.center - self.side / 2, self.center + self.side / 2
        tol = 1e-12 * max(1.0, self.side)
        if (self.sample.points < lo - tol).any() or (self.sample.points > hi + tol).any():
            raise ValueError("sample points leave the enclosing cube")

    @property
    def m(self) -> int:
        return self.sample.input_dim

    @property
    def n(self) -> int:
        return self.sample.output_dim

    @property
    def corner(self) -> np.ndarray:
        return self.center - self.side / 2

    def to_unit(self, a) -> np.ndarray:
        """phi^{-1}: cube -> [0,1]^m."""
        return (np.atleast_2d(a) - self.corner) / self.side

    def from_unit(self, u) -> np.ndarray:
        """phi: [0,1]^m -> cube."""
        return self.corner + self.side * np.atleast_2d(u)


def sup_diameter(points: np.ndarray) -> float:
    """Sup-norm diameter of a finite set (coordinate ranges)."""
    points = np.atleast_2d(points)
    return float((points.max(0) - points.min(0)).max())


def slab_interval(k: int, ell: int) -> tuple[Fraction, Fraction]:
    """First-coordinate range [(k-1)/ell, (2k-1)/(2 ell)] of the k-th slab."""
    return Fraction(k - 1, ell), Fraction(2 * k - 1, 2 * ell)


def pack_union(pieces: Sequence[RectifiablePiece]) -> RectifiablePiece:
    """One piece on [0,1]^m whose image is the union of the pieces' images.

    Piece k is mapped to the unit cube by phi_k^{-1} and squeezed into the
    slab [(k-1)/ell, (2k-1)/(2 ell)] x [0,1]^{m-1}.  The declared Lipschitz
    constant is 2 ell max{diam E, s_k Lip f_k}, diam E taken from samples.
    """
    pieces = list(pieces)
    ell = len(pieces)
    if ell == 0:
        raise ValueError("need at least one piece")
    m = pieces[0].m
    if any(p.m != m or p.n != pieces[0].n for p in pieces):
        raise ValueError("pieces must share input and output dimensions")
    diam_e = sup_diameter(np.vstack([p.sample.values for p in pieces]))
    lip = 2 * ell * max([diam_e] + [p.side * p.sample.lip for p in pieces])
    pts, vals = [], []
    for k, p in enumerate(pieces, start=1):
        u = p.to_unit(p.sample.points)
        u[:, 0] = u[:, 0] / (2 * ell) + (k - 1) / ell
        pts.append(u)
        vals.append(p.sample.values)
    sup = max(p.sample.sup_norm for p in pieces)
    values = np.vstack(vals)
    sample = LipschitzSample(np.vstack(pts), values[:, 0] if pieces[0].sample.scalar else values, lip, sup)

    funcs = [p.func for p in pieces]
    func = None
    if all(f is not None for f in funcs):
        def func(x, pieces=pieces, ell=ell):
            x = np.atleast_2d(np.asarray(x, dtype=np.float64))
            k = np.clip(np.floor(x[:, 0] * ell).astype(int), 0, ell - 1)
            out = np.empty((len(x), pieces[0].n))
            for i, p in enumerate(pieces):
                sel = k == i
                if sel.any():
                    y = x[sel].copy()
                    y[:, 0] = 2 * ell * y[:, 0] - 2 * i
                    out[sel] = np.asarray(p.func(p.from_unit(y))).reshape(sel.sum(), -1)
            return out

    return RectifiablePiece(sample, np.full(m, 0.5), 1.0, func)


def jacobian_factor(jac: np.ndarray) -> np.ndarray:
    """sqrt(det(J^T J)) for stacked Jacobians of shape (k, n, m)."""
    jac = np.asarray(jac, dtype=np.float64)
    gram = np.einsum("kij,kil->kjl", jac, jac)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None))


def _interpolant(sample: LipschitzSample) -> Callable:
    if sample.input_dim == 1:
        order = np.argsort(sample.points[:, 0])
        t = sample.points[order, 0]
        v = sample.values[order]

        def f(x):
            x = np.atleast_2d(x)[:, 0]
            return np.stack([np.interp(x, t, v[:, j]) for j in range(v.shape[1])], axis=1)

        return f
    from scipy.interpolate import LinearNDInterpolator

    return LinearNDInterpolator(sample.points, sample.values)


def injective_density(f, phi: Callable, x, step: float = 1e-4, tol: float = 1e-8,
                      domain: Sequence | None = None) -> np.ndarray:
    """psi(x) = Jf(x) phi(f(x)), the parameter density with f # (psi dx) = phi dH^m.

    ``f`` is a callable on arrays (k, m) or a LipschitzSample, in which case
    its piecewise-linear interpolant is differentiated.  Jf uses central
    differences; a near-singular Jacobian raises instead of returning 0.
    """
    if isinstance(f, LipschitzSample):
        pts = f.points
        img = f.values
        if len(pts) > 1:
            dist = np.abs(img[:, None, :] - img[None, :, :]).max(-1)
            np.fill_diagonal(dist, np.inf)
            same = np.abs(pts[:, None, :] - pts[None, :, :]).max(-1) == 0
            dist[same] = np.inf
            if dist.min() <= tol:
                raise ValueError("sample is not injective: two parameters share an image")
        if domain is None:
            domain = list(zip(pts.min(0), pts.max(0)))
        f = _interpolant(f)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    k, m = x.shape
    cols = []
    for i in range(m):
        e = np.zeros(m)
        e[i] = step
        lo_pt, hi_pt = x - e, x + e
        if domain is not None:
            lo_pt[:, i] = np.maximum(lo_pt[:, i], domain[i][0])
            hi_pt[:, i] = np.minimum(hi_pt[:, i], domain[i][1])
        h = (hi_pt[:, i] - lo_pt[:, i])[:, None]
        cols.append((np.asarray(f(hi_pt)).reshape(k, -1) - np.asarray(f(lo_pt)).reshape(k, -1)) / h)
    jac = np.stack(cols, axis=2)
    jf = jacobian_factor(jac)
    if (jf <= tol).any():
        raise SingularJacobianError(f"near-singular Jacobian at {x[np.argmin(jf)]}")
    return jf * np.asarray(phi(np.asarray(f(x)).reshape(k, -1))).reshape(-1)


def truncate_countable(pieces: Iterable, nu_weights: Iterable[float], ell: int,
                       diam_e: float) -> tuple[list, list[float], float]:
    """Keep the first ``ell`` pieces, renormalize their masses, bound the W1 error.

    Returns (pieces, weights, (1 - nu(E_ell)) diam(E)).
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    kept = list(itertools.islice(pieces, ell))
    w = [float(v) for v in itertools.islice(nu_weights, ell)]
    mass = math.fsum(w)
    if mass <= 0:
        raise ValueError("the kept pieces carry no mass")
    if mass > 1 + 1e-12:
        raise ValueError("masses exceed 1")
    return kept, [v / mass for v in w], (1 - mass) * diam_e


# ----------------------------------------------------------------- pipeline


@dataclass
class PipelineCertificate:
    N: int
    m: int
    n: int
    diam_a: float
    lip_f: float
    sup_f: float
    claimed_w1: float
    measured_w1: float
    slack: float
    lip_psi: float
    lip_psi_bound: float
    metrics: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def w1_ok(self) -> bool:
        return self.measured_w1 <= self.claimed_w1 + self.slack

    @property
    def metrics_ok(self) -> bool:
        return all(v["ok"] for v in self.metrics.values())

    @property
    def ok(self) -> bool:
        return self.w1_ok and self.metrics_ok and self.lip_psi <= self.lip_psi_bound

    def to_json(self) -> str:
        doc = asdict(self)
        doc["w1_ok"] = self.w1_ok
        doc["ok"] = self.ok
        return json.dumps(doc, sort_keys=True, indent=2, default=str)


@dataclass
class PipelineResult:
    psi: ReluNetwork
    phi: QuantizedApproximant
    sigma: SigmaNetwork
    certificate: PipelineCertificate
    target: DiscreteMeasure
    generated: DiscreteMeasure


def pipeline_bounds(m: int, n: int, N: int) -> dict:
    K = 3 * N
    return {
        "depth": math.ceil(math.log2(m + 1)) + 6 * (m - 1) + 7,
        "connectivity": 78 * m * n * K**m,
        "width": 6 * m * n * K**m,
        "magnitude": 4 * K ** (m + 1),
    }


def build_pipeline(piece: RectifiablePiece, mu: DiscreteMeasure, N: int,
                   nu: DiscreteMeasure | None = None, atoms: int = 4000,
                   target_slack: float = 0.0) -> PipelineResult:
    """Psi = Phi o rho o Sigma for nu = f # mu and a certificate for it.

    ``mu`` lives on [0,1]^m in the coordinates of the piece's cube.  When
    ``nu`` is omitted it is f # mu computed with ``piece.func``.  The
    generated measure is discretized with the midpoint rule on ``atoms``
    points; the reported slack adds Lip(Psi)/(4 atoms) to ``target_slack``
    (a W1 bound between the true target and ``nu``).
    """
    m, n = piece.m, piece.n
    if mu.dim != m:
        raise ValueError("parameter measure dimension must equal m")
    diam_a = piece.side
    lip_g = diam_a * piece.sample.lip
    if piece.sample.sup_norm + lip_g > N:
        raise PreconditionError(
            f"need ||f|| + diam(A) Lip(f) <= N, got {piece.sample.sup_norm + lip_g:.6g} > {N}"
        )
    unit_sample = LipschitzSample(
        piece.to_unit(piece.sample.points),
        piece.sample.values[:, 0] if piece.sample.scalar else piece.sample.values,
        lip_g,
        piece.sample.sup_norm,
    )
    phi = build_quantized_approximant(unit_sample, N)
    sigma = build_sigma(mu, 3 * N)
    psi = compose_with_relu(phi.net, sigma.net)

    if nu is None:
        if piece.func is None:
            raise ValueError("need nu or piece.func to form the target measure")
        nu = DiscreteMeasure(np.asarray(piece.func(piece.from_unit(mu.points))).reshape(len(mu), -1),
                             mu.masses)
    generated = midpoint_pushforward(psi, atoms)
    lip_psi = estimate_lipschitz(psi, mode="exact").value
    measured = w1(nu, generated)
    slack = target_slack + lip_psi / (4 * atoms) + 1e-9

    met = metrics(psi)
    bounds = pipeline_bounds(m, n, N)
    report = {
        "depth": {"value": met.depth, "bound": bounds["depth"], "ok": met.depth <= bounds["depth"]},
        "connectivity": {"value": met.connectivity, "bound": bounds["connectivity"],
                         "ok": met.connectivity <= bounds["connectivity"]},
        "width": {"value": met.width, "bound": bounds["width"], "ok": met.width <= bounds["width"]},
        "magnitude": {"value": str(met.magnitude), "bound": bounds["magnitude"],
                      "ok": met.magnitude <= bounds["magnitude"]},
    }
    grid_n = 4 * (3 * N) ** (m + 1)
    bad = [w for w in met.weight_set if not in_weight_grid(w, grid_n, 3 * N)] if psi.is_exact else ["inexact"]
    report["weights_in_grid"] = {"value": len(bad), "bound": 0, "ok": not bad}
    cert = PipelineCertificate(
        N=N, m=m, n=n, diam_a=diam_a, lip_f=piece.sample.lip, sup_f=piece.sample.sup_norm,
        claimed_w1=(m + 1) * (lip_g + 1) / N, measured_w1=measured, slack=slack,
        lip_psi=lip_psi, lip_psi_bound=m * (6 * (N + 1)) ** (m + 1), metrics=report,
    )
    return PipelineResult(psi, phi, sigma, cert, nu, generated)


# ------------------------------------------------------------- bit counts


def bit_count(m: int, n: int, C: float, eps: float) -> float:
    """b(eps) = 3n (3 ceil(C/eps))^m log2(6 ceil(C/eps))."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    N = math.ceil(C / eps)
    return 3 * n * (3 * N) ** m * math.log2(6 * N)


def check_kappa(kappa: Callable, grid: Sequence[float]) -> None:
    """kappa must give positive integers, nonincreasing as eps grows."""
    eps = sorted(grid)
    vals = [kappa(e) for e in eps]
    for e, v in zip(eps, vals):
        if int(v) != v or v < 1:
            raise ValueError(f"kappa({e}) = {v} is not a positive integer")
    for (e1, v1), (e2, v2) in zip(zip(eps, vals), zip(eps[1:], vals[1:])):
        if v2 > v1:
            raise ValueError(f"kappa increases between eps={e1} and eps={e2}")


def bit_count_countable(m: int, n: int, C: float, kappa: Callable, eps: float) -> float:
    """3n (3 N)^m log2(6 N) with N = ceil(2(m+1)(C+1) kappa(eps) / eps)."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    N = math.ceil(2 * (m + 1) * (C + 1) * kappa(eps) / eps)
    return 3 * n * (3 * N) ** m * math.log2(6 * N)


def kappa_log(eps: float) -> int:
    return max(1, math.ceil(math.log2(1 / eps)))


def kappa_poly(k: float) -> Callable:
    return lambda eps: math.ceil(1 / eps**k)


def scaling_exponent(eps: Sequence[float], bits: Sequence[float], polylog: bool = False) -> float:
    """Slope of log b against log(1/eps).

    With ``polylog`` a log log(1/eps) regressor absorbs polylogarithmic
    factors, so the slope estimates the polynomial exponent alone.
    """
    x = np.log(1 / np.asarray(eps, dtype=np.float64))
    y = np.log(np.asarray(bits, dtype=np.float64))
    if len(x) < 2:
        raise ValueError("need at least two grid points")
    cols = [x, np.ones_like(x)]
    if polylog:
        cols.insert(1, np.log(x))
    coef, *_ = np.linalg.lstsq(np.stack(cols, axis=1), y, rcond=None)
    return float(coef[0])


def metric_entropy_bound(d: int, eps: float) -> float:
    """Bits to cover probability measures on [0,1]^d to W1 accuracy eps: (2/eps)^d log2(24/eps)."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    return (2 / eps) ** d * math.log2(24 / eps)


def histogram_entropy_count(d: int, K: int) -> float:
    """log2 of the number of 1/(4K^{d+1})-quantized mixtures of resolution K, bounded by K^d log2(12K)."""
    return K**d * math.log2(12 * K)


# ---------------------------------------------------------------- curves


def quarter_circle_piece(samples: int = 3201) -> RectifiablePiece:
    """f(t) = (cos t, sin t) on A = [0, pi/2]; unit speed, Lip = 1 in the sup norm."""
    t = np.linspace(0.0, math.pi / 2, samples)[:, None]

    def f(a):
        a = np.atleast_2d(a)[:, 0]
        return np.stack([np.cos(a), np.sin(a)], axis=1)

    return RectifiablePiece(LipschitzSample(t, f(t), 1.0, 1.0), [math.pi / 4], math.pi / 2, f)


def segment_piece(direction=(1.0, 0.5), samples: int = 201) -> RectifiablePiece:
    """f(t) = t * direction on A = [0, 1]."""
    v = np.asarray(direction, dtype=np.float64)
    t = np.linspace(0.0, 1.0, samples)[:, None]

    def f(a):
        return np.atleast_2d(a)[:, :1] * v

    lip = float(np.abs(v).max())
    return RectifiablePiece(LipschitzSample(t, f(t), lip, lip), [0.5], 1.0, f)


def constant_piece(value=(0.25, 0.5), m: int = 1, samples: int = 11) -> RectifiablePiece:
    v = np.asarray(value, dtype=np.float64)
    t = np.linspace(0.0, 1.0, samples)
    pts = np.array(list(itertools.product(t, repeat=m)))

    def f(a):
        return np.tile(v, (len(np.atleast_2d(a)), 1))

    return RectifiablePiece(LipschitzSample(pts, f(pts), 0.0, float(np.abs(v).max())), [0.5] * m, 1.0, f)


CURVES = {
    "quarter_circle": quarter_circle_piece,
    "segment": segment_piece,
    "constant": constant_piece,
}


def uniform_parameter_measure(m: int, per_axis: int) -> DiscreteMeasure:
    """Midpoint grid on [0,1]^m; W1 to Lebesgue measure is at most m/(m+1) / (2 per_axis)."""
    g = (np.arange(per_axis) + 0.5) / per_axis
    return DiscreteMeasure.uniform(np.array(list(itertools.product(g, repeat=m))))
