"""Wasserstein-1 distances between discrete measures in the sup norm.

``w1_discrete`` solves the transport LP with POT's network simplex and then
certifies optimality itself from the returned duals.  ``w1_1d`` is an
independent closed form for the real line, used as a cross-check.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .measures import DiscreteMeasure

for _backend in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

MAX_ATOMS = 10_000
MAX_PAIRS = 50_000_000
CERT_TOL = 1e-9


class CapacityError(ValueError):
    """Problem too large for the dense solver; coarsen the inputs."""


class CertificateError(RuntimeError):
    """The solver output failed the optimality check."""


@dataclass
class TransportPlan:
    src: np.ndarray
    dst: np.ndarray
    mass: np.ndarray
    cost: np.ndarray

    @property
    def total(self) -> float:
        return float(np.dot(self.mass, self.cost))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src_idx", "dst_idx", "mass", "cost_contrib"])
            for i, j, m, c in zip(self.src, self.dst, self.mass, self.cost):
                w.writerow([int(i), int(j), repr(float(m)), repr(float(m * c))])


def sup_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.abs(x[:, None, :] - y[None, :, :]).max(-1)


def _check_pair(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if len(mu) > MAX_ATOMS or len(nu) > MAX_ATOMS or len(mu) * len(nu) > MAX_PAIRS:
        raise CapacityError(
            f"{len(mu)} x {len(nu)} atoms exceeds the solver capacity "
            f"({MAX_ATOMS} per side, {MAX_PAIRS} pairs); coarsen the discretization"
        )


def w1_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, TransportPlan]:
    """Exact W1 and an optimal plan, certified by complementary slackness."""
    _check_pair(mu, nu)
    a = mu.masses / mu.masses.sum()
    b = nu.masses / nu.masses.sum()
    C = sup_cost(mu.points, nu.points)
    G, log = ot.emd(a, b, C, numItermax=10_000_000, log=True)
    if log.get("warning"):
        raise CertificateError(f"network simplex did not converge: {log['warning']}")
    u, v = np.asarray(log["u"]), np.asarray(log["v"])
    reduced = C - u[:, None] - v[None, :]
    scale = max(1.0, float(C.max()))
    tol = CERT_TOL * scale
    support = G > 0
    if reduced.min() < -tol or (support.any() and np.abs(reduced[support]).max() > tol):
        raise CertificateError(
            f"complementary slackness violated: min reduced cost {reduced.min():.3e}, "
            f"max on support {np.abs(reduced[support]).max():.3e}"
        )
    primal = float((G * C).sum())
    dual = float(a @ u + b @ v)
    if abs(primal - dual) > tol:
        raise CertificateError(f"duality gap {abs(primal - dual):.3e}")
    i, j = np.nonzero(support)
    return primal, TransportPlan(i, j, G[i, j], C[i, j])


def w1_1d(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """W1 on the line as the integral of |F_mu - F_nu| over merged sorted atoms."""
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("w1_1d needs one-dimensional measures")
    xs = np.concatenate([mu.points[:, 0], nu.points[:, 0]])
    ws = np.concatenate([mu.masses / mu.masses.sum(), -nu.masses / nu.masses.sum()])
    order = np.argsort(xs, kind="stable")
    xs, ws = xs[order], ws[order]
    diff = np.cumsum(ws)[:-1]
    return float(np.sum(np.abs(diff) * np.diff(xs)))


def w1(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """W1 with the 1-D closed form when possible."""
    if mu.dim == 1:
        return w1_1d(mu, nu)
    return w1_discrete(mu, nu)[0]


def plan_cost(mu: DiscreteMeasure, nu: DiscreteMeasure, plan: np.ndarray) -> float:
    """Cost of a dense coupling matrix after checking its marginals."""
    plan = np.asarray(plan, dtype=np.float64)
    if (plan < -1e-15).any():
        raise ValueError("negative plan entry")
    if not (np.allclose(plan.sum(1), mu.masses, atol=1e-10) and np.allclose(plan.sum(0), nu.masses, atol=1e-10)):
        raise ValueError("plan marginals do not match")
    return float((plan * sup_cost(mu.points, nu.points)).sum())


def dual_lower_bound(mu: DiscreteMeasure, nu: DiscreteMeasure,
                     test_functions: Sequence[Callable]) -> float:
    """max over 1-Lipschitz psi of int psi d(mu - nu); Lipschitz checked on all atoms."""
    _check_pair(mu, nu)
    pts = np.vstack([mu.points, nu.points])
    D = sup_cost(pts, pts)
    best = -np.inf
    for psi in test_functions:
        vals = np.asarray(psi(pts), dtype=np.float64).reshape(-1)
        gap = np.abs(vals[:, None] - vals[None, :]) - D
        if gap.max() > 1e-12:
            raise ValueError("test function is not 1-Lipschitz on the atoms")
        k = len(mu)
        best = max(best, float(mu.masses @ vals[:k] - nu.masses @ vals[k:]))
    return best
