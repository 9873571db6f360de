import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from rectiflow.measures import DiscreteMeasure
from rectiflow.wasserstein import (
    CapacityError,
    dual_lower_bound,
    plan_cost,
    sup_cost,
    w1_1d,
    w1_discrete,
)


def dm(points, masses=None):
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if masses is None:
        masses = np.full(len(points), 1 / len(points))
    return DiscreteMeasure(points, np.asarray(masses, dtype=float))


def random_measure(rng, k, d):
    return dm(rng.random((k, d)), rng.dirichlet(np.ones(k)))


def linprog_w1(mu, nu):
    """Transportation LP solved by HiGHS, as an independent oracle."""
    C = sup_cost(mu.points, nu.points)
    n, m = C.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        A[n + j, j::m] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([mu.masses, nu.masses]), bounds=(0, None),
                  method="highs")
    return res.fun


def test_examples():
    mu = dm([0.0, 1.0])
    assert w1_discrete(mu, mu)[0] == pytest.approx(0.0, abs=1e-15)
    assert w1_discrete(dm([0.0]), dm([1.0]))[0] == pytest.approx(1.0)
    assert w1_discrete(mu, dm([0.5]))[0] == pytest.approx(0.5)
    assert w1_1d(dm([0.0]), dm([0.0, 0.5, 1.0])) == pytest.approx(0.5)


def test_sup_norm_metric():
    a, b = dm([[0.0, 0.0]]), dm([[0.3, -0.7]])
    assert w1_discrete(a, b)[0] == pytest.approx(0.7)


@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 8), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_matches_independent_lp(seed, k, l, d):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, k, d), random_measure(rng, l, d)
    cost, plan = w1_discrete(mu, nu)
    assert cost == pytest.approx(linprog_w1(mu, nu), abs=1e-9)
    rows = np.bincount(plan.src, plan.mass, minlength=k)
    cols = np.bincount(plan.dst, plan.mass, minlength=l)
    np.testing.assert_allclose(rows, mu.masses, atol=1e-10)
    np.testing.assert_allclose(cols, nu.masses, atol=1e-10)
    assert (plan.mass >= 0).all()
    assert plan.total == pytest.approx(cost, abs=1e-12)


@given(st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_1d_oracle_symmetry_shift(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, 12, 1), random_measure(rng, 9, 1)
    assert w1_1d(mu, nu) == pytest.approx(w1_1d(nu, mu), abs=1e-14)
    c = rng.normal()
    shifted = dm(mu.points + c, mu.masses)
    assert w1_1d(mu, shifted) == pytest.approx(abs(c), abs=1e-12)
    assert w1_1d(mu, nu) == pytest.approx(w1_discrete(mu, nu)[0], abs=1e-9)


@given(st.integers(0, 10**6), st.integers(1, 3))
@settings(max_examples=30, deadline=None)
def test_triangle_inequality_and_diameter_bound(seed, d):
    rng = np.random.default_rng(seed)
    a, b, c = (random_measure(rng, 7, d) for _ in range(3))
    ab, bc, ac = w1_discrete(a, b)[0], w1_discrete(b, c)[0], w1_discrete(a, c)[0]
    assert ac <= ab + bc + 1e-9
    pts = np.vstack([a.points, c.points])
    assert ac <= (pts.max(0) - pts.min(0)).max() + 1e-12


@given(st.integers(0, 10**6), st.integers(1, 2))
@settings(max_examples=30, deadline=None)
def test_primal_dual_sandwich(seed, d):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, 6, d), random_measure(rng, 5, d)
    tests = [lambda x, j=j: x[:, j] for j in range(d)] + [lambda x, j=j: -x[:, j] for j in range(d)]
    tests += [lambda x, p=p: np.abs(x - p).max(1) for p in rng.random((5, d))]
    lower = dual_lower_bound(mu, nu, tests)
    cost = w1_discrete(mu, nu)[0]
    product = plan_cost(mu, nu, np.outer(mu.masses, nu.masses))
    assert lower <= cost + 1e-9
    assert cost <= product + 1e-12


def test_dual_witness_is_tight_and_checked():
    mu, nu = dm([[1.0, 0.0]]), dm([[0.0, 0.0]])
    assert dual_lower_bound(mu, nu, [lambda x: x[:, 0]]) == pytest.approx(1.0)
    assert dual_lower_bound(mu, nu, [lambda x: np.zeros(len(x))]) == 0.0
    with pytest.raises(ValueError, match="1-Lipschitz"):
        dual_lower_bound(mu, nu, [lambda x: 3 * x[:, 0]])


def test_capacity_and_dimension_errors():
    big = dm(np.zeros((10_001, 1)))
    with pytest.raises(CapacityError):
        w1_discrete(big, dm([0.0]))
    with pytest.raises(ValueError):
        w1_discrete(dm([[0.0, 0.0]]), dm([0.0]))


def test_plan_export(tmp_path):
    mu, nu = dm([0.0, 1.0]), dm([0.5])
    _, plan = w1_discrete(mu, nu)
    plan.write_csv(tmp_path / "plan.csv")
    lines = (tmp_path / "plan.csv").read_text().splitlines()
    assert lines[0] == "src_idx,dst_idx,mass,cost_contrib"
    assert len(lines) == 3
