import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rectiflow.lipschitz_approx import (
    DomainError,
    LipschitzSample,
    LipschitzViolation,
    PreconditionError,
    build_fN,
    build_quantized_approximant,
    clamp_to_unit_cube,
    estimate_lipschitz,
    grid_nodes,
    log2_collection_size,
    mcshane_extend,
    quantize_codebook,
)
from rectiflow.relu_net import metrics


def grid(n, m):
    g = np.linspace(0, 1, n)
    return np.array(np.meshgrid(*([g] * m), indexing="ij")).reshape(m, -1).T


def test_codebook_examples():
    assert quantize_codebook(0.234, 10) == Fraction(1, 5)
    assert quantize_codebook(0.375, 4) == Fraction(1, 2)
    assert quantize_codebook(-0.375, 4) == Fraction(-1, 2)
    assert quantize_codebook(0.0, 3) == 0
    with pytest.raises(DomainError):
        quantize_codebook(5.0, 4)


@given(st.floats(-3.9, 3.9), st.integers(4, 40))
def test_codebook_moves_at_most_half_step(y, N):
    q = quantize_codebook(y, N)
    assert abs(Fraction(y) - q) <= Fraction(1, 2 * N)
    assert (q * N).denominator == 1


def test_sample_validation():
    pts = np.array([[0.0], [0.5], [1.0]])
    LipschitzSample(pts, np.array([0.0, 0.5, 1.0]), 1.0, 1.0)
    with pytest.raises(LipschitzViolation):
        LipschitzSample(pts, np.array([0.0, 0.9, 1.0]), 1.0, 1.0)
    with pytest.raises(LipschitzViolation):
        LipschitzSample(pts, np.array([0.0, 0.5, 1.0]), 1.0, 0.5)


def test_mcshane_extension_examples():
    s = LipschitzSample(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), 1.0, 1.0)
    np.testing.assert_allclose(mcshane_extend(s, np.array([[0.5], [0.25]]))[:, 0], [0.5, 0.25])
    # extension agrees with the data on the sample
    np.testing.assert_allclose(mcshane_extend(s, s.points)[:, 0], s.values[:, 0])


@given(st.integers(0, 10**6), st.integers(1, 2))
@settings(max_examples=30, deadline=None)
def test_mcshane_keeps_lipschitz_constant(seed, m):
    rng = np.random.default_rng(seed)
    pts = rng.random((15, m))
    vals = np.abs(pts - 0.3).max(1) * 1.5
    s = LipschitzSample(pts, vals, 1.5, 1.5)
    x, y = rng.random((2, 300, m))
    fx, fy = mcshane_extend(s, x)[:, 0], mcshane_extend(s, y)[:, 0]
    assert (np.abs(fx - fy) <= 1.5 * np.abs(x - y).max(1) + 1e-12).all()


@pytest.mark.parametrize("N", [1, 3, 6])
def test_build_fN_interpolates_nodes(N):
    f = lambda p: np.sin(3 * p[:, 0]) + p[:, -1] ** 2
    approx = build_fN(f, N, 2)
    nodes = np.array(grid_nodes(N, 2)) / N
    np.testing.assert_allclose(approx.net(nodes)[:, 0], f(nodes), atol=1e-12)


@pytest.mark.parametrize("m,N", [(1, 2), (1, 6), (2, 3), (2, 6), (3, 2)])
def test_build_fN_architecture_bounds(m, N):
    approx = build_fN(lambda p: p.sum(1), N, m)
    for name, (value, bound, ok) in approx.check_bounds().items():
        assert ok, f"{name}: {value} > {bound}"


@given(st.integers(1, 10), st.floats(0.1, 4.0), st.floats(-1, 1))
@settings(max_examples=30, deadline=None)
def test_build_fN_error_bound_1d(N, a, c):
    f = lambda p: c + np.abs(a * (p[:, 0] - 0.37))
    approx = build_fN(f, N, 1)
    x = np.linspace(0, 1, 2001)[:, None]
    err = np.abs(approx.net(x)[:, 0] - f(x)).max()
    assert err <= a / N + 1e-12


def test_build_fN_with_perturbation_and_lipschitz_growth():
    f = lambda p: 0.5 * p[:, 0]
    rng = np.random.default_rng(0)
    delta = 0.05
    h = lambda v: v + rng.uniform(-delta, delta)
    approx = build_fN(f, 8, 1, h=h, delta=delta)
    lip1 = estimate_lipschitz(approx.net, mode="exact").value
    assert lip1 <= 0.5 + 2 * 8 * delta + 1e-12
    with pytest.raises(PreconditionError):
        build_fN(f, 8, 1, h=lambda v: v + 1, delta=0.1)


def test_quantized_examples():
    # constant function: error at most 1/(2N)
    pts = grid(5, 1)
    s = LipschitzSample(pts, np.full(len(pts), 0.3), 0.0, 0.3)
    q = build_quantized_approximant(s, 4)
    assert np.abs(q.net(grid(101, 1))[:, 0] - 0.3).max() <= 1 / 8 + 1e-12
    assert q.weights_in_codebook()
    # ramp
    s = LipschitzSample(pts, pts[:, 0], 1.0, 1.0)
    q = build_quantized_approximant(s, 8)
    assert np.abs(q.net(grid(101, 1))[:, 0] - grid(101, 1)[:, 0]).max() <= 1.5 / 8 + 1e-12
    assert log2_collection_size(8, 1) == pytest.approx(9 * math.log2(129))


def test_quantized_precondition():
    pts = grid(5, 1)
    s = LipschitzSample(pts, 3 * pts[:, 0], 3.0, 3.0)
    with pytest.raises(PreconditionError):
        build_quantized_approximant(s, 4)


@given(st.integers(0, 10**6), st.sampled_from([4, 6, 8]))
@settings(max_examples=25, deadline=None)
def test_quantized_weights_and_magnitude(seed, N):
    rng = np.random.default_rng(seed)
    pts = grid(9, 1)
    vals = np.cumsum(rng.uniform(-0.1, 0.1, len(pts)))
    vals -= vals.mean()
    lip = float(np.abs(np.diff(vals)).max() * 8) + 1e-9
    s = LipschitzSample(pts, vals, lip, float(np.abs(vals).max()))
    if s.sup_norm + s.lip > N:
        return
    q = build_quantized_approximant(s, N)
    met = metrics(q.net)
    assert q.weights_in_codebook()
    assert met.magnitude <= N
    x = grid(401, 1)
    ext = mcshane_extend(s, x)[:, 0]
    assert np.abs(q.net(x)[:, 0] - ext).max() <= q.error_bound + 1e-9


def test_vector_valued_approximant():
    t = grid(33, 1)
    vals = np.hstack([np.cos(t), np.sin(t)])
    s = LipschitzSample(t, vals, 1.0, 1.0)
    q = build_quantized_approximant(s, 8)
    assert q.net.output_dim == 2
    x = grid(257, 1)
    err = np.abs(q.net(x) - np.hstack([np.cos(x), np.sin(x)])).max()
    assert err <= q.error_bound + 1e-9


def test_exact_and_sampled_lipschitz_agree_on_1d():
    pts = grid(17, 1)
    s = LipschitzSample(pts, np.abs(pts[:, 0] - 0.5), 1.0, 0.5)
    q = build_quantized_approximant(s, 8)
    exact = estimate_lipschitz(q.net, mode="exact").value
    x = np.linspace(0, 1, 20001)[:, None]
    y = q.net(x)[:, 0]
    brute = np.abs(np.diff(y) / np.diff(x[:, 0])).max()
    assert exact == pytest.approx(brute, rel=1e-6)
    assert estimate_lipschitz(q.net, mode="sampled").value <= exact + 1e-6


def test_sampled_lipschitz_norms_2d():
    t = grid(9, 2)
    s = LipschitzSample(t, t[:, 0] + 0.5 * t[:, 1], 1.5, 1.5)
    q = build_quantized_approximant(s, 4)
    l1 = estimate_lipschitz(q.net, norm="1").value
    linf = estimate_lipschitz(q.net, norm="inf").value
    assert l1 <= linf + 1e-9
    assert linf <= 2 * l1 + 1e-9


def test_clamp_gadget():
    pts = grid(9, 1)
    s = LipschitzSample(pts, pts[:, 0] ** 2, 2.0, 1.0)
    q = build_quantized_approximant(s, 4)
    c = clamp_to_unit_cube(q.net)
    x = np.linspace(0, 1, 101)[:, None]
    np.testing.assert_allclose(c(x), q.net(x), atol=1e-12)
    np.testing.assert_allclose(c(np.array([[-0.5], [1.7]])), q.net(np.array([[0.0], [1.0]])), atol=1e-12)
    assert c.depth == q.net.depth + 1


def test_sample_csv_round_trip(tmp_path):
    pts = grid(5, 2)
    s = LipschitzSample(pts, pts.sum(1), 2.0, 2.0)
    s.write_csv(tmp_path / "s.csv")
    back = LipschitzSample.read_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.points, s.points)
    np.testing.assert_array_equal(back.values, s.values)
    assert back.lip == 2.0 and back.scalar
