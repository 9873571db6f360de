import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rectiflow.lipschitz_approx import LipschitzSample, PreconditionError, build_quantized_approximant, estimate_lipschitz
from rectiflow.measures import DiscreteMeasure
from rectiflow.rectifiable import (
    RectifiablePiece,
    SingularJacobianError,
    bit_count,
    bit_count_countable,
    build_pipeline,
    check_kappa,
    constant_piece,
    histogram_entropy_count,
    injective_density,
    kappa_log,
    kappa_poly,
    metric_entropy_bound,
    pack_union,
    quarter_circle_piece,
    scaling_exponent,
    segment_piece,
    slab_interval,
    truncate_countable,
    uniform_parameter_measure,
)
from rectiflow.wasserstein import w1

EPS = np.geomspace(1e-3, 1e-1, 25)


def test_slab_intervals():
    assert slab_interval(1, 2) == (0, Fraction(1, 4))
    assert slab_interval(2, 2) == (Fraction(1, 2), Fraction(3, 4))


def test_pack_union_preserves_images_and_bounds_lipschitz():
    a, b = segment_piece((1.0, 0.0), 51), quarter_circle_piece(201)
    packed = pack_union([a, b])
    u = packed.sample.points[:, 0]
    assert u[:51].min() == 0 and u[:51].max() == pytest.approx(0.25)
    assert u[51:].min() == pytest.approx(0.5) and u[51:].max() == pytest.approx(0.75)
    np.testing.assert_array_equal(packed.sample.values, np.vstack([a.sample.values, b.sample.values]))
    # the packed data must be consistent with its declared constant (validated on construction)
    assert packed.sample.lip == pytest.approx(2 * 2 * max(1.0, math.pi / 2))
    x = np.linspace(0, 0.25, 11)[:, None]
    np.testing.assert_allclose(packed.func(x), a.func(4 * x), atol=1e-12)


def test_injective_density_examples():
    phi = lambda y: np.ones(len(y))
    arc = quarter_circle_piece()
    x = np.linspace(0.1, 1.4, 9)[:, None]
    np.testing.assert_allclose(injective_density(arc.func, phi, x), 1.0, atol=1e-6)
    np.testing.assert_allclose(injective_density(lambda a: 2 * a, phi, x), 2.0, atol=1e-9)
    # from samples, via the piecewise-linear interpolant
    np.testing.assert_allclose(injective_density(arc.sample, phi, x), 1.0, atol=1e-3)
    seg = segment_piece((1.0, 0.0))
    np.testing.assert_allclose(injective_density(seg.func, phi, np.array([[0.5]])), 1.0, atol=1e-9)
    with pytest.raises(SingularJacobianError):
        injective_density(lambda a: 0 * a, phi, x)
    with pytest.raises(ValueError, match="injective"):
        t = np.array([[0.0], [0.5], [1.0]])
        injective_density(LipschitzSample(t, np.array([0.0, 1.0, 0.0]), 2.0, 1.0), phi, x)


def test_truncate_countable():
    pieces = iter(range(100))
    weights = (2.0**-k for k in range(1, 100))
    kept, w, err = truncate_countable(pieces, weights, 3, 1.0)
    assert kept == [0, 1, 2]
    assert err == pytest.approx(1 / 8)
    assert sum(w) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        truncate_countable([1], [0.0], 1, 1.0)


def test_bit_count_examples():
    assert bit_count(1, 2, 1.0, 0.5) == pytest.approx(36 * math.log2(12))
    # eps = C is the boundary where N = 1
    assert bit_count(1, 1, 0.5, 0.5) == pytest.approx(9 * math.log2(6))
    with pytest.raises(ValueError):
        bit_count(1, 1, 1.0, 0.0)


@given(st.integers(1, 3), st.integers(1, 3), st.floats(0.5, 10), st.floats(1e-3, 1.0))
def test_bit_count_is_monotone(m, n, C, eps):
    assert bit_count(m, n, C, eps) <= bit_count(m, n, C, eps / 2)
    assert bit_count(m, n, C, eps) <= bit_count(m, n + 1, C, eps)


def test_kappa_validation():
    check_kappa(kappa_log, EPS)
    check_kappa(kappa_poly(0.5), EPS)
    with pytest.raises(ValueError, match="positive integer"):
        check_kappa(lambda e: 0.5, EPS)
    with pytest.raises(ValueError, match="increases"):
        check_kappa(lambda e: math.ceil(100 * e), EPS)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_scaling_exponents(m):
    plain = scaling_exponent(EPS, [bit_count(m, 2, m + 1, e) for e in EPS])
    assert abs(plain - m) <= 0.15
    for k in (0.5, 1.0):
        b = [bit_count_countable(m, 2, m + 1, kappa_poly(k), e) for e in EPS]
        assert abs(scaling_exponent(EPS, b) - m * (k + 1)) <= 0.2
    b = [bit_count_countable(m, 2, m + 1, kappa_log, e) for e in EPS]
    assert abs(scaling_exponent(EPS, b, polylog=True) - m) <= 0.15
    # without the log-log regressor the slope overshoots m at desk-scale eps
    assert scaling_exponent(EPS, b) > m + 0.15


def test_scaling_exponent_recovers_power_law():
    b = 7 * (1 / EPS) ** 2.5
    assert scaling_exponent(EPS, b) == pytest.approx(2.5)
    assert scaling_exponent(EPS, b * np.log(1 / EPS) ** 2, polylog=True) == pytest.approx(2.5)


def test_entropy_calculators():
    assert metric_entropy_bound(1, 1.0) == pytest.approx(2 * math.log2(24))
    assert histogram_entropy_count(2, 3) == pytest.approx(9 * math.log2(36))


def test_pipeline_constant_function():
    res = build_pipeline(constant_piece(), uniform_parameter_measure(1, 200), 4, atoms=500)
    cert = res.certificate
    assert cert.measured_w1 <= 1 / 8 + 1e-9
    assert cert.ok


def test_pipeline_quarter_circle():
    res = build_pipeline(quarter_circle_piece(), uniform_parameter_measure(1, 1000), 4, atoms=1000)
    cert = res.certificate
    assert cert.w1_ok and cert.metrics_ok
    assert cert.lip_psi <= cert.lip_psi_bound
    assert '"schema_version": 1' in cert.to_json()


def test_pipeline_precondition():
    piece = segment_piece((5.0, 0.0), 11)
    with pytest.raises(PreconditionError):
        build_pipeline(piece, uniform_parameter_measure(1, 10), 4)


@given(st.integers(0, 10**6))
@settings(max_examples=15, deadline=None)
def test_pushforward_is_contraction_up_to_lipschitz(seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, 17)[:, None]
    s = LipschitzSample(t, np.abs(t[:, 0] - 0.4), 1.0, 0.6)
    net = build_quantized_approximant(s, 4).net
    lip = estimate_lipschitz(net, mode="exact").value
    a = DiscreteMeasure(rng.random((20, 1)), rng.dirichlet(np.ones(20)))
    b = DiscreteMeasure(rng.random((15, 1)), rng.dirichlet(np.ones(15)))
    fa, fb = DiscreteMeasure(net(a.points), a.masses), DiscreteMeasure(net(b.points), b.masses)
    assert w1(fa, fb) <= lip * w1(a, b) + 1e-12


def test_piece_validation():
    with pytest.raises(ValueError):
        RectifiablePiece(LipschitzSample(np.array([[2.0]]), np.array([0.0]), 0.0, 0.0), [0.0], 1.0)
