import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rectiflow.measures import DiscreteMeasure, UniformMixture, cell_indices, quantize_simplex
from rectiflow.relu_net import metrics, pieces_1d
from rectiflow.transport import (
    UndefinedRegionError,
    build_sigma,
    build_transport_network,
    build_weight_tree,
    cdf_inverse,
    cdf_inverse_exact,
    cdf_inverse_network,
    cell_mass_check,
    in_weight_grid,
    refined_map,
    refined_map_exact,
    sawtooth,
    sawtooth_exact,
    sawtooth_network,
    shift_network,
    tent,
    transport_map_exact,
)


def random_mixture(rng, d, K, N=None):
    n = K**d
    N = n + int(rng.integers(0, 3 * n)) if N is None else N
    w = quantize_simplex(list(rng.dirichlet(np.ones(n))), N)
    return UniformMixture(d, K, dict(zip(cell_indices(d, K), w)), N)


def test_sawtooth_examples():
    assert sawtooth(0.25, 1) == 0.5
    assert sawtooth(0.25, 2) == 1.0
    assert sawtooth(0.375, 2) == 0.5
    assert sawtooth(1.5, 3) == 0.0
    assert sawtooth_exact(Fraction(3, 8), 2) == Fraction(1, 2)


@given(st.integers(1, 6), st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_sawtooth_is_iterated_tent_and_network(s, seed):
    x = np.random.default_rng(seed).uniform(-0.5, 1.5, 500)
    y = x
    for _ in range(s):
        y = tent(y)
    np.testing.assert_allclose(sawtooth(x, s), y, atol=1e-12)
    np.testing.assert_allclose(sawtooth_network(s)(x[:, None])[:, 0], y, atol=1e-12)


@pytest.mark.parametrize("s", range(1, 7))
def test_sawtooth_network_metrics(s):
    met = metrics(sawtooth_network(s))
    assert met.depth == s + 1
    assert met.connectivity == 11 * s - 3
    assert met.width == 3
    t, y = pieces_1d(sawtooth_network(s), 0.0, 1.0)
    assert len(t) == 2**s + 1


def test_sawtooth_as_sum_of_shifted_tents():
    # g_s = sum_k g(2^(s-1) x - k + 1) on [0,1]
    x = np.linspace(0, 1, 1001)
    for s in (1, 2, 3, 4):
        m = 2 ** (s - 1)
        total = sum(tent(m * x - k + 1) for k in range(1, m + 1))
        np.testing.assert_allclose(sawtooth(x, s), total, atol=1e-12)


def test_shift_network():
    x = np.linspace(-1, 2, 31)[:, None]
    np.testing.assert_allclose(shift_network(2, 3)(x)[:, 0], 3 * x[:, 0] - 1, atol=1e-12)


def test_cdf_inverse_example_and_forms():
    w = [Fraction(1, 4), Fraction(3, 4)]
    assert cdf_inverse_exact(Fraction(1, 4), w) == Fraction(1, 2)
    assert cdf_inverse_exact(Fraction(1, 8), w) == Fraction(1, 4)
    assert cdf_inverse_exact(Fraction(1), w) == 1
    x = np.linspace(-0.5, 1.5, 401)
    ref = [float(cdf_inverse_exact(Fraction(v), w)) for v in x]
    np.testing.assert_allclose(cdf_inverse(x, w), ref, atol=1e-14)
    compact = cdf_inverse_network(w)
    paired = cdf_inverse_network(w, paired=True)
    np.testing.assert_allclose(compact(x[:, None])[:, 0], ref, atol=1e-12)
    np.testing.assert_allclose(paired(x[:, None])[:, 0], ref, atol=1e-12)
    assert metrics(paired).width == 2 * len(w)
    with pytest.raises(UndefinedRegionError):
        cdf_inverse_exact(Fraction(1, 2), [Fraction(0), Fraction(1)])


@given(st.integers(1, 6), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_cdf_inverse_maps_breakpoints_to_grid(K, seed):
    rng = np.random.default_rng(seed)
    w = quantize_simplex(list(rng.dirichlet(np.ones(K))), K + int(rng.integers(0, 20)))
    acc = Fraction(0)
    for k, wk in enumerate(w, 1):
        acc += wk
        assert cdf_inverse_exact(acc, w) == Fraction(k, K)
    net = cdf_inverse_network(w, paired=True)
    t = [Fraction(int(v), 97) for v in rng.integers(0, 98, 20)]
    got = net(np.array([[float(v)] for v in t]))[:, 0]
    np.testing.assert_allclose(got, [float(cdf_inverse_exact(v, w)) for v in t], atol=1e-12)


def test_weight_tree_example():
    mix = UniformMixture(2, 2, {(1, 1): Fraction(1, 8), (1, 2): Fraction(1, 8),
                                (2, 1): Fraction(1, 4), (2, 2): Fraction(1, 2)}, 8)
    tree = build_weight_tree(mix)
    assert tree.conditional[()] == [Fraction(1, 4), Fraction(3, 4)]
    assert tree.conditional[(1,)] == [Fraction(1, 2), Fraction(1, 2)]
    assert tree.conditional[(2,)] == [Fraction(1, 3), Fraction(2, 3)]


@given(st.integers(1, 2), st.integers(1, 4), st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_transport_map_sends_slab_boxes_onto_cells(d, K, seed):
    rng = np.random.default_rng(seed)
    mix = random_mixture(rng, d, K)
    tree = build_weight_tree(mix)
    # corners of every slab box land on corners of the matching cell
    for _ in range(20):
        x = [Fraction(int(v), 101) for v in rng.integers(0, 102, d)]
        y = transport_map_exact(tree, x)
        assert all(0 <= v <= 1 for v in y)
    for k in cell_indices(d, K):
        prefix, lo = (), []
        for kj in k:
            b = tree.breaks(prefix)
            lo.append(b[kj - 1])
            prefix += (kj,)
        y = transport_map_exact(tree, lo)
        assert y == [Fraction(kj - 1, K) for kj in k]


@given(st.integers(1, 2), st.integers(2, 4), st.integers(1, 3), st.integers(0, 10**6))
@settings(max_examples=15, deadline=None)
def test_network_equals_refined_map(d, K, s, seed):
    rng = np.random.default_rng(seed)
    mix = random_mixture(rng, d, K)
    tnet = build_transport_network(mix, s)
    t = np.concatenate([rng.random(300), [0.0, 1.0]])
    np.testing.assert_allclose(tnet(t), refined_map(tnet.tree, s, t), atol=1e-12)
    for v in [Fraction(int(a), 211) for a in rng.integers(0, 212, 8)]:
        exact = refined_map_exact(tnet.tree, s, v)
        np.testing.assert_allclose(tnet(float(v))[0], [float(e) for e in exact], atol=1e-12)
    for name, (value, bound, ok) in tnet.check_bounds().items():
        assert ok, f"{name}: {value} vs {bound}"


def test_network_depth_formula():
    rng = np.random.default_rng(1)
    for d, s in itertools.product((1, 2, 3), (1, 2)):
        tnet = build_transport_network(random_mixture(rng, d, 2), s)
        assert tnet.net.depth == 3 + (d - 1) * (5 + s)


def test_zero_weight_refused():
    mix = UniformMixture(1, 2, {(1,): Fraction(0), (2,): Fraction(1)}, 2)
    with pytest.raises(UndefinedRegionError):
        build_transport_network(mix, 1)


@given(st.integers(1, 2), st.integers(2, 4), st.integers(1, 3), st.integers(0, 10**6))
@settings(max_examples=12, deadline=None)
def test_exact_cell_masses(d, K, s, seed):
    mix = random_mixture(np.random.default_rng(seed), d, K)
    rep = cell_mass_check(build_transport_network(mix, s), method="exact")
    assert rep.passed
    assert rep.max_abs_err == 0
    assert rep.info["outside"] == 0


def test_sampled_cell_masses_three_dims(tmp_path):
    mix = random_mixture(np.random.default_rng(5), 3, 2, N=16)
    rep = cell_mass_check(build_transport_network(mix, 1), method="sampled", samples=200_000, seed=3)
    assert rep.passed
    rep.write_csv(tmp_path / "cells.csv")
    header = (tmp_path / "cells.csv").read_text().splitlines()[0]
    assert header == "cell_index,expected,measured,abs_err"


def test_weight_grid_membership():
    assert in_weight_grid(Fraction(3, 8), 4, 2)
    assert not in_weight_grid(Fraction(5, 8), 4, 2)
    assert not in_weight_grid(Fraction(1, 9), 4, 2)


@given(st.integers(1, 2), st.integers(2, 5), st.integers(0, 10**6))
@settings(max_examples=10, deadline=None)
def test_sigma_metrics(d, K, seed):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(rng.random((15, d)), rng.dirichlet(np.ones(15)))
    sig = build_sigma(mu, K)
    met = metrics(sig.net)
    assert met.depth == 3 + 6 * (d - 1)
    assert met.width <= 4 * K**d
    assert met.connectivity <= sig.connectivity_claim
    assert not sig.weight_violations()
    assert sig.N == 4 * K ** (d + 1)
