import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_walks, dense_normalized, pearson_by_hand
from virgo.assumptions import (
    ConstantInputError,
    PathError,
    PathLab,
    PathSample,
    check_assumption1,
    check_assumption2,
    check_assumption3,
    check_assumption4,
    check_assumption5,
    decompose_path,
    enumerate_paths,
    pearson,
    walks_between,
    walks_into,
)
from virgo.gcn import Parameters, forward
from virgo.graph import build_graph, generate_synthetic, normalize_adjacency
from virgo.initializers import LayerDims, make_plan


@st.composite
def tiny_graphs(draw):
    n = draw(st.integers(1, 6))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return n, edges


def network(ws, seed):
    return Parameters.from_plan(make_plan("xavier", LayerDims.chain(ws)), seed)


class TestPearson:
    def test_identical(self):
        assert pearson([1, 2, 3], [1, 2, 3]) == 1.0

    def test_reversed(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == -1.0

    def test_by_hand(self):
        # deviations (-2,-1,0,1,2) and (-1.4,-2.4,1.6,0.6,1.6): sum xy 9, sxx 10, syy 13.2
        x, y = [1, 2, 3, 4, 5], [2, 1, 5, 4, 5]
        assert pearson(x, y) == pytest.approx(9 / np.sqrt(10 * 13.2), abs=1e-12)

    def test_constant(self):
        with pytest.raises(ConstantInputError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2, 3])

    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 10), st.floats(-5, 5), st.integers(3, 30))
    def test_symmetry_and_affine_invariance(self, seed, scale, shift, n):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=n), rng.normal(size=n)
        r = pearson(x, y)
        assert -1.0 <= r <= 1.0
        assert r == pytest.approx(pearson(y, x), abs=1e-12)
        assert r == pytest.approx(pearson(scale * x + shift, y), abs=1e-9)
        assert r == pytest.approx(pearson_by_hand(x.tolist(), y.tolist()), abs=1e-9)


class TestWalks:
    def test_p2_length_one(self):
        a = normalize_adjacency(build_graph([(0, 1)], 2))
        paths = enumerate_paths(a, 1, 10)
        assert {p.nodes for p in paths} == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_ring3_length_two(self):
        a = normalize_adjacency(generate_synthetic("ring", 3))
        into = walks_into(a, 0, 2)
        assert len(into) == 9
        assert all(p.length == 2 and p.destination == 0 for p in into)
        between = walks_between(a, 0, 0, 2)
        assert {p.nodes for p in between} == {(0, 0, 0), (0, 1, 0), (0, 2, 0)}

    def test_zero_paths(self, p3_adj):
        assert enumerate_paths(p3_adj, 2, 0) == []

    def test_bad_length(self, p3_adj):
        with pytest.raises(PathError):
            enumerate_paths(p3_adj, 4, 5)

    def test_short_sample(self):
        with pytest.raises(PathError):
            PathSample((3,))

    def test_shortfall_warns(self, p3_adj, caplog):
        with caplog.at_level(logging.WARNING):
            paths = enumerate_paths(p3_adj, 1, 50, max_draws=200)
        assert len(paths) == 7
        assert "only 7" in caplog.text

    @given(tiny_graphs(), st.integers(1, 3))
    def test_walks_match_dense_pattern(self, case, length):
        n, edges = case
        at = dense_normalized(edges, n)
        a = normalize_adjacency(build_graph(edges, n))
        for dest in range(n):
            got = sorted(p.nodes for p in walks_into(a, dest, length))
            assert got == sorted(tuple(int(v) for v in w) for w in all_walks(at, dest, length))
            for src in range(n):
                between = walks_between(a, dest, src, length)
                assert all(p.source == src for p in between)
                assert len(between) == sum(1 for p in got if p[-1] == src)


class TestDecomposePath:
    def test_active_path_equals_linear_term(self, p3_adj):
        # positive weights and features keep every gate open
        params = Parameters([np.full((2, 4), 0.5), np.full((4, 4), 0.25)])
        x = np.array([[1.0, 2.0], [0.5, 0.5], [3.0, 1.0]])
        trace = forward(params, p3_adj, x)
        d = decompose_path(PathSample((0, 1, 2)), trace, params, p3_adj)
        np.testing.assert_array_equal(d.delta, 1.0)
        np.testing.assert_allclose(d.message, d.degree_product * d.fnn, rtol=1e-15)
        np.testing.assert_allclose(d.message, d.exact_message, rtol=1e-14)

    def test_p3_direct(self, p3_adj):
        params = network([2, 4, 4], 3)
        x = np.array([[1.0, -1.0], [0.3, 0.7], [2.0, 0.5]])
        trace = forward(params, p3_adj, x)
        d = decompose_path(PathSample((0, 1, 2)), trace, params, p3_adj)
        assert d.degree_product == pytest.approx(p3_adj.coefficient(0, 1) * p3_adj.coefficient(1, 2), rel=1e-15)
        np.testing.assert_allclose(d.fnn, x[2] @ params.weights[0] @ params.weights[1], rtol=1e-14)
        inner = (trace.pre[0][1] > 0) * (p3_adj.coefficient(1, 2) * (x[2] @ params.weights[0]))
        np.testing.assert_allclose(d.exact_message, p3_adj.coefficient(0, 1) * (inner @ params.weights[1]), rtol=1e-14)
        np.testing.assert_array_equal(d.delta, (trace.pre[0][1] > 0) * 1.0)

    def test_mixed_widths_have_no_gate_product(self, p3_adj):
        params = network([2, 4, 3], 3)
        trace = forward(params, p3_adj, np.ones((3, 2)))
        d = decompose_path(PathSample((0, 1, 2)), trace, params, p3_adj)
        assert d.delta is None and d.message is None
        assert d.exact_message.shape == (3,)

    def test_closed_gate_zeroes_message(self, p3_adj):
        params = Parameters([-np.ones((2, 3)), np.ones((3, 2)), np.ones((2, 2))])
        x = np.ones((3, 2))
        trace = forward(params, p3_adj, x)
        d = decompose_path(PathSample((1, 1)), trace, params, p3_adj)
        np.testing.assert_array_equal(d.delta, 0.0)
        np.testing.assert_array_equal(d.message, 0.0)
        np.testing.assert_array_equal(d.exact_message, 0.0)

    def test_non_adjacent(self, p3_adj):
        params = network([2, 3, 2], 0)
        trace = forward(params, p3_adj, np.ones((3, 2)))
        with pytest.raises(PathError):
            decompose_path(PathSample((0, 2)), trace, params, p3_adj)

    def test_too_long(self, p3_adj):
        params = network([2, 2], 0)
        trace = forward(params, p3_adj, np.ones((3, 2)))
        with pytest.raises(PathError):
            decompose_path(PathSample((0, 1, 2)), trace, params, p3_adj)

    @settings(max_examples=40, deadline=None)
    @given(tiny_graphs(), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_sum_over_paths(self, case, L, seed):
        n, edges = case
        a = normalize_adjacency(build_graph(edges, n))
        params = network([3] + [4] * (L - 1) + [2], seed)
        x = np.random.default_rng(seed).normal(size=(n, 3))
        trace = forward(params, a, x)
        for l in range(1, L + 1):
            for dest in range(n):
                total = sum(decompose_path(p, trace, params, a).exact_message for p in walks_into(a, dest, l))
                np.testing.assert_allclose(total, trace.post[l][dest], rtol=1e-9, atol=1e-12)


def lab_on_er(x_kind, seed=0, width=64):
    a = normalize_adjacency(generate_synthetic("erdos_renyi", 100, 0.1, seed=seed))
    rng = np.random.default_rng(seed)
    x = rng.random((100, 32)) if x_kind == "dense" else np.eye(100, 32)[rng.integers(0, 32, 100)]
    params = network([32, width, width, width, 4], seed)
    return PathLab(a, x, params, n_paths=30, n_neurons=width, seed=seed)


class TestChecks:
    def test_softmax_zero_logits(self):
        s = check_assumption5(np.zeros((6, 4)))
        assert s.mean == 0.25 and s.std == 0.0 and s.count == 24

    def test_softmax_mean_is_one_over_c(self):
        logits = np.random.default_rng(0).normal(size=(50, 7)) * 3
        assert check_assumption5(logits).mean == pytest.approx(1 / 7, abs=1e-15)

    def test_success_rate(self):
        rep = check_assumption4(lab_on_er("dense"))
        for l in (1, 2, 3):
            assert rep.expected[l] == 0.5**l
            assert abs(rep[l].mean - 0.5**l) < 0.15

    def test_dense_features_correlate_more_than_one_hot(self):
        dense = check_assumption1(lab_on_er("dense"))
        sparse = check_assumption1(lab_on_er("one_hot"))
        for l in (1, 2, 3):
            assert dense[l].mean > sparse[l].mean
            assert dense[l].mean > 0.3

    def test_disjoint_halves_near_zero(self):
        rep = check_assumption2(lab_on_er("dense"))
        for l in (1, 2, 3):
            assert abs(rep[l].mean) < 0.15
            assert rep.expected[l] == 0.0

    def test_gate_correlations_defined(self):
        lin, sq = check_assumption3(lab_on_er("dense"))
        for l in (1, 2, 3):
            assert -1 <= lin[l].mean <= 1 and -1 <= sq[l].mean <= 1
            assert lin[l].count + lin[l].excluded == 30

    def test_constant_gates_excluded(self, caplog):
        # every gate of a fully positive network is open, so delta is constant
        a = normalize_adjacency(generate_synthetic("ring", 8))
        params = Parameters([np.full((3, 4), 0.5), np.full((4, 4), 0.5), np.full((4, 2), 0.5)])
        lab = PathLab(a, np.ones((8, 3)), params, lengths=(1, 2), n_paths=5, n_neurons=2)
        with caplog.at_level(logging.WARNING):
            lin, _ = check_assumption3(lab)
        assert lin[1].count == 0 and lin[1].excluded == 5
        assert np.isnan(lin[1].mean)
        assert "constant gates" in caplog.text

    def test_single_node(self, isolated_adj, caplog):
        params = network([3, 4, 2], 0)
        with caplog.at_level(logging.WARNING):
            lab = PathLab(isolated_adj, np.ones((1, 3)), params, lengths=(1,), n_paths=5, n_neurons=2)
            rep = check_assumption1(lab)
        assert rep[1].count == 0
        assert "pairwise statistics will be empty" in caplog.text

    def test_neurons_exceed_width(self, p3_adj):
        with pytest.raises(ValueError):
            PathLab(p3_adj, np.ones((3, 2)), network([2, 4, 2], 0), lengths=(1,), n_neurons=10)
