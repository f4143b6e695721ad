import itertools
from fractions import Fraction

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bunkbed_brute, subgraph_law_brute
from problab.conjectures_exact import (ResourceLimitError, SimpleGraph, all_vertical_subsets, build_bunkbed,
                                       bunkbed_check, bunkbed_check_conditional, bunkbed_counts,
                                       bunkbed_monte_carlo, bunkbed_probabilities, complete_graph,
                                       conditional_counts, connected_graphs, enumerate_forests,
                                       enumerate_subgraphs, eval_poly, path_graph, ucs_check, usf_check,
                                       ust_check, write_witness)
from problab.randstat import RngStream

HALF = Fraction(1, 2)
K2, K3, K4, P3 = complete_graph(2), complete_graph(3), complete_graph(4), path_graph(3)


def test_simple_graph_validation():
    with pytest.raises(ValueError):
        SimpleGraph(3, ((0, 0),))
    with pytest.raises(ValueError):
        SimpleGraph(3, ((0, 1), (1, 0)))
    with pytest.raises(ValueError):
        SimpleGraph(2, ((0, 2),))
    g = SimpleGraph.from_networkx(nx.petersen_graph())
    assert g.n == 10 and g.m == 15 and g.is_connected()
    assert nx.is_isomorphic(nx.from_graph6_bytes(g.graph6().encode()), g.to_networkx())


@pytest.mark.parametrize("g,nv,ne", [(K2, 4, 4), (K3, 6, 9), (P3, 6, 7)])
def test_bunkbed_shape(g, nv, ne):
    bb = build_bunkbed(g)
    assert bb.n == nv and bb.m == ne
    assert sum(bb.vertical) == g.n
    assert nx.is_isomorphic(nx.Graph(list(bb.edges)), nx.cartesian_product(g.to_networkx(), nx.path_graph(2)))


def test_k2_half_exact():
    assert bunkbed_probabilities(K2, 0, 1, HALF) == (Fraction(9, 16), Fraction(7, 16))
    assert bunkbed_brute(2, K2.edges, 0, 1, HALF) == (Fraction(9, 16), Fraction(7, 16))


def test_extreme_p():
    for g in (K3, P3):
        assert bunkbed_probabilities(g, 0, 2, 0) == (0, 0)
        assert bunkbed_probabilities(g, 0, 2, 1) == (1, 1)


@pytest.mark.parametrize("g", [K2, P3, K3, SimpleGraph(4, ((0, 1), (1, 2), (2, 3), (3, 0)))])
def test_bunkbed_against_brute(g):
    for p in (Fraction(1, 3), Fraction(7, 10)):
        for u, v in itertools.permutations(range(g.n), 2):
            assert bunkbed_probabilities(g, u, v, p) == bunkbed_brute(g.n, g.edges, u, v, p)


def test_conditional_against_brute():
    for g in (K2, P3):
        for T in all_vertical_subsets(g):
            c = conditional_counts(g, T)
            for u, v in itertools.permutations(range(g.n), 2):
                assert c.probabilities(u, v, HALF) == bunkbed_brute(g.n, g.edges, u, v, HALF, set(T))


def test_conditional_trivial_cases():
    for g in (K3, P3):
        full = conditional_counts(g, range(g.n))
        empty = conditional_counts(g, ())
        for u, v in itertools.permutations(range(g.n), 2):
            p11, p12 = full.probabilities(u, v, Fraction(2, 5))
            assert p11 == p12
            p11, p12 = empty.probabilities(u, v, Fraction(2, 5))
            assert p12 == 0 <= p11
    with pytest.raises(ValueError):
        conditional_counts(K2, (5,))


def test_disconnected_pair_gap_zero():
    g = SimpleGraph(4, ((0, 1), (2, 3)))
    assert bunkbed_probabilities(g, 0, 2, Fraction(3, 10)) == (0, 0)


def test_weights_sum_to_one():
    for g in (K3, P3):
        c = bunkbed_counts(g)
        total = [0] * (c.m + 1)
        # every subset appears exactly once in the (u, u) slot for P11
        for k, n in enumerate(c.c11[0, 0]):
            total[k] = int(n)
        assert sum(total) == 2**c.m
        for p in (Fraction(1, 7), HALF):
            assert eval_poly(total, c.m, p) == 1


def test_monotone_in_p_and_sheet_symmetry():
    grid = [Fraction(k, 10) for k in range(11)]
    c = bunkbed_counts(K3)
    for u, v in itertools.permutations(range(3), 2):
        vals = [c.probabilities(u, v, p) for p in grid]
        assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(vals, vals[1:]))
    # sheet swap: P(u2 ~ v2) = P11 and P(u2 ~ v1) = P12
    p = Fraction(3, 10)
    for u, v in itertools.permutations(range(3), 2):
        p11, p12 = c.probabilities(u, v, p)
        to_v1, to_v2 = bunkbed_brute(3, K3.edges, u + 3, v, p)
        assert (to_v2, to_v1) == (p11, p12)


def test_small_sweep_passes():
    for g in connected_graphs(3, 2):
        r = bunkbed_check(g)
        assert r.passed and r.checked == 9 * g.n * (g.n - 1)


def test_ceiling():
    with pytest.raises(ResourceLimitError):
        bunkbed_counts(SimpleGraph.from_networkx(nx.petersen_graph()))


def test_monte_carlo():
    est = bunkbed_monte_carlo(K2, 0, 1, 0.0, 1000, RngStream(1))
    assert est.p11.point == 0 and est.p12.point == 0
    p11, p12 = bunkbed_monte_carlo(K2, 0, 1, 0.5, 10**6, RngStream(2))
    assert abs(p11.point - 9 / 16) < 3 * p11.se
    assert abs(p12.point - 7 / 16) < 3 * p12.se


def test_monte_carlo_matches_exact_within_4se():
    for g, (u, v) in [(P3, (0, 2)), (K3, (0, 1))]:
        exact = bunkbed_probabilities(g, u, v, Fraction(2, 5))
        est = bunkbed_monte_carlo(g, u, v, 0.4, 200000, RngStream(3, g.m))
        assert abs(est.p11.point - float(exact[0])) < 4 * est.p11.se
        assert abs(est.p12.point - float(exact[1])) < 4 * est.p12.se
        assert abs(est.gap - float(exact[0] - exact[1])) < 4 * est.gap_se


def test_petersen_report_only():
    g = SimpleGraph.from_networkx(nx.petersen_graph())
    est = bunkbed_monte_carlo(g, 0, 5, 0.5, 10**6, RngStream(4))
    assert est.gap_se > 0 and -1 <= est.gap <= 1


def test_monte_carlo_workers_identical():
    a = bunkbed_monte_carlo(P3, 0, 2, 0.5, 5000, RngStream(5))
    b = bunkbed_monte_carlo(P3, 0, 2, 0.5, 5000, RngStream(5), workers=3)
    assert a == b


# --- forests ---------------------------------------------------------------------

def test_forest_counts():
    assert enumerate_forests(K2).total == 2
    s = enumerate_forests(K3)
    assert s.total == 7
    assert s.prob(0) == Fraction(3, 7) and s.joint(0, 1) == Fraction(1, 7)
    assert enumerate_forests(K4).total == subgraph_law_brute(4, K4.edges, "usf")[0] == 38


@pytest.mark.parametrize("kind", ["usf", "ucs", "ust"])
@pytest.mark.parametrize("g", [K3, K4, SimpleGraph(4, ((0, 1), (1, 2), (2, 3), (3, 0), (0, 2)))])
def test_subgraph_laws_against_brute(kind, g):
    s = enumerate_subgraphs(g, kind)
    total, single, pair = subgraph_law_brute(g.n, g.edges, kind)
    assert s.total == total
    assert [s.prob(e) for e in range(g.m)] == single
    assert {k: v / s.total for k, v in s.pair.items()} == pair


def test_k3_reports():
    r = usf_check(K3)
    assert r.passed and r.max_excess == Fraction(1, 7) - Fraction(9, 49)
    t = ust_check(K3)
    assert t.witness[2:] == (Fraction(1, 3), Fraction(2, 3), Fraction(2, 3))
    c = ucs_check(K3)
    assert c.witness[2:] == (Fraction(1, 2), Fraction(3, 4), Fraction(3, 4))
    assert usf_check(K2).passed and usf_check(K2).pairs == 0


def test_ucs_rejects_disconnected():
    with pytest.raises(ValueError):
        ucs_check(SimpleGraph(3, ((0, 1),)))


def test_q_weighting():
    # weight w per edge: K3 forests have sizes 0, 1 (x3), 2 (x3)
    s = enumerate_forests(K3, edge_weight=Fraction(1, 2))
    assert s.total == 1 + 3 * Fraction(1, 2) + 3 * Fraction(1, 4)
    assert s.by_size == (1, 3, 3, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 6).flatmap(lambda n: st.tuples(st.just(n), st.sets(
    st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] < e[1]), min_size=1, max_size=9))))
def test_ust_theorem_random_graphs(data):
    n, edges = data
    g = SimpleGraph(n, tuple(sorted(edges)))
    if g.is_connected():
        assert ust_check(g).passed
    assert usf_check(g).passed


def test_witness_file(tmp_path):
    r = bunkbed_check_conditional(P3, (0,), [HALF])
    path = write_witness(tmp_path / "w.txt", r)
    text = path.read_text()
    assert "kind: bunkbed" in text and "vertical_open: 0" in text and "graph6:" in text
    a = ust_check(K3)
    assert "excess: -1/9" in write_witness(tmp_path / "a.txt", a).read_text()
