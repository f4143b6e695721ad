import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import flood_fill, hex_nbrs
from problab.lattice import (NE, NW, BondConfig, Edge, Heading, Site, cluster_of, diagonal_orientation,
                             edge_between, mirror_to_diagonal, neighbours, sample_bond_config, write_edge_list)
from problab.mirrors_lattice import ehrenfest_field
from problab.randstat import RngStream


def test_heading_reverse_involution():
    for h in Heading:
        assert h.reverse.reverse == h and h.reverse != h


def test_hex_neighbours_match_brick_wall():
    for x, y in itertools.product(range(-3, 4), repeat=2):
        assert set(neighbours("hex", (x, y))) == set(hex_nbrs(x, y))
        for w in neighbours("hex", (x, y)):
            assert (x, y) in neighbours("hex", w)


@pytest.mark.parametrize("kind", ["square", "hex"])
def test_extreme_densities(kind):
    s = RngStream(1, 0)
    closed = sample_bond_config(kind, 5, 0.0, s)
    opened = sample_bond_config(kind, 5, 1.0, s)
    assert not any(closed.is_open(e) for e in closed.edges())
    assert all(opened.is_open(e) for e in opened.edges())
    assert cluster_of(closed, (2, -1)) == {Site(2, -1)}
    assert len(cluster_of(opened, (0, 0))) == 11 * 11


def test_open_fraction_concentration():
    fr = [sample_bond_config("square", 100, 0.6, RngStream(s, 0)).open_fraction() for s in range(10)]
    assert abs(np.mean(fr) - 0.6) < 0.01
    # each configuration within 5 binomial standard errors
    n_edges = 2 * 200 * 201
    se = np.sqrt(0.24 / n_edges)
    assert all(abs(f - 0.6) < 5 * se for f in fr)


@pytest.mark.parametrize("kind", ["square", "hex"])
def test_lazy_matches_eager(kind):
    c = sample_bond_config(kind, 12, 0.45, RngStream(3, 8))
    h, v = c.materialize()
    for e in c.edges():
        arr = h if e.axis == 0 else v
        assert bool(arr[e.x + 12, e.y + 12]) == c.is_open(e)


def test_cluster_hand_built_3x3():
    # L=1 box: a path around the left and top, isolating (1, -1) and (0, 0)
    edges = [Edge(-1, -1, 1), Edge(-1, 0, 1), Edge(-1, 1, 0), Edge(0, 1, 0), Edge(0, -1, 0)]
    c = BondConfig.from_open_edges("square", 1, edges)
    pairs = {e.endpoints for e in edges}
    for v in itertools.product(range(-1, 2), repeat=2):
        assert cluster_of(c, v) == flood_fill(pairs, v)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.2, 0.8))
def test_cluster_symmetric_and_matches_oracle(seed, p):
    c = sample_bond_config("square", 4, p, RngStream(seed, 1))
    pairs = {e.endpoints for e in c.edges() if c.is_open(e)}
    cl = cluster_of(c, (0, 0))
    assert cl == flood_fill(pairs, (0, 0))
    for w in cl:
        assert Site(0, 0) in cluster_of(c, w)
        assert cluster_of(c, w) == cl


def test_edge_between_and_errors():
    assert edge_between((0, 0), (1, 0)) == Edge(0, 0, 0)
    assert edge_between((0, 1), (0, 0)) == Edge(0, 0, 1)
    with pytest.raises(ValueError):
        sample_bond_config("tri", 3, 0.5, RngStream(0))
    with pytest.raises(ValueError):
        cluster_of(sample_bond_config("square", 2, 0.5, RngStream(0)), (3, 0))


def test_edge_list_dump(tmp_path):
    c = sample_bond_config("hex", 2, 0.5, RngStream(4, 4))
    path = tmp_path / "edges.txt"
    write_edge_list(c, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# kind=hex")
    assert len(lines) - 1 == sum(1 for _ in c.edges())


def test_origin_ne_diagonal():
    d = mirror_to_diagonal((0, 0), NE)
    assert d.endpoints2 == ((-1, -1), (1, 1))
    assert mirror_to_diagonal((0, 0), NW).endpoints2 == ((-1, 1), (1, -1))


def test_diagonal_map_injective_on_patch():
    seen = {}
    for x, y in itertools.product(range(-2, 3), repeat=2):
        for o in (NE, NW):
            ends = frozenset(mirror_to_diagonal((x, y), o).endpoints2)
            assert ends not in seen
            seen[ends] = (x, y, o)
    # every diagonal joins face centres of equal parity, and the class is that parity
    for x, y in itertools.product(range(-2, 3), repeat=2):
        for c in (0, 1):
            d = mirror_to_diagonal((x, y), diagonal_orientation((x, y), c))
            (a, b), _ = d.endpoints2
            assert d.lattice_class == c == ((a - 1) // 2 + (b - 1) // 2) % 2


def test_diagonal_density_is_half_p():
    p = 0.6
    f = ehrenfest_field(p, RngStream(5, 0))
    grid = f.materialize(158)   # 317^2 ~ 1.0e5 sites
    xs, ys = np.meshgrid(np.arange(-158, 159), np.arange(-158, 159), indexing="ij")
    even = (xs + ys) % 2 == 0
    for c in (0, 1):
        # class-c diagonal through site s is NE where parity == c, else NW
        want_ne = even if c == 0 else ~even
        present = np.where(want_ne, grid == 1, grid == 2)
        frac = present.mean()
        se = np.sqrt(0.3 * 0.7 / present.size)
        assert abs(frac - p / 2) < 5 * se
