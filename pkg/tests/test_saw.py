import csv
import itertools
import math

import numpy as np
import pytest
from scipy import stats

from oracles import flood_fill, hex_nbrs, open_nbrs_fn, saw_count_graph, saw_count_square, square_nbrs
from problab.lattice import BondConfig, Edge, sample_bond_config
from problab.randstat import RngStream
from problab.saw import (MAX_STEPS, ResourceLimitError, SawCount, Walk, connective_estimates, count_saws,
                         count_saws_on_cluster, exceeds_hex_kappa, export_rescaled_walks, mean_square_endpoint,
                         root_exceeds, sample_uniform_saw, sample_walks, saw_counts)

# frozen from the brute-force oracles (square up to 12 is re-derived in the acceptance suite)
SQUARE_20 = [1, 4, 12, 36, 100, 284, 780, 2172, 5916, 16268, 44100, 120292, 324932, 881500, 2374444,
             6416596, 17245332, 46466676, 124658732, 335116620, 897697164]
HEX_12 = [1, 3, 6, 12, 24, 48, 90, 174, 336, 648, 1218, 2328, 4416]


def test_one_step():
    assert count_saws("square", 1).sigma_n == 4
    assert count_saws("hex", 1).sigma_n == 3


def test_square_against_oracle_small():
    assert saw_counts("square", 9) == [saw_count_square(n) for n in range(10)]


def test_hex_against_oracle():
    assert saw_counts("hex", 12) == [saw_count_graph(hex_nbrs, (0, 0), n) for n in range(13)] == HEX_12


def test_square_frozen_to_20():
    assert saw_counts("square", 20) == SQUARE_20


@pytest.mark.parametrize("kind", ["square", "hex"])
def test_symmetry_reduction_and_workers(kind):
    full = saw_counts(kind, 11, reduced=False)
    assert saw_counts(kind, 11) == full
    assert saw_counts(kind, 11, workers=3) == full


def test_ceiling():
    with pytest.raises(ResourceLimitError):
        saw_counts("square", MAX_STEPS["square"] + 1)
    with pytest.raises(ValueError):
        saw_counts("square", -1)


def test_estimates_square():
    counts = [SawCount("square", (0, 0), n, s) for n, s in enumerate(SQUARE_20) if n >= 1]
    est = connective_estimates(counts)
    assert est.roots[0] == 4.0
    assert est.fekete_ok is None
    # upper envelope over even n strictly decreases (exact integer comparison)
    evens = [n for n in range(2, 21, 2)]
    for a, b in zip(evens, evens[1:]):
        assert root_exceeds(SQUARE_20[a], a, SQUARE_20[b], b)
    assert 2.55 < est.kappa_used < 2.75
    assert 1.2 < est.gamma < 1.45


def test_estimates_hex_uses_exact_kappa():
    counts = [SawCount("hex", (0, 0), n, s) for n, s in enumerate(saw_counts("hex", 20)) if n >= 1]
    est = connective_estimates(counts)
    assert est.fekete_ok
    assert est.kappa_used == pytest.approx(math.sqrt(1 + math.sqrt(2)))
    with pytest.raises(ValueError):
        connective_estimates(counts[1:])


def test_exceeds_hex_kappa_exact():
    # (1+sqrt2)^2 = 3 + 2 sqrt2 = 5.83: sigma=3 passes, sigma=2 fails
    assert exceeds_hex_kappa(3, 2) and not exceeds_hex_kappa(2, 2)
    # (1+sqrt2)^4 = 17 + 12 sqrt2 = 33.97; sigma^2 must reach it
    assert not exceeds_hex_kappa(5, 4) and exceeds_hex_kappa(6, 4)


def test_cluster_extremes():
    full = sample_bond_config("square", 8, 1.0, RngStream(0))
    empty = sample_bond_config("square", 8, 0.0, RngStream(0))
    for n in range(1, 8):
        assert count_saws_on_cluster(full, (0, 0), n).sigma_n == SQUARE_20[n]
        assert count_saws_on_cluster(empty, (0, 0), n).sigma_n == 0


def test_cluster_hand_built_5x5():
    # L=2 box with a ring, a spur and a cross through the centre
    edges = [Edge(-2, -2, 0), Edge(-1, -2, 0), Edge(0, -2, 0), Edge(1, -2, 0), Edge(2, -2, 1), Edge(2, -1, 1),
             Edge(-2, -2, 1), Edge(-2, -1, 1), Edge(-2, 0, 1), Edge(-2, 1, 0), Edge(0, -2, 1), Edge(0, -1, 1),
             Edge(-1, 0, 0), Edge(0, 0, 0), Edge(0, 0, 1)]
    c = BondConfig.from_open_edges("square", 2, edges)
    nb = open_nbrs_fn({e.endpoints for e in edges})
    for v in [(0, 0), (-2, -2), (1, 0)]:
        margin = 2 - max(abs(v[0]), abs(v[1]))
        for n in range(margin + 1):
            assert count_saws_on_cluster(c, v, n).sigma_n == saw_count_graph(nb, v, n)
    with pytest.raises(ValueError):
        count_saws_on_cluster(c, (0, 0), 3)


def test_cluster_random_against_oracle():
    c = sample_bond_config("square", 7, 0.7, RngStream(12, 3))
    open_pairs = {e.endpoints for e in c.edges() if c.is_open(e)}
    nb = open_nbrs_fn(open_pairs)
    assert flood_fill(open_pairs, (0, 0))
    for n in range(8):
        assert count_saws_on_cluster(c, (0, 0), n).sigma_n == saw_count_graph(nb, (0, 0), n)


def test_one_step_frequencies():
    walks = sample_walks("square", 1, 10**5, RngStream(1, 1))
    freq = {}
    for w in walks:
        freq[w.sites[1]] = freq.get(w.sites[1], 0) + 1
    assert len(freq) == 4
    assert all(abs(v / 10**5 - 0.25) < 0.01 for v in freq.values())


def test_exact_mode_uniform_chi_square():
    walks = sample_walks("square", 6, 78000, RngStream(2, 6), method="exact")
    assert all(w.is_valid() for w in walks[:500])
    tally = {}
    for w in walks:
        tally[w.sites] = tally.get(w.sites, 0) + 1
    assert len(tally) == SQUARE_20[6]
    obs = np.array(list(tally.values()))
    assert stats.chisquare(obs).pvalue > 0.001


def test_hex_exact_mode_valid():
    walks = sample_walks("hex", 9, 200, RngStream(2, 9), method="exact")
    assert all(w.is_valid() and w.n == 9 for w in walks)


def test_pivot_symmetry():
    walks = sample_walks("square", 100, 1500, RngStream(3, 100), method="pivot")
    assert all(walks[i].is_valid() for i in range(0, 1500, 97))
    ends = np.array([w.sites[-1] for w in walks], dtype=float)
    x, y = ends[:, 0], ends[:, 1]
    n = len(ends)
    # reflections and the diagonal swap leave the law invariant: compare first and second moments
    for stat in (x, y, x * y):
        assert abs(stat.mean()) < 3 * stat.std() / math.sqrt(n)
    diff = x**2 - y**2
    assert abs(diff.mean()) < 3 * diff.std() / math.sqrt(n)


def test_pivot_hex_valid():
    for i in range(5):
        w = sample_uniform_saw("hex", 60, RngStream(4, i), method="pivot")
        assert w.is_valid() and w.n == 60


def test_export(tmp_path):
    one = Walk("square", ((0, 0), (1, 0)))
    rows = export_rescaled_walks([one])
    (x0, y0), (x1, y1) = [r[3:] for r in rows]
    assert math.hypot(x1 - x0, y1 - y0) == pytest.approx(1.0)
    walks = sample_walks("hex", 7, 20, RngStream(5, 5)) + sample_walks("square", 5, 10, RngStream(5, 6))
    path = tmp_path / "walks.csv"
    rows = export_rescaled_walks(walks, path)
    assert len(rows) == sum(w.n + 1 for w in walks)
    with open(path) as fh:
        assert sum(1 for _ in csv.reader(fh)) == len(rows) + 1
    with pytest.raises(ValueError):
        export_rescaled_walks([])


def test_hex_embedding_unit_steps():
    w = sample_uniform_saw("hex", 30, RngStream(6, 6), method="pivot")
    xy = w.embedded()
    assert np.allclose(np.hypot(*np.diff(xy, axis=0).T), 1.0)
    assert np.allclose(xy[0], 0.0)


def test_mean_square_endpoint_recorded():
    walks = sample_walks("square", 400, 1000, RngStream(7, 400), method="pivot")
    msd = mean_square_endpoint(walks)
    assert math.isfinite(msd) and msd > 400


def test_sample_walks_worker_invariant():
    a = sample_walks("square", 30, 40, RngStream(8, 8))
    b = sample_walks("square", 30, 40, RngStream(8, 8), workers=4)
    assert a == b


def test_walk_validity_detects_bad_paths():
    assert not Walk("square", ((0, 0), (1, 0), (0, 0))).is_valid()
    assert not Walk("square", ((0, 0), (1, 1))).is_valid()
    # brick-wall: (0, 0) links up, (1, 0) links down
    assert Walk("hex", ((0, 0), (0, 1))).is_valid()
    assert not Walk("hex", ((1, 0), (1, 1))).is_valid()


def test_square_nbrs_oracle_consistent():
    assert saw_count_graph(square_nbrs, (0, 0), 6) == SQUARE_20[6]
    assert list(itertools.islice(SQUARE_20, 3)) == [1, 4, 12]
