"""Exact checks of the bunkbed inequality and of edge-negative association.

Everything is computed by enumerating edge subsets.  A numba kernel walks the
subsets once and tallies the relevant events by the number of open edges k;
probabilities are then assembled as polynomials in p with
:class:`fractions.Fraction` coefficients, so comparisons are exact.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np
from numba import njit

from .randstat import TAG_EDGE, EstimateCI, RngStream, estimate_proportion, hash_uniform, run_chunked

ENUMERATION_CEILING = 24

# subgraph classes for the negative-association checks
FOREST, CONNECTED, TREE = 0, 1, 2
CLASSES = {"usf": FOREST, "ucs": CONNECTED, "ust": TREE}


class ResourceLimitError(RuntimeError):
    pass


# --- graphs -------------------------------------------------------------------

@dataclass(frozen=True)
class SimpleGraph:
    n: int
    edges: tuple[tuple[int, int], ...]
    name: str = ""

    def __post_init__(self):
        seen = set()
        norm = []
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"loop at vertex {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge {(u, v)} outside vertex range 0..{self.n - 1}")
            e = (min(u, v), max(u, v))
            if e in seen:
                raise ValueError(f"multiple edge {e}")
            seen.add(e)
            norm.append(e)
        object.__setattr__(self, "edges", tuple(norm))

    @property
    def m(self) -> int:
        return len(self.edges)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    @classmethod
    def from_networkx(cls, g: nx.Graph, name: str = "") -> "SimpleGraph":
        if g.is_multigraph() or g.is_directed():
            raise ValueError("expected a simple undirected graph")
        index = {v: i for i, v in enumerate(g.nodes())}
        return cls(len(index), tuple((index[u], index[v]) for u, v in g.edges()), name)

    def is_connected(self) -> bool:
        return self.n > 0 and nx.is_connected(self.to_networkx())

    def graph6(self) -> str:
        return nx.to_graph6_bytes(self.to_networkx(), header=False).decode().strip()

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        return e[:, 0].copy(), e[:, 1].copy()


def complete_graph(n: int) -> SimpleGraph:
    return SimpleGraph(n, tuple(itertools.combinations(range(n), 2)), f"K{n}")


def path_graph(n: int) -> SimpleGraph:
    return SimpleGraph(n, tuple((i, i + 1) for i in range(n - 1)), f"P{n}")


def connected_graphs(max_vertices: int, min_vertices: int = 1) -> list[SimpleGraph]:
    """Connected graphs up to isomorphism, from the networkx graph atlas (<= 7 vertices)."""
    if max_vertices > 7:
        raise ValueError("the graph atlas stops at 7 vertices")
    out = []
    for i, g in enumerate(nx.graph_atlas_g()):
        k = g.number_of_nodes()
        if min_vertices <= k <= max_vertices and nx.is_connected(g):
            out.append(SimpleGraph.from_networkx(g, name=f"atlas{i}"))
    return out


@dataclass(frozen=True)
class BunkbedGraph:
    """``G x K2``: vertex v becomes v (sheet 1) and v + n (sheet 2)."""

    base: SimpleGraph
    edges: tuple[tuple[int, int], ...]
    vertical: tuple[bool, ...]

    @property
    def n(self) -> int:
        return 2 * self.base.n

    @property
    def m(self) -> int:
        return len(self.edges)

    def vertex(self, v: int, sheet: int) -> int:
        return v if sheet == 1 else v + self.base.n

    def label(self, w: int) -> tuple[int, int]:
        n = self.base.n
        return (w, 1) if w < n else (w - n, 2)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        return e[:, 0].copy(), e[:, 1].copy()


def build_bunkbed(g: SimpleGraph) -> BunkbedGraph:
    if not isinstance(g, SimpleGraph):
        g = SimpleGraph(*g)
    n = g.n
    horiz = list(g.edges) + [(u + n, v + n) for u, v in g.edges]
    vert = [(v, v + n) for v in range(n)]
    return BunkbedGraph(g, tuple(horiz + vert), tuple([False] * len(horiz) + [True] * n))


# --- exact polynomials -------------------------------------------------------

def _as_fraction(p) -> Fraction:
    p = Fraction(p)
    if not 0 <= p <= 1:
        raise ValueError(f"p={p} outside [0,1]")
    return p


def eval_poly(counts: Sequence[int], m: int, p) -> Fraction:
    """sum_k counts[k] p^k (1-p)^(m-k), exactly."""
    p = _as_fraction(p)
    q = 1 - p
    return sum((Fraction(int(c)) * p ** k * q ** (m - k) for k, c in enumerate(counts) if c), Fraction(0))


@njit(cache=True, nogil=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True, nogil=True)
def _components(n, us, vs, mask, fixed_us, fixed_vs, parent):
    for i in range(n):
        parent[i] = i
    for e in range(fixed_us.shape[0]):
        a = _find(parent, fixed_us[e])
        b = _find(parent, fixed_vs[e])
        if a != b:
            parent[a] = b
    for e in range(us.shape[0]):
        if (mask >> e) & 1:
            a = _find(parent, us[e])
            b = _find(parent, vs[e])
            if a != b:
                parent[a] = b
    for i in range(n):
        parent[i] = _find(parent, i)


@njit(cache=True)
def _bunkbed_counts(nbase, us, vs, fixed_us, fixed_vs):
    """Tallies by open-edge count k over subsets of the free edges.

    ``c11[u, v, k]`` counts subsets joining u1 and v1, ``c12[u, v, k]`` those
    joining u1 and v2.
    """
    m = us.shape[0]
    n = 2 * nbase
    c11 = np.zeros((nbase, nbase, m + 1), dtype=np.int64)
    c12 = np.zeros((nbase, nbase, m + 1), dtype=np.int64)
    parent = np.empty(n, dtype=np.int64)
    for mask in range(1 << m):
        _components(n, us, vs, mask, fixed_us, fixed_vs, parent)
        k = 0
        x = mask
        while x:
            x &= x - 1
            k += 1
        for u in range(nbase):
            for v in range(nbase):
                if parent[u] == parent[v]:
                    c11[u, v, k] += 1
                if parent[u] == parent[v + nbase]:
                    c12[u, v, k] += 1
    return c11, c12


@dataclass(frozen=True)
class BunkbedCounts:
    """Polynomial coefficients for every ordered pair; see :func:`bunkbed_counts`."""

    graph: SimpleGraph
    m: int
    c11: np.ndarray
    c12: np.ndarray
    vertical_open: tuple[int, ...] | None = None

    def probabilities(self, u: int, v: int, p) -> tuple[Fraction, Fraction]:
        return eval_poly(self.c11[u, v], self.m, p), eval_poly(self.c12[u, v], self.m, p)


def _check_ceiling(m: int, ceiling: int):
    if m > ceiling:
        raise ResourceLimitError(f"{m} free edges exceed the enumeration ceiling {ceiling}; "
                                 f"use bunkbed_monte_carlo")


def bunkbed_counts(g: SimpleGraph, ceiling: int = ENUMERATION_CEILING) -> BunkbedCounts:
    bb = build_bunkbed(g)
    _check_ceiling(bb.m, ceiling)
    us, vs = bb.arrays()
    empty = np.empty(0, dtype=np.int64)
    c11, c12 = _bunkbed_counts(g.n, us, vs, empty, empty)
    return BunkbedCounts(g, bb.m, c11, c12)


def conditional_counts(g: SimpleGraph, T: Iterable[int], ceiling: int = ENUMERATION_CEILING) -> BunkbedCounts:
    """Counts with vertical edges fixed: open exactly at the vertices in ``T``."""
    T = tuple(sorted(set(T)))
    if any(not 0 <= t < g.n for t in T):
        raise ValueError(f"vertical-edge set {T} outside 0..{g.n - 1}")
    bb = build_bunkbed(g)
    m = 2 * g.m
    _check_ceiling(m, ceiling)
    us, vs = bb.arrays()
    fu = np.array(T, dtype=np.int64)
    c11, c12 = _bunkbed_counts(g.n, us[:m], vs[:m], fu, fu + g.n)
    return BunkbedCounts(g, m, c11, c12, T)


def bunkbed_probabilities(g: SimpleGraph, u: int, v: int, p,
                          ceiling: int = ENUMERATION_CEILING) -> tuple[Fraction, Fraction]:
    """Exact ``(P(u1 <-> v1), P(u1 <-> v2))``."""
    if u == v:
        raise ValueError("u and v must differ")
    if not (0 <= u < g.n and 0 <= v < g.n):
        raise ValueError("vertex out of range")
    return bunkbed_counts(g, ceiling).probabilities(u, v, p)


@dataclass(frozen=True)
class BunkbedReport:
    graph: SimpleGraph
    min_gap: Fraction
    witness: tuple  # (u, v, p, P11, P12)
    checked: int
    conditional_on: tuple[int, ...] | None = None

    @property
    def passed(self) -> bool:
        return self.min_gap >= 0


def _scan(counts: BunkbedCounts, p_grid) -> BunkbedReport:
    g = counts.graph
    best = None
    checked = 0
    for p in p_grid:
        p = _as_fraction(p)
        for u in range(g.n):
            for v in range(g.n):
                if u == v:
                    continue
                p11, p12 = counts.probabilities(u, v, p)
                checked += 1
                if best is None or p11 - p12 < best[0]:
                    best = (p11 - p12, (u, v, p, p11, p12))
    if best is None:
        return BunkbedReport(g, Fraction(0), (), 0, counts.vertical_open)
    return BunkbedReport(g, best[0], best[1], checked, counts.vertical_open)


def default_p_grid() -> list[Fraction]:
    return [Fraction(k, 10) for k in range(1, 10)]


def bunkbed_check(g: SimpleGraph, p_grid=None, ceiling: int = ENUMERATION_CEILING) -> BunkbedReport:
    """Minimum of P11 - P12 over ordered pairs u != v and the p grid."""
    return _scan(bunkbed_counts(g, ceiling), default_p_grid() if p_grid is None else p_grid)


def bunkbed_check_conditional(g: SimpleGraph, T: Iterable[int], p,
                              ceiling: int = ENUMERATION_CEILING) -> BunkbedReport:
    grid = p if isinstance(p, (list, tuple)) else [p]
    return _scan(conditional_counts(g, T, ceiling), grid)


def all_vertical_subsets(g: SimpleGraph) -> list[tuple[int, ...]]:
    return [c for r in range(g.n + 1) for c in itertools.combinations(range(g.n), r)]


# --- Monte Carlo ----------------------------------------------------------------

@njit(cache=True, nogil=True)
def _bunkbed_mc(keys, n, us, vs, u, v, p):
    out = np.empty((keys.shape[0], 2), dtype=np.bool_)
    parent = np.empty(n, dtype=np.int64)
    for t in range(keys.shape[0]):
        for i in range(n):
            parent[i] = i
        for e in range(us.shape[0]):
            if hash_uniform(keys[t], e, 0, 0, TAG_EDGE) < p:
                a = _find(parent, us[e])
                b = _find(parent, vs[e])
                if a != b:
                    parent[a] = b
        out[t, 0] = _find(parent, u) == _find(parent, v)
        out[t, 1] = _find(parent, u) == _find(parent, v + n // 2)
    return out


@dataclass(frozen=True)
class BunkbedEstimate:
    p11: EstimateCI
    p12: EstimateCI
    gap: float
    gap_se: float

    def __iter__(self):
        return iter((self.p11, self.p12))


def bunkbed_monte_carlo(g: SimpleGraph, u: int, v: int, p: float, trials: int, stream: RngStream,
                        workers: int = 1) -> BunkbedEstimate:
    """Both events are read off the same sampled configuration in every trial."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if u == v:
        raise ValueError("u and v must differ")
    bb = build_bunkbed(g)
    us, vs = bb.arrays()
    res = run_chunked(lambda a, b: _bunkbed_mc(stream.child_keys(a, b), bb.n, us, vs, u, v, float(p)),
                      trials, workers).reshape(trials, 2)
    d = res[:, 0].astype(np.int8) - res[:, 1].astype(np.int8)
    se = float(d.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("nan")
    return BunkbedEstimate(estimate_proportion(int(res[:, 0].sum()), trials),
                           estimate_proportion(int(res[:, 1].sum()), trials), float(d.mean()), se)


# --- forests and friends ------------------------------------------------------------

@njit(cache=True)
def _subgraph_counts(n, us, vs, cls):
    """Per-size tallies of admissible subsets: total, per edge, per edge pair."""
    m = us.shape[0]
    total = np.zeros(m + 1, dtype=np.int64)
    single = np.zeros((m, m + 1), dtype=np.int64)
    pair = np.zeros((m, m, m + 1), dtype=np.int64)
    parent = np.empty(n, dtype=np.int64)
    for mask in range(1 << m):
        for i in range(n):
            parent[i] = i
        k = 0
        comps = n
        acyclic = True
        for e in range(m):
            if (mask >> e) & 1:
                k += 1
                a = _find(parent, us[e])
                b = _find(parent, vs[e])
                if a == b:
                    acyclic = False
                else:
                    parent[a] = b
                    comps -= 1
        if cls == 0:
            ok = acyclic
        elif cls == 1:
            ok = comps == 1
        else:
            ok = acyclic and comps == 1
        if not ok:
            continue
        total[k] += 1
        for e in range(m):
            if (mask >> e) & 1:
                single[e, k] += 1
                for f in range(e + 1, m):
                    if (mask >> f) & 1:
                        pair[e, f, k] += 1
    return total, single, pair


@dataclass(frozen=True)
class ForestStats:
    """Weighted counts of the admissible subsets (plain counts when the weight is 1)."""

    graph: SimpleGraph
    kind: str
    total: Fraction
    single: tuple[Fraction, ...]
    pair: dict = field(repr=False)
    by_size: tuple[int, ...] = ()

    def prob(self, e: int) -> Fraction:
        return self.single[e] / self.total

    def joint(self, e: int, f: int) -> Fraction:
        return self.pair[(min(e, f), max(e, f))] / self.total


def _weighted(counts: np.ndarray, w: Fraction) -> Fraction:
    return sum((int(c) * w ** k for k, c in enumerate(counts) if c), Fraction(0))


def enumerate_subgraphs(g: SimpleGraph, kind: str = "usf", edge_weight=1,
                        ceiling: int = ENUMERATION_CEILING) -> ForestStats:
    if kind not in CLASSES:
        raise ValueError(f"kind must be one of {sorted(CLASSES)}")
    if g.m > ceiling:
        raise ResourceLimitError(f"{g.m} edges exceed the enumeration ceiling {ceiling}")
    if kind != "usf" and not g.is_connected():
        raise ValueError(f"{kind} needs a connected graph")
    w = Fraction(edge_weight)
    if w <= 0:
        raise ValueError("edge weight must be positive")
    us, vs = g.arrays()
    total, single, pair = _subgraph_counts(g.n, us, vs, CLASSES[kind])
    pairs = {(e, f): _weighted(pair[e, f], w) for e in range(g.m) for f in range(e + 1, g.m)}
    return ForestStats(g, kind, _weighted(total, w), tuple(_weighted(single[e], w) for e in range(g.m)),
                       pairs, tuple(int(c) for c in total))


def enumerate_forests(g: SimpleGraph, edge_weight=1, ceiling: int = ENUMERATION_CEILING) -> ForestStats:
    """All forests of ``g``; ``edge_weight`` w weights a forest F by w^|F|.

    Since a forest with |F| edges has n - |F| components, w = 1/q gives the
    cluster weighting q^k(F) up to a constant (the q-weighted forest measure).
    """
    return enumerate_subgraphs(g, "usf", edge_weight, ceiling)


@dataclass(frozen=True)
class AssociationReport:
    graph: SimpleGraph
    kind: str
    max_excess: Fraction | None
    witness: tuple | None  # (e, f, P(ef), P(e), P(f))
    pairs: int

    @property
    def passed(self) -> bool:
        return self.max_excess is None or self.max_excess <= 0


def association_check(g: SimpleGraph, kind: str, ceiling: int = ENUMERATION_CEILING) -> AssociationReport:
    """max over distinct edges e, f of P(e,f) - P(e)P(f) under the uniform law."""
    stats = enumerate_subgraphs(g, kind, 1, ceiling)
    best = None
    for (e, f), c in stats.pair.items():
        pe, pf, pef = stats.prob(e), stats.prob(f), c / stats.total
        exc = pef - pe * pf
        if best is None or exc > best[0]:
            best = (exc, (g.edges[e], g.edges[f], pef, pe, pf))
    if best is None:
        return AssociationReport(g, kind, None, None, 0)
    return AssociationReport(g, kind, best[0], best[1], len(stats.pair))


def usf_check(g: SimpleGraph, ceiling: int = ENUMERATION_CEILING) -> AssociationReport:
    return association_check(g, "usf", ceiling)


def ucs_check(g: SimpleGraph, ceiling: int = ENUMERATION_CEILING) -> AssociationReport:
    return association_check(g, "ucs", ceiling)


def ust_check(g: SimpleGraph, ceiling: int = ENUMERATION_CEILING) -> AssociationReport:
    return association_check(g, "ust", ceiling)


# --- witnesses ------------------------------------------------------------------

def write_witness(path, report: BunkbedReport | AssociationReport) -> Path:
    """Plain-text ``key: value`` record of a violation (one line per field)."""
    g = report.graph
    lines = ["# problab witness v1", f"graph6: {g.graph6()}", f"vertices: {g.n}",
             "edges: " + " ".join(f"{u}-{v}" for u, v in g.edges)]
    if isinstance(report, BunkbedReport):
        u, v, p, p11, p12 = report.witness
        lines += ["kind: bunkbed", f"u: {u}", f"v: {v}", f"p: {p}", f"P11: {p11}", f"P12: {p12}",
                  f"gap: {p11 - p12}"]
        if report.conditional_on is not None:
            lines.append("vertical_open: " + " ".join(map(str, report.conditional_on)))
    else:
        e, f, pef, pe, pf = report.witness
        lines += [f"kind: {report.kind}", f"e: {e[0]}-{e[1]}", f"f: {f[0]}-{f[1]}", f"P(e,f): {pef}",
                  f"P(e): {pe}", f"P(f): {pf}", f"excess: {pef - pe * pf}"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
