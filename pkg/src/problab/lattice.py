"""Lattice geometry, bond percolation boxes and the diagonal-lattice map.

Coordinates are integer pairs.  The hexagonal lattice uses brick-wall
coordinates: every site has its two horizontal neighbours, and a third,
vertical neighbour above it when ``x + y`` is even and below it otherwise.

Boxes are sup-norm balls ``max(|x|, |y|) <= L`` around the origin; edges with
an endpoint outside the box are clipped.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .randstat import TAG_BOND, RngStream, hash_uniform, hash_uniform_array, stream_key

SQUARE = "square"
HEX = "hex"
KINDS = (SQUARE, HEX)


class Site(NamedTuple):
    x: int
    y: int


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def reverse(self) -> "Heading":
        return Heading((self + 2) % 4)

    @property
    def step(self) -> tuple[int, int]:
        return int(DX[self]), int(DY[self])


DX = np.array([0, 1, 0, -1], dtype=np.int64)
DY = np.array([1, 0, -1, 0], dtype=np.int64)


def sup_norm(site) -> int:
    return max(abs(site[0]), abs(site[1]))


def hex_vertical(x: int, y: int) -> int:
    """+1 if the vertical hexagonal edge at (x, y) goes up, -1 if down."""
    return 1 if (x + y) % 2 == 0 else -1


def neighbours(kind: str, site) -> list[Site]:
    x, y = site
    if kind == SQUARE:
        return [Site(x, y + 1), Site(x + 1, y), Site(x, y - 1), Site(x - 1, y)]
    if kind == HEX:
        return [Site(x + 1, y), Site(x - 1, y), Site(x, y + hex_vertical(x, y))]
    raise ValueError(f"unknown lattice kind {kind!r}")


def coordination(kind: str) -> int:
    return 4 if kind == SQUARE else 3


class Edge(NamedTuple):
    """Edge from (x, y) to (x+1, y) when axis == 0, to (x, y+1) when axis == 1."""

    x: int
    y: int
    axis: int

    @property
    def endpoints(self) -> tuple[Site, Site]:
        if self.axis == 0:
            return Site(self.x, self.y), Site(self.x + 1, self.y)
        return Site(self.x, self.y), Site(self.x, self.y + 1)


def edge_between(u, v) -> Edge:
    (ux, uy), (vx, vy) = u, v
    if uy == vy and abs(ux - vx) == 1:
        return Edge(min(ux, vx), uy, 0)
    if ux == vx and abs(uy - vy) == 1:
        return Edge(ux, min(uy, vy), 1)
    raise ValueError(f"{u} and {v} are not adjacent")


def lattice_has_edge(kind: str, edge: Edge) -> bool:
    if kind == HEX and edge.axis == 1:
        return (edge.x + edge.y) % 2 == 0
    return True


@dataclass(frozen=True)
class BondConfig:
    """Bond percolation on the L-box.

    Edge states are a pure function of ``(master_seed, stream_id, edge)`` so
    they can be evaluated lazily; ``explicit`` replaces the random states with
    a fixed set of open edges (hand-built configurations).
    """

    kind: str
    L: int
    p: float
    master_seed: int = 0
    stream_id: int = 0
    explicit: frozenset | None = None
    _memo: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def key(self) -> int:
        return stream_key(self.master_seed, self.stream_id)

    @classmethod
    def from_open_edges(cls, kind: str, L: int, edges) -> "BondConfig":
        return cls(kind, L, float("nan"), explicit=frozenset(Edge(*e) for e in edges))

    def in_box(self, site) -> bool:
        return sup_norm(site) <= self.L

    def is_open(self, edge) -> bool:
        edge = Edge(*edge)
        state = self._memo.get(edge)
        if state is None:
            # dict writes are atomic and states are pure, so racing fills agree
            state = self._compute(edge)
            self._memo[edge] = state
        return state

    def _compute(self, edge: Edge) -> bool:
        u, v = edge.endpoints
        if not (self.in_box(u) and self.in_box(v) and lattice_has_edge(self.kind, edge)):
            return False
        if self.explicit is not None:
            return edge in self.explicit
        return bool(hash_uniform(np.uint64(self.key), edge.x, edge.y, edge.axis, TAG_BOND) < self.p)

    def edges(self) -> Iterator[Edge]:
        L = self.L
        for x in range(-L, L + 1):
            for y in range(-L, L + 1):
                if x < L:
                    yield Edge(x, y, 0)
                if y < L and lattice_has_edge(self.kind, Edge(x, y, 1)):
                    yield Edge(x, y, 1)

    def materialize(self) -> tuple[np.ndarray, np.ndarray]:
        """Eager boolean arrays ``(horizontal, vertical)`` indexed ``[x+L, y+L]``."""
        L = self.L
        xs, ys = np.meshgrid(np.arange(-L, L + 1), np.arange(-L, L + 1), indexing="ij")
        h_valid = xs < L
        v_valid = ys < L
        if self.kind == HEX:
            v_valid &= (xs + ys) % 2 == 0
        if self.explicit is not None:
            h = np.zeros(xs.shape, dtype=bool)
            v = np.zeros(xs.shape, dtype=bool)
            for e in self.explicit:
                if max(abs(e.x), abs(e.y)) <= L:
                    (h if e.axis == 0 else v)[e.x + L, e.y + L] = True
        else:
            key = self.key
            h = hash_uniform_array(key, xs, ys, 0, TAG_BOND) < self.p
            v = hash_uniform_array(key, xs, ys, 1, TAG_BOND) < self.p
        return h & h_valid, v & v_valid

    def open_fraction(self) -> float:
        h, v = self.materialize()
        n_edges = sum(1 for _ in self.edges())
        return (int(h.sum()) + int(v.sum())) / n_edges

    def open_neighbours(self, site) -> list[Site]:
        return [w for w in neighbours(self.kind, site)
                if self.in_box(w) and self.is_open(edge_between(site, w))]


def sample_bond_config(kind: str, L: int, p: float, stream: RngStream) -> BondConfig:
    if kind not in KINDS:
        raise ValueError(f"unknown lattice kind {kind!r}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0,1]")
    if L < 1:
        raise ValueError("L must be >= 1")
    return BondConfig(kind, L, float(p), stream.master_seed, stream.stream_id)


def cluster_of(config: BondConfig, v) -> set[Site]:
    """Open cluster of ``v`` inside the box (breadth-first search)."""
    v = Site(*v)
    if not config.in_box(v):
        raise ValueError(f"{v} outside the L={config.L} box")
    seen = {v}
    queue = deque([v])
    while queue:
        u = queue.popleft()
        for w in config.open_neighbours(u):
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def write_edge_list(config: BondConfig, path) -> None:
    """Debug dump: one ``x1 y1 x2 y2 open`` line per box edge."""
    lines = [f"# kind={config.kind} L={config.L} p={config.p} "
             f"seed={config.master_seed} stream={config.stream_id}"]
    for e in config.edges():
        (a, b) = e.endpoints
        lines.append(f"{a.x} {a.y} {b.x} {b.y} {int(config.is_open(e))}")
    Path(path).write_text("\n".join(lines) + "\n")


# --- diagonal lattice ---------------------------------------------------------
#
# A mirror at site s is a segment of length sqrt(2) centred on s, joining two
# centres of the unit faces around s.  Reading the face centres as the vertices
# of a (half-shifted) square lattice, the mirror is one of the two diagonals of
# the face of that lattice whose centre is s.  Face centre (i+1/2, j+1/2) gets
# parity (i + j) % 2; every diagonal joins two centres of equal parity, which
# splits the diagonals into two lattices (class 0 and class 1).

NE = "NE"
NW = "NW"


class DiagonalEdge(NamedTuple):
    face: Site
    orientation: str

    @property
    def lattice_class(self) -> int:
        x, y = self.face
        return (x + y) % 2 if self.orientation == NE else (x + y + 1) % 2

    @property
    def endpoints2(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """Endpoints in doubled coordinates (so they are integers)."""
        x, y = self.face
        if self.orientation == NE:
            return (2 * x - 1, 2 * y - 1), (2 * x + 1, 2 * y + 1)
        return (2 * x - 1, 2 * y + 1), (2 * x + 1, 2 * y - 1)


def mirror_to_diagonal(site, orientation: str) -> DiagonalEdge:
    if orientation not in (NE, NW):
        raise ValueError(f"orientation must be NE or NW, got {orientation!r}")
    return DiagonalEdge(Site(*site), orientation)


def diagonal_orientation(site, lattice_class: int) -> str:
    """Orientation of the unique class-``lattice_class`` diagonal through ``site``."""
    return NE if (site[0] + site[1]) % 2 == lattice_class else NW
