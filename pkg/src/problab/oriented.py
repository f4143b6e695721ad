"""Randomly oriented square lattice.

Horizontal edge ``(x, y)-(x+1, y)`` points right with probability p, vertical
edge ``(x, y)-(x, y+1)`` points up with probability p.  The finite-volume
proxy for an infinite outward path is reaching the boundary of the sup-norm
L-box by following edge orientations from the origin.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .lattice import Site
from .randstat import (TAG_ENHANCE, TAG_ORIENT, EstimateCI, RngStream, estimate_proportion,
                       hash_uniform, pooled_se, run_chunked, stream_key)

_NO_GRID = np.zeros((1, 1), dtype=np.bool_)


@dataclass(frozen=True)
class OrientedConfig:
    """Lazy orientation field on the L-box.

    ``right``/``up`` pin an explicit configuration as boolean arrays indexed
    ``[x+L, y+L]`` (edge to the right of / above the site).  ``enhance`` adds
    an extra rightward/upward copy of each edge with that probability.
    """

    L: int
    p: float
    master_seed: int = 0
    stream_id: int = 0
    enhance: float = 0.0
    right: np.ndarray | None = None
    up: np.ndarray | None = None

    @property
    def key(self) -> int:
        return stream_key(self.master_seed, self.stream_id)

    @classmethod
    def from_arrays(cls, right: np.ndarray, up: np.ndarray) -> "OrientedConfig":
        L = (right.shape[0] - 1) // 2
        return cls(L, float("nan"), right=np.asarray(right, bool), up=np.asarray(up, bool))

    def materialize(self) -> tuple[np.ndarray, np.ndarray]:
        """``(right, up)`` boolean arrays for the box."""
        if self.right is not None:
            return self.right, self.up
        return _materialize(np.uint64(self.key), self.p, self.L)

    def points_right(self, x: int, y: int) -> bool:
        if self.right is not None:
            return bool(self.right[x + self.L, y + self.L])
        return bool(hash_uniform(np.uint64(self.key), x, y, 0, TAG_ORIENT) < self.p)

    def points_up(self, x: int, y: int) -> bool:
        if self.up is not None:
            return bool(self.up[x + self.L, y + self.L])
        return bool(hash_uniform(np.uint64(self.key), x, y, 1, TAG_ORIENT) < self.p)

    def _kernel_args(self):
        if self.right is not None:
            return True, np.uint64(0), 0.0, 0.0, self.right, self.up
        return False, np.uint64(self.key), float(self.p), float(self.enhance), _NO_GRID, _NO_GRID


@njit(cache=True, nogil=True)
def _materialize(key, p, L):
    n = 2 * L + 1
    right = np.zeros((n, n), dtype=np.bool_)
    up = np.zeros((n, n), dtype=np.bool_)
    for x in range(-L, L + 1):
        for y in range(-L, L + 1):
            right[x + L, y + L] = hash_uniform(key, x, y, 0, TAG_ORIENT) < p
            up[x + L, y + L] = hash_uniform(key, x, y, 1, TAG_ORIENT) < p
    return right, up


@njit(cache=True, nogil=True)
def _arc(explicit, key, p, enh, right, up, L, x, y, d):
    """Can the walker move from (x, y) in direction d (0 N, 1 E, 2 S, 3 W)?"""
    if d == 1 or d == 3:
        ex = x if d == 1 else x - 1
        if explicit:
            r = right[ex + L, y + L]
        else:
            r = hash_uniform(key, ex, y, 0, TAG_ORIENT) < p
        if d == 1:
            return r or (enh > 0.0 and hash_uniform(key, ex, y, 0, TAG_ENHANCE) < enh)
        return not r
    ey = y if d == 0 else y - 1
    if explicit:
        u = up[x + L, ey + L]
    else:
        u = hash_uniform(key, x, ey, 1, TAG_ORIENT) < p
    if d == 0:
        return u or (enh > 0.0 and hash_uniform(key, x, ey, 1, TAG_ENHANCE) < enh)
    return not u


@njit(cache=True, nogil=True)
def _reach(explicit, key, p, enh, right, up, L, stop_at_boundary, seen, layer_sizes):
    """Breadth-first closure from the origin inside the box; returns (touched, n_reached, n_layers)."""
    n = 2 * L + 1
    qx = np.empty(n * n, dtype=np.int64)
    qy = np.empty(n * n, dtype=np.int64)
    dx = np.array([0, 1, 0, -1])
    dy = np.array([1, 0, -1, 0])
    seen[L, L] = True
    qx[0] = 0
    qy[0] = 0
    head = 0
    tail = 1
    touched = L == 0
    layers = 0
    while head < tail:
        layer_end = tail
        layer_sizes[layers] = layer_end - head
        layers += 1
        while head < layer_end:
            x = qx[head]
            y = qy[head]
            head += 1
            for d in range(4):
                nx = x + dx[d]
                ny = y + dy[d]
                if max(abs(nx), abs(ny)) > L or seen[nx + L, ny + L]:
                    continue
                if not _arc(explicit, key, p, enh, right, up, L, x, y, d):
                    continue
                seen[nx + L, ny + L] = True
                if max(abs(nx), abs(ny)) == L:
                    touched = True
                    if stop_at_boundary:
                        return True, tail + 1, layers
                qx[tail] = nx
                qy[tail] = ny
                tail += 1
    return touched, tail, layers


@dataclass(frozen=True)
class ReachResult:
    reached: frozenset
    touched_boundary: bool
    frontier_sizes: tuple[int, ...]


def sample_oriented(L: int, p: float, stream: RngStream, enhance: float = 0.0) -> OrientedConfig:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0,1]")
    if not 0.0 <= enhance <= 1.0:
        raise ValueError(f"enhance={enhance} outside [0,1]")
    return OrientedConfig(L, float(p), stream.master_seed, stream.stream_id, float(enhance))


def reachable_from_origin(config: OrientedConfig) -> ReachResult:
    L = config.L
    seen = np.zeros((2 * L + 1, 2 * L + 1), dtype=np.bool_)
    layers = np.zeros((2 * L + 1) ** 2 + 1, dtype=np.int64)
    touched, _, n_layers = _reach(*config._kernel_args(), L, False, seen, layers)
    xs, ys = np.nonzero(seen)
    reached = frozenset(Site(int(a) - L, int(b) - L) for a, b in zip(xs, ys))
    return ReachResult(reached, bool(touched), tuple(int(v) for v in layers[:n_layers]))


@njit(cache=True, nogil=True)
def _touch_batch(keys, p, enh, L):
    out = np.empty(keys.shape[0], dtype=np.bool_)
    n = 2 * L + 1
    seen = np.zeros((n, n), dtype=np.bool_)
    layers = np.zeros(n * n + 1, dtype=np.int64)
    for i in range(keys.shape[0]):
        seen[:, :] = False
        touched, _, _ = _reach(False, keys[i], p, enh, _NO_GRID, _NO_GRID, L, True, seen, layers)
        out[i] = touched
    return out


def boundary_indicators(p: float, L: int, trials: int, stream: RngStream,
                        enhance: float = 0.0, workers: int = 1) -> np.ndarray:
    """Per-trial boundary-touch indicators; trial i uses ``stream.child(i)``."""
    return run_chunked(lambda a, b: _touch_batch(stream.child_keys(a, b), float(p), float(enhance), L),
                       trials, workers).astype(bool)


def estimate_theta_oriented(p: float, L: int, trials: int, stream: RngStream,
                            enhance: float = 0.0, workers: int = 1) -> EstimateCI:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    hits = boundary_indicators(p, L, trials, stream, enhance, workers)
    return estimate_proportion(int(hits.sum()), trials)


@dataclass(frozen=True)
class SymmetryReport:
    p: float
    at_p: EstimateCI
    at_complement: EstimateCI

    @property
    def difference(self) -> float:
        return abs(self.at_p.point - self.at_complement.point)

    @property
    def pooled_se(self) -> float:
        return pooled_se(self.at_p, self.at_complement)

    @property
    def z(self) -> float:
        se = self.pooled_se
        return 0.0 if se == 0 else self.difference / se


def symmetry_report(p: float, L: int, trials: int, stream: RngStream, workers: int = 1) -> SymmetryReport:
    """Independent estimates at p and 1-p (different sub-streams)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0,1]")
    a = estimate_theta_oriented(p, L, trials, stream.child(0), workers=workers)
    b = estimate_theta_oriented(1.0 - p, L, trials, stream.child(1), workers=workers)
    return SymmetryReport(p, a, b)
