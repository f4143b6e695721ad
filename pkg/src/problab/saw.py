"""Self-avoiding walks: exact counts, growth-rate estimates, uniform samples.

Counting is a depth-first extension with an occupancy grid.  On the square
lattice the first step is fixed east and the first turn is forced north,
which leaves one eighth of the tree (the straight rod is counted apart).  On
the hexagonal lattice the first two steps are fixed, leaving one sixth.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit

from .lattice import HEX, KINDS, SQUARE, BondConfig, Site, sup_norm
from .randstat import TAG_PIVOT, RngStream, hash_uniform, run_many

MAX_STEPS = {SQUARE: 26, HEX: 40}
EXACT_SAMPLING_CEILING = 10**7
_PREFIX_DEPTH = 6

_KIND_CODE = {SQUARE: 0, HEX: 1}


class ResourceLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SawCount:
    kind: str
    start: Site
    n: int
    sigma_n: int


# --- kernels --------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _step(kind, x, y, d):
    if kind == 0:
        if d == 0:
            return x, y + 1
        if d == 1:
            return x + 1, y
        if d == 2:
            return x, y - 1
        return x - 1, y
    if d == 0:
        return x + 1, y
    if d == 1:
        return x - 1, y
    if (x + y) % 2 == 0:
        return x, y + 1
    return x, y - 1


@njit(cache=True, nogil=True)
def _edge_open(kind, x, y, d, h_open, v_open, L):
    nx, ny = _step(kind, x, y, d)
    if abs(nx) > L or abs(ny) > L:
        return False
    if ny == y:
        return h_open[min(x, nx) + L, y + L]
    return v_open[x + L, min(y, ny) + L]


@njit(cache=True, nogil=True)
def _extend_count(kind, px, py, rule, nmax, env, h_open, v_open, L, counts):
    """Count every extension (up to ``nmax`` steps) of the prefix walk.

    With ``rule`` set (square lattice only) a walk that has not yet turned may
    only continue east or turn north, and unturned walks are not counted.
    """
    m = px.shape[0] - 1
    ndirs = 4 if kind == 0 else 3
    reach = nmax + 2
    for i in range(m + 1):
        reach = max(reach, abs(px[i]) + nmax + 2, abs(py[i]) + nmax + 2)
    side = 2 * reach + 1
    occ = np.zeros((side, side), dtype=np.uint8)
    xs = np.empty(nmax + 1, dtype=np.int64)
    ys = np.empty(nmax + 1, dtype=np.int64)
    it = np.zeros(nmax + 1, dtype=np.int64)
    turned = np.zeros(nmax + 1, dtype=np.bool_)
    t0 = False
    for i in range(m + 1):
        xs[i] = px[i]
        ys[i] = py[i]
        occ[px[i] + reach, py[i] + reach] = 1
        if i > 0 and py[i] != py[i - 1]:
            t0 = True
    turned[m] = t0
    if (not rule) or t0:
        counts[m] += 1
    if m >= nmax:
        return
    depth = m
    while depth >= m:
        d = it[depth]
        if d >= ndirs:
            if depth > m:
                occ[xs[depth] + reach, ys[depth] + reach] = 0
            depth -= 1
            continue
        it[depth] = d + 1
        if rule and not turned[depth] and d != 0 and d != 1:
            continue
        x = xs[depth]
        y = ys[depth]
        nx, ny = _step(kind, x, y, d)
        if occ[nx + reach, ny + reach]:
            continue
        if env and not _edge_open(kind, x, y, d, h_open, v_open, L):
            continue
        nd = depth + 1
        xs[nd] = nx
        ys[nd] = ny
        turned[nd] = turned[depth] or ny != y
        if (not rule) or turned[nd]:
            counts[nd] += 1
        if nd < nmax:
            occ[nx + reach, ny + reach] = 1
            it[nd] = 0
            depth = nd


@njit(cache=True, nogil=True)
def _enumerate_codes(kind, n, out):
    """Write the direction codes of every n-step SAW from the origin into ``out``."""
    ndirs = 4 if kind == 0 else 3
    reach = n + 2
    side = 2 * reach + 1
    occ = np.zeros((side, side), dtype=np.uint8)
    xs = np.zeros(n + 1, dtype=np.int64)
    ys = np.zeros(n + 1, dtype=np.int64)
    it = np.zeros(n + 1, dtype=np.int64)
    codes = np.zeros(n, dtype=np.uint8)
    occ[reach, reach] = 1
    row = 0
    depth = 0
    while depth >= 0:
        d = it[depth]
        if d >= ndirs:
            if depth > 0:
                occ[xs[depth] + reach, ys[depth] + reach] = 0
            depth -= 1
            continue
        it[depth] = d + 1
        nx, ny = _step(kind, xs[depth], ys[depth], d)
        if occ[nx + reach, ny + reach]:
            continue
        codes[depth] = d
        nd = depth + 1
        xs[nd] = nx
        ys[nd] = ny
        if nd == n:
            out[row, :] = codes
            row += 1
            continue
        occ[nx + reach, ny + reach] = 1
        it[nd] = 0
        depth = nd
    return row


@njit(cache=True, nogil=True)
def _pivot_chain(wx, wy, mats, attempts, key):
    """Run ``attempts`` pivot proposals in place; returns the number accepted."""
    n = wx.shape[0] - 1
    reach = 2 * n + 4
    side = 2 * reach + 1
    stamp = np.zeros((side, side), dtype=np.int32)
    tx = np.empty(n + 1, dtype=np.int64)
    ty = np.empty(n + 1, dtype=np.int64)
    n_mats = mats.shape[0]
    accepted = 0
    for t in range(attempts):
        k = int(hash_uniform(key, t, 0, TAG_PIVOT, 0) * n)
        g = 1 + int(hash_uniform(key, t, 1, TAG_PIVOT, 0) * (n_mats - 1))
        s = t + 1
        for j in range(k + 1):
            stamp[wx[j] + reach, wy[j] + reach] = s
        cx = wx[k]
        cy = wy[k]
        ok = True
        for j in range(k + 1, n + 1):
            dx = wx[j] - cx
            dy = wy[j] - cy
            X = cx + mats[g, 0, 0] * dx + mats[g, 0, 1] * dy
            Y = cy + mats[g, 1, 0] * dx + mats[g, 1, 1] * dy
            if stamp[X + reach, Y + reach] == s:
                ok = False
                break
            tx[j] = X
            ty[j] = Y
        if ok:
            for j in range(k + 1, n + 1):
                wx[j] = tx[j]
                wy[j] = ty[j]
            accepted += 1
    return accepted


# --- counting -------------------------------------------------------------------

def _prefixes(kind: str, depth: int):
    """Reduced prefixes of exactly ``depth`` steps plus weighted counts of shorter walks.

    Returns ``(prefixes, partial)`` where ``partial[k]`` is the number of
    reduced walks of length ``k < depth`` as the kernel would count them.
    """
    if kind == SQUARE:
        start = [(0, 0), (1, 0)]
        rule = True
    else:
        start = [(0, 0), (1, 0), (2, 0)]
        rule = False
    code = _KIND_CODE[kind]
    partial = [0] * depth
    out = []

    def turned(walk):
        return any(walk[i][1] != walk[i - 1][1] for i in range(1, len(walk)))

    def rec(walk):
        m = len(walk) - 1
        if m == depth:
            out.append(walk)
            return
        if (not rule) or turned(walk):
            partial[m] += 1
        occupied = set(walk)
        x, y = walk[-1]
        for d in range(4 if code == 0 else 3):
            if rule and not turned(walk) and d not in (0, 1):
                continue
            nxt = _step(code, x, y, d)
            if nxt not in occupied:
                rec(walk + [nxt])

    if len(start) - 1 > depth:
        return [], partial
    rec(start)
    return out, partial


@lru_cache(maxsize=None)
def _reduced_counts(kind: str, nmax: int, workers: int = 1) -> tuple[int, ...]:
    code = _KIND_CODE[kind]
    rule = kind == SQUARE
    base = 1 if kind == SQUARE else 2
    depth = min(nmax, _PREFIX_DEPTH)
    if nmax < base:
        return tuple([0] * (nmax + 1))
    prefixes, partial = _prefixes(kind, depth)
    dummy = np.zeros((1, 1), dtype=np.bool_)

    def work(walk):
        px = np.array([w[0] for w in walk], dtype=np.int64)
        py = np.array([w[1] for w in walk], dtype=np.int64)
        counts = np.zeros(nmax + 1, dtype=np.int64)
        _extend_count(code, px, py, rule, nmax, False, dummy, dummy, 0, counts)
        return counts

    total = [0] * (nmax + 1)
    for k, c in enumerate(partial):
        total[k] += c
    for counts in run_many(work, prefixes, workers):
        for k in range(nmax + 1):
            total[k] += int(counts[k])
    return tuple(total)


def saw_counts(kind: str, nmax: int, workers: int = 1, reduced: bool = True) -> list[int]:
    """Exact ``[sigma_0, ..., sigma_nmax]`` from the origin."""
    if kind not in KINDS:
        raise ValueError(f"unknown lattice kind {kind!r}")
    if nmax < 0:
        raise ValueError("n must be >= 0")
    if nmax > MAX_STEPS[kind]:
        raise ResourceLimitError(f"n={nmax} exceeds the {kind} ceiling {MAX_STEPS[kind]}")
    if not reduced:
        counts = np.zeros(nmax + 1, dtype=np.int64)
        dummy = np.zeros((1, 1), dtype=np.bool_)
        origin = np.zeros(1, dtype=np.int64)
        _extend_count(_KIND_CODE[kind], origin, origin, False, nmax, False, dummy, dummy, 0, counts)
        return [int(c) for c in counts]
    red = _reduced_counts(kind, nmax, workers)
    if kind == SQUARE:
        return [1] + [4 * (1 + 2 * red[k]) for k in range(1, nmax + 1)]
    out = [1]
    if nmax >= 1:
        out.append(3)
    out += [6 * red[k] for k in range(2, nmax + 1)]
    return out


def count_saws(kind: str, n: int, workers: int = 1) -> SawCount:
    return SawCount(kind, Site(0, 0), n, saw_counts(kind, n, workers)[n])


def count_saws_on_cluster(config: BondConfig, v, n: int) -> SawCount:
    """Exact number of n-step SAWs from ``v`` using open edges of ``config``."""
    v = Site(*v)
    if n < 0:
        raise ValueError("n must be >= 0")
    if config.L - sup_norm(v) < n:
        raise ValueError(f"n={n} exceeds the margin {config.L - sup_norm(v)} between {v} and the box boundary")
    h_open, v_open = config.materialize()
    counts = np.zeros(n + 1, dtype=np.int64)
    px = np.array([v.x], dtype=np.int64)
    py = np.array([v.y], dtype=np.int64)
    _extend_count(_KIND_CODE[config.kind], px, py, False, n, True, h_open, v_open, config.L, counts)
    return SawCount(config.kind, v, n, int(counts[n]))


def cluster_saw_counts(config: BondConfig, v, nmax: int) -> list[int]:
    """All counts ``sigma_0..sigma_nmax`` from ``v`` on the open subgraph."""
    v = Site(*v)
    if config.L - sup_norm(v) < nmax:
        raise ValueError(f"nmax={nmax} exceeds the margin around {v}")
    h_open, v_open = config.materialize()
    counts = np.zeros(nmax + 1, dtype=np.int64)
    px = np.array([v.x], dtype=np.int64)
    py = np.array([v.y], dtype=np.int64)
    _extend_count(_KIND_CODE[config.kind], px, py, False, nmax, True, h_open, v_open, config.L, counts)
    return [int(c) for c in counts]


# --- growth-rate estimates -----------------------------------------------------------

KAPPA_HEX = math.sqrt(1.0 + math.sqrt(2.0))


def one_plus_sqrt2_power(n: int) -> tuple[int, int]:
    """``(a, b)`` with ``(1 + sqrt 2)**n == a + b*sqrt 2``."""
    a, b = 1, 0
    for _ in range(n):
        a, b = a + 2 * b, a + b
    return a, b


def exceeds_hex_kappa(sigma: int, n: int) -> bool:
    """Exact test of ``sigma**2 >= (1 + sqrt 2)**n``, i.e. ``sigma >= kappa_hex**n``."""
    a, b = one_plus_sqrt2_power(n)
    d = sigma * sigma - a
    return d >= 0 and d * d >= 2 * b * b


def root_exceeds(s_n: int, n: int, s_m: int, m: int) -> bool:
    """Exact ``s_n**(1/n) > s_m**(1/m)``."""
    return s_n**m > s_m**n


@dataclass(frozen=True)
class ConnectiveEstimate:
    kind: str
    ns: tuple[int, ...]
    roots: tuple[float, ...]
    fekete_ok: bool | None
    kappa_used: float | None
    amplitude: float | None
    gamma: float | None
    residuals: tuple[float, ...]


def connective_estimates(counts: list[SawCount], kappa: float | None = None) -> ConnectiveEstimate:
    """Per-n roots ``sigma_n**(1/n)`` and a least-squares fit of ``A n**(gamma-1) kappa**n``.

    For the hexagonal lattice the exact value ``kappa = sqrt(1 + sqrt 2)`` is
    used and every count is checked against ``sigma_n >= kappa**n`` in integer
    arithmetic.  Otherwise ``kappa`` is fitted unless supplied.
    """
    if not counts:
        raise ValueError("no counts")
    ns = [c.n for c in counts]
    if ns != list(range(1, len(ns) + 1)):
        raise ValueError(f"counts must be consecutive from n=1, got {ns}")
    kind = counts[0].kind
    sig = [c.sigma_n for c in counts]
    roots = tuple(s ** (1.0 / n) for s, n in zip(sig, ns))
    fekete = None
    if kind == HEX:
        fekete = all(exceeds_hex_kappa(s, n) for s, n in zip(sig, ns))
        kappa = KAPPA_HEX if kappa is None else kappa
    amp = gamma = None
    residuals: tuple[float, ...] = ()
    use = [(n, s) for n, s in zip(ns, sig) if n >= 2]
    if len(use) >= 3:
        n_arr = np.array([u[0] for u in use], dtype=float)
        logs = np.log(np.array([float(u[1]) for u in use]))
        if kappa is not None:
            A = np.column_stack([np.ones_like(n_arr), np.log(n_arr)])
            y = logs - n_arr * math.log(kappa)
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        else:
            A = np.column_stack([np.ones_like(n_arr), np.log(n_arr), n_arr])
            y = logs
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            kappa = float(math.exp(coef[2]))
        amp = float(math.exp(coef[0]))
        gamma = float(coef[1] + 1.0)
        residuals = tuple(float(r) for r in y - A @ coef)
    return ConnectiveEstimate(kind, tuple(ns), roots, fekete, kappa, amp, gamma, residuals)


# --- walks and sampling ----------------------------------------------------------

_SQ_MATS = np.array([
    [[1, 0], [0, 1]], [[0, -1], [1, 0]], [[-1, 0], [0, -1]], [[0, 1], [-1, 0]],
    [[1, 0], [0, -1]], [[-1, 0], [0, 1]], [[0, 1], [1, 0]], [[0, -1], [-1, 0]],
], dtype=np.int64)

# Point symmetries of the honeycomb about one of its vertices, acting on
# triangular-lattice coordinates (a, b) ~ a + b*exp(i*pi/3): identity, two
# rotations by 120 degrees, three reflections.
_HEX_MATS = np.array([
    [[1, 0], [0, 1]], [[-1, -1], [1, 0]], [[0, 1], [-1, -1]],
    [[1, 1], [0, -1]], [[0, -1], [-1, 0]], [[-1, 0], [1, 1]],
], dtype=np.int64)


def brick_to_tri(x, y):
    """Brick-wall site -> triangular coordinates of the same honeycomb vertex."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    odd = (x + y) % 2 != 0
    xe = x - odd
    s = (xe - y) // 2
    return 1 + s - y + odd, s + 2 * y


def tri_to_brick(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    odd = (a - b) % 3 == 2
    a1 = a - odd
    y = (b - a1 + 1) // 3
    s = b - 2 * y
    return 2 * s + y + odd, y


@dataclass(frozen=True)
class Walk:
    kind: str
    sites: tuple[Site, ...]

    @property
    def n(self) -> int:
        return len(self.sites) - 1

    def is_valid(self) -> bool:
        from .lattice import neighbours
        if len(set(self.sites)) != len(self.sites):
            return False
        return all(b in neighbours(self.kind, a) for a, b in zip(self.sites, self.sites[1:]))

    def embedded(self) -> np.ndarray:
        """Euclidean coordinates with unit edge length."""
        xy = np.array(self.sites, dtype=np.int64).reshape(-1, 2)
        if self.kind == SQUARE:
            return xy.astype(float)
        a, b = brick_to_tri(xy[:, 0], xy[:, 1])
        a = a - 1  # put the starting vertex at the origin
        return np.column_stack([a + 0.5 * b, b * (math.sqrt(3.0) / 2.0)])


@lru_cache(maxsize=8)
def _walk_table(kind: str, n: int) -> np.ndarray:
    total = saw_counts(kind, n)[n]
    if total > EXACT_SAMPLING_CEILING:
        raise ResourceLimitError(f"sigma_{n}={total} exceeds the exact-sampling ceiling")
    out = np.zeros((total, n), dtype=np.uint8)
    rows = _enumerate_codes(_KIND_CODE[kind], n, out)
    assert rows == total
    return out


def _decode(kind: str, codes) -> Walk:
    x = y = 0
    sites = [Site(0, 0)]
    code = _KIND_CODE[kind]
    for d in codes:
        x, y = _step(code, x, y, int(d))
        sites.append(Site(int(x), int(y)))
    return Walk(kind, tuple(sites))


def pivot_walk(kind: str, n: int, stream: RngStream, burn_in: int | None = None) -> Walk:
    """Pivot-algorithm sample started from a straight rod."""
    attempts = 10 * n if burn_in is None else burn_in
    wx = np.arange(n + 1, dtype=np.int64)
    wy = np.zeros(n + 1, dtype=np.int64)
    if kind == SQUARE:
        _pivot_chain(wx, wy, _SQ_MATS, attempts, np.uint64(stream.key))
        return Walk(kind, tuple(Site(int(a), int(b)) for a, b in zip(wx, wy)))
    a, b = brick_to_tri(wx, wy)
    a = a.copy()
    b = b.copy()
    _pivot_chain(a, b, _HEX_MATS, attempts, np.uint64(stream.key))
    x, y = tri_to_brick(a, b)
    return Walk(kind, tuple(Site(int(p), int(q)) for p, q in zip(x, y)))


def sample_uniform_saw(kind: str, n: int, stream: RngStream, method: str = "auto",
                       burn_in: int | None = None) -> Walk:
    """Uniform n-step SAW: exact lookup when enumerable, else the pivot chain."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if method == "auto":
        exact_ok = n <= MAX_STEPS[kind] and saw_counts(kind, n)[n] <= EXACT_SAMPLING_CEILING
        method = "exact" if exact_ok else "pivot"
    if method == "exact":
        table = _walk_table(kind, n)
        idx = int(stream.generator.integers(table.shape[0]))
        return _decode(kind, table[idx])
    if method == "pivot":
        return pivot_walk(kind, n, stream, burn_in)
    raise ValueError(f"unknown method {method!r}")


def sample_walks(kind: str, n: int, trials: int, stream: RngStream, method: str = "auto",
                 burn_in: int | None = None, workers: int = 1) -> list[Walk]:
    return run_many(lambda i: sample_uniform_saw(kind, n, stream.child(i), method, burn_in),
                    range(trials), workers)


def export_rescaled_walks(samples: list[Walk], path=None, exponent: float = 0.75) -> list[tuple]:
    """Rescale each walk by ``n**-exponent`` and write ``walk,n,step,x,y`` rows as CSV."""
    if not samples:
        raise ValueError("no samples to export")
    rows = []
    for i, w in enumerate(samples):
        scale = float(w.n) ** -exponent
        for j, (x, y) in enumerate(w.embedded() * scale):
            rows.append((i, w.n, j, float(x), float(y)))
    if path is not None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["walk", "n", "step", "x", "y"])
        writer.writerows((a, b, c, repr(x), repr(y)) for a, b, c, x, y in rows)
        Path(path).write_text(buf.getvalue())
    return rows


def mean_square_endpoint(samples: list[Walk]) -> float:
    ends = np.array([w.embedded()[-1] for w in samples])
    return float(np.mean(np.sum(ends**2, axis=1)))
