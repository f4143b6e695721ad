"""Poisson needle mirrors in the plane.

Needle centres form a rate-1 Poisson process; each unit cell ``[i, i+1) x
[j, j+1)`` holds a Poisson(1) number of centres whose positions and angles
are pure functions of ``(seed, cell)``.  A field keeps the centres inside a
disc (the window) and indexes the segments by the unit cells they overlap, so
a ray can find its next mirror by marching the cells it passes through.

Hits closer than ``TAU`` to a needle end or to another needle along the ray
are reported as degenerate instead of being resolved by a convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .randstat import (TAG_CELL, EstimateCI, RngStream, estimate_proportion, hash2, hash_uniform,
                       run_chunked)

TAU = 1e-12

ESCAPED, EXHAUSTED, DEGENERATE = 0, 1, 2
_OUTCOME_NAMES = {ESCAPED: "escaped", EXHAUSTED: "exhausted", DEGENERATE: "degenerate"}

# cumulative Poisson(1) weights, enough terms that the tail is below 2^-53
_POISSON1_CDF = np.cumsum([math.exp(-1.0) / math.factorial(k) for k in range(20)])


# --- angle laws ----------------------------------------------------------------

@dataclass(frozen=True)
class AngleLaw:
    """Law of needle angles on [0, pi).

    ``kind`` is ``"uniform"`` or an atomic law (``"degenerate"``,
    ``"rational"``, ``"table"``) with ``angles`` and ``weights``.
    """

    kind: str
    angles: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    label: str = ""

    def __post_init__(self):
        if self.kind == "uniform":
            return
        if self.kind not in ("degenerate", "rational", "table"):
            raise ValueError(f"unknown angle law {self.kind!r}")
        if not self.angles or len(self.angles) != len(self.weights):
            raise ValueError("atoms and weights must be non-empty and of equal length")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must be non-negative and sum to 1, got {self.weights}")
        if any(not 0.0 <= a < math.pi for a in self.angles):
            raise ValueError(f"angles must lie in [0, pi), got {self.angles}")

    @property
    def is_uniform(self) -> bool:
        return self.kind == "uniform"

    @property
    def nondegenerate(self) -> bool:
        """False for laws outside the non-degeneracy assumption (single atom)."""
        return self.is_uniform or sum(1 for w in self.weights if w > 0) > 1

    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(atom angles, cumulative weights); empty arrays mean uniform."""
        if self.is_uniform:
            return np.empty(0), np.empty(0)
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        return np.asarray(self.angles, dtype=np.float64), cdf

    def describe(self) -> str:
        return self.label or self.kind


def uniform_law() -> AngleLaw:
    return AngleLaw("uniform", label="uniform")


def degenerate_law(theta: float) -> AngleLaw:
    return AngleLaw("degenerate", (float(theta),), (1.0,), label=f"degenerate:{theta}")


def rational_law(atoms: Sequence[tuple[Fraction | str, float]]) -> AngleLaw:
    """Atoms given as rational multiples of pi, e.g. ``[("1/4", 0.5), ("1/2", 0.5)]``."""
    fracs = [Fraction(a) for a, _ in atoms]
    if any(not 0 <= f < 1 for f in fracs):
        raise ValueError("rational angles must be multiples r*pi with 0 <= r < 1")
    label = "atoms:" + ",".join(str(f) for f in fracs) + ":" + ",".join(str(w) for _, w in atoms)
    return AngleLaw("rational", tuple(float(f) * math.pi for f in fracs),
                    tuple(float(w) for _, w in atoms), label=label)


def table_law(angles: Sequence[float], weights: Sequence[float]) -> AngleLaw:
    return AngleLaw("table", tuple(map(float, angles)), tuple(map(float, weights)), label="table")


def parse_law(text: str) -> AngleLaw:
    """``uniform``, ``degenerate:<radians>`` or ``atoms:<r1,r2,...>:<w1,w2,...>``."""
    if text == "uniform":
        return uniform_law()
    if text.startswith("degenerate:"):
        return degenerate_law(float(text.split(":", 1)[1]))
    if text.startswith("atoms:"):
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"expected atoms:<angles>:<weights>, got {text!r}")
        angles = parts[1].split(",")
        weights = [float(w) for w in parts[2].split(",")]
        if len(angles) != len(weights):
            raise ValueError("angle and weight lists differ in length")
        return rational_law(list(zip(angles, weights)))
    raise ValueError(f"unknown angle law {text!r}")


# --- needles ---------------------------------------------------------------------

@dataclass(frozen=True)
class Needle:
    cx: float
    cy: float
    angle: float
    length: float

    @property
    def endpoints(self) -> tuple[tuple[float, float], tuple[float, float]]:
        h = 0.5 * self.length
        ux, uy = math.cos(self.angle), math.sin(self.angle)
        return (self.cx - h * ux, self.cy - h * uy), (self.cx + h * ux, self.cy + h * uy)


@njit(cache=True, nogil=True)
def _cell_points(key, i, j, atoms, cdf):
    """Centres and angles of the Poisson(1) points in unit cell (i, j)."""
    u = hash_uniform(key, i, j, -1, TAG_CELL)
    n = 0
    while n < _POISSON1_CDF.shape[0] and u >= _POISSON1_CDF[n]:
        n += 1
    out = np.empty((n, 3))
    for k in range(n):
        out[k, 0] = i + hash_uniform(key, i, j, 3 * k, TAG_CELL)
        out[k, 1] = j + hash_uniform(key, i, j, 3 * k + 1, TAG_CELL)
        v = hash_uniform(key, i, j, 3 * k + 2, TAG_CELL)
        if atoms.shape[0] == 0:
            out[k, 2] = v * np.pi
        else:
            m = 0
            while m < atoms.shape[0] - 1 and v >= cdf[m]:
                m += 1
            out[k, 2] = atoms[m]
    return out


@njit(cache=True, nogil=True)
def _points_in_cells(key, i0, i1, j0, j1, atoms, cdf):
    rows = []
    for i in range(i0, i1):
        for j in range(j0, j1):
            pts = _cell_points(key, i, j, atoms, cdf)
            for k in range(pts.shape[0]):
                rows.append((pts[k, 0], pts[k, 1], pts[k, 2]))
    out = np.empty((len(rows), 3))
    for r in range(len(rows)):
        out[r, 0], out[r, 1], out[r, 2] = rows[r]
    return out


@njit(cache=True, nogil=True)
def _segments(cx, cy, ang, eps):
    h = 0.5 * eps
    ux = np.cos(ang)
    uy = np.sin(ang)
    return cx - h * ux, cy - h * uy, cx + h * ux, cy + h * uy


@njit(cache=True, nogil=True)
def _point_segment_distance(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    ll = ex * ex + ey * ey
    s = 0.0 if ll == 0.0 else ((px - ax) * ex + (py - ay) * ey) / ll
    s = min(1.0, max(0.0, s))
    dx = ax + s * ex - px
    dy = ay + s * ey - py
    return math.sqrt(dx * dx + dy * dy)


@njit(cache=True, nogil=True)
def _cell_span(ax, ay, bx, by, g0, G):
    i0 = max(0, int(math.floor(min(ax, bx))) - g0)
    i1 = min(G - 1, int(math.floor(max(ax, bx))) - g0)
    j0 = max(0, int(math.floor(min(ay, by))) - g0)
    j1 = min(G - 1, int(math.floor(max(ay, by))) - g0)
    return i0, i1, j0, j1


@njit(cache=True, nogil=True)
def _build_index(ax, ay, bx, by, g0, G):
    """CSR map from unit cells of ``[g0, g0+G)^2`` to the segments whose bounding box meets them."""
    starts = np.zeros(G * G + 1, dtype=np.int64)
    for n in range(ax.shape[0]):
        i0, i1, j0, j1 = _cell_span(ax[n], ay[n], bx[n], by[n], g0, G)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                starts[i * G + j + 1] += 1
    for c in range(G * G):
        starts[c + 1] += starts[c]
    fill = starts[:-1].copy()
    idx = np.empty(starts[G * G], dtype=np.int64)
    for n in range(ax.shape[0]):
        i0, i1, j0, j1 = _cell_span(ax[n], ay[n], bx[n], by[n], g0, G)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                idx[fill[i * G + j]] = n
                fill[i * G + j] += 1
    return starts, idx


@dataclass(frozen=True)
class NeedleField:
    """Needles of length ``epsilon`` with centres in the disc of radius ``window``."""

    master_seed: int
    stream_id: int
    window: float
    epsilon: float
    law: AngleLaw
    resamples: int = 0
    centres: np.ndarray = field(default=None, repr=False, compare=False)
    _index: tuple = field(default=None, repr=False, compare=False)

    @property
    def count(self) -> int:
        return int(self.centres.shape[0])

    @property
    def angles(self) -> np.ndarray:
        return self.centres[:, 2]

    def needles(self) -> list[Needle]:
        return [Needle(float(x), float(y), float(a), self.epsilon) for x, y, a in self.centres]

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        c = self.centres
        return _segments(c[:, 0], c[:, 1], c[:, 2], self.epsilon)

    def kernel_args(self):
        ax, ay, bx, by = self.segments()
        starts, idx, g0, G = self._index
        return ax, ay, bx, by, starts, idx, g0, G


def _make_field(key: int, window: float, epsilon: float, law: AngleLaw) -> np.ndarray:
    atoms, cdf = law.kernel_arrays()
    r = int(math.ceil(window))
    pts = _points_in_cells(np.uint64(key), -r, r, -r, r, atoms, cdf)
    keep = pts[:, 0] ** 2 + pts[:, 1] ** 2 <= window * window
    return pts[keep]


def field_from_needles(needles: Sequence[Needle] | np.ndarray, epsilon: float | None = None,
                       window: float | None = None) -> NeedleField:
    """Field with explicit needles (hand-built geometry)."""
    if isinstance(needles, np.ndarray):
        centres = np.asarray(needles, dtype=np.float64).reshape(-1, 3)
    else:
        needles = list(needles)
        if epsilon is None and needles:
            epsilon = needles[0].length
        if any(n.length != epsilon for n in needles):
            raise ValueError("all needles in a field share one length")
        centres = np.array([(n.cx, n.cy, n.angle) for n in needles], dtype=np.float64).reshape(-1, 3)
    epsilon = 1.0 if epsilon is None else float(epsilon)
    if window is None:
        window = float(np.hypot(centres[:, 0], centres[:, 1]).max()) + epsilon if len(centres) else 1.0
    return _indexed(NeedleField(0, 0, float(window), epsilon, table_law([0.0], [1.0]), 0, centres))


def _indexed(f: NeedleField) -> NeedleField:
    ax, ay, bx, by = f.segments()
    g0 = -int(math.ceil(f.window + f.epsilon)) - 1
    G = -2 * g0
    starts, idx = _build_index(ax, ay, bx, by, g0, G)
    object.__setattr__(f, "_index", (starts, idx, g0, G))
    return f


def generate_field(stream: RngStream, window: float, epsilon: float, law: AngleLaw,
                   max_resamples: int = 1000) -> NeedleField:
    """Sample a field; configurations with the origin on a needle are resampled."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if window <= 0:
        raise ValueError("window radius must be positive")
    base = stream.key
    for attempt in range(max_resamples + 1):
        key = base if attempt == 0 else int(hash2(np.uint64(base), 0x0E1F, attempt))
        centres = _make_field(key, window, epsilon, law)
        ax, ay, bx, by = _segments(centres[:, 0], centres[:, 1], centres[:, 2], epsilon)
        if not any(_point_segment_distance(0.0, 0.0, ax[n], ay[n], bx[n], by[n]) <= TAU
                   for n in range(len(ax))):
            return _indexed(NeedleField(stream.master_seed, stream.stream_id, float(window),
                                        float(epsilon), law, attempt, centres))
    raise RuntimeError(f"origin covered by a needle in {max_resamples + 1} consecutive samples")


# --- ray casting -------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _ray_segment(px, py, dx, dy, ax, ay, bx, by):
    """Ray parameter t and segment parameter s of the crossing (nan if parallel)."""
    ex = bx - ax
    ey = by - ay
    den = dx * ey - dy * ex
    if den == 0.0:
        return np.nan, np.nan
    wx = ax - px
    wy = ay - py
    t = (wx * ey - wy * ex) / den
    s = (wx * dy - wy * dx) / den
    return t, s


@njit(cache=True, nogil=True)
def _first_hit(ax, ay, bx, by, starts, idx, g0, G, eps, px, py, dx, dy, max_range, exclude):
    """Nearest needle along the ray.

    Returns ``(status, needle, t)`` with status 0 none, 1 hit, 2 degenerate.
    Cells are visited in order of entry time; the march stops once the entry
    time exceeds the best hit by more than TAU, so near-ties are always seen.
    """
    best = -1
    best_t = np.inf
    second_t = np.inf
    degenerate = False
    slack = TAU / eps
    ci = int(math.floor(px)) - g0
    cj = int(math.floor(py)) - g0
    step_i = 1 if dx > 0 else -1
    step_j = 1 if dy > 0 else -1
    if dx != 0.0:
        next_x = (math.floor(px) + (1.0 if dx > 0 else 0.0) - px) / dx
        dtx = abs(1.0 / dx)
    else:
        next_x = np.inf
        dtx = np.inf
    if dy != 0.0:
        next_y = (math.floor(py) + (1.0 if dy > 0 else 0.0) - py) / dy
        dty = abs(1.0 / dy)
    else:
        next_y = np.inf
        dty = np.inf
    t_enter = 0.0
    while t_enter <= max_range and t_enter <= best_t + TAU:
        if ci < 0 or cj < 0 or ci >= G or cj >= G:
            break
        c = ci * G + cj
        for k in range(starts[c], starts[c + 1]):
            n = idx[k]
            if n == exclude or n == best:
                continue
            t, s = _ray_segment(px, py, dx, dy, ax[n], ay[n], bx[n], by[n])
            if not (t > 0.0) or s < -slack or s > 1.0 + slack:
                continue
            if t < best_t:
                second_t = best_t
                best_t = t
                best = n
                degenerate = s < slack or s > 1.0 - slack
            elif t < second_t:
                second_t = t
        if next_x < next_y:
            t_enter = next_x
            next_x += dtx
            ci += step_i
        else:
            t_enter = next_y
            next_y += dty
            cj += step_j
    if best < 0 or best_t > max_range:
        return 0, -1, np.inf
    if degenerate or second_t - best_t < TAU:
        return 2, best, best_t
    return 1, best, best_t


class DegenerateHit(Exception):
    """The nearest hit is within TAU of a needle end or of another needle."""

    def __init__(self, needle: int, point: tuple[float, float]):
        super().__init__(f"degenerate hit on needle {needle} at {point}")
        self.needle = needle
        self.point = point


@dataclass(frozen=True)
class Hit:
    needle: int
    point: tuple[float, float]
    distance: float


def first_hit(field: NeedleField, origin, direction, max_range: float = np.inf,
              exclude: int = -1) -> Hit | None:
    dx, dy = float(direction[0]), float(direction[1])
    if abs(math.hypot(dx, dy) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if field.count == 0:
        return None
    px, py = float(origin[0]), float(origin[1])
    status, n, t = _first_hit(*field.kernel_args(), field.epsilon, px, py, dx, dy,
                              float(max_range), exclude)
    if status == 0:
        return None
    point = (px + t * dx, py + t * dy)
    if status == 2:
        raise DegenerateHit(int(n), point)
    return Hit(int(n), point, float(t))


@njit(cache=True, nogil=True)
def _exit_time(px, py, dx, dy, R):
    """Time at which the ray leaves the disc of radius R (start inside)."""
    b = px * dx + py * dy
    c = px * px + py * py - R * R
    return -b + math.sqrt(max(0.0, b * b - c))


@njit(cache=True, nogil=True)
def _trace(ax, ay, bx, by, starts, idx, g0, G, eps, x0, y0, dx, dy, R, budget, exclude, xs, ys, ids):
    """Reflect until escape past radius R or ``budget`` reflections.

    Fills ``xs, ys`` with the polyline (start, reflection points, exit point)
    and ``ids`` with the needle of each reflection.  Returns
    ``(status, n_points, dx, dy)``.
    """
    xs[0] = x0
    ys[0] = y0
    k = 1
    px = x0
    py = y0
    for r in range(budget + 1):
        t_exit = _exit_time(px, py, dx, dy, R)
        status, n, t = _first_hit(ax, ay, bx, by, starts, idx, g0, G, eps, px, py, dx, dy, t_exit, exclude)
        if status == 0:
            xs[k] = px + t_exit * dx
            ys[k] = py + t_exit * dy
            return 0, k + 1, dx, dy
        px = px + t * dx
        py = py + t * dy
        xs[k] = px
        ys[k] = py
        ids[k] = n
        k += 1
        if status == 2:
            return 2, k, dx, dy
        if r == budget:
            # the budget is spent; record the hit but do not reflect
            return 1, k - 1, dx, dy
        ux = bx[n] - ax[n]
        uy = by[n] - ay[n]
        norm = math.sqrt(ux * ux + uy * uy)
        ux /= norm
        uy /= norm
        dot = dx * ux + dy * uy
        dx, dy = 2.0 * dot * ux - dx, 2.0 * dot * uy - dy
        norm = math.sqrt(dx * dx + dy * dy)
        dx /= norm
        dy /= norm
        exclude = n
    return 1, k, dx, dy


@dataclass(frozen=True)
class ContinuumTrace:
    """Polyline of a traced ray: start, reflection points, and (if escaped) the exit point."""

    alpha: float
    points: np.ndarray
    needles: tuple[int, ...]
    outcome: str
    radius: float
    budget: int
    final_direction: tuple[float, float]

    @property
    def escaped(self) -> bool:
        return self.outcome == "escaped"

    @property
    def reflections(self) -> int:
        return len(self.needles)

    @property
    def reflection_points(self) -> np.ndarray:
        k = self.reflections
        return self.points[1:1 + k]

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.hypot(*np.diff(self.points, axis=0).T)

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    def position(self, t: np.ndarray) -> np.ndarray:
        """Arc-length parameterised position; times beyond the polyline are clamped."""
        t = np.asarray(t, dtype=np.float64)
        cum = np.concatenate([[0.0], np.cumsum(self.segment_lengths)])
        return np.column_stack([np.interp(t, cum, self.points[:, 0]),
                                np.interp(t, cum, self.points[:, 1])])


def trace_from(field: NeedleField, origin, direction, R: float, max_reflections: int,
               exclude: int = -1, alpha: float = float("nan")) -> ContinuumTrace:
    dx, dy = float(direction[0]), float(direction[1])
    norm = math.hypot(dx, dy)
    if norm == 0:
        raise ValueError("zero direction")
    dx, dy = dx / norm, dy / norm
    xs = np.empty(max_reflections + 3)
    ys = np.empty(max_reflections + 3)
    ids = np.full(max_reflections + 3, -1, dtype=np.int64)
    status, k, fx, fy = _trace(*field.kernel_args(), field.epsilon, float(origin[0]), float(origin[1]),
                               dx, dy, float(R), int(max_reflections), int(exclude), xs, ys, ids)
    n_refl = k - 2 if status == ESCAPED else k - 1
    if status == DEGENERATE:
        n_refl = k - 2
    return ContinuumTrace(alpha, np.column_stack([xs[:k], ys[:k]]), tuple(int(v) for v in ids[1:1 + n_refl]),
                          _OUTCOME_NAMES[status], float(R), int(max_reflections), (float(fx), float(fy)))


def trace_continuum(field: NeedleField, alpha: float, R: float, max_reflections: int) -> ContinuumTrace:
    """Shine a ray from the origin at angle ``alpha``."""
    if R <= 0:
        raise ValueError("escape radius must be positive")
    return trace_from(field, (0.0, 0.0), (math.cos(alpha), math.sin(alpha)), R, max_reflections, alpha=alpha)


def reverse_trace(field: NeedleField, trace: ContinuumTrace) -> ContinuumTrace:
    """Send the ray back from the end of ``trace`` with the direction reversed."""
    fx, fy = trace.final_direction
    exclude = -1 if trace.escaped or not trace.needles else trace.needles[-1]
    if not trace.escaped and trace.needles:
        # the last point is a reflection point; reflect first so the reversed
        # ray leaves along the reversed incoming segment
        p, q = trace.points[-2], trace.points[-1]
        d = (q - p) / np.hypot(*(q - p))
        fx, fy = d
    far = float(np.hypot(*trace.points[-1])) + 1.0
    return trace_from(field, trace.points[-1], (-fx, -fy), max(trace.radius, far),
                      trace.reflections, exclude=exclude)


def specular_residuals(field: NeedleField, trace: ContinuumTrace) -> np.ndarray:
    """|angle in - angle out| against each needle's line, per reflection."""
    ax, ay, bx, by = field.segments()
    out = []
    pts = trace.points
    for r, n in enumerate(trace.needles):
        if r + 2 >= len(pts):
            break
        d_in = pts[r + 1] - pts[r]
        d_out = pts[r + 2] - pts[r + 1]
        d_in = d_in / np.hypot(*d_in)
        d_out = d_out / np.hypot(*d_out)
        u = np.array([bx[n] - ax[n], by[n] - ay[n]])
        u /= np.hypot(*u)
        # specular: tangential components equal, normal components opposite
        nrm = np.array([-u[1], u[0]])
        out.append(max(abs(d_in @ u - d_out @ u), abs(d_in @ nrm + d_out @ nrm)))
    return np.asarray(out)


# --- escape spectrum ------------------------------------------------------------------

@dataclass(frozen=True)
class EscapeSpectrum:
    alphas: np.ndarray
    outcomes: tuple[str, ...]
    reflections: np.ndarray
    lengths: np.ndarray
    radius: float
    budget: int

    @property
    def escaped(self) -> np.ndarray:
        return np.array([o == "escaped" for o in self.outcomes])

    @property
    def escape_fraction(self) -> float:
        return float(self.escaped.mean())

    def rows(self) -> list[dict]:
        return [{"alpha": float(a), "outcome": o, "reflections": int(r), "length": float(l)}
                for a, o, r, l in zip(self.alphas, self.outcomes, self.reflections, self.lengths)]


def escape_spectrum(field: NeedleField, alpha_grid, R: float, budget: int) -> EscapeSpectrum:
    alphas = np.asarray(alpha_grid, dtype=np.float64)
    if alphas.size == 0:
        raise ValueError("alpha grid is empty")
    traces = [trace_continuum(field, float(a), R, budget) for a in alphas]
    return EscapeSpectrum(alphas, tuple(t.outcome for t in traces),
                          np.array([t.reflections for t in traces]),
                          np.array([t.length for t in traces]), float(R), int(budget))


def harris_proxy(spectra: Sequence[EscapeSpectrum]) -> dict:
    """Escaping-angle fraction per field, over fields with at least one escape."""
    fractions = [s.escape_fraction for s in spectra if s.escaped.any()]
    return {"fields": len(spectra), "fields_with_escape": len(fractions),
            "fractions": fractions,
            "mean_fraction": float(np.mean(fractions)) if fractions else float("nan")}


# --- vacant crossing ------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _clip(ax, ay, bx, by, s):
    """Liang-Barsky clip of a segment to [0, s]^2; returns (ok, x0, y0, x1, y1)."""
    t0 = 0.0
    t1 = 1.0
    dx = bx - ax
    dy = by - ay
    for k in range(4):
        if k == 0:
            p, q = -dx, ax
        elif k == 1:
            p, q = dx, s - ax
        elif k == 2:
            p, q = -dy, ay
        else:
            p, q = dy, s - ay
        if p == 0.0:
            if q < 0.0:
                return False, 0.0, 0.0, 0.0, 0.0
        else:
            r = q / p
            if p < 0.0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
    if t0 > t1:
        return False, 0.0, 0.0, 0.0, 0.0
    return True, ax + t0 * dx, ay + t0 * dy, ax + t1 * dx, ay + t1 * dy


@njit(cache=True, nogil=True)
def _orient(ax, ay, bx, by, cx, cy):
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return 1 if v > 0 else (-1 if v < 0 else 0)


@njit(cache=True, nogil=True)
def _on_segment(ax, ay, bx, by, cx, cy):
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


@njit(cache=True, nogil=True)
def _segments_meet(a0, a1, a2, a3, b0, b1, b2, b3):
    o1 = _orient(a0, a1, a2, a3, b0, b1)
    o2 = _orient(a0, a1, a2, a3, b2, b3)
    o3 = _orient(b0, b1, b2, b3, a0, a1)
    o4 = _orient(b0, b1, b2, b3, a2, a3)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(a0, a1, a2, a3, b0, b1):
        return True
    if o2 == 0 and _on_segment(a0, a1, a2, a3, b2, b3):
        return True
    if o3 == 0 and _on_segment(b0, b1, b2, b3, a0, a1):
        return True
    if o4 == 0 and _on_segment(b0, b1, b2, b3, a2, a3):
        return True
    return False


@njit(cache=True, nogil=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True, nogil=True)
def _blocked(pts, eps, s):
    """True when clipped needles form a chain joining the bottom and top sides."""
    n = pts.shape[0]
    seg = np.empty((n, 4))
    m = 0
    for k in range(n):
        ax, ay, bx, by = _segments(pts[k, 0], pts[k, 1], pts[k, 2], eps)
        ok, x0, y0, x1, y1 = _clip(ax, ay, bx, by, s)
        if ok:
            seg[m, 0], seg[m, 1], seg[m, 2], seg[m, 3] = x0, y0, x1, y1
            m += 1
    # two virtual nodes: m = bottom side, m + 1 = top side
    parent = np.arange(m + 2)
    for a in range(m):
        if min(seg[a, 1], seg[a, 3]) <= 0.0:
            parent[_find(parent, a)] = _find(parent, m)
        if max(seg[a, 1], seg[a, 3]) >= s:
            parent[_find(parent, a)] = _find(parent, m + 1)
    # bucket by unit cell so only nearby pairs are tested
    G = int(math.ceil(s)) + 1
    counts = np.zeros(G * G + 1, dtype=np.int64)
    cell = np.empty(m, dtype=np.int64)
    for a in range(m):
        cx = 0.5 * (seg[a, 0] + seg[a, 2])
        cy = 0.5 * (seg[a, 1] + seg[a, 3])
        cell[a] = min(G - 1, int(cx)) * G + min(G - 1, int(cy))
        counts[cell[a] + 1] += 1
    for c in range(G * G):
        counts[c + 1] += counts[c]
    order = np.argsort(cell)
    reach = int(math.ceil(eps)) + 1
    for a in range(m):
        ia = cell[a] // G
        ja = cell[a] % G
        for i in range(max(0, ia - reach), min(G, ia + reach + 1)):
            for j in range(max(0, ja - reach), min(G, ja + reach + 1)):
                c = i * G + j
                for k in range(counts[c], counts[c + 1]):
                    b = order[k]
                    if b <= a:
                        continue
                    if _segments_meet(seg[a, 0], seg[a, 1], seg[a, 2], seg[a, 3],
                                      seg[b, 0], seg[b, 1], seg[b, 2], seg[b, 3]):
                        ra = _find(parent, a)
                        rb = _find(parent, b)
                        if ra != rb:
                            parent[ra] = rb
    return _find(parent, m) == _find(parent, m + 1)


@njit(cache=True, nogil=True)
def _crossing_batch(keys, eps_grid, s, atoms, cdf):
    margin = int(math.ceil(eps_grid.max() / 2.0)) + 1
    hi = int(math.ceil(s)) + margin
    out = np.empty((keys.shape[0], eps_grid.shape[0]), dtype=np.bool_)
    for t in range(keys.shape[0]):
        pts = _points_in_cells(keys[t], -margin, hi, -margin, hi, atoms, cdf)
        for e in range(eps_grid.shape[0]):
            out[t, e] = not _blocked(pts, eps_grid[e], s)
    return out


def crossing_indicators(eps_grid, law: AngleLaw, side: float, trials: int, stream: RngStream,
                        workers: int = 1) -> np.ndarray:
    """Left-right vacant crossing indicators, shape ``(trials, len(eps_grid))``.

    All lengths share the same centres and angles (trial i uses
    ``stream.child(i)``); cell contents do not depend on the grid, so a column
    does not change when other lengths are added.
    """
    eps = np.atleast_1d(np.asarray(eps_grid, dtype=np.float64))
    if side <= 0:
        raise ValueError("box side must be positive")
    if np.any(eps <= 0):
        raise ValueError("epsilon must be positive")
    atoms, cdf = law.kernel_arrays()
    return run_chunked(lambda a, b: _crossing_batch(stream.child_keys(a, b), eps, float(side), atoms, cdf),
                       trials, workers).reshape(trials, eps.size).astype(bool)


def vacant_crossing_probability(epsilon: float, law: AngleLaw, side: float, trials: int,
                                stream: RngStream, workers: int = 1) -> EstimateCI:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    hits = crossing_indicators([epsilon], law, side, trials, stream, workers)[:, 0]
    return estimate_proportion(int(hits.sum()), trials)


# --- diffusivity -------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusivityFit:
    times: np.ndarray
    variance: np.ndarray
    used: np.ndarray
    sigma2: float
    intercept: float
    r2: float
    exponent: float

    @property
    def ballistic(self) -> bool:
        """Variance growing close to t^2 is not diffusive."""
        return self.exponent > 1.5

    def rows(self) -> list[dict]:
        return [{"t": float(t), "var": float(v), "var_over_t": float(v / t) if t > 0 else float("nan"),
                 "traces": int(n)} for t, v, n in zip(self.times, self.variance, self.used)]


def estimate_diffusivity(traces: Sequence[ContinuumTrace], t_grid) -> DiffusivityFit:
    """Total variance of X(t) over escaping traces, with a linear fit var = a + sigma2 t.

    At each time only traces at least that long contribute.
    """
    esc = [t for t in traces if t.escaped]
    if not esc:
        raise ValueError("no escaping traces")
    times = np.asarray(t_grid, dtype=np.float64)
    lengths = np.array([t.length for t in esc])
    var = np.full(times.shape, np.nan)
    used = np.zeros(times.shape, dtype=np.int64)
    for k, t in enumerate(times):
        live = [tr for tr, l in zip(esc, lengths) if l >= t]
        used[k] = len(live)
        if len(live) >= 2:
            pos = np.array([tr.position(t)[0] for tr in live])
            var[k] = float(pos.var(axis=0, ddof=1).sum())
    ok = np.isfinite(var) & (times > 0)
    if ok.sum() < 2:
        raise ValueError("too few usable grid times")
    slope, icpt = np.polyfit(times[ok], var[ok], 1)
    pred = icpt + slope * times[ok]
    ss_res = float(((var[ok] - pred) ** 2).sum())
    ss_tot = float(((var[ok] - var[ok].mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    pos_ok = ok & (var > 0)
    expo = float(np.polyfit(np.log(times[pos_ok]), np.log(var[pos_ok]), 1)[0]) if pos_ok.sum() >= 2 else float("nan")
    return DiffusivityFit(times, var, used, float(slope), float(icpt), r2, expo)


def export_traces(traces: Sequence[ContinuumTrace], path=None) -> str:
    """CSV with columns trace, alpha, outcome, vertex, x, y."""
    lines = ["trace,alpha,outcome,vertex,x,y"]
    for i, tr in enumerate(traces):
        for k, (x, y) in enumerate(tr.points):
            lines.append(f"{i},{tr.alpha!r},{tr.outcome},{k},{x!r},{y!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
