"""Mirror models on Z^2: Ehrenfest wind/tree mirrors and Manhattan pinball.

Conventions
-----------
* Headings are N, E, S, W.  A NE mirror lies along the NE-SW diagonal and
  swaps N<->E, S<->W; a NW mirror lies along the NW-SE diagonal and swaps
  N<->W, S<->E.
* The ray lives on vertices.  State ``(site, heading)`` means the ray is
  leaving ``site`` along ``heading``; the mirror at a vertex acts when the ray
  enters it.  The mirror at the starting vertex is therefore not applied to
  the initial heading.
* Manhattan streets: even rows run east, odd rows west; even columns run
  north, odd columns south.  A mirror sits on the class-0 diagonal through a
  site (see :mod:`problab.lattice`), which makes every reflection follow the
  street orientations.  ``swap=True`` rotates the street pattern by 180
  degrees; the class-0 diagonals stay consistent with the rotated streets,
  so only the admissible starting headings change.

Escape is leaving the sup-norm L-box.  The dynamics are reversible, so a ray
that never escapes returns to its initial state: ``Looped`` always has loop
start 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .lattice import NE, NW, Heading, Site, sup_norm
from .randstat import TAG_MIRROR, EstimateCI, RngStream, estimate_proportion, hash_uniform, run_chunked, stream_key

EMPTY, MNE, MNW = 0, 1, 2
_STATE_NAMES = {EMPTY: None, MNE: NE, MNW: NW}
_STATE_CODES = {None: EMPTY, NE: MNE, NW: MNW}

# reflect tables indexed by heading N=0, E=1, S=2, W=3
_REFLECT = np.array([[0, 1, 2, 3], [1, 0, 3, 2], [3, 2, 1, 0]], dtype=np.int64)
_DX = np.array([0, 1, 0, -1], dtype=np.int64)
_DY = np.array([1, 0, -1, 0], dtype=np.int64)

EHRENFEST = 0
MANHATTAN = 1
EXPLICIT = 2


def reflect(mirror: str, heading: Heading) -> Heading:
    return Heading(int(_REFLECT[_STATE_CODES[mirror], int(heading)]))


@dataclass(frozen=True)
class Escaped:
    steps: int


@dataclass(frozen=True)
class Looped:
    period: int
    loop_start: int = 0


@dataclass(frozen=True)
class Exhausted:
    steps: int


TraceOutcome = Escaped | Looped | Exhausted


@dataclass(frozen=True)
class RayState:
    site: Site
    heading: Heading


# --- fields ---------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _mirror_at(mode, key, p, swap, grid, gL, x, y):
    if mode == EXPLICIT:
        if abs(x) > gL or abs(y) > gL:
            return EMPTY
        return grid[x + gL, y + gL]
    u = hash_uniform(key, x, y, TAG_MIRROR, 0)
    if mode == EHRENFEST:
        if u < 0.5 * p:
            return MNW if swap else MNE
        if u < p:
            return MNE if swap else MNW
        return EMPTY
    if u < p:
        if (x + y) % 2 == 0:
            return MNE
        return MNW
    return EMPTY


@dataclass(frozen=True)
class MirrorField:
    """Lazy random mirror configuration.

    ``p`` is the mirror density (Ehrenfest) or diagonal-edge density q
    (Manhattan).  Site states are pure functions of the stream address and
    the site.  ``explicit`` pins the configuration to a dict ``site -> 'NE'|'NW'``.
    """

    p: float
    master_seed: int = 0
    stream_id: int = 0
    model: int = EHRENFEST
    swap: bool = False
    explicit: dict | None = None
    _memo: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def key(self) -> int:
        return stream_key(self.master_seed, self.stream_id)

    @classmethod
    def from_mirrors(cls, mirrors: dict, model: int = EHRENFEST) -> "MirrorField":
        return cls(float("nan"), model=model, explicit={Site(*k): v for k, v in mirrors.items()})

    def state(self, site) -> str | None:
        site = Site(*site)
        if site not in self._memo:
            if self.explicit is not None:
                self._memo[site] = self.explicit.get(site)
            else:
                code = _mirror_at(self.model, np.uint64(self.key), self.p, self.swap,
                                  _NO_GRID, 0, site.x, site.y)
                self._memo[site] = _STATE_NAMES[int(code)]
        return self._memo[site]

    def materialize(self, L: int) -> np.ndarray:
        """Eager int8 grid of states (0 empty, 1 NE, 2 NW) indexed ``[x+L, y+L]``."""
        if self.explicit is not None:
            grid = np.zeros((2 * L + 1, 2 * L + 1), dtype=np.int8)
            for (x, y), o in self.explicit.items():
                if max(abs(x), abs(y)) <= L:
                    grid[x + L, y + L] = _STATE_CODES[o]
            return grid
        return _materialize(self.model, np.uint64(self.key), self.p, self.swap, L)

    def _kernel_args(self, L: int):
        if self.explicit is not None:
            return EXPLICIT, np.uint64(0), 0.0, False, self.materialize(L), L
        return self.model, np.uint64(self.key), float(self.p), bool(self.swap), _NO_GRID, 0


_NO_GRID = np.zeros((1, 1), dtype=np.int8)


@njit(cache=True, nogil=True)
def _materialize(mode, key, p, swap, L):
    grid = np.zeros((2 * L + 1, 2 * L + 1), dtype=np.int8)
    for x in range(-L, L + 1):
        for y in range(-L, L + 1):
            grid[x + L, y + L] = _mirror_at(mode, key, p, swap, _NO_GRID, 0, x, y)
    return grid


def ehrenfest_field(p: float, stream: RngStream, swap: bool = False) -> MirrorField:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0,1]")
    return MirrorField(float(p), stream.master_seed, stream.stream_id, EHRENFEST, swap)


def manhattan_field(q: float, stream: RngStream) -> MirrorField:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q={q} outside [0,1]")
    return MirrorField(float(q), stream.master_seed, stream.stream_id, MANHATTAN)


# --- tracing ---------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _trace(mode, key, p, swap, grid, gL, x0, y0, h0, L, max_steps):
    """Returns (status, steps): status 0 escaped, 1 looped, 2 exhausted."""
    x = x0
    y = y0
    h = h0
    for t in range(1, max_steps + 1):
        x += _DX[h]
        y += _DY[h]
        if abs(x) > L or abs(y) > L:
            return 0, t
        m = _mirror_at(mode, key, p, swap, grid, gL, x, y)
        h = _REFLECT[m, h]
        if x == x0 and y == y0 and h == h0:
            return 1, t
    return 2, max_steps


@njit(cache=True, nogil=True)
def _trace_path(mode, key, p, swap, grid, gL, x0, y0, h0, L, max_steps):
    xs = np.empty(max_steps + 1, dtype=np.int64)
    ys = np.empty(max_steps + 1, dtype=np.int64)
    hs = np.empty(max_steps + 1, dtype=np.int64)
    xs[0] = x0
    ys[0] = y0
    hs[0] = h0
    status, steps = _trace(mode, key, p, swap, grid, gL, x0, y0, h0, L, max_steps)
    x = x0
    y = y0
    h = h0
    for t in range(1, steps + 1):
        x += _DX[h]
        y += _DY[h]
        xs[t] = x
        ys[t] = y
        if abs(x) > L or abs(y) > L:
            hs[t] = h
            continue
        h = _REFLECT[_mirror_at(mode, key, p, swap, grid, gL, x, y), h]
        hs[t] = h
    return status, xs[: steps + 1], ys[: steps + 1], hs[: steps + 1]


def state_bound(L: int) -> int:
    """Number of (site, heading) states in the L-box."""
    return 4 * (2 * L + 1) ** 2


def _outcome(status: int, steps: int) -> TraceOutcome:
    if status == 0:
        return Escaped(int(steps))
    if status == 1:
        return Looped(int(steps), 0)
    return Exhausted(int(steps))


def trace_ray(field: MirrorField, start: RayState | None = None, L: int = 50,
              max_steps: int | None = None) -> TraceOutcome:
    start = start or RayState(Site(0, 0), Heading.N)
    if sup_norm(start.site) > L:
        raise ValueError(f"start {start.site} outside the L={L} box")
    max_steps = state_bound(L) if max_steps is None else max_steps
    status, steps = _trace(*field._kernel_args(L), start.site.x, start.site.y,
                           int(start.heading), L, max_steps)
    return _outcome(status, steps)


def trace_path(field: MirrorField, start: RayState | None = None, L: int = 50,
               max_steps: int | None = None) -> tuple[TraceOutcome, list[RayState]]:
    """Outcome plus the visited states (site, outgoing heading)."""
    start = start or RayState(Site(0, 0), Heading.N)
    max_steps = state_bound(L) if max_steps is None else max_steps
    status, xs, ys, hs = _trace_path(*field._kernel_args(L), start.site.x, start.site.y,
                                     int(start.heading), L, max_steps)
    path = [RayState(Site(int(a), int(b)), Heading(int(c))) for a, b, c in zip(xs, ys, hs)]
    return _outcome(status, len(xs) - 1), path


def dump_path(path: list[RayState]) -> str:
    return "\n".join(f"{s.site.x} {s.site.y} {s.heading.name}" for s in path) + "\n"


@njit(cache=True, nogil=True)
def _escape_batch(mode, keys, p, swap, x0, y0, h0, L, max_steps):
    out = np.empty(keys.shape[0], dtype=np.int8)
    for i in range(keys.shape[0]):
        status, _ = _trace(mode, keys[i], p, swap, _NO_GRID, 0, x0, y0, h0, L, max_steps)
        out[i] = status
    return out


def escape_indicators(model: int, p: float, L: int, trials: int, stream: RngStream,
                      start: RayState | None = None, swap: bool = False,
                      workers: int = 1) -> np.ndarray:
    """Per-trial escape indicators; trial i uses ``stream.child(i)``."""
    start = start or RayState(Site(0, 0), Heading.N)
    max_steps = state_bound(L)

    def chunk(a, b):
        status = _escape_batch(model, stream.child_keys(a, b), float(p), swap,
                               start.site.x, start.site.y, int(start.heading), L, max_steps)
        if np.any(status == 2):
            raise RuntimeError("trace exhausted its step budget; the state bound was violated")
        return status == 0

    return run_chunked(chunk, trials, workers).astype(bool)


def estimate_theta_ehrenfest(p: float, L: int, trials: int, stream: RngStream,
                             swap: bool = False, workers: int = 1) -> EstimateCI:
    """Fraction of fields whose northward ray from the origin leaves the L-box."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0,1]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    esc = escape_indicators(EHRENFEST, p, L, trials, stream, swap=swap, workers=workers)
    return estimate_proportion(int(esc.sum()), trials)


def manhattan_admissible(site, heading: Heading, swap: bool = False) -> bool:
    x, y = site
    if heading in (Heading.E, Heading.W):
        eastbound = (y % 2 == 0) != swap
        return (heading == Heading.E) == eastbound
    northbound = (x % 2 == 0) != swap
    return (heading == Heading.N) == northbound


def trace_manhattan(field: MirrorField, start: RayState | None = None, L: int = 50,
                    max_steps: int | None = None) -> TraceOutcome:
    start = start or RayState(Site(0, 0), Heading.N)
    if field.model != MANHATTAN and field.explicit is None:
        raise ValueError("trace_manhattan needs a Manhattan field")
    if not manhattan_admissible(start.site, start.heading, field.swap):
        raise ValueError(f"heading {start.heading.name} at {start.site} disagrees with the street orientation")
    return trace_ray(field, start, L, max_steps)


def estimate_theta_manhattan(q: float, L: int, trials: int, stream: RngStream,
                             heading: Heading = Heading.N, swap: bool = False,
                             workers: int = 1) -> EstimateCI:
    """Fraction of fields whose ray from the origin along ``heading`` leaves the L-box."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q={q} outside [0,1]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not manhattan_admissible((0, 0), heading, swap):
        raise ValueError(f"heading {heading.name} is not admissible at the origin")
    max_steps = state_bound(L)

    def chunk(a, b):
        status = _escape_batch(MANHATTAN, stream.child_keys(a, b), float(q), False,
                               0, 0, int(heading), L, max_steps)
        if np.any(status == 2):
            raise RuntimeError("trace exhausted its step budget")
        return status == 0

    esc = run_chunked(chunk, trials, workers).astype(bool)
    return estimate_proportion(int(esc.sum()), trials)


# --- diagonal-lattice circuits --------------------------------------------------------
#
# For diagonal class c, the faces of the class-c diagonal lattice are diamonds
# centred at face centres (i+1/2, j+1/2) with (i + j) % 2 == 1 - c.  Diamond
# (i, j) has the four sites of the unit face [i, i+1] x [j, j+1] on its
# boundary; crossing to the diamond on the far side of site s is blocked
# exactly when s carries the class-c mirror.

@njit(cache=True, nogil=True)
def _blocks(mode, key, p, swap, grid, gL, x, y, c):
    m = _mirror_at(mode, key, p, swap, grid, gL, x, y)
    if m == EMPTY:
        return False
    parity = (x + y) % 2
    if m == MNE:
        return parity == c
    return (parity + 1) % 2 == c


@njit(cache=True, nogil=True)
def _enclosed(mode, key, p, swap, grid, gL, L, c, i0, j0):
    side = 2 * L + 3
    seen = np.zeros((side, side), dtype=np.uint8)
    qi = np.empty(side * side, dtype=np.int64)
    qj = np.empty(side * side, dtype=np.int64)
    off = L + 1
    head = 0
    tail = 0
    qi[tail] = i0
    qj[tail] = j0
    tail += 1
    seen[i0 + off, j0 + off] = 1
    # the four boundary sites of diamond (i, j) and the diamonds across them
    sx = np.array([0, 1, 0, 1])
    sy = np.array([0, 0, 1, 1])
    ni = np.array([-1, 1, -1, 1])
    nj = np.array([-1, -1, 1, 1])
    while head < tail:
        i = qi[head]
        j = qj[head]
        head += 1
        for k in range(4):
            x = i + sx[k]
            y = j + sy[k]
            if abs(x) > L or abs(y) > L:
                return False
            if _blocks(mode, key, p, swap, grid, gL, x, y, c):
                continue
            a = i + ni[k]
            b = j + nj[k]
            if seen[a + off, b + off]:
                continue
            seen[a + off, b + off] = 1
            qi[tail] = a
            qj[tail] = b
            tail += 1
    return True


def _start_diamond(heading: Heading, c: int) -> tuple[int, int]:
    dx, dy = heading.step
    if dy == 0:
        i = 0 if dx == 1 else -1
        cands = [(i, 0), (i, -1)]
    else:
        j = 0 if dy == 1 else -1
        cands = [(0, j), (-1, j)]
    for i, j in cands:
        if (i + j) % 2 == 1 - c:
            return i, j
    raise AssertionError("no diamond of the required parity")


def blocked_by_circuit(field: MirrorField, L: int, heading: Heading = Heading.N,
                       classes=(0, 1)) -> bool:
    """True if a circuit of same-class diagonal mirrors inside the L-box encloses
    the first half-edge of the ray leaving the origin along ``heading``.

    Such a circuit is a closed wall the ray cannot cross, so ``True`` forces a
    bounded ray (the coupling used for the p = 1 argument).
    """
    args = field._kernel_args(L + 1)
    for c in classes:
        i0, j0 = _start_diamond(Heading(heading), c)
        if _enclosed(*args, L, c, i0, j0):
            return True
    return False
