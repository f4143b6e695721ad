"""Spatial S/I/R epidemic among Brownian particles.

Particles start at the points of a rate-1 Poisson process in the box
``[-B, B]^d`` plus one infected particle (id 0) at the origin.  Each step of
length ``dt``:

1. movement: every non-removed particle (diffusion model) or every infected
   particle (delayed model) takes a Gaussian step;
2. removal: infected particle i is removed once its infected time exceeds
   ``e_i / alpha``, where ``e_i`` is a standard exponential mark;
3. infection: every susceptible particle within distance 1 of an infected one
   becomes infected, closed transitively within the step.  A pair that is
   farther apart at both ends of the step still makes contact with the
   Brownian-bridge probability ``exp(-2 h0 h1 / v)`` (``h`` the clearance
   beyond distance 1, ``v`` the variance of their relative displacement);
   without this the sampled path misses contacts between grid times and the
   survival probability is biased down by O(dt).

The infection cascade is also applied at time 0.

Movement noise is counter based.  In the delayed model the k-th step of
particle i after its infection always uses the same increment, whatever its
infection time, so runs at different alpha share paths exactly.  A step is
the sum of ``noise_substeps`` finer increments, which couples a run at
``dt`` with ``noise_substeps=2`` to a run at ``dt/2`` with one substep.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from numba import njit

from .randstat import (TAG_CONTACT, TAG_NOISE, EstimateCI, RngStream, estimate_proportion, hash_uniform,
                       run_many)

DIFFUSION = "diffusion"
DELAYED = "delayed"

SUSCEPTIBLE, INFECTED, REMOVED = 0, 1, 2

EXTINCT, SURVIVAL, TIMEOUT = 0, 1, 2
REASON_NONE, REASON_COUNT, REASON_BOUNDARY = 0, 1, 2
_REASONS = {REASON_NONE: None, REASON_COUNT: "reached N*", REASON_BOUNDARY: "reached boundary margin"}


@dataclass(frozen=True)
class EpidemicConfig:
    d: int = 2
    alpha: float = 1.0
    model: str = DELAYED
    box: float = 15.0
    dt: float = 0.01
    n_star: int = 500
    margin: float = 1.0
    diffusivity: float = 1.0
    noise_substeps: int = 1
    max_time: float = 1e4
    contact_bridge: bool = True

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.model not in (DIFFUSION, DELAYED):
            raise ValueError(f"model must be {DIFFUSION!r} or {DELAYED!r}")
        if not self.box > 2:
            raise ValueError("box radius must exceed 2")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_star < 0 or self.margin < 0 or self.diffusivity < 0:
            raise ValueError("n_star, margin and diffusivity must be non-negative")
        if self.noise_substeps < 1:
            raise ValueError("noise_substeps must be >= 1")

    @property
    def volume(self) -> float:
        return (2.0 * self.box) ** self.d

    def with_alpha(self, alpha: float) -> "EpidemicConfig":
        return replace(self, alpha=float(alpha))

    def halved(self) -> "EpidemicConfig":
        """Same Brownian paths, half the step (requires an even substep count)."""
        if self.noise_substeps % 2:
            raise ValueError("halving needs an even noise_substeps")
        return replace(self, dt=self.dt / 2, noise_substeps=self.noise_substeps // 2)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Population:
    """Positions ``(N, d)``, exponential marks and the key for movement noise."""

    pos: np.ndarray
    marks: np.ndarray
    key: int

    @property
    def size(self) -> int:
        return self.pos.shape[0]


def init_population(config: EpidemicConfig, stream: RngStream) -> Population:
    rng = stream.generator
    n = rng.poisson(config.volume)
    pos = np.zeros((n + 1, config.d))
    pos[1:] = rng.uniform(-config.box, config.box, size=(n, config.d))
    marks = rng.exponential(size=n + 1)
    return Population(pos, marks, stream.key)


@dataclass(frozen=True)
class EpidemicOutcome:
    status: str  # "extinct", "survival" or "timeout"
    reason: str | None
    total_infected: int
    steps: int
    dt: float
    infected_step: np.ndarray
    removed_step: np.ndarray
    infected_pos: np.ndarray
    removed_pos: np.ndarray

    @property
    def survived(self) -> bool:
        return self.status == "survival"

    @property
    def ever_infected(self) -> frozenset:
        return frozenset(int(i) for i in np.nonzero(self.infected_step >= 0)[0])

    def events(self) -> list[tuple[float, str, int, tuple[float, ...]]]:
        """(time, event, particle, position) sorted by time, infections before removals."""
        out = []
        for i in np.nonzero(self.infected_step >= 0)[0]:
            out.append((self.infected_step[i] * self.dt, "infect", int(i), tuple(self.infected_pos[i])))
        for i in np.nonzero(self.removed_step >= 0)[0]:
            out.append((self.removed_step[i] * self.dt, "remove", int(i), tuple(self.removed_pos[i])))
        order = {"infect": 0, "remove": 1}
        return sorted(out, key=lambda r: (r[0], order[r[1]], r[2]))

    def events_csv(self) -> str:
        lines = ["time,event,particle,x,y"]
        for t, ev, i, p in self.events():
            coords = [repr(float(c)) for c in p] + [""] * (2 - len(p))
            lines.append(",".join([repr(float(t)), ev, str(i), *coords]))
        return "\n".join(lines) + "\n"


# --- kernel ---------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _gauss(key, pid, idx, c):
    u1 = hash_uniform(key, pid, idx, 2 * c, TAG_NOISE)
    u2 = hash_uniform(key, pid, idx, 2 * c + 1, TAG_NOISE)
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, nogil=True)
def _increment(key, pid, idx, c, substeps, scale):
    s = 0.0
    for j in range(substeps):
        s += _gauss(key, pid, idx * substeps + j, c)
    return scale * s


@njit(cache=True, nogil=True)
def _cell_of(p, d, lo, G):
    c = 0
    for k in range(d):
        i = int(math.floor(p[k] - lo))
        i = min(G - 1, max(0, i))
        c = c * G + i
    return c


@njit(cache=True, nogil=True)
def _build_cells(pos, d, lo, G, cell, starts, order):
    n = pos.shape[0]
    ncell = starts.shape[0] - 1
    starts[:] = 0
    for i in range(n):
        cell[i] = _cell_of(pos[i], d, lo, G)
        starts[cell[i] + 1] += 1
    for c in range(ncell):
        starts[c + 1] += starts[c]
    fill = starts[:-1].copy()
    for i in range(n):
        order[fill[cell[i]]] = i
        fill[cell[i]] += 1


@njit(cache=True, nogil=True)
def _bridge_contact(r0, r1, d, v, u):
    """Did the relative bridge from r0 to r1 (variance v) enter the unit ball?"""
    a = 0.0
    b = 0.0
    dd = 0.0
    for q in range(d):
        a += r0[q] * r0[q]
        b += r1[q] * r1[q]
        dd += (r1[q] - r0[q]) ** 2
    if a <= 1.0 or b <= 1.0:
        return True
    if dd > 0.0:
        # closest approach of the straight chord
        t = 0.0
        for q in range(d):
            t -= r0[q] * (r1[q] - r0[q])
        t = min(1.0, max(0.0, t / dd))
        m = 0.0
        for q in range(d):
            z = r0[q] + t * (r1[q] - r0[q])
            m += z * z
        if m <= 1.0:
            return True
    if v <= 0.0:
        return False
    h0 = math.sqrt(a) - 1.0
    h1 = math.sqrt(b) - 1.0
    return u < math.exp(-2.0 * h0 * h1 / v)


@njit(cache=True, nogil=True)
def _run(pos0, marks, alpha, d, dt, sigma, substeps, delayed, key, B, margin, n_star, max_steps,
         inf_step, rem_step, inf_pos, rem_pos, bridge):
    n = pos0.shape[0]
    pos = pos0.copy()
    prev = pos0.copy()
    r0 = np.empty(d)
    r1 = np.empty(d)
    v = sigma * sigma * dt * (1.0 if delayed else 2.0)
    state = np.zeros(n, dtype=np.int64)
    own = np.zeros(n, dtype=np.int64)  # steps moved since infection
    inf_step[:] = -1
    rem_step[:] = -1
    lifetime = marks / alpha
    scale = sigma * math.sqrt(dt / substeps)
    pad = 2.0 + 6.0 * sigma
    lo = -B - pad
    G = int(math.ceil(2.0 * (B + pad)))
    ncell = G ** d
    cell = np.empty(n, dtype=np.int64)
    starts = np.zeros(ncell + 1, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    infected = np.empty(n, dtype=np.int64)
    n_inf = 1
    infected[0] = 0
    state[0] = INFECTED
    inf_step[0] = 0
    inf_pos[0, :] = pos[0, :]
    total = 1
    built = False
    step = 0
    while True:
        n_moved = 0
        if step > 0:
            # movement
            if delayed:
                for a in range(n_inf):
                    i = infected[a]
                    for c in range(d):
                        prev[i, c] = pos[i, c]
                        pos[i, c] += _increment(key, i, own[i], c, substeps, scale)
                    own[i] += 1
            else:
                for i in range(n):
                    if state[i] != REMOVED:
                        for c in range(d):
                            prev[i, c] = pos[i, c]
                            pos[i, c] += _increment(key, i, step - 1, c, substeps, scale)
            # removal
            m = 0
            for a in range(n_inf):
                i = infected[a]
                if (step - inf_step[i]) * dt > lifetime[i]:
                    state[i] = REMOVED
                    rem_step[i] = step
                    rem_pos[i, :] = pos[i, :]
                else:
                    infected[m] = i
                    m += 1
            n_inf = m
            n_moved = m if bridge else 0
        if n_inf == 0:
            return EXTINCT, REASON_NONE, step, total
        # infection cascade
        if not built or not delayed:
            _build_cells(pos, d, lo, G, cell, starts, order)
            built = True
        head = 0
        tail = 0
        for a in range(n_inf):
            queue[tail] = infected[a]
            tail += 1
        while head < tail:
            i = queue[head]
            # particles that moved this step test the whole path, the others its end point
            moved = head < n_moved
            head += 1
            reach = 2 if moved else 1
            clock = own[i] if delayed else step
            ci = _cell_of(pos[i], d, lo, G)
            cx = ci // G if d == 2 else ci
            cy = ci % G if d == 2 else 0
            for ox in range(-reach, reach + 1):
                for oy in range(-reach if d == 2 else 0, reach + 1 if d == 2 else 1):
                    x = cx + ox
                    y = cy + oy
                    if x < 0 or x >= G or y < 0 or (d == 2 and y >= G):
                        continue
                    c = x * G + y if d == 2 else x
                    for k in range(starts[c], starts[c + 1]):
                        j = order[k]
                        if state[j] != SUSCEPTIBLE:
                            continue
                        if moved:
                            for q in range(d):
                                r0[q] = prev[j, q] - prev[i, q]
                                r1[q] = pos[j, q] - pos[i, q]
                            hit = _bridge_contact(r0, r1, d, v, hash_uniform(key, i, j, clock, TAG_CONTACT))
                        else:
                            r2 = 0.0
                            for q in range(d):
                                diff = pos[j, q] - pos[i, q]
                                r2 += diff * diff
                            hit = r2 <= 1.0
                        if hit:
                            state[j] = INFECTED
                            inf_step[j] = step
                            inf_pos[j, :] = pos[j, :]
                            infected[n_inf] = j
                            n_inf += 1
                            total += 1
                            queue[tail] = j
                            tail += 1
        # survival proxies
        if n_star > 0 and total >= n_star:
            return SURVIVAL, REASON_COUNT, step, total
        for a in range(n_inf):
            i = infected[a]
            far = 0.0
            for q in range(d):
                far = max(far, abs(pos[i, q]))
            if far >= B - margin:
                return SURVIVAL, REASON_BOUNDARY, step, total
        if step >= max_steps:
            return TIMEOUT, REASON_NONE, step, total
        step += 1


_STATUS = {EXTINCT: "extinct", SURVIVAL: "survival", TIMEOUT: "timeout"}


def run_population(config: EpidemicConfig, pop: Population, proxies: bool = True) -> EpidemicOutcome:
    n = pop.size
    inf_step = np.empty(n, dtype=np.int64)
    rem_step = np.empty(n, dtype=np.int64)
    inf_pos = np.full((n, config.d), np.nan)
    rem_pos = np.full((n, config.d), np.nan)
    margin = config.margin if proxies else -np.inf
    n_star = config.n_star if proxies else 0
    max_steps = int(math.ceil(config.max_time / config.dt))
    status, reason, steps, total = _run(pop.pos, pop.marks, float(config.alpha), config.d, float(config.dt),
                                        math.sqrt(config.diffusivity), config.noise_substeps,
                                        config.model == DELAYED, np.uint64(pop.key), float(config.box),
                                        float(margin), int(n_star), max_steps, inf_step, rem_step,
                                        inf_pos, rem_pos, bool(config.contact_bridge))
    return EpidemicOutcome(_STATUS[status], _REASONS[reason], int(total), int(steps), config.dt,
                           inf_step, rem_step, inf_pos, rem_pos)


def run(config: EpidemicConfig, stream: RngStream) -> EpidemicOutcome:
    return run_population(config, init_population(config, stream))


def step_counts(outcome: EpidemicOutcome, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """#S, #I, #R after each step ``0..outcome.steps`` for a population of size n."""
    t = np.arange(outcome.steps + 1)
    inf = outcome.infected_step
    rem = outcome.removed_step
    ever = (inf[None, :] >= 0) & (inf[None, :] <= t[:, None])
    gone = (rem[None, :] >= 0) & (rem[None, :] <= t[:, None])
    n_r = gone.sum(axis=1)
    n_i = ever.sum(axis=1) - n_r
    return n - n_i - n_r, n_i, n_r


def survival_indicators(config: EpidemicConfig, trials: int, stream: RngStream, workers: int = 1) -> np.ndarray:
    """Trial i runs on ``stream.child(i)``."""
    return np.array(run_many(lambda i: run(config, stream.child(i)).survived, range(trials), workers), dtype=bool)


def estimate_survival(config: EpidemicConfig, trials: int, stream: RngStream, workers: int = 1) -> EstimateCI:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return estimate_proportion(int(survival_indicators(config, trials, stream, workers).sum()), trials)


@dataclass(frozen=True)
class SurvivalCurve:
    alphas: tuple[float, ...]
    estimates: tuple[EstimateCI, ...]
    coupled: bool

    @property
    def crossover(self) -> float | None:
        """Midpoint of the first bracketing pair around 50% survival."""
        pts = [e.point for e in self.estimates]
        for a0, a1, s0, s1 in zip(self.alphas, self.alphas[1:], pts, pts[1:]):
            if s0 >= 0.5 > s1:
                return 0.5 * (a0 + a1)
        return None

    def rows(self) -> list[dict]:
        return [{"alpha": a, **e.as_row()} for a, e in zip(self.alphas, self.estimates)]


def scan_alpha(config: EpidemicConfig, alpha_grid: Sequence[float], trials: int, stream: RngStream,
               coupled: bool = False, workers: int = 1) -> SurvivalCurve:
    """Survival per alpha.  ``coupled`` reuses the same trial streams at every alpha."""
    alphas = [float(a) for a in alpha_grid]
    if not alphas:
        raise ValueError("alpha grid is empty")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha grid must be increasing")
    ests = []
    for k, a in enumerate(alphas):
        s = stream if coupled else stream.child(k)
        ests.append(estimate_survival(config.with_alpha(a), trials, s, workers))
    return SurvivalCurve(tuple(alphas), tuple(ests), coupled)


class CouplingViolation(AssertionError):
    pass


def coupled_delayed_run(config: EpidemicConfig, alpha_list: Sequence[float], stream: RngStream,
                        proxies: bool = False) -> list[EpidemicOutcome]:
    """Runs at each alpha on one population and one noise field.

    For consecutive alphas a < b, checks at every step that the set ever
    infected at b is contained in the set ever infected at a (up to the
    shorter of the two runs).
    """
    if config.model != DELAYED:
        raise ValueError("the monotone coupling holds for the delayed model only")
    alphas = [float(a) for a in alpha_list]
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha_list must be increasing")
    pop = init_population(config, stream)
    outs = [run_population(config.with_alpha(a), pop, proxies) for a in alphas]
    for (a, lo), (b, hi) in zip(zip(alphas, outs), zip(alphas[1:], outs[1:])):
        horizon = min(lo.steps, hi.steps)
        late = hi.infected_step
        early = lo.infected_step
        mask = (late >= 0) & (late <= horizon)
        bad = mask & ((early < 0) | (early > late))
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            raise CouplingViolation(
                f"particle {i} infected at step {late[i]} for alpha={b} but at step {early[i]} "
                f"for alpha={a}; mark={pop.marks[i]!r} pos={pop.pos[i].tolist()} seed="
                f"({stream.master_seed}, {stream.stream_id})")
    return outs
