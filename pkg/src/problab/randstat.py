"""Seeded randomness and proportion estimates.

Two kinds of randomness live here:

* ``RngStream`` wraps a numpy ``Generator`` on the counter-based Philox bit
  generator, keyed by ``(master_seed, stream_id)``.  Used for sequential draws
  (particle positions, sample indices).
* ``hash_uniform`` and friends map integer coordinates to uniforms through a
  splitmix64 mixing chain.  Random environments (mirror fields, bond states,
  needle cells) are pure functions of ``(stream key, site)`` and can be
  evaluated lazily from numba kernels without any shared state.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy import stats

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# Tags keep the different random attributes of one site independent.
TAG_BOND = 11
TAG_MIRROR = 23
TAG_ORIENT = 37
TAG_ENHANCE = 41
TAG_CELL = 53
TAG_PIVOT = 67
TAG_NOISE = 79
TAG_EDGE = 83
TAG_CONTACT = 89


class InvalidParameterError(ValueError):
    pass


# --- counter hashing -------------------------------------------------------

@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def _absorb(h, x):
    return mix64((h ^ np.uint64(x)) + _GOLDEN)


@njit(cache=True, nogil=True)
def hash2(key, a, b):
    return _absorb(_absorb(np.uint64(key), a), b)


@njit(cache=True, nogil=True)
def hash4(key, a, b, c, d):
    h = _absorb(np.uint64(key), a)
    h = _absorb(h, b)
    h = _absorb(h, c)
    return _absorb(h, d)


@njit(cache=True, nogil=True)
def to_unit(h):
    """Top 53 bits of ``h`` as a float in [0, 1)."""
    return np.float64(h >> _S11) * _INV53


@njit(cache=True, nogil=True)
def hash_uniform(key, a, b, c, d):
    return to_unit(hash4(key, a, b, c, d))


def _absorb_np(h: np.ndarray, x: np.ndarray) -> np.ndarray:
    z = (h ^ x.view(np.uint64)) + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_uniform_array(key: int, a, b, c, d) -> np.ndarray:
    """Vectorised twin of :func:`hash_uniform`; arguments broadcast."""
    a, b, c, d = np.broadcast_arrays(*(np.asarray(v, dtype=np.int64) for v in (a, b, c, d)))
    h = np.full(a.shape, np.uint64(key & MASK64), dtype=np.uint64)
    for x in (a, b, c, d):
        h = _absorb_np(h, x)
    return (h >> _S11).astype(np.float64) * _INV53


def stream_key(master_seed: int, stream_id: int) -> int:
    return int(hash2(np.uint64(0x5EED), np.uint64(master_seed & MASK64), np.uint64(stream_id & MASK64)))


@njit(cache=True, nogil=True)
def _child_keys(master_seed, stream_id, start, stop):
    out = np.empty(stop - start, dtype=np.uint64)
    for i in range(start, stop):
        child = hash2(np.uint64(0xC41D), stream_id, i)
        out[i - start] = hash2(np.uint64(0x5EED), master_seed, child)
    return out


# --- streams -----------------------------------------------------------------

@dataclass
class RngStream:
    """Deterministic random stream addressed by ``(master_seed, stream_id)``.

    Streams are cheap values.  ``child(i)`` addresses sub-stream ``i`` (one per
    trial) without drawing anything from the parent, so trial ``i`` of an
    experiment can be reproduced in isolation.
    """

    master_seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.master_seed = int(self.master_seed) & MASK64
        self.stream_id = int(self.stream_id) & MASK64

    @property
    def key(self) -> int:
        """64-bit key for the counter hash; a pure function of the address."""
        return stream_key(self.master_seed, self.stream_id)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_id,))
            self._gen = np.random.Generator(np.random.Philox(seq))
        return self._gen

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, int(hash2(np.uint64(0xC41D), np.uint64(self.stream_id), index)))

    def child_keys(self, start: int, stop: int) -> np.ndarray:
        """Hash keys of children ``start..stop-1`` as a uint64 array."""
        return _child_keys(np.uint64(self.master_seed), np.uint64(self.stream_id), start, stop)

    def uniform(self, size=None):
        return self.generator.random(size)


def derive_stream(master_seed: int, stream_id: int) -> RngStream:
    return RngStream(master_seed, stream_id)


# --- primitive laws ----------------------------------------------------------

@dataclass(frozen=True)
class Law:
    name: str
    params: tuple = ()

    def __post_init__(self):
        check = _LAW_CHECKS.get(self.name)
        if check is None:
            raise InvalidParameterError(f"unknown law {self.name!r}")
        check(*self.params)


def _require(cond: bool, msg: str):
    if not cond:
        raise InvalidParameterError(msg)


_LAW_CHECKS: dict[str, Callable] = {
    "bernoulli": lambda p: _require(0.0 <= p <= 1.0, f"bernoulli p={p} outside [0,1]"),
    "uniform01": lambda: None,
    "exponential": lambda rate: _require(rate > 0, f"exponential rate={rate} must be > 0"),
    "gaussian": lambda mean, var: _require(var >= 0, f"gaussian variance={var} must be >= 0"),
    "poisson": lambda mean: _require(mean >= 0, f"poisson mean={mean} must be >= 0"),
}


def bernoulli(p: float) -> Law:
    return Law("bernoulli", (p,))


def uniform01() -> Law:
    return Law("uniform01")


def exponential(rate: float) -> Law:
    return Law("exponential", (rate,))


def gaussian(mean: float, variance: float) -> Law:
    return Law("gaussian", (mean, variance))


def poisson(mean: float) -> Law:
    return Law("poisson", (mean,))


def sample(stream: RngStream, law: Law, size=None):
    """Draw from ``law``, advancing ``stream``."""
    g = stream.generator
    if law.name == "bernoulli":
        return g.random(size) < law.params[0]
    if law.name == "uniform01":
        return g.random(size)
    if law.name == "exponential":
        return g.exponential(1.0 / law.params[0], size)
    if law.name == "gaussian":
        mean, var = law.params
        return g.normal(mean, math.sqrt(var), size)
    if law.name == "poisson":
        return g.poisson(law.params[0], size)
    raise InvalidParameterError(law.name)


# --- estimates ---------------------------------------------------------------

@dataclass(frozen=True)
class EstimateCI:
    successes: int
    trials: int
    point: float
    lower: float
    upper: float
    confidence: float = 0.95

    @property
    def se(self) -> float:
        """Binomial standard error of the point estimate."""
        return math.sqrt(self.point * (1.0 - self.point) / self.trials)

    def as_row(self) -> dict:
        return {
            "estimate": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "successes": self.successes,
            "trials": self.trials,
        }


def estimate_proportion(successes: int, trials: int, confidence: float = 0.95) -> EstimateCI:
    """Wilson score interval."""
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    if not 0 <= successes <= trials:
        raise InvalidParameterError(f"successes={successes} not in [0, {trials}]")
    if not 0.0 < confidence < 1.0:
        raise InvalidParameterError(f"confidence={confidence} not in (0,1)")
    n = float(trials)
    phat = successes / n
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    z2 = z * z
    denom = n + z2
    centre = (successes + z2 / 2.0) / denom
    half = z * math.sqrt(successes * (n - successes) / n + z2 / 4.0) / denom
    lower = 0.0 if successes == 0 else max(0.0, min(phat, centre - half))
    upper = 1.0 if successes == trials else min(1.0, max(phat, centre + half))
    return EstimateCI(int(successes), int(trials), phat, lower, upper, confidence)


def pooled_se(a: EstimateCI, b: EstimateCI) -> float:
    return math.sqrt(a.se**2 + b.se**2)


# --- parallel trial execution -------------------------------------------------

def chunk_ranges(n: int, workers: int, min_chunk: int = 64) -> list[tuple[int, int]]:
    if n <= 0:
        return []
    parts = max(1, min(workers * 4, n // min_chunk or 1))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_chunked(fn: Callable[[int, int], np.ndarray], n: int, workers: int = 1) -> np.ndarray:
    """Evaluate ``fn(start, stop)`` over a partition of ``range(n)`` and concatenate.

    ``fn`` must produce per-item results that depend only on the item index,
    so the output is identical for any worker count.
    """
    ranges = chunk_ranges(n, workers)
    if not ranges:
        return np.empty(0)
    if workers <= 1:
        parts = [fn(a, b) for a, b in ranges]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), ranges))
    return np.concatenate(parts)


def run_many(fn: Callable, items: Sequence, workers: int = 1) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
