"""Deterministic, parallelizable Monte Carlo infrastructure.

Randomness is counter-based: every draw is addressed by
(seed, chunk, step, channel, lane) through a Philox generator keyed by the
seed with the remaining coordinates packed into the counter words.  Uniforms
come straight from the raw 64-bit stream (fixed one-word consumption) and
normals through the inverse CDF, so any partition of paths into workers
reproduces bit-identical draws, and any single path can be replayed in
isolation.

Paths are processed in fixed-size chunks (independent of worker count) and
per-chunk accumulators are combined by a pairwise tree over the ordered chunk
list, which pins the floating-point reduction order: the same seed gives the
same bits at 1 or 8 workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .errors import DomainError, NumericError

__all__ = [
    "CHUNK_SIZE",
    "TimeGrid",
    "CorrelationSpec",
    "Estimator",
    "EstimatorVector",
    "NormalSource",
    "ChunkContext",
    "draw_pair",
    "run_paths",
    "run_accumulate",
    "tree_merge",
]

# fixed so that chunk boundaries (hence reduction trees and streams) do not
# depend on the worker count
CHUNK_SIZE = 1 << 16

# channel layout shared by the joint simulations
CHANNEL_RATE = 0
CHANNEL_CREDIT = 1
CHANNEL_JUMP_COUNT = 2
CHANNEL_JUMP_SIZE = 3


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing simulation nodes containing all event dates exactly.

    Regular nodes are laid out at the requested step; any event date within
    tolerance of a regular node replaces it (the event value wins, no
    snapping error), otherwise it is inserted.
    """

    nodes: np.ndarray
    dt: float

    def __post_init__(self):
        if np.any(np.diff(self.nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")

    @classmethod
    def build(cls, start: float, end: float, dt: float, events=()) -> "TimeGrid":
        if end <= start or dt <= 0.0:
            raise ValueError("need end > start and dt > 0")
        n = int(round((end - start) / dt))
        regular = start + (end - start) * np.arange(n + 1) / n
        nodes = list(regular)
        for ev in sorted(set(float(e) for e in events)):
            if ev < start - 1e-12 or ev > end + 1e-12:
                continue
            i = int(np.argmin(np.abs(regular - ev)))
            if abs(regular[i] - ev) < 1e-9:
                nodes[i] = ev
            else:
                nodes.append(ev)
        out = np.unique(np.asarray(nodes, dtype=float))
        return cls(nodes=out, dt=dt)

    @property
    def steps(self) -> int:
        return len(self.nodes) - 1

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.nodes - t)))
        if self.nodes[i] != t:
            raise ValueError(f"{t} is not a grid node")
        return i


@dataclass(frozen=True)
class CorrelationSpec:
    """Correlation between the rate driver and the credit driver."""

    rho: float = 0.0

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("|rho| must be <= 1")

    def pair(self, z_rate, z_indep):
        """z_credit = rho z_rate + sqrt(1 - rho^2) z_indep."""
        return self.rho * z_rate + math.sqrt(1.0 - self.rho**2) * z_indep


def draw_pair(source: "NormalSource", chunk: int, size: int, step: int, rho: float):
    """Correlated (z_rate, z_credit) for one step of one chunk of paths."""
    z_rate = source.normals(chunk, size, step, CHANNEL_RATE)
    z_indep = source.normals(chunk, size, step, CHANNEL_CREDIT)
    return z_rate, CorrelationSpec(rho).pair(z_rate, z_indep)


class NormalSource:
    """Counter-based uniform/normal draws addressed by (chunk, step, channel).

    Lane i of a block holds the draw for path ``chunk * CHUNK_SIZE + i``; the
    block is the same no matter how paths are sliced across workers.  With
    ``antithetic`` set, odd lanes mirror the normals of even lanes (uniform
    draws, used for jump counts and sizes, are shared by the pair).
    """

    def __init__(self, seed: int, antithetic: bool = False):
        if not isinstance(seed, (int, np.integer)) or seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.antithetic = antithetic

    def _raw(self, chunk: int, size: int, step: int, channel: int) -> np.ndarray:
        bitgen = Philox(key=self.seed, counter=[0, chunk, step, channel])
        return bitgen.random_raw(size)

    def uniforms(self, chunk: int, size: int, step: int, channel: int) -> np.ndarray:
        """Open-interval (0, 1) uniforms, one raw 64-bit word each."""
        if self.antithetic:
            half = (size + 1) // 2
            base = self._raw(chunk, half, step, channel)
            out = np.repeat(base, 2)[:size]
        else:
            out = self._raw(chunk, size, step, channel)
        return ((out >> np.uint64(11)) + 0.5) * (1.0 / (1 << 53))

    def normals(self, chunk: int, size: int, step: int, channel: int) -> np.ndarray:
        z = ndtri(self.uniforms(chunk, size, step, channel))
        if self.antithetic:
            z[1::2] *= -1.0
        return z


@dataclass(frozen=True)
class ChunkContext:
    """What a per-chunk task sees: its path range and its draw source."""

    chunk_index: int
    start: int
    size: int
    source: NormalSource

    def uniforms(self, step: int, channel: int) -> np.ndarray:
        return self.source.uniforms(self.chunk_index, self.size, step, channel)

    def normals(self, step: int, channel: int) -> np.ndarray:
        return self.source.normals(self.chunk_index, self.size, step, channel)

    def correlated_pair(self, step: int, rho: float):
        return draw_pair(self.source, self.chunk_index, self.size, step, rho)


@dataclass
class Estimator:
    """Streaming mean / standard error: (count, sum, sum of squares)."""

    n: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    @classmethod
    def from_samples(cls, x) -> "Estimator":
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x))[0])
            raise NumericError(f"non-finite payoff at sample {bad}")
        return cls(n=x.size, total=float(np.sum(x)), total_sq=float(np.sum(x * x)))

    def merge(self, other: "Estimator") -> "Estimator":
        return Estimator(
            n=self.n + other.n,
            total=self.total + other.total,
            total_sq=self.total_sq + other.total_sq,
        )

    __add__ = merge

    @property
    def mean(self) -> float:
        if self.n == 0:
            raise ValueError("empty estimator")
        return self.total / self.n

    @property
    def variance(self) -> float:
        if self.n < 2:
            return 0.0
        m = self.mean
        return max(self.total_sq / self.n - m * m, 0.0) * self.n / (self.n - 1)

    @property
    def se(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n else 0.0


@dataclass
class EstimatorVector:
    """Per-node estimators sharing one count (profiles over a time grid)."""

    n: int
    total: np.ndarray
    total_sq: np.ndarray

    @classmethod
    def zeros(cls, size: int) -> "EstimatorVector":
        return cls(n=0, total=np.zeros(size), total_sq=np.zeros(size))

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "EstimatorVector":
        # x has shape (paths, nodes)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite profile sample")
        return cls(n=x.shape[0], total=x.sum(axis=0), total_sq=(x * x).sum(axis=0))

    def merge(self, other: "EstimatorVector") -> "EstimatorVector":
        return EstimatorVector(
            n=self.n + other.n,
            total=self.total + other.total,
            total_sq=self.total_sq + other.total_sq,
        )

    __add__ = merge

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.n

    @property
    def se(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.total)
        m = self.mean
        var = np.maximum(self.total_sq / self.n - m * m, 0.0) * self.n / (self.n - 1)
        return np.sqrt(var / self.n)


def tree_merge(items):
    """Pairwise binary-tree reduction over an ordered list.

    The association pattern depends only on the list length, never on the
    worker layout, pinning the floating-point reduction order.
    """
    items = list(items)
    if not items:
        raise ValueError("nothing to merge")
    while len(items) > 1:
        merged = []
        for i in range(0, len(items) - 1, 2):
            merged.append(items[i] + items[i + 1])
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def _chunk_ranges(n_paths: int):
    for chunk_index, start in enumerate(range(0, n_paths, CHUNK_SIZE)):
        yield chunk_index, start, min(CHUNK_SIZE, n_paths - start)


class _ChunkJob:
    """Picklable wrapper binding a task to one chunk."""

    def __init__(self, task, seed, antithetic):
        self.task = task
        self.seed = seed
        self.antithetic = antithetic

    def __call__(self, args):
        chunk_index, start, size = args
        ctx = ChunkContext(
            chunk_index=chunk_index,
            start=start,
            size=size,
            source=NormalSource(self.seed, antithetic=self.antithetic),
        )
        return self.task(ctx)


def run_accumulate(task, n_paths: int, seed: int, workers: int = 1, antithetic: bool = False):
    """Run ``task(ChunkContext) -> accumulator`` over all chunks and merge.

    Accumulators combine with ``+``.  The result is bit-identical for any
    ``workers`` because chunk boundaries are fixed and merging is a pairwise
    tree over chunk order.
    """
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    job = _ChunkJob(task, seed, antithetic)
    ranges = list(_chunk_ranges(n_paths))
    if workers <= 1 or len(ranges) == 1:
        results = [job(r) for r in ranges]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, ranges, chunksize=1))
    return tree_merge(results)


class _PayoffTask:
    def __init__(self, payoff_fn):
        self.payoff_fn = payoff_fn

    def __call__(self, ctx: ChunkContext) -> Estimator:
        values = self.payoff_fn(ctx)
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            bad = ctx.start + int(np.flatnonzero(~np.isfinite(values))[0])
            raise NumericError(f"non-finite payoff on path {bad}")
        return Estimator.from_samples(values)


def run_paths(payoff_fn, n_paths: int, seed: int, workers: int = 1, antithetic: bool = False) -> Estimator:
    """Estimate E[payoff] with ``payoff_fn(ChunkContext) -> per-path values``."""
    return run_accumulate(
        _PayoffTask(payoff_fn), n_paths, seed, workers=workers, antithetic=antithetic
    )


def default_workers() -> int:
    env = os.environ.get("CONICREDIT_WORKERS")
    if env:
        return max(1, int(env))
    return 1
