"""Wall-clock comparison of the naive and decomposed fusion paths.

Timings use the monotonic nanosecond clock, take the median over a
fixed number of repetitions after warm-up calls, and never overlap
measured regions. Before anything is timed, all implementations are
checked against each other; a disagreement aborts the run, so a
benchmark can never report speed for wrong results.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import fusion
from . import nn
from . import tensor as T

MIN_REPS = 20

CSV_COLUMNS = ("C", "eta", "omega", "H", "W", "P",
               "reps", "naive_ns", "acm_ns", "cached_ns", "speedup")


@dataclass(frozen=True)
class BenchConfig:
    """One problem size: map/kernel dimensions and output channels."""

    channels: int
    eta: int
    omega: int
    height: int
    width: int
    out_channels: int

    def __post_init__(self):
        if min(self.channels, self.eta, self.omega, self.height, self.width,
               self.out_channels) < 1:
            raise ValueError(f"all dimensions must be positive: {self}")
        if self.eta > self.height or self.omega > self.width:
            raise ValueError(f"template must fit inside the search map: {self}")

    @property
    def positions(self) -> int:
        return (self.height - self.eta + 1) * (self.width - self.omega + 1)


@dataclass(frozen=True)
class BenchResult:
    """Median wall times (ns per call) for one configuration."""

    config: BenchConfig
    reps: int
    naive_ns: float
    acm_ns: float
    cached_ns: float

    def __post_init__(self):
        if self.reps < MIN_REPS:
            raise ValueError(f"at least {MIN_REPS} repetitions required, got {self.reps}")
        if min(self.naive_ns, self.acm_ns, self.cached_ns) <= 0:
            raise ValueError("measured times must be positive")

    @property
    def speedup(self) -> float:
        """Naive time over decomposed time; > 1 means the split is faster."""
        return self.naive_ns / self.acm_ns


def default_configs() -> list[BenchConfig]:
    return [
        BenchConfig(4, 3, 3, 10, 10, 4),
        BenchConfig(8, 3, 3, 16, 16, 8),
        BenchConfig(16, 5, 5, 21, 21, 16),
        BenchConfig(64, 5, 5, 29, 29, 64),
    ]


def _random_problem(config: BenchConfig, rng, with_prior: bool, hidden: int = 16):
    def draw(shape):
        return rng.uniform(-1.0, 1.0, size=shape).astype(T.DTYPE)

    template = draw((config.channels, config.eta, config.omega))
    search = draw((config.channels, config.height, config.width))
    prior = None
    box = None
    if with_prior:
        dims = (2, hidden, hidden, config.out_channels)
        prior = tuple(
            nn.FcLayer(draw((dims[i + 1], dims[i])), draw((dims[i + 1],)))
            for i in range(3)
        )
        box = (float(rng.uniform(10.0, 200.0)), float(rng.uniform(10.0, 200.0)))
    weights = fusion.FusionWeights(
        theta_z=nn.ConvKernel(draw((config.out_channels, config.channels,
                                    config.eta, config.omega))),
        theta_x=nn.ConvKernel(draw((config.out_channels, config.channels,
                                    config.eta, config.omega))),
        prior=prior,
    )
    return template, search, weights, box


def _median_ns(fn, reps: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        start = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - start)
    return float(statistics.median(samples))


def bench_compare(configs=None, reps: int = MIN_REPS, seed: int = 0,
                  warmup: int = 3, with_prior: bool = True,
                  tol: float = 1e-4) -> list[BenchResult]:
    """Measure naive, decomposed, and cached fusion for each config.

    The template-side cache is built outside the timed region for the
    cached path. Raises RuntimeError if any pair of implementations
    disagrees beyond ``tol`` before timing starts.
    """
    if configs is None:
        configs = default_configs()
    if reps < MIN_REPS:
        raise ValueError(f"at least {MIN_REPS} repetitions required, got {reps}")
    if warmup < 3:
        raise ValueError(f"at least 3 warm-up calls required, got {warmup}")
    streams = np.random.SeedSequence(seed).spawn(len(configs))
    results = []
    for config, stream in zip(configs, streams):
        rng = np.random.default_rng(stream)
        template, search, weights, box = _random_problem(config, rng, with_prior)
        plain = replace(weights, prior=None)
        out_naive = fusion.naive_concat_corr(template, search, weights)
        out_plain = fusion.acm_forward(template, search, plain, apply_relu=False)
        gap = float(np.abs(out_naive - out_plain).max())
        if gap > tol:
            raise RuntimeError(
                f"correctness gate failed for {config}: naive vs decomposed "
                f"differ by {gap:.3e} (tol {tol:g})"
            )
        cache = fusion.acm_cache_template(template, weights, box)
        out_uncached = fusion.acm_forward(template, search, weights, box, apply_relu=False)
        out_cached = fusion.acm_apply_search(cache, search, weights, apply_relu=False)
        gap = float(np.abs(out_uncached - out_cached).max())
        if gap > tol:
            raise RuntimeError(
                f"correctness gate failed for {config}: cached vs uncached "
                f"differ by {gap:.3e} (tol {tol:g})"
            )
        naive_ns = _median_ns(lambda: fusion.naive_concat_corr(template, search, weights),
                              reps, warmup)
        acm_ns = _median_ns(
            lambda: fusion.acm_forward(template, search, weights, box, apply_relu=False),
            reps, warmup)
        cached_ns = _median_ns(
            lambda: fusion.acm_apply_search(cache, search, weights, apply_relu=False),
            reps, warmup)
        results.append(BenchResult(config=config, reps=reps, naive_ns=naive_ns,
                                   acm_ns=acm_ns, cached_ns=cached_ns))
    return results


def naive_scaling_slope(channels: int = 8, eta: int = 3, omega: int = 3,
                        out_channels: int = 8, sizes=(7, 10, 14, 20, 28),
                        reps: int = MIN_REPS, seed: int = 0) -> float:
    """Log-log slope of naive time against the number of output positions.

    The naive path does fixed work per window, so the slope should be
    close to 1 once per-call overhead is amortized.
    """
    configs = [BenchConfig(channels, eta, omega, s, s, out_channels) for s in sizes]
    results = bench_compare(configs, reps=reps, seed=seed)
    positions = np.array([r.config.positions for r in results], dtype=np.float64)
    times = np.array([r.naive_ns for r in results], dtype=np.float64)
    slope, _ = np.polyfit(np.log(positions), np.log(times), 1)
    return float(slope)


def write_csv(results, path) -> Path:
    """Emit one row per configuration under a fixed header."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in results:
            c = r.config
            writer.writerow([
                c.channels, c.eta, c.omega, c.height, c.width, c.out_channels,
                r.reps, f"{r.naive_ns:.1f}", f"{r.acm_ns:.1f}",
                f"{r.cached_ns:.1f}", f"{r.speedup:.4f}",
            ])
    return path
