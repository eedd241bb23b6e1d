"""Wall-clock inference timing for single models and the ensemble."""

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

WARMUP_RUNS = 5


@dataclass
class BenchResult:
    name: str
    mean_ms: float
    std_ms: float
    n_frames: int

    def __str__(self):
        return f"{self.name}: {self.mean_ms:.2f} +/- {self.std_ms:.2f} ms per frame ({self.n_frames} frames)"


def _time_fn(fn, samples, warmup=WARMUP_RUNS):
    if len(samples) == 0:
        raise ConfigError("bench_inference needs at least one frame")
    for k in range(min(warmup, len(samples))):
        fn(samples[k])
    times = []
    for sample in samples:
        t0 = time.perf_counter()
        fn(sample)
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.mean(times)), float(np.std(times))


def bench_model(name, model, samples, warmup=WARMUP_RUNS):
    """Per-frame inference time of one model; the first runs warm up caches
    and are excluded."""
    mean, std = _time_fn(model.predict, list(samples), warmup)
    return BenchResult(name, mean, std, len(samples))


def bench_ensemble(models, samples_by_variant, warmup=WARMUP_RUNS):
    """Per-frame time of the full ensemble run sequentially, member by member.

    Returns (total, per-member results timed inside the sequential loop).
    Members run consecutively per frame, so in-loop member times add up to
    the total minus the averaging step; standalone times (bench_model) can
    sit a few percent lower thanks to allocator and cache reuse.
    """
    variants = list(models)
    n = min(len(samples_by_variant[v]) for v in variants)
    if n == 0:
        raise ConfigError("bench_inference needs at least one frame")

    member_times = {v: [] for v in variants}

    def run(k, record=False):
        maps = []
        for v in variants:
            t0 = time.perf_counter()
            maps.append(models[v].predict(samples_by_variant[v][k]))
            if record:
                member_times[v].append((time.perf_counter() - t0) * 1e3)
        return np.mean(maps, axis=0)

    mean, std = _time_fn(lambda k: run(k, record=True), list(range(n)), warmup)
    # drop the warmup recordings so member stats match the timed frames
    members = [
        BenchResult(f"{v} (in ensemble)", float(np.mean(member_times[v][-n:])),
                    float(np.std(member_times[v][-n:])), n)
        for v in variants
    ]
    total = BenchResult("ensemble(" + ",".join(variants) + ")", mean, std, n)
    return total, members
