"""Kernel-level timing of filter construction and closed-loop rollout.

CSV schema (fixed): ``algo,ell,d,median_ns,iqr_ns,reps``.

Algorithms:

- ``naive``: ell structured applies (:func:`naive_output_filter`).
- ``fast``: spectral filter from a precomputed ``C~`` (:func:`fast_output_filter`).
- ``fast+ctilde``: spectral filter including the O(ell d) ``C~`` computation.
- ``closed-loop-fast`` / ``closed-loop-recurrent``: h = ell forecast steps
  through the spectral rollout or the plain ``x <- (A + B K) x`` loop.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from .core import Ssm, normalize_stability
from .filters import (
    c_tilde,
    closed_loop_rollout,
    fast_closed_loop_rollout,
    fast_output_filter,
    naive_output_filter,
    output_filter,
)

ALGOS = ("naive", "fast", "fast+ctilde", "closed-loop-fast", "closed-loop-recurrent")
COLUMNS = ("algo", "ell", "d", "median_ns", "iqr_ns", "reps")
MIN_REPS = 5


@dataclass(frozen=True)
class BenchRecord:
    algo: str
    ell: int
    d: int
    median_ns: float
    iqr_ns: float
    reps: int

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}")
        if not self.median_ns > 0:
            raise ValueError("median_ns must be positive")
        if self.reps < MIN_REPS:
            raise ValueError(f"reps must be >= {MIN_REPS}")


def time_ns(fn: Callable[[], object], reps: int, warmup: int = 1) -> np.ndarray:
    """Run ``fn`` ``warmup`` times untimed, then ``reps`` times under ``perf_counter_ns``."""
    for _ in range(warmup):
        fn()
    out = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        out[i] = time.perf_counter_ns() - t0
    return out


def bench_ssm(d: int, rng, with_k: bool = False) -> Ssm:
    """Random normalized instance; K is scaled so ``A + B K`` stays well conditioned."""
    a = normalize_stability(rng.standard_normal(d))
    B = rng.standard_normal(d) / np.sqrt(d)
    C = rng.standard_normal(d) / np.sqrt(d)
    K = 0.1 * rng.standard_normal(d) / np.sqrt(d) if with_k else None
    return Ssm.from_arrays(a, B, C, 0.0, K)


def _task(algo: str, ssm: Ssm, ell: int, x0) -> Callable[[], object]:
    if algo == "naive":
        return lambda: naive_output_filter(ssm, ell)
    if algo == "fast":
        ct = c_tilde(ssm, ell)
        return lambda: fast_output_filter(ssm.a, ssm.B, ct, ell)
    if algo == "fast+ctilde":
        return lambda: output_filter(ssm, ell)
    if algo == "closed-loop-fast":
        return lambda: fast_closed_loop_rollout(ssm, x0, ell)
    if algo == "closed-loop-recurrent":
        return lambda: closed_loop_rollout(ssm, x0, ell)
    raise ValueError(f"unknown algo {algo!r}")


def run_bench(
    ell_grid: Sequence[int],
    d_grid: Sequence[int],
    reps: int = MIN_REPS,
    algos: Iterable[str] = ALGOS,
    seed: int = 0,
    progress: Optional[Callable[[BenchRecord], None]] = None,
) -> List[BenchRecord]:
    """Time every (algo, ell, d) cell; one random instance per (d, seed)."""
    if not ell_grid or not d_grid:
        raise ValueError("ell and d grids must be non-empty")
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}, got {reps}")
    algos = list(algos)
    for algo in algos:
        if algo not in ALGOS:
            raise ValueError(f"unknown algo {algo!r}; choose from {', '.join(ALGOS)}")
    records = []
    for d in d_grid:
        rng = np.random.default_rng([seed, d])
        ssm = bench_ssm(d, rng, with_k=True)
        x0 = rng.standard_normal(d)
        for ell in ell_grid:
            for algo in algos:
                t = time_ns(_task(algo, ssm, ell, x0), reps)
                q1, med, q3 = np.percentile(t, [25, 50, 75])
                rec = BenchRecord(algo, int(ell), int(d), float(med), float(q3 - q1), reps)
                records.append(rec)
                if progress is not None:
                    progress(rec)
    return records


def loglog_slope(records: Sequence[BenchRecord], algo: str = "fast", d: Optional[int] = None) -> float:
    """Least-squares slope of log(median time) against log(ell) for one algo (and d)."""
    pts = [(r.ell, r.median_ns) for r in records if r.algo == algo and (d is None or r.d == d)]
    if len(pts) < 2:
        raise ValueError(f"need at least two ell values for {algo!r}")
    ell, t = np.array(pts, dtype=np.float64).T
    return float(np.polyfit(np.log(ell), np.log(t), 1)[0])


def write_csv(records: Sequence[BenchRecord], fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=COLUMNS)
    writer.writeheader()
    for r in records:
        writer.writerow(asdict(r))
