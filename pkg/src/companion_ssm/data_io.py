"""Synthetic series, CSV ingestion, standardization, windowing and metrics.

Series are stored feature-major: an ``m x n`` float array (m features, n
time steps). 1-D inputs are treated as a single feature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DimensionError, DivergenceError

OVERFLOW_LIMIT = 1e12
DEFAULT_SPLITS = (0.7, 0.1, 0.2)


@dataclass(frozen=True, eq=False)
class SeriesWindow:
    lag: np.ndarray
    horizon: np.ndarray
    stats: Optional[np.ndarray]
    start: int


def gen_ar_series(phi, n: int, init=None, noise_std: float = 0.0, seed=None) -> np.ndarray:
    """Generate ``u_k = sum_i phi_i u_{k-i} + eps_k`` of length n.

    ``init`` is the starting lag vector in state order, most recent first
    ``(u_{p-1}, ..., u_0)``; the returned series starts with those p values
    in time order, so the recursion holds at every index >= p. A missing
    ``init`` is drawn from a standard normal with ``seed``.

    Raises:
        DivergenceError: |u_k| exceeds 1e12 (explosive coefficients).
    """
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    p = phi.size
    if p == 0:
        raise ValueError("phi must be non-empty")
    if n <= p:
        raise ValueError(f"series length n={n} must exceed p={p}")
    rng = np.random.default_rng(seed)
    if init is None:
        init = rng.standard_normal(p)
    init = np.asarray(init, dtype=np.float64).reshape(-1)
    if init.size != p:
        raise DimensionError(f"init must have length p={p}")
    u = np.empty(n)
    u[:p] = init[::-1]
    noise = rng.standard_normal(n - p) * noise_std if noise_std > 0 else np.zeros(n - p)
    rev = phi[::-1]
    for k in range(p, n):
        u[k] = rev @ u[k - p : k] + noise[k - p]
        if not abs(u[k]) < OVERFLOW_LIMIT:
            raise DivergenceError(
                f"AR series exploded at index {k} (|u|={abs(u[k]):.3g}); "
                f"phi={phi.tolist()} is not stable"
            )
    return u


def ar_coefficients_from_roots(roots) -> np.ndarray:
    """AR coefficients whose characteristic roots are ``roots`` (conjugate pairs for real phi)."""
    poly = np.real_if_close(np.poly(np.asarray(roots)))
    # z^p - phi_1 z^{p-1} - ... - phi_p
    return -np.real(poly[1:])


def load_csv(path, value_columns: Sequence[str]) -> np.ndarray:
    """Read named numeric columns from a headered CSV into an ``m x n`` array."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in value_columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}; available: {header}")
        idx = [header.index(c) for c in value_columns]
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in idx])
            except (ValueError, IndexError):
                raise DataError(f"{path}: non-numeric or missing value in data row {row_no}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64).T


def _as_2d(series) -> np.ndarray:
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError("series must be 1-D or m x n")
    return arr


def standardize(series, train_fraction: float = DEFAULT_SPLITS[0]):
    """Standardize with mean/std of the leading ``train_fraction`` of time steps.

    Returns ``(standardized, stats)`` where ``stats`` is ``m x 2`` (mean, std).
    The output keeps the input's dimensionality.
    """
    arr = _as_2d(series)
    n_train = max(1, int(round(arr.shape[1] * train_fraction)))
    train = arr[:, :n_train]
    mean = train.mean(axis=1)
    std = train.std(axis=1)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        raise DataError(f"feature(s) {bad.tolist()} have zero variance on the train slice")
    out = (arr - mean[:, None]) / std[:, None]
    stats = np.column_stack([mean, std])
    return (out[0] if np.ndim(series) == 1 else out), stats


def inverse_standardize(series, stats) -> np.ndarray:
    arr = _as_2d(series)
    stats = np.asarray(stats, dtype=np.float64)
    out = arr * stats[:, 1:2] + stats[:, 0:1]
    return out[0] if np.ndim(series) == 1 else out


def split_bounds(n: int, splits=DEFAULT_SPLITS):
    """Chronological (train_end, val_end) indices for the given fractions."""
    train_end = int(round(n * splits[0]))
    val_end = int(round(n * (splits[0] + splits[1])))
    return train_end, val_end


def window(series, ell: int, h: int, stride: int = 1, stats=None, start: int = 0, stop: Optional[int] = None):
    """Sliding (lag, horizon) windows with lag starts at ``start, start+stride, ...``.

    Only windows whose horizon ends at or before ``stop`` (default: series end)
    are produced; with defaults the count is ``(n - ell - h) // stride + 1``.
    """
    arr = _as_2d(series)
    n = arr.shape[1] if stop is None else stop
    if ell < 1 or h < 1 or stride < 1:
        raise ValueError("ell, h and stride must be >= 1")
    if n - start < ell + h:
        raise DataError(f"series of length {n - start} is too short for lag {ell} + horizon {h}")
    out = []
    for s in range(start, n - ell - h + 1, stride):
        out.append(SeriesWindow(arr[:, s : s + ell], arr[:, s + ell : s + ell + h], stats, s))
    return out


def metrics(pred, truth):
    """Mean squared and mean absolute error."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    err = pred - truth
    return float(np.mean(err**2)), float(np.mean(np.abs(err)))
