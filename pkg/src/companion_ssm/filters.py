"""Convolution filters of companion SSMs.

Tap alignment used throughout: ``f[k] = C A^k B`` and
``apply_filter(f, u)[k] = sum_{j<=k} f[k-j] u[j] = C x_{k+1}``, i.e. output k
is the state read *after* consuming ``u[k]`` (the one-step-ahead prediction).
The pre-update output ``C x_k`` is the same sequence delayed by one step.
"""

from __future__ import annotations

import functools
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import CompanionMatrix, Ssm, apply, apply_row
from .errors import DimensionError, MissingFeedbackError, SingularResolventError
from .spectral import dft, fold, idft, linear_convolution, resolvent_coefficients

SINGULAR_TOL = 1e-12
# below this, the unit circle is too close to the spectrum and the
# auto path re-evaluates on a shrunken circle instead
FALLBACK_TOL = 1e-8

TimingHook = Callable[[str, int], None]
_timing_hook: Optional[TimingHook] = None


def set_timing_hook(hook: Optional[TimingHook]):
    """Install ``hook(label, elapsed_ns)`` called after every filter construction."""
    global _timing_hook
    _timing_hook = hook


def _timed(label):
    def wrap(fn):
        def inner(*args, **kwargs):
            if _timing_hook is None:
                return fn(*args, **kwargs)
            t0 = time.perf_counter_ns()
            out = fn(*args, **kwargs)
            _timing_hook(label, time.perf_counter_ns() - t0)
            return out

        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        inner.__wrapped__ = fn
        return inner

    return wrap


@_timed("naive")
def naive_output_filter(ssm: Ssm, ell: int) -> np.ndarray:
    """``(C B, C A B, ..., C A^{ell-1} B)`` by ell structured applies, O(ell d)."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    out = np.empty(ell)
    x = ssm.B.copy()
    for k in range(ell):
        out[k] = ssm.C @ x
        x = apply(ssm.A, x)
    return out


def c_tilde(ssm: Ssm, ell: int) -> np.ndarray:
    """``C (I - A^ell)`` via ell row-applies."""
    r = ssm.C.copy()
    for _ in range(ell):
        r = apply_row(r, ssm.A)
    return ssm.C - r


def c_from_c_tilde(a, c_tilde_row, ell: int) -> np.ndarray:
    """Invert :func:`c_tilde`: solve ``C (I - A^ell) = c_tilde`` (dense, small d)."""
    A = CompanionMatrix(a)
    d = A.d
    P = np.eye(d)
    for i in range(d):
        col = P[:, i]
        for _ in range(ell):
            col = apply(A, col)
        P[:, i] = col
    return np.linalg.solve((np.eye(d) - P).T, np.asarray(c_tilde_row, dtype=np.float64))


@functools.lru_cache(maxsize=64)
def _roots_table(ell: int) -> np.ndarray:
    z = np.exp(2j * np.pi * np.arange(ell) / ell)
    z.setflags(write=False)
    return z


def _unit_roots(ell: int, radius: float) -> np.ndarray:
    # z[m] = w^{-m} / radius with w = exp(-2 pi i / ell)
    z = _roots_table(ell)
    return z if radius == 1.0 else z / radius


def _shared_row_coefficients(row, cols) -> np.ndarray:
    """``resolvent_coefficients(row, c)`` for every c in ``cols``, sharing one FFT of ``row``."""
    d = row.size
    if d <= 32:
        return np.stack([resolvent_coefficients(row, c) for c in cols])
    size = 1 << (2 * d - 2).bit_length()
    prod = np.fft.fft(row, size) * np.fft.fft(cols[:, ::-1], size, axis=-1)
    return np.fft.ifft(prod, axis=-1)[:, d - 1 : 2 * d - 1].real


def _spectrum_rank1(a, B, ct, ell, radius):
    d = a.size
    coeffs = np.concatenate([
        _shared_row_coefficients(ct, np.stack([B, a])),
        # e_d^T R v has coefficients v reversed; no convolution needed
        np.stack([B[::-1], a[::-1]]),
    ])
    if radius != 1.0:
        coeffs = coeffs * radius ** np.arange(d)
    q_cb, q_ca, q_eb, q_ea = dft(fold(coeffs, ell))
    den = _unit_roots(ell, radius) - q_ea
    return q_cb + q_ca * q_eb / np.where(den == 0, 1.0, den), den


@_timed("fast")
def fast_output_filter(a, B, c_tilde_row, ell: int, radius: float = 1.0) -> np.ndarray:
    """Output filter from its spectrum, O(ell log ell + d log d) given ``C~``.

    Writes the companion matrix as shift plus rank 1, so the resolvent on
    the roots of unity follows from Sherman-Morrison and four shift-resolvent
    quadratic forms. ``c_tilde_row`` must equal ``C (I - radius^ell A^ell)``;
    the default radius 1 is the plain unit-circle evaluation.

    Raises:
        SingularResolventError: a denominator bin is within 1e-12 of zero.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    a = np.asarray(a, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    ct = np.asarray(c_tilde_row, dtype=np.float64)
    if not (a.shape == B.shape == ct.shape) or a.ndim != 1:
        raise DimensionError("a, B and c_tilde must be vectors of equal length")
    spec, den = _spectrum_rank1(a, B, ct, ell, radius)
    mags = np.abs(den)
    m = int(np.argmin(mags))
    if mags[m] < SINGULAR_TOL:
        raise SingularResolventError(
            f"resolvent denominator vanishes at bin {m} (|den|={mags[m]:.2e})", m, mags[m]
        )
    f = idft(spec).real
    if radius != 1.0:
        f = f / radius ** np.arange(ell)
    return f


def fallback_radius(ell: int) -> float:
    # radius^ell = 1/2: bounded amplification when undoing the scaling
    return 0.5 ** (1.0 / ell)


@_timed("fast+ctilde")
def output_filter(ssm: Ssm, ell: int, method: str = "fast") -> np.ndarray:
    """Output filter with C~ built here; the fast path retreats off the unit circle if needed.

    An eigenvalue of A at an ell-th root of unity (e.g. a = [0.5, 0.5] after
    normalization has eigenvalue 1) makes the unit-circle formula 0/0 even
    though the filter is finite. In that case the same algorithm is run on
    the circle of radius ``0.5**(1/ell)``, which the spectrum cannot touch
    when the spectral radius is at most 1.
    """
    if method == "naive":
        return naive_output_filter(ssm, ell)
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")
    return _fast_with_fallback(ssm, c_tilde(ssm, ell), ell)


def _fast_with_fallback(ssm: Ssm, ct, ell: int) -> np.ndarray:
    spec, den = _spectrum_rank1(ssm.a, ssm.B, ct, ell, 1.0)
    if np.abs(den).min() >= FALLBACK_TOL:
        return idft(spec).real
    r = fallback_radius(ell)
    # C (I - r^ell A^ell) = C - r^ell (C - C~)
    ct_r = ssm.C - r**ell * (ssm.C - ct)
    return fast_output_filter.__wrapped__(ssm.a, ssm.B, ct_r, ell, radius=r)


def apply_filter(f, u) -> np.ndarray:
    """Causal convolution ``y[k] = sum_{j<=k} f[k-j] u[j]`` truncated to ``len(u)``."""
    f = np.asarray(f, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if f.shape != u.shape or f.ndim != 1:
        raise DimensionError(f"filter and input lengths differ: {f.shape} vs {u.shape}")
    return linear_convolution(f, u)[: u.size]


def last_state(ssm: Ssm, u) -> np.ndarray:
    """``x_ell`` after consuming all of ``u`` from ``x_0 = 0``."""
    x = np.zeros(ssm.d)
    for uk in np.asarray(u, dtype=np.float64):
        x = apply(ssm.A, x) + ssm.B * uk
    return x


def _feedback_apply(ssm: Ssm, x):
    # (A + B K) x
    return apply(ssm.A, x) + ssm.B * (ssm.K @ x)


def closed_loop_rollout(ssm: Ssm, x_start, h: int):
    """Iterate ``x <- (A + B K) x`` h times, emitting ``C x`` and ``K x`` after each update."""
    if ssm.K is None:
        raise MissingFeedbackError("closed-loop rollout needs K")
    if h < 1:
        raise ValueError("h must be >= 1")
    x = np.asarray(x_start, dtype=np.float64)
    if x.shape != (ssm.d,):
        raise DimensionError(f"x_start must have shape ({ssm.d},)")
    y = np.empty(h)
    u_hat = np.empty(h)
    for i in range(h):
        x = _feedback_apply(ssm, x)
        y[i] = ssm.C @ x
        u_hat[i] = ssm.K @ x
    return y, u_hat


def _closed_loop_spectrum(ssm: Ssm, v, ct, h, radius):
    a, B, K = ssm.a, ssm.B, ssm.K
    d = ssm.d
    rows = {"c": ct, "k": K}
    cols = {"v": v, "a": a, "b": B}
    coeffs = [resolvent_coefficients(rows[r], cols[c]) for r in "ck" for c in "vab"]
    coeffs += [v[::-1], a[::-1], B[::-1]]  # e_d row
    coeffs = np.stack(coeffs)
    if radius != 1.0:
        coeffs = coeffs * radius ** np.arange(d)
    (p_cv, p_ca, p_cb, p_kv, p_ka, p_kb, p_ev, p_ea, p_eb) = dft(fold(coeffs, h))
    z = _unit_roots(h, radius)
    # capacitance zI - W with W = [e_d; K] R [a, B]
    w11, w12, w21, w22 = p_ea, p_eb, p_ka, p_kb
    det = (z - w11) * (z - w22) - w12 * w21
    safe = np.where(det == 0, 1.0, det)
    s1 = ((z - w22) * p_ev + w12 * p_kv) / safe
    s2 = (w21 * p_ev + (z - w11) * p_kv) / safe
    return p_cv + p_ca * s1 + p_cb * s2, det


def _closed_loop_c_tilde(ssm: Ssm, h: int, radius: float) -> np.ndarray:
    r = ssm.C.copy()
    for _ in range(h):
        r = apply_row(r, ssm.A) + (r @ ssm.B) * ssm.K
    return ssm.C - radius**h * r


def fast_closed_loop_rollout(ssm: Ssm, x_start, h: int, radius: Optional[float] = None) -> np.ndarray:
    """Same ``y`` as :func:`closed_loop_rollout`, via the spectrum of ``A + B K``.

    ``A + B K = S + [a, B] [e_d, K]^T`` is a shift plus rank 2, so each
    frequency bin needs a 2x2 capacitance solve (Woodbury) on top of nine
    shift-resolvent quadratic forms. ``radius=None`` retries on a shrunken
    circle when the unit circle is (numerically) singular; an explicit
    radius is used as given.
    """
    if ssm.K is None:
        raise MissingFeedbackError("closed-loop rollout needs K")
    if h < 1:
        raise ValueError("h must be >= 1")
    x = np.asarray(x_start, dtype=np.float64)
    if x.shape != (ssm.d,):
        raise DimensionError(f"x_start must have shape ({ssm.d},)")
    # y_i = C M^i x for i = 1..h is the length-h filter of v = M x
    v = _feedback_apply(ssm, x)
    radii = [1.0, fallback_radius(h)] if radius is None else [radius]
    for r in radii:
        ct = _closed_loop_c_tilde(ssm, h, r)
        spec, det = _closed_loop_spectrum(ssm, v, ct, h, r)
        mags = np.abs(det)
        tol = FALLBACK_TOL if (radius is None and r == 1.0) else SINGULAR_TOL
        if mags.min() >= tol:
            y = idft(spec).real
            return y / r ** np.arange(h) if r != 1.0 else y
    m = int(np.argmin(mags))
    raise SingularResolventError(
        f"closed-loop capacitance is singular at bin {m} (|det|={mags[m]:.2e})", m, mags[m]
    )


@dataclass(frozen=True, eq=False)
class FilterPlan:
    """Precomputed output filter and ``C~`` for one SSM at a fixed length."""

    f_y: np.ndarray
    c_tilde: np.ndarray
    ell: int
    source: Ssm

    @classmethod
    def build(cls, ssm: Ssm, ell: int, method: str = "fast") -> "FilterPlan":
        ct = c_tilde(ssm, ell)
        if method == "fast":
            f = _fast_with_fallback(ssm, ct, ell)
        else:
            f = output_filter(ssm, ell, method=method)
        f.setflags(write=False)
        ct.setflags(write=False)
        return cls(f, ct, ell, ssm)

    @classmethod
    def from_c_tilde(cls, a, B, c_tilde_row, ell: int) -> "FilterPlan":
        """Build a plan when ``C~`` itself is the parameter; C is recovered by a dense solve."""
        C = c_from_c_tilde(a, c_tilde_row, ell)
        ssm = Ssm.from_arrays(a, B, C)
        f = fast_output_filter(ssm.a, ssm.B, c_tilde_row, ell)
        return cls(f, np.asarray(c_tilde_row, dtype=np.float64), ell, ssm)

    def apply(self, u) -> np.ndarray:
        return apply_filter(self.f_y, u)


class PlanCache:
    """Bounded cache of FilterPlans keyed on the exact parameter bytes and ell."""

    def __init__(self, maxsize: int = 1024):
        self.maxsize = maxsize
        self._plans: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    @staticmethod
    def key(ssm: Ssm, ell: int):
        return (ssm.a.tobytes(), ssm.B.tobytes(), ssm.C.tobytes(), ell)

    def get(self, ssm: Ssm, ell: int) -> FilterPlan:
        k = self.key(ssm, ell)
        with self._lock:
            plan = self._plans.get(k)
            if plan is not None:
                self._plans.move_to_end(k)
                return plan
        plan = FilterPlan.build(ssm, ell)
        with self._lock:
            self._plans[k] = plan
            while len(self._plans) > self.maxsize:
                self._plans.popitem(last=False)
        return plan

    def __len__(self):
        return len(self._plans)

    def clear(self):
        with self._lock:
            self._plans.clear()


default_cache = PlanCache()
