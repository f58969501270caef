"""DFT primitives, linear convolution, and the shift-resolvent quadratic form.

Conventions: ``dft(v)[m] = sum_j v[j] * w**(m*j)`` with ``w = exp(-2*pi*i/n)``;
``idft`` carries the ``1/n`` factor.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

# below this (shorter operand length) np.convolve beats the FFT route
DIRECT_CONV_THRESHOLD = 32


def dft(v) -> np.ndarray:
    """Discrete Fourier transform of any length n >= 1.

    Backed by numpy's pocketfft, which is mixed-radix for smooth lengths and
    falls back to Bluestein's chirp-z for large prime factors.
    """
    v = np.asarray(v)
    if v.shape[-1] == 0:
        raise ValueError("dft of an empty vector")
    return np.fft.fft(v, axis=-1)


def idft(v) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] == 0:
        raise ValueError("idft of an empty vector")
    return np.fft.ifft(v, axis=-1)


def _fft_size(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def linear_convolution(u, v) -> np.ndarray:
    """Full linear convolution, length ``len(u) + len(v) - 1``."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.size == 0 or v.size == 0:
        raise ValueError("linear_convolution needs non-empty inputs")
    n = u.size + v.size - 1
    if min(u.size, v.size) <= DIRECT_CONV_THRESHOLD:
        return np.convolve(u, v)
    size = _fft_size(n)
    prod = dft(np.pad(u, (0, size - u.size))) * dft(np.pad(v, (0, size - v.size)))
    return idft(prod)[:n].real


def fold(q, ell: int) -> np.ndarray:
    """Zero-pad ``q`` to a multiple of ``ell`` and sum its length-``ell`` chunks."""
    q = np.asarray(q)
    chunks = -(-q.shape[-1] // ell)
    pad = chunks * ell - q.shape[-1]
    if pad:
        q = np.concatenate([q, np.zeros(q.shape[:-1] + (pad,), dtype=q.dtype)], axis=-1)
    return q.reshape(q.shape[:-1] + (chunks, ell)).sum(axis=-2)


def resolvent_coefficients(u, v) -> np.ndarray:
    """Coefficients of ``u^T (I - z S)^{-1} v`` as a polynomial in z.

    The shift resolvent is lower triangular with ``z**(i-j)`` below the
    diagonal, so the coefficient of ``z**k`` is ``sum_j u[j+k] v[j]``: the
    non-negative-lag half of the convolution of u with v reversed.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"quad needs equal-length vectors, got {u.shape} and {v.shape}")
    d = u.size
    return linear_convolution(u, v[::-1])[d - 1:]


def quad(u, v, ell: int, radius: float = 1.0) -> np.ndarray:
    """``[u^T (I - (radius*w^m) S)^{-1} v for m in range(ell)]``, ``w = exp(-2 pi i/ell)``.

    One linear convolution of size d plus one DFT of size ell. When d > ell
    the powers of w wrap, so the coefficient vector is folded modulo ell
    before the transform. ``radius != 1`` evaluates on a scaled circle.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    q = resolvent_coefficients(u, v)
    if radius != 1.0:
        q = q * radius ** np.arange(q.size)
    return dft(fold(q, ell))
