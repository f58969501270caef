"""Independent slow oracles shared by the test modules.

Nothing here calls the package's fast paths: DFTs are direct sums, powers
are dense matrix products, convolutions are double loops.
"""

import numpy as np
import pytest

from companion_ssm.core import Ssm, dense, normalize_stability


def direct_dft(v):
    v = np.asarray(v, dtype=np.complex128)
    n = v.size
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ v


def direct_convolution(u, v):
    out = np.zeros(len(u) + len(v) - 1)
    for i, ui in enumerate(u):
        for j, vj in enumerate(v):
            out[i + j] += ui * vj
    return out


def direct_causal(f, u):
    n = len(u)
    return np.array([sum(f[k - j] * u[j] for j in range(k + 1)) for k in range(n)])


def dense_filter(ssm, ell):
    A = dense(ssm.A)
    out = np.empty(ell)
    x = ssm.B.copy()
    for k in range(ell):
        out[k] = ssm.C @ x
        x = A @ x
    return out


def dense_closed_loop(ssm, x0, h):
    M = dense(ssm.A) + np.outer(ssm.B, ssm.K)
    out = np.empty(h)
    x = np.asarray(x0, dtype=np.float64)
    for i in range(h):
        x = M @ x
        out[i] = ssm.C @ x
    return out


def dense_resolvent_quad(u, v, z):
    """``u^T (I - z S)^{-1} v`` with S the down-shift, by a dense solve."""
    d = len(u)
    S = np.eye(d, k=-1)
    return u @ np.linalg.solve(np.eye(d) - z * S, np.asarray(v, dtype=np.complex128))


def random_ssm(rng, d, with_k=False, normalized=True):
    a = rng.standard_normal(d)
    if normalized:
        a = normalize_stability(a)
    B = rng.standard_normal(d) / np.sqrt(d)
    C = rng.standard_normal(d) / np.sqrt(d)
    K = rng.standard_normal(d) / np.sqrt(d) if with_k else None
    return Ssm.from_arrays(a, B, C, 0.0, K)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dense_scan(ssm, u, x0=None):
    """Step-by-step recurrence with dense A.

    Returns ``(pre, post)`` outputs: ``pre_k = C x_k + D u_k`` and
    ``post_k = C x_{k+1}``.
    """
    A = dense(ssm.A)
    x = np.zeros(ssm.d) if x0 is None else np.asarray(x0, dtype=np.float64)
    pre, post = np.empty(len(u)), np.empty(len(u))
    for k, uk in enumerate(u):
        pre[k] = ssm.C @ x + ssm.D * uk
        x = A @ x + ssm.B * uk
        post[k] = ssm.C @ x
    return pre, post


def stable_ar(rng, p, radius=0.9):
    """AR coefficients whose characteristic roots all lie strictly inside ``radius``."""
    roots = []
    while len(roots) < p:
        if p - len(roots) >= 2 and rng.random() < 0.7:
            z = radius * rng.uniform(0.1, 1.0) * np.exp(1j * rng.uniform(0.05, np.pi - 0.05))
            roots += [z, np.conj(z)]
        else:
            roots.append(radius * rng.uniform(-1.0, 1.0))
    return -np.real(np.poly(roots))[1:]
