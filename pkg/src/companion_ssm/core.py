"""Companion matrices and single-input single-output state-space systems.

A companion matrix is stored only as its last column ``a``; every product
with it runs in O(d) by treating it as a down-shift plus a rank-1 term::

    A = S + a e_d^T

The dense form is materialized only by :func:`dense`, which exists for tests
and oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError


def _frozen_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CompanionMatrix:
    a: np.ndarray

    def __post_init__(self):
        a = _frozen_vector(self.a, "a")
        if a.size == 0:
            raise DimensionError("companion matrix needs d >= 1")
        object.__setattr__(self, "a", a)

    @property
    def d(self) -> int:
        return self.a.size

    @classmethod
    def shift(cls, d: int) -> "CompanionMatrix":
        return cls(np.zeros(d))


@dataclass(frozen=True, eq=False)
class Ssm:
    """One SISO system ``x' = A x + B u``, ``y = C x + D u`` with optional feedback head K.

    K is the closed-loop row vector that predicts the next input from the
    state (``u_hat = K x``).
    """

    A: CompanionMatrix
    B: np.ndarray
    C: np.ndarray
    D: float = 0.0
    K: Optional[np.ndarray] = None

    def __post_init__(self):
        if not isinstance(self.A, CompanionMatrix):
            object.__setattr__(self, "A", CompanionMatrix(self.A))
        d = self.A.d
        B = _frozen_vector(self.B, "B")
        C = _frozen_vector(self.C, "C")
        if B.size != d or C.size != d:
            raise DimensionError(f"B and C must have length d={d}, got {B.size} and {C.size}")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        D = float(self.D)
        if not np.isfinite(D):
            raise ValueError("D is not finite")
        object.__setattr__(self, "D", D)
        if self.K is not None:
            K = _frozen_vector(self.K, "K")
            if K.size != d:
                raise DimensionError(f"K must have length d={d}, got {K.size}")
            object.__setattr__(self, "K", K)

    @classmethod
    def from_arrays(cls, a, B, C, D=0.0, K=None) -> "Ssm":
        return cls(CompanionMatrix(a), B, C, D, K)

    @property
    def a(self) -> np.ndarray:
        return self.A.a

    @property
    def d(self) -> int:
        return self.A.d

    def replace(self, **changes) -> "Ssm":
        fields = {"a": self.a, "B": self.B, "C": self.C, "D": self.D, "K": self.K}
        unknown = set(changes) - set(fields)
        if unknown:
            raise TypeError(f"unknown Ssm fields: {sorted(unknown)}")
        fields.update(changes)
        return Ssm.from_arrays(**fields)

    def to_dict(self) -> dict:
        out = {
            "d": self.d,
            "a": self.a.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D,
        }
        if self.K is not None:
            out["K"] = self.K.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Ssm":
        try:
            ssm = cls.from_arrays(data["a"], data["B"], data["C"], data.get("D", 0.0), data.get("K"))
        except KeyError as exc:
            raise ValueError(f"Ssm JSON is missing field {exc.args[0]!r}") from None
        if "d" in data and int(data["d"]) != ssm.d:
            raise DimensionError(f"declared d={data['d']} but vectors have length {ssm.d}")
        return ssm


def _check_len(x: np.ndarray, d: int, what: str):
    if x.shape != (d,):
        raise DimensionError(f"{what} must have shape ({d},), got {x.shape}")


def apply(A: CompanionMatrix, x) -> np.ndarray:
    """Return ``A @ x`` in O(d)."""
    x = np.asarray(x, dtype=np.float64)
    _check_len(x, A.d, "state")
    out = np.empty(A.d)
    out[0] = 0.0
    out[1:] = x[:-1]
    out += A.a * x[-1]
    return out


def apply_row(r, A: CompanionMatrix) -> np.ndarray:
    """Return ``r @ A`` for a row vector r in O(d)."""
    r = np.asarray(r, dtype=np.float64)
    _check_len(r, A.d, "row vector")
    out = np.empty(A.d)
    out[:-1] = r[1:]
    out[-1] = r @ A.a
    return out


def step(ssm: Ssm, x, u: float):
    """Advance one step.

    Returns ``(x_next, y_pre, y_post)`` where ``y_pre = C x + D u`` reads the
    state before the update and ``y_post = C x_next`` reads it after (the
    one-step-ahead prediction). Callers pick the convention they need.
    """
    x = np.asarray(x, dtype=np.float64)
    y_pre = float(ssm.C @ x) + ssm.D * u
    x_next = apply(ssm.A, x) + ssm.B * u
    return x_next, y_pre, float(ssm.C @ x_next)


def power_apply(A: CompanionMatrix, v, k: int) -> np.ndarray:
    if k < 0:
        raise ValueError("k must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    _check_len(v, A.d, "vector")
    out = v.copy()
    for _ in range(k):
        out = apply(A, out)
    return out


def normalize_stability(a) -> np.ndarray:
    """Scale ``a`` to unit L1 norm.

    With ``sum|a_i| = 1`` the Gershgorin bound caps the spectral radius of the
    companion matrix at 1. The zero vector (the shift matrix) is returned as is.
    """
    a = np.asarray(a, dtype=np.float64)
    total = np.abs(a).sum()
    if total == 0.0:
        return a.copy()
    return a / total


def dense(A: CompanionMatrix) -> np.ndarray:
    d = A.d
    M = np.eye(d, k=-1)
    M[:, -1] += A.a
    return M
