"""Closed-form companion realizations of classical models.

Every construction here is exact: AR(p), both ARMA forms, simple exponential
smoothing (as a truncated AR), controllable LTI systems (Krylov similarity),
and the frozen preprocessing filters (differencing, moving average, moving
average residual) that live entirely in C with ``a = 0, B = e_1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Optional

import numpy as np
import scipy.linalg

from .core import Ssm
from .errors import NotControllableError

KRYLOV_RATIO_TOL = 1e-10


@dataclass(frozen=True)
class ArmaSpec:
    phi: tuple = ()
    theta: tuple = ()
    alpha: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(x) for x in self.phi))
        object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


def _e1(d):
    e = np.zeros(d)
    e[0] = 1.0
    return e


def shift_ssm(C, D: float = 0.0, K=None) -> Ssm:
    """SSM with ``a = 0`` and ``B = e_1``: a sliding-window FIR filter with kernel C."""
    C = np.asarray(C, dtype=np.float64)
    return Ssm.from_arrays(np.zeros(C.size), _e1(C.size), C, D, K)


def ar_to_ssm(phi) -> Ssm:
    """AR(p) as a shift SSM: ``C x_{k+1} = sum_i phi_i u_{k+1-i}``."""
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    if phi.size == 0:
        raise ValueError("AR order p must be >= 1")
    return shift_ssm(phi)


def arma_shifted_ssm(phi, theta) -> Ssm:
    """ARMA(p, q) when the inputs are the outputs delayed by one step.

    Substituting ``u_k = y_{k-1}`` turns the ARMA recursion into a pure
    autoregression ``y_{k+1} = (1 + phi_1) y_k + sum_i (theta_i + phi_{i+1}) y_{k-i}``,
    which a shift SSM fed with y reproduces. The state needs
    ``d = max(p, q + 1)`` lags.
    """
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    p, q = phi.size, theta.size
    if p == 0 and q == 0:
        raise ValueError("ARMA needs p >= 1 or q >= 1")
    d = max(p, q + 1)
    phi_pad = np.zeros(d + 1)
    phi_pad[1 : p + 1] = phi
    theta_pad = np.zeros(d)
    theta_pad[1 : q + 1] = theta
    C = theta_pad + phi_pad[1:]
    C[0] += 1.0
    return shift_ssm(C)


def arma_two_head(phi, theta):
    """ARMA(p, q) driven by noise, split into an AR head and an MA head.

    Both heads use the pre-update output ``y_k = C x_k + D u_k``; the AR head
    is fed the series itself and the MA head the noise. ``y = y_ar + y_ma``.
    """
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if phi.size == 0 or theta.size == 0:
        raise ValueError("two-head ARMA needs p >= 1 and q >= 1")
    return shift_ssm(phi), shift_ssm(theta, D=1.0)


def ses_to_ar(alpha: float, p: int) -> np.ndarray:
    """Simple exponential smoothing truncated to p lags: ``phi_i = alpha (1-alpha)^(i-1)``.

    The weights are evaluated in rational arithmetic and rounded once, so
    each is the correctly rounded value for the given binary ``alpha``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if p < 1:
        raise ValueError("p must be >= 1")
    a = Fraction(float(alpha))
    out = np.empty(p)
    w = a
    for i in range(p):
        out[i] = float(w)
        w *= 1 - a
    return out


def krylov_matrix(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64).reshape(-1)
    d = B.size
    cols = [B]
    for _ in range(d - 1):
        cols.append(A @ cols[-1])
    return np.column_stack(cols)


def lti_to_companion(A_dense, B, C, D: float = 0.0) -> Ssm:
    """Companion realization of a controllable LTI system.

    With the Krylov matrix ``K = [B, AB, ..., A^{d-1} B]`` invertible,
    ``G = K^{-1} A K`` is a companion matrix whose last column solves
    ``K a = A^d B``; the realization is ``(G, e_1, C K, D)``.

    Raises:
        NotControllableError: smallest/largest singular value of K below 1e-10.
    """
    A_dense = np.asarray(A_dense, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64).reshape(-1)
    C = np.asarray(C, dtype=np.float64).reshape(-1)
    d = B.size
    if A_dense.shape != (d, d) or C.size != d:
        raise ValueError(f"A must be {d}x{d} and C length {d}")
    K = krylov_matrix(A_dense, B)
    sv = np.linalg.svd(K, compute_uv=False)
    ratio = sv[-1] / sv[0] if sv[0] > 0 else 0.0
    if ratio < KRYLOV_RATIO_TOL:
        raise NotControllableError(ratio)
    lu = scipy.linalg.lu_factor(K)
    a = scipy.linalg.lu_solve(lu, A_dense @ K[:, -1])
    return Ssm.from_arrays(a, _e1(d), C @ K, D)


def diff_c_vector(order: int, d: int) -> np.ndarray:
    """Differencing kernel ``[1], [1,-1], [1,-2,1], [1,-3,3,-1]`` zero-padded to d."""
    if not 0 <= order <= 3:
        raise ValueError("differencing order must be 0..3")
    if d <= order:
        raise ValueError(f"d={d} is too small for order {order}")
    C = np.zeros(d)
    C[: order + 1] = [(-1) ** k * comb(order, k) for k in range(order + 1)]
    return C


def ma_smoothing_c(n: int, d: int) -> np.ndarray:
    if not 1 <= n <= d:
        raise ValueError(f"need 1 <= n <= d, got n={n}, d={d}")
    C = np.zeros(d)
    C[:n] = 1.0 / n
    return C


def ma_residual_c(n: int, d: int) -> np.ndarray:
    """Residual from an n-sample moving average: identity minus :func:`ma_smoothing_c`."""
    if not 2 <= n <= d:
        raise ValueError(f"need 2 <= n <= d, got n={n}, d={d}")
    C = -ma_smoothing_c(n, d)
    C[0] += 1.0
    return C


def from_spec(spec: dict):
    """Dispatch a JSON construction request.

    Accepted keys (exactly one): ``ar``, ``arma``, ``ses``, ``lti``, ``diff``,
    ``ma``, ``ma_residual``. Returns an Ssm, or a dict ``{"ar": Ssm, "ma": Ssm}``
    for the two-head ARMA form. ``"closed_loop": true`` in the ar/ses bodies
    sets ``K = C`` so the model feeds its own predictions back.
    """
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError("construction spec must be an object with exactly one key")
    (kind, body), = spec.items()
    body = body or {}
    if kind == "ar":
        ssm = ar_to_ssm(body["phi"])
    elif kind == "ses":
        ssm = ar_to_ssm(ses_to_ar(float(body["alpha"]), int(body["p"])))
    elif kind == "arma":
        form = body.get("form", "shifted")
        phi, theta = body.get("phi", []), body.get("theta", [])
        if form == "shifted":
            ssm = arma_shifted_ssm(phi, theta)
        elif form == "two_head":
            ar, ma = arma_two_head(phi, theta)
            return {"ar": ar, "ma": ma}
        else:
            raise ValueError(f"unknown ARMA form {form!r}")
    elif kind == "lti":
        ssm = lti_to_companion(body["A"], body["B"], body["C"], body.get("D", 0.0))
    elif kind == "diff":
        ssm = shift_ssm(diff_c_vector(int(body["order"]), int(body["d"])))
    elif kind == "ma":
        ssm = shift_ssm(ma_smoothing_c(int(body["n"]), int(body["d"])))
    elif kind == "ma_residual":
        ssm = shift_ssm(ma_residual_c(int(body["n"]), int(body["d"])))
    else:
        raise ValueError(f"unknown construction {kind!r}")
    if body.get("closed_loop"):
        ssm = ssm.replace(K=ssm.C)
    return ssm
