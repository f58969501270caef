"""Desk-scale fitting: least squares for C and K, exact gradients, gradient descent.

Prediction convention for a single SSM on a batch of sequences (rows of
``u``, each starting from ``x_0 = 0``)::

    p_k = C x_{k+1} + D u_k = (F * u)_k + D u_k,   F_j = C A^j B

Loss is the (optionally weighted) mean of ``(p_k - t_k)^2``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
import scipy.linalg

from .core import Ssm, apply, apply_row, dense, normalize_stability
from .errors import DimensionError, DivergenceError
from .spectral import linear_convolution

DIVERGENCE_LOSS = 1e6
RATE_RECOVERY = 1.02


class Gradients(NamedTuple):
    a: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    loss: float


@dataclass
class FitReport:
    final_loss: float
    recovered: Ssm
    transfer_error: Optional[float] = None
    param_trace: Optional[List[float]] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "final_loss": self.final_loss,
            "transfer_error": self.transfer_error,
            "recovered": self.recovered.to_dict(),
        }
        if self.param_trace is not None:
            out["param_trace"] = list(self.param_trace)
        out.update(self.extras)
        return out


def fit_c_least_squares(X, y, ridge: float = 0.0) -> np.ndarray:
    """``argmin ||X c - y||^2 + ridge ||c||^2`` through the normal equations (Cholesky)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionError(f"X must be n x d with n={y.size}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    G = X.T @ X
    G[np.diag_indices_from(G)] += ridge
    try:
        factor = scipy.linalg.cho_factor(G)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("normal matrix is singular; use ridge > 0") from None
    return scipy.linalg.cho_solve(factor, X.T @ y)


def state_sequence(ssm: Ssm, u) -> np.ndarray:
    """States ``x_1 .. x_ell`` (row k is the state after consuming ``u[k]``)."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty((u.size, ssm.d))
    x = np.zeros(ssm.d)
    for k, uk in enumerate(u):
        x = apply(ssm.A, x) + ssm.B * uk
        out[k] = x
    return out


def fit_closed_loop_k(decoder_inputs, states, ridge: float = 0.0) -> np.ndarray:
    """Least-squares K per channel: ``K x_{k+1} ~ u_bar_{k+1}``.

    ``decoder_inputs`` is ``s x ell``; ``states[i]`` is the ``ell x d`` array
    from :func:`state_sequence` for channel i. A rank-deficient state matrix
    at ``ridge = 0`` falls back to the minimum-norm solution.
    """
    u = np.atleast_2d(np.asarray(decoder_inputs, dtype=np.float64))
    if len(states) != u.shape[0]:
        raise DimensionError("one state sequence per decoder channel is required")
    rows = []
    for ubar, X in zip(u, states):
        X = np.asarray(X, dtype=np.float64)
        rows.append(_lstsq_with_fallback(X[:-1], ubar[1:], ridge))
    return np.array(rows)


def _as_batch(u):
    u = np.asarray(u, dtype=np.float64)
    return u[None, :] if u.ndim == 1 else u


def _filter_and_last_coord(ssm: Ssm, n: int):
    F = np.empty(n)
    beta = np.empty(n)
    x = ssm.B.copy()
    for j in range(n):
        F[j] = ssm.C @ x
        beta[j] = x[-1]
        x = apply(ssm.A, x)
    return F, beta


def _causal_conv_rows(f, u):
    n = u.shape[1]
    return np.stack([linear_convolution(f, row)[:n] for row in u])


def predictions(ssm: Ssm, u) -> np.ndarray:
    u = _as_batch(u)
    F, _ = _filter_and_last_coord(ssm, u.shape[1])
    return _causal_conv_rows(F, u) + ssm.D * u


def bptt_gradients(ssm: Ssm, u, targets, weights=None) -> Gradients:
    """Exact gradients of the mean squared one-step prediction error.

    ``u``/``targets`` are length-ell vectors or ``batch x ell`` arrays. The
    forward pass is the output filter; the backward pass pulls the tap
    gradients ``dL/dF_j`` back through ``F_j = C A^j B`` with three
    reverse-time recursions (one each for C, B and a).
    """
    u = _as_batch(u)
    t = _as_batch(targets)
    if u.shape != t.shape:
        raise DimensionError("inputs and targets must have the same shape")
    w = np.ones_like(u) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), u.shape)
    norm = w.sum()
    n = u.shape[1]
    F, beta = _filter_and_last_coord(ssm, n)
    pred = _causal_conv_rows(F, u) + ssm.D * u
    err = pred - t
    loss = float((w * err**2).sum() / norm)
    we = 2.0 * w * err / norm
    # dL/dF_j = sum_k we_k u_{k-j}: correlation of we with u
    g = np.zeros(n)
    for we_row, u_row in zip(we, u):
        g += linear_convolution(we_row, u_row[::-1])[n - 1 :]
    dD = float((we * u).sum())

    A = ssm.A
    # dC = sum_j g_j A^j B
    v = np.zeros(ssm.d)
    # dB = sum_j g_j (C A^j)^T
    r = np.zeros(ssm.d)
    for j in range(n - 1, -1, -1):
        v = apply(A, v) + g[j] * ssm.B
        r = apply_row(r, A) + g[j] * ssm.C
    # da_i = sum_{r,s} g_{r+s+1} (C A^r)_i (A^s B)_{d-1} = sum_r gamma_r (C A^r)_i
    da = np.zeros(ssm.d)
    if n > 1:
        gamma = linear_convolution(g[1:], beta[: n - 1][::-1])[n - 2 :]
        for k in range(n - 2, -1, -1):
            da = apply_row(da, A) + gamma[k] * ssm.C
    return Gradients(da, r, v, dD, loss)


def gradient_descent_fit(
    ssm_init: Ssm,
    series,
    epochs: int = 2000,
    lr: float = 1e-2,
    normalize: bool = False,
    momentum: float = 0.9,
    params=("a", "B", "C", "D"),
    warmup: Optional[int] = None,
    trace: bool = True,
    clip: Optional[float] = None,
    backtrack: Optional[float] = None,
) -> FitReport:
    """Fit one SSM to predict ``series[k+1]`` from ``series[:k+1]`` by heavy-ball gradient descent.

    ``series`` may be one sequence or ``batch x n`` independent sequences.
    Predictions before ``warmup`` (default d) observed samples are masked out.
    With ``normalize`` the companion column is L1-normalized after every update.
    ``params`` names the trained parameters; the rest stay frozen.

    Two optional safeguards: ``clip`` rescales the joint gradient to at most
    that Euclidean norm, and ``backtrack`` rejects any epoch whose loss exceeds
    ``backtrack`` times the previous one (parameters revert, momentum resets,
    lr halves, then grows back by 2% per accepted epoch up to ``lr``). A
    rejected epoch still counts against ``epochs``.

    Raises:
        DivergenceError: loss above 1e6 (without backtracking).
    """
    s = _as_batch(series)
    if s.shape[1] <= ssm_init.d:
        raise ValueError("series must be longer than the state size")
    unknown = set(params) - {"a", "B", "C", "D"}
    if unknown:
        raise ValueError(f"unknown parameter name(s) {sorted(unknown)}")
    u, t = s[:, :-1], s[:, 1:]
    warm = ssm_init.d if warmup is None else warmup
    w = np.ones_like(u)
    w[:, : max(0, warm - 1)] = 0.0
    theta = {"a": ssm_init.a.copy(), "B": ssm_init.B.copy(), "C": ssm_init.C.copy(), "D": np.array(ssm_init.D)}
    vel = {k: np.zeros_like(v) for k, v in theta.items()}
    losses = []
    rejected = 0
    rate = lr
    saved = None
    ssm = ssm_init
    t0 = time.perf_counter()
    for epoch in range(epochs):
        grads = bptt_gradients(ssm, u, t, w)
        if backtrack is not None and saved is not None and not grads.loss <= backtrack * saved[1]:
            theta = dict(saved[0])
            vel = {k: np.zeros_like(v) for k, v in theta.items()}
            rate *= 0.5
            rejected += 1
            losses.append(saved[1])
            ssm = Ssm.from_arrays(theta["a"], theta["B"], theta["C"], float(theta["D"]), ssm_init.K)
            continue
        if not grads.loss <= DIVERGENCE_LOSS:
            raise DivergenceError(f"loss {grads.loss:.3g} at epoch {epoch} exceeds {DIVERGENCE_LOSS:g}; lower lr")
        saved = (dict(theta), grads.loss)
        losses.append(grads.loss)
        if backtrack is not None:
            rate = min(lr, rate * RATE_RECOVERY)
        step = {name: np.asarray(getattr(grads, name)) for name in params}
        if clip is not None:
            norm = np.sqrt(sum(float(np.sum(g**2)) for g in step.values()))
            if norm > clip:
                step = {name: g * (clip / norm) for name, g in step.items()}
        for name in params:
            vel[name] = momentum * vel[name] - rate * step[name]
            theta[name] = theta[name] + vel[name]
        if normalize:
            theta["a"] = normalize_stability(theta["a"])
        ssm = Ssm.from_arrays(theta["a"], theta["B"], theta["C"], float(theta["D"]), ssm_init.K)
    final = bptt_gradients(ssm, u, t, w).loss
    if backtrack is not None and saved is not None and not final <= saved[1]:
        ssm = Ssm.from_arrays(saved[0]["a"], saved[0]["B"], saved[0]["C"], float(saved[0]["D"]), ssm_init.K)
        final = saved[1]
    if not final <= DIVERGENCE_LOSS:
        raise DivergenceError(f"final loss {final:.3g} exceeds {DIVERGENCE_LOSS:g}")
    return FitReport(
        final_loss=final,
        recovered=ssm,
        param_trace=losses if trace else None,
        extras={
            "epochs": epochs,
            "lr": lr,
            "final_lr": rate,
            "momentum": momentum,
            "clip": clip,
            "rejected_epochs": rejected,
            "seconds": time.perf_counter() - t0,
        },
    )


def frequency_response(ssm: Ssm, n_points: int = 256) -> tuple:
    """``(omega, H)`` with ``H(e^{i w}) = C (e^{i w} I - A)^{-1} B + D`` on ``w in [0, pi]``.

    Grid points where ``e^{i w} I - A`` is numerically singular get ``inf``.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    omega = np.linspace(0.0, np.pi, n_points)
    A = dense(ssm.A)
    eye = np.eye(ssm.d)
    H = np.empty(n_points, dtype=np.complex128)
    for j, w in enumerate(omega):
        M = np.exp(1j * w) * eye - A
        if np.linalg.cond(M) > 1e14:
            H[j] = np.inf
            continue
        H[j] = ssm.C @ np.linalg.solve(M, ssm.B) + ssm.D
    return omega, H


def ar_transfer_function(phi, omega) -> np.ndarray:
    """``sum_i phi_i e^{-i w i}``: the frequency response of the exact AR predictor."""
    phi = np.asarray(phi, dtype=np.float64)
    lags = np.arange(1, phi.size + 1)
    return np.exp(-1j * np.outer(omega, lags)) @ phi


def write_frequency_csv(path, omega, H) -> None:
    """Frequency-response grid as CSV with columns omega, re, im, magnitude."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega", "re", "im", "magnitude"])
        for w, h in zip(omega, H):
            writer.writerow([repr(float(w)), repr(float(h.real)), repr(float(h.imag)), repr(float(abs(h)))])


def fit_forecast_network(net, series, ell: int, stride: int = 1, ridge: float = 0.0, warmup: Optional[int] = None):
    """Fit every decoder C (next-value head) and K (next-input head) by least squares.

    Training rows come from lag windows of length ``ell`` taken every
    ``stride`` steps from ``series`` (``m x n``), each run from a zero state,
    so the fit sees exactly the states that forecasting will see. Rows whose
    state has consumed fewer than ``warmup`` samples (default d) are
    dropped, as in :func:`gradient_descent_fit`. Channel i
    targets feature ``argmax(readout[:, i])``. Both heads are fitted
    independently, which is the equal-weight joint loss solved exactly.
    """
    from . import model

    s = np.atleast_2d(np.asarray(series, dtype=np.float64))
    if s.shape[0] != net.m:
        raise DimensionError(f"series has {s.shape[0]} features, network expects {net.m}")
    if s.shape[1] < ell + 1:
        raise ValueError("series is shorter than one lag window plus a target")
    starts = range(0, s.shape[1] - ell, stride)
    skip = max(0, (net.decoder.ssms[0].d if warmup is None else warmup) - 1)
    if skip >= ell:
        raise ValueError(f"warm-up of {skip + 1} samples leaves no rows in a window of {ell}")
    feats = np.argmax(net.readout, axis=0)
    rows = [[] for _ in range(net.s)]
    c_targets = [[] for _ in range(net.s)]
    k_targets = [[] for _ in range(net.s)]
    for st in starts:
        win = s[:, st : st + ell + 1]
        z = model.decoder_inputs(net, win)
        for i, ssm in enumerate(net.decoder.ssms):
            X = state_sequence(ssm, z[i])
            rows[i].append(X[skip:-1])
            c_targets[i].append(win[feats[i], skip + 1 :])
            k_targets[i].append(z[i, skip + 1 :])
    new = []
    for i, ssm in enumerate(net.decoder.ssms):
        X = np.concatenate(rows[i])
        C = _lstsq_with_fallback(X, np.concatenate(c_targets[i]), ridge)
        K = _lstsq_with_fallback(X, np.concatenate(k_targets[i]), ridge)
        new.append(ssm.replace(C=C, K=K))
    decoder = model.MultiSsmLayer(tuple(new), net.decoder.ffn, net.decoder.frozen)
    return model.Network(net.encoder, net.layers, decoder, net.readout, net.config)


def _lstsq_with_fallback(X, y, ridge):
    G = X.T @ X
    if ridge > 0 or np.linalg.matrix_rank(G) == G.shape[0]:
        return fit_c_least_squares(X, y, ridge)
    return np.linalg.lstsq(X, y, rcond=None)[0]
