"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``. Tolerances are
the acceptance tolerances, unchanged.
"""

import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import dense_closed_loop, random_ssm, stable_ar

from companion_ssm import bench, experiments
from companion_ssm.constructions import (
    arma_shifted_ssm,
    arma_two_head,
    diff_c_vector,
    lti_to_companion,
    ma_residual_c,
    ma_smoothing_c,
    ses_to_ar,
    shift_ssm,
)
from companion_ssm.core import CompanionMatrix, Ssm, dense, normalize_stability
from companion_ssm.filters import (
    apply_filter,
    closed_loop_rollout,
    fast_closed_loop_rollout,
    naive_output_filter,
    output_filter,
)
from companion_ssm.train import bptt_gradients


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
        assert passed, detail

    return emit


def pre_scan(ssm, u):
    """``y_k = C x_k + D u_k`` with dense A from a zero state."""
    A = dense(ssm.A)
    x = np.zeros(ssm.d)
    out = np.empty(len(u))
    for k, uk in enumerate(u):
        out[k] = ssm.C @ x + ssm.D * uk
        x = A @ x + ssm.B * uk
    return out


def post_scan(ssm, u):
    A = dense(ssm.A)
    x = np.zeros(ssm.d)
    out = np.empty(len(u))
    for k, uk in enumerate(u):
        x = A @ x + ssm.B * uk
        out[k] = ssm.C @ x
    return out


def test_criterion_1_fast_filter_matches_naive(report):
    rng = np.random.default_rng(101)
    ells = (1, 2, 16, 720, 1024)
    worst, wide = 0.0, 0
    start = time.perf_counter()
    for t in range(200):
        ell = ells[t % len(ells)]
        d = int(rng.integers(1, 129))
        wide += d > ell
        ssm = random_ssm(rng, d)
        worst = max(worst, float(np.max(np.abs(output_filter(ssm, ell) - naive_output_filter(ssm, ell)))))
    seconds = time.perf_counter() - start
    report(
        1,
        worst < 1e-7 and seconds < 10 and wide > 0,
        f"200 instances ({wide} with d > ell), max error {worst:.2e} (< 1e-7), {seconds:.2f} s (< 10 s)",
    )


@pytest.mark.slow
def test_criterion_2_filter_complexity(report):
    ells = [1 << k for k in range(12, 18)]
    recs = bench.run_bench(ells, [1024], reps=5, algos=["fast"], seed=0)
    slope = bench.loglog_slope(recs, "fast", 1024)
    big = bench.run_bench([65536], [4096], reps=5, algos=["naive", "fast"], seed=0)
    med = {r.algo: r.median_ns for r in big}
    speedup = med["naive"] / med["fast"]
    report(
        2,
        0.9 <= slope <= 1.3 and speedup >= 2.0,
        f"log-log slope {slope:.3f} (in [0.9, 1.3]) at d=1024; speedup at (65536, 4096) {speedup:.1f}x (>= 2x)",
    )


def test_criterion_3_closed_loop_three_way(report):
    rng = np.random.default_rng(303)
    worst = 0.0
    done = 0
    while done < 100:
        d, h = int(rng.integers(1, 33)), int(rng.integers(1, 129))
        ssm = random_ssm(rng, d, with_k=True)
        scale = rng.uniform(0.1, 1.0)
        ssm = ssm.replace(B=ssm.B * scale, K=ssm.K * scale)
        if np.max(np.abs(np.linalg.eigvals(dense(ssm.A) + np.outer(ssm.B, ssm.K)))) >= 1.0:
            continue
        x0 = rng.standard_normal(d)
        ref = dense_closed_loop(ssm, x0, h)
        rec = closed_loop_rollout(ssm, x0, h)[0]
        fast = fast_closed_loop_rollout(ssm, x0, h)
        worst = max(worst, np.max(np.abs(fast - ref)), np.max(np.abs(rec - ref)), np.max(np.abs(fast - rec)))
        done += 1
    report(3, worst < 1e-7, f"100 instances, three-way max error {worst:.2e} (< 1e-7)")


@pytest.mark.slow
@pytest.mark.parametrize("p", [4, 6])
def test_criterion_4_ar_recovery(report, p):
    ls = experiments.ar_recovery(p=p, mode="least_squares")
    gd = experiments.ar_recovery(p=p, mode="gradient", epochs=2000)
    e = gd.extras
    passed = (
        ls.transfer_error < 1e-8
        and e["heldout_mse"] < 1e-4
        and gd.transfer_error < 1e-2
        and e["seconds"] < 30
    )
    report(
        4,
        passed,
        f"AR({p}) least squares transfer error {ls.transfer_error:.1e} (< 1e-8); gradient descent "
        f"held-out MSE {e['heldout_mse']:.1e} (< 1e-4), transfer error {gd.transfer_error:.1e} (< 1e-2), "
        f"{e['seconds']:.1f} s (< 30 s), 2000 epochs",
    )


def arma_shifted_recursion(phi, theta, n):
    y = np.zeros(n)
    y[0] = 1.0
    for k in range(n - 1):
        acc = y[k]
        acc += sum(c * y[k + 1 - i] for i, c in enumerate(phi, 1) if k + 1 - i >= 0)
        acc += sum(c * y[k - j] for j, c in enumerate(theta, 1) if k - j >= 0)
        y[k + 1] = acc
    return y


def arma_noise_recursion(phi, theta, e):
    y = np.zeros(e.size)
    for k in range(e.size):
        acc = e[k]
        acc += sum(c * y[k - i] for i, c in enumerate(phi, 1) if k - i >= 0)
        acc += sum(c * e[k - j] for j, c in enumerate(theta, 1) if k - j >= 0)
        y[k] = acc
    return y


def test_criterion_5_constructions(report):
    rng = np.random.default_rng(505)
    arma_err = 0.0
    for _ in range(50):
        p, q = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        phi, theta = stable_ar(rng, p, 0.5), 0.4 * rng.standard_normal(q)
        y = arma_shifted_recursion(phi, theta, 64)
        scale = max(1.0, np.abs(y).max())
        arma_err = max(arma_err, np.max(np.abs(post_scan(arma_shifted_ssm(phi, theta), y)[:-1] - y[1:])) / scale)
        phi = stable_ar(rng, p, 0.9)
        e = rng.standard_normal(64)
        ar, ma = arma_two_head(phi, theta)
        y = arma_noise_recursion(phi, theta, e)
        arma_err = max(arma_err, np.max(np.abs(pre_scan(ar, y) + pre_scan(ma, e) - y)))
    # exact rational weights of the binary alpha; "exact" means within floating-point rounding
    ses_ulps = 0.0
    for alpha in (0.1, 0.3, 0.5, 0.77):
        for p in (1, 5, 20):
            got = ses_to_ar(alpha, p)
            a = Fraction(alpha)
            for i in range(1, p + 1):
                w = a * (1 - a) ** (i - 1)
                ses_ulps = max(ses_ulps, float(abs(Fraction(got[i - 1]) - w)) / np.spacing(float(w)))
    ses_exact = ses_ulps <= 0.5
    markov_err = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 11))
        A = rng.standard_normal((d, d))
        A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
        B, C = rng.standard_normal(d), rng.standard_normal(d)
        ssm = lti_to_companion(A, B, C)
        G = dense(ssm.A)
        for i in range(2 * d + 1):
            lhs = C @ np.linalg.matrix_power(A, i) @ B
            rhs = ssm.C @ np.linalg.matrix_power(G, i) @ ssm.B
            markov_err = max(markov_err, abs(lhs - rhs))
    report(
        5,
        arma_err < 1e-8 and ses_exact and markov_err < 1e-8,
        f"ARMA both forms max error {arma_err:.1e} (< 1e-8); SES weights within {ses_ulps:.1f} ulp of exact; "
        f"LTI Markov parameters max error {markov_err:.1e} (< 1e-8)",
    )


def test_criterion_6_stability(report):
    rng = np.random.default_rng(606)
    worst_rho = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 33))
        a = normalize_stability(rng.standard_normal(d) * rng.choice([1e-3, 1.0, 1e3]))
        worst_rho = max(worst_rho, np.max(np.abs(np.linalg.eigvals(dense(CompanionMatrix(a))))))
    # sum|a| = 1 makes the column-sum norm of A exactly 1, so |C A^k B| <= ||C|| ||B|| sqrt(d)
    ell, worst_ratio = 4096, 0.0
    for t in range(40):
        d = int(rng.integers(1, 65))
        ssm = random_ssm(rng, d)
        if t % 10 == 0:
            ssm = ssm.replace(a=np.eye(d)[-1])  # cyclic shift: spectral radius exactly 1
        taps = naive_output_filter(ssm, ell)
        bound = np.linalg.norm(ssm.C) * np.linalg.norm(ssm.B) * np.sqrt(d)
        worst_ratio = max(worst_ratio, np.max(np.abs(taps)) / bound)
    report(
        6,
        worst_rho <= 1 + 1e-9 and worst_ratio <= 1.0,
        f"1000 normalized vectors, max spectral radius {worst_rho:.12f} (<= 1 + 1e-9); "
        f"taps over ell=4096 at most {worst_ratio:.3f} x ||C|| ||B|| sqrt(d)",
    )


def test_criterion_7_gradients(report):
    rng = np.random.default_rng(707)
    worst, h = 0.0, 1e-5
    for _ in range(50):
        d, ell = int(rng.integers(1, 9)), int(rng.integers(2, 65))
        ssm = random_ssm(rng, d).replace(D=float(rng.standard_normal()))
        u, t = rng.standard_normal(ell), rng.standard_normal(ell)
        g = bptt_gradients(ssm, u, t)
        theta = np.concatenate([ssm.a, ssm.B, ssm.C, [ssm.D]])
        analytic = np.concatenate([g.a, g.B, g.C, [g.D]])

        def loss(vec):
            s = Ssm.from_arrays(vec[:d], vec[d : 2 * d], vec[2 * d : 3 * d], float(vec[-1]))
            return bptt_gradients(s, u, t).loss

        for i in range(theta.size):
            e = np.zeros(theta.size)
            e[i] = h
            fd = (loss(theta + e) - loss(theta - e)) / (2 * h)
            # relative 1e-4 with an absolute floor of 1e-7, as a fraction of the allowance
            worst = max(worst, abs(analytic[i] - fd) / (1e-4 * abs(fd) + 1e-7))
    report(7, worst <= 1.0, f"50 instances, worst gradient error is {worst:.3f} of the allowed 1e-4 rel + 1e-7 abs")


def test_criterion_8_preprocessing(report):
    rng = np.random.default_rng(808)
    worst_poly = 0.0
    for k in (1, 2, 3):
        for d in (k + 1, 8, 16):
            for _ in range(5):
                coeffs = rng.uniform(-2, 2, size=k)  # degree k - 1
                u = np.polyval(coeffs, np.arange(200) / 20)
                out = apply_filter(output_filter(shift_ssm(diff_c_vector(k, d)), u.size), u)
                worst_poly = max(worst_poly, np.max(np.abs(out[d:])))
    worst_ma = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 33))
        n = int(rng.integers(2, d + 1))
        u = rng.standard_normal(128)
        resid = apply_filter(output_filter(shift_ssm(ma_residual_c(n, d)), u.size), u)
        smooth = apply_filter(output_filter(shift_ssm(ma_smoothing_c(n, d)), u.size), u)
        worst_ma = max(worst_ma, np.max(np.abs(resid - (u - smooth))))
    report(
        8,
        worst_poly < 1e-9 and worst_ma < 1e-9,
        f"differencing residual {worst_poly:.1e} (< 1e-9); MA residual identity error {worst_ma:.1e}",
    )


def test_criterion_9_horizon_transfer(report):
    out = experiments.horizon_transfer(h_fit=192, h_eval=576)
    report(
        9,
        out["ratio"] <= 3.0,
        f"576-step MSE {out['mse_eval_horizon']:.3f} vs 192-step MSE {out['mse_fit_horizon']:.3f}, "
        f"ratio {out['ratio']:.2f} (<= 3) over {out['windows']} test windows",
    )
