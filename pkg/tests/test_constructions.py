import numpy as np
import pytest
from conftest import dense_scan, stable_ar
from hypothesis import given, settings
from hypothesis import strategies as st

from companion_ssm.constructions import (
    ArmaSpec,
    ar_to_ssm,
    arma_shifted_ssm,
    arma_two_head,
    diff_c_vector,
    from_spec,
    krylov_matrix,
    lti_to_companion,
    ma_residual_c,
    ma_smoothing_c,
    ses_to_ar,
    shift_ssm,
)
from companion_ssm.core import dense
from companion_ssm.data_io import gen_ar_series
from companion_ssm.errors import NotControllableError
from companion_ssm.filters import apply_filter, output_filter


def arma_shifted_recursion(phi, theta, y0, n):
    # y_{k+1} = y_k + sum_i phi_i y_{k+1-i} + sum_j theta_j y_{k-j}, zero before time 0
    y = np.zeros(n)
    y[0] = y0
    for k in range(n - 1):
        acc = y[k]
        for i, c in enumerate(phi, start=1):
            if k + 1 - i >= 0:
                acc += c * y[k + 1 - i]
        for j, c in enumerate(theta, start=1):
            if k - j >= 0:
                acc += c * y[k - j]
        y[k + 1] = acc
    return y


def arma_noise_recursion(phi, theta, e):
    y = np.zeros(e.size)
    for k in range(e.size):
        acc = e[k]
        for i, c in enumerate(phi, start=1):
            if k - i >= 0:
                acc += c * y[k - i]
        for j, c in enumerate(theta, start=1):
            if k - j >= 0:
                acc += c * e[k - j]
        y[k] = acc
    return y


def test_ar_to_ssm_layout():
    ssm = ar_to_ssm([0.9, -0.2])
    np.testing.assert_array_equal(ssm.a, [0, 0])
    np.testing.assert_array_equal(ssm.B, [1, 0])
    np.testing.assert_array_equal(ssm.C, [0.9, -0.2])
    assert ssm.D == 0.0
    with pytest.raises(ValueError):
        ar_to_ssm([])


def test_ar_prediction_after_first_sample():
    _, post = dense_scan(ar_to_ssm([0.9, -0.2]), [1.0, 0.0])
    assert post[0] == pytest.approx(0.9)


def test_random_walk_predictor(rng):
    u = rng.standard_normal(20)
    _, post = dense_scan(ar_to_ssm([1.0]), u)
    np.testing.assert_array_equal(post, u)


def test_ar4_one_step_predictions_exact():
    phi = [0.8215, -0.3119, 0.3152, -0.3136]
    u = gen_ar_series(phi, 300, seed=1)
    pred = apply_filter(output_filter(ar_to_ssm(phi), u.size), u)
    assert np.max(np.abs(pred[3:-1] - u[4:])) < 1e-10


def test_ar_exactness_random(rng):
    for _ in range(20):
        p = int(rng.integers(1, 9))
        phi = stable_ar(rng, p)
        u = gen_ar_series(phi, 200, seed=int(rng.integers(1 << 30)))
        _, post = dense_scan(ar_to_ssm(phi), u)
        assert np.max(np.abs(post[p - 1 : -1] - u[p:])) < 1e-9


def test_arma_shifted_examples():
    phi = [0.5, -0.2, 0.1]
    np.testing.assert_allclose(arma_shifted_ssm(phi, []).C, [1.5, -0.2, 0.1])
    np.testing.assert_allclose(arma_shifted_ssm([], [0.4]).C, [1.0, 0.4])
    assert arma_shifted_ssm([0.3], [0.2, 0.1]).d == 3
    with pytest.raises(ValueError):
        arma_shifted_ssm([], [])


def test_arma_shifted_matches_recursion(rng):
    for _ in range(30):
        p, q = int(rng.integers(0, 5)), int(rng.integers(0, 4))
        if p == q == 0:
            continue
        phi = 0.3 * rng.standard_normal(p)
        theta = 0.3 * rng.standard_normal(q)
        y = arma_shifted_recursion(phi, theta, 1.0, 60)
        if not np.all(np.isfinite(y)) or np.abs(y).max() > 1e6:
            continue
        _, post = dense_scan(arma_shifted_ssm(phi, theta), y)
        scale = max(1.0, np.abs(y).max())
        assert np.max(np.abs(post[:-1] - y[1:])) < 1e-9 * scale


def test_arma_two_head_matches_recursion(rng):
    for _ in range(20):
        p, q = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        phi, theta = stable_ar(rng, p), 0.5 * rng.standard_normal(q)
        e = rng.standard_normal(80)
        y = arma_noise_recursion(phi, theta, e)
        ar, ma = arma_two_head(phi, theta)
        # the AR head sees y delayed by one step through its state
        y_ar, _ = dense_scan(ar, y)
        y_ma, _ = dense_scan(ma, e)
        np.testing.assert_allclose(y_ar + y_ma, y, atol=1e-9)


def test_arma_two_head_degenerate_heads(rng):
    e = rng.standard_normal(30)
    ar, ma = arma_two_head([0.5], [0.0])
    np.testing.assert_array_equal(dense_scan(ma, e)[0], e)
    theta = [0.4, -0.3]
    _, ma = arma_two_head([0.0], theta)
    np.testing.assert_allclose(dense_scan(ma, e)[0], arma_noise_recursion([], theta, e), atol=1e-12)
    with pytest.raises(ValueError):
        arma_two_head([], [0.1])


def test_ses_weights():
    np.testing.assert_allclose(ses_to_ar(0.5, 3), [0.5, 0.25, 0.125])
    np.testing.assert_allclose(ses_to_ar(0.999, 1), [0.999])
    assert ses_to_ar(0.3, 20).sum() == pytest.approx(1 - 0.7**20, abs=1e-14)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            ses_to_ar(bad, 3)
    with pytest.raises(ValueError):
        ArmaSpec(alpha=1.2)
    assert ArmaSpec(phi=[1, 2]).phi == (1.0, 2.0)


def test_ses_matches_smoothing_recursion(rng):
    alpha, p = 0.4, 60
    u = rng.standard_normal(200)
    _, post = dense_scan(ar_to_ssm(ses_to_ar(alpha, p)), u)
    level = 0.0
    for k, uk in enumerate(u):
        level = alpha * uk + (1 - alpha) * level
        if k >= p:
            # truncation leaves a (1 - alpha)^p tail
            assert post[k] == pytest.approx(level, abs=5 * (1 - alpha) ** p)


def test_lti_companion_input_gives_its_own_a():
    A = np.array([[0.0, 0.3], [1.0, -0.4]])
    ssm = lti_to_companion(A, [1.0, 0.0], [1.0, 2.0])
    np.testing.assert_allclose(ssm.a, [0.3, -0.4], atol=1e-14)
    np.testing.assert_allclose(krylov_matrix(A, [1, 0]), np.eye(2))


def test_lti_markov_parameters_diagonal():
    A = np.diag([0.5, -0.5])
    B, C = np.array([1.0, 1.0]), np.array([1.0, 0.0])
    ssm = lti_to_companion(A, B, C)
    G = dense(ssm.A)
    got = [ssm.C @ np.linalg.matrix_power(G, i) @ ssm.B for i in range(4)]
    np.testing.assert_allclose(got, [1, 0.5, 0.25, 0.125], atol=1e-14)


def test_lti_random_controllable(rng):
    for _ in range(30):
        d = int(rng.integers(1, 11))
        A = rng.standard_normal((d, d))
        A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
        B, C = rng.standard_normal(d), rng.standard_normal(d)
        ssm = lti_to_companion(A, B, C, 0.7)
        G = dense(ssm.A)
        K = krylov_matrix(A, B)
        G_direct = np.linalg.solve(K, A @ K)
        # off-pattern entries of K^-1 A K vanish: it is the companion matrix
        mask = np.ones((d, d), dtype=bool)
        mask[:, -1] = False
        mask[np.arange(1, d), np.arange(d - 1)] = False
        assert np.max(np.abs(G_direct[mask]), initial=0.0) < 1e-8
        for i in range(2 * d + 1):
            lhs = C @ np.linalg.matrix_power(A, i) @ B
            rhs = ssm.C @ np.linalg.matrix_power(G, i) @ ssm.B
            assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))
        assert ssm.D == 0.7


def test_lti_not_controllable():
    with pytest.raises(NotControllableError, match="not controllable"):
        lti_to_companion(np.eye(2), [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(NotControllableError):
        lti_to_companion(np.eye(2), [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        lti_to_companion(np.eye(3), [1.0, 1.0], [1.0, 1.0])


def test_diff_vectors():
    np.testing.assert_array_equal(diff_c_vector(1, 4), [1, -1, 0, 0])
    np.testing.assert_array_equal(diff_c_vector(0, 3), [1, 0, 0])
    np.testing.assert_array_equal(diff_c_vector(2, 3), [1, -2, 1])
    np.testing.assert_array_equal(diff_c_vector(3, 5), [1, -3, 3, -1, 0])
    with pytest.raises(ValueError):
        diff_c_vector(3, 3)
    with pytest.raises(ValueError):
        diff_c_vector(4, 8)


def test_second_difference_of_squares_is_two():
    d = 6
    u = np.arange(50.0) ** 2
    out = apply_filter(output_filter(shift_ssm(diff_c_vector(2, d)), u.size), u)
    np.testing.assert_allclose(out[d:], 2.0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(4, 10), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_differencing_annihilates_polynomials(order, d, coeffs):
    t = np.arange(60.0) / 10
    u = np.polyval(coeffs[:order], t)  # degree order - 1
    out = apply_filter(output_filter(shift_ssm(diff_c_vector(order, d)), u.size), u)
    assert np.max(np.abs(out[d:])) < 1e-9


def test_moving_average_vectors():
    np.testing.assert_array_equal(ma_smoothing_c(1, 3), [1, 0, 0])
    np.testing.assert_allclose(ma_smoothing_c(4, 4), [0.25] * 4)
    np.testing.assert_allclose(ma_residual_c(2, 3), [0.5, -0.5, 0])
    np.testing.assert_allclose(ma_residual_c(5, 7), np.eye(7)[0] - ma_smoothing_c(5, 7))
    for bad in ((0, 3), (4, 3)):
        with pytest.raises(ValueError):
            ma_smoothing_c(*bad)
    with pytest.raises(ValueError):
        ma_residual_c(1, 3)


def test_moving_average_on_ramp_and_constant():
    d, n = 8, 4
    u = 3.0 * np.arange(40.0) + 1.0
    smooth = apply_filter(output_filter(shift_ssm(ma_smoothing_c(n, d)), u.size), u)
    # the mean of n consecutive ramp samples sits (n - 1) / 2 steps back
    np.testing.assert_allclose(smooth[d:], u[d:] - 3.0 * (n - 1) / 2, atol=1e-9)
    const = np.full(30, 2.5)
    resid = apply_filter(output_filter(shift_ssm(ma_residual_c(n, d)), const.size), const)
    np.testing.assert_allclose(resid[d:], 0.0, atol=1e-12)


def test_moving_average_residual_identity(rng):
    d, n = 10, 6
    u = rng.standard_normal(100)
    smooth = apply_filter(output_filter(shift_ssm(ma_smoothing_c(n, d)), u.size), u)
    resid = apply_filter(output_filter(shift_ssm(ma_residual_c(n, d)), u.size), u)
    np.testing.assert_allclose(resid + smooth, u, atol=1e-9)


def test_from_spec_dispatch():
    np.testing.assert_allclose(from_spec({"ar": {"phi": [0.5, 0.1]}}).C, [0.5, 0.1])
    np.testing.assert_allclose(from_spec({"ses": {"alpha": 0.5, "p": 3}}).C, [0.5, 0.25, 0.125])
    np.testing.assert_allclose(from_spec({"arma": {"phi": [0.5], "theta": [0.2]}}).C, [1.5, 0.2])
    heads = from_spec({"arma": {"phi": [0.5], "theta": [0.2], "form": "two_head"}})
    assert set(heads) == {"ar", "ma"} and heads["ma"].D == 1.0
    lti = from_spec({"lti": {"A": [[0.5, 0], [0, -0.5]], "B": [1, 1], "C": [1, 0]}})
    assert lti.d == 2
    np.testing.assert_array_equal(from_spec({"diff": {"order": 1, "d": 3}}).C, [1, -1, 0])
    np.testing.assert_allclose(from_spec({"ma": {"n": 2, "d": 2}}).C, [0.5, 0.5])
    np.testing.assert_allclose(from_spec({"ma_residual": {"n": 2, "d": 2}}).C, [0.5, -0.5])
    closed = from_spec({"ar": {"phi": [0.5, 0.1], "closed_loop": True}})
    np.testing.assert_array_equal(closed.K, closed.C)


@pytest.mark.parametrize(
    "spec",
    [{}, {"ar": {}, "ses": {}}, {"garch": {}}, {"arma": {"phi": [1], "form": "other"}}, [1, 2]],
)
def test_from_spec_rejects(spec):
    with pytest.raises((ValueError, KeyError)):
        from_spec(spec)
