import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rodshape import lie

L = 0.4


def twists(max_angle=2.0, max_lin=1.0):
    """Twists with a bounded rotation angle."""
    comp = st.floats(-1.0, 1.0, allow_nan=False)
    return st.tuples(
        arrays(float, 3, elements=comp),
        st.floats(0.0, max_angle),
        arrays(float, 3, elements=st.floats(-max_lin, max_lin)),
    ).map(lambda t: np.concatenate([_scaled(t[0], t[1]), t[2]]))


def _scaled(direction, angle):
    n = np.linalg.norm(direction)
    return np.zeros(3) if n < 1e-9 else direction / n * angle


def test_hat_reference_strain():
    X = lie.hat([0, 0, 0, 0, 0, 1])
    expected = np.zeros((4, 4))
    expected[2, 3] = 1.0
    np.testing.assert_array_equal(X, expected)


def test_vee_hat_round_trip():
    xi = np.array([1.0, 2, 3, 4, 5, 6])
    np.testing.assert_array_equal(lie.vee(lie.hat(xi)), xi)


def test_hat_skew_entries():
    X = lie.hat([0, np.pi, 0, 0, 0, 0])
    assert X[0, 2] == pytest.approx(np.pi)
    assert X[2, 0] == pytest.approx(-np.pi)


def test_vee_rejects_asymmetric_block():
    X = lie.hat([0.1, 0.2, 0.3, 0, 0, 0])
    X[0, 1] += 1e-6
    with pytest.raises(ValueError):
        lie.vee(X)


def test_exp_pure_translation():
    g = lie.exp([0, 0, 0, 0, 0, 0.4])
    np.testing.assert_allclose(g, lie.make_pose(np.eye(3), [0, 0, 0.4]), atol=1e-15)


def test_exp_pure_rotation_about_y():
    g = lie.exp([0, np.pi / 2, 0, 0, 0, 0])
    Ry = np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]], dtype=float)
    np.testing.assert_allclose(g[:3, :3], Ry, atol=1e-15)
    np.testing.assert_allclose(g[:3, 3], 0.0, atol=1e-15)


def test_exp_constant_curvature_arc():
    kappa = np.pi / (2 * L)
    g = lie.exp(L * np.array([0, kappa, 0, 0, 0, 1]))
    np.testing.assert_allclose(g[:3, 3], [1 / kappa, 0, 1 / kappa], atol=1e-12)
    assert g[0, 3] == pytest.approx(0.2546, abs=1e-4)
    np.testing.assert_allclose(g[:3, :3], lie.exp([0, np.pi / 2, 0, 0, 0, 0])[:3, :3], atol=1e-14)


def test_exp_matches_matrix_exponential():
    rng = np.random.default_rng(0)
    for _ in range(50):
        xi = rng.normal(size=6)
        np.testing.assert_allclose(lie.exp(xi), scipy.linalg.expm(lie.hat(xi)), atol=1e-12)


def test_exp_many_matches_scalar():
    rng = np.random.default_rng(1)
    xis = np.vstack([rng.normal(size=(20, 6)), 1e-8 * rng.normal(size=(5, 6)), np.zeros((1, 6))])
    batch = lie.exp_many(xis)
    for xi, g in zip(xis, batch):
        np.testing.assert_allclose(g, lie.exp(xi), atol=1e-15)


def test_log_identity_and_translation():
    np.testing.assert_array_equal(lie.log(np.eye(4)), np.zeros(6))
    g = lie.make_pose(np.eye(3), [0.1, -0.2, 0.3])
    np.testing.assert_allclose(lie.log(g), [0, 0, 0, 0.1, -0.2, 0.3], atol=1e-15)


def test_log_rejects_half_turn():
    g = lie.exp([0, np.pi - 1e-8, 0, 0, 0, 0])
    with pytest.raises(lie.LogBranchError):
        lie.log(g)


@settings(max_examples=300, deadline=None)
@given(twists(max_angle=3.0))
def test_exp_log_round_trip(xi):
    np.testing.assert_allclose(lie.log(lie.exp(xi)), xi, atol=1e-9)


def test_log_round_trip_sweep():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        k = rng.normal(size=3)
        k *= rng.uniform(0, 2) / np.linalg.norm(k)
        xi = np.concatenate([k, rng.normal(size=3)])
        g = lie.exp(xi)
        np.testing.assert_allclose(lie.log(g), xi, atol=1e-9)
        np.testing.assert_allclose(lie.exp(lie.log(g)), g, atol=1e-9)


def _so3_blocks(k, coeffs, d):
    a, b, c = coeffs
    K = lie.skew(k)
    K2 = K @ K
    I = np.eye(3)
    return I + a * K + b * K2, I + b * K + c * K2, I - 0.5 * K + d * K2


def test_small_angle_branches_agree():
    # Rotation, left Jacobian and its inverse assembled from the series and the
    # closed-form coefficients agree across the switch band.
    rng = np.random.default_rng(3)
    for theta in np.geomspace(1e-7, 1e-5, 25):
        u = rng.normal(size=3)
        k = u / np.linalg.norm(u) * theta
        series = _so3_blocks(k, lie._rodrigues_coeffs_series(theta), lie._inv_coeff_series(theta))
        closed = _so3_blocks(k, lie._rodrigues_coeffs_closed(theta), lie._inv_coeff_closed(theta))
        for A, B in zip(series, closed):
            np.testing.assert_allclose(A, B, atol=1e-10)
        xi = np.concatenate([k, rng.normal(size=3)])
        np.testing.assert_allclose(lie.exp(xi), scipy.linalg.expm(lie.hat(xi)), atol=1e-12)


def test_series_switch_is_continuous():
    below, above = 0.05 * (1 - 1e-9), 0.05 * (1 + 1e-9)
    np.testing.assert_allclose(lie._coupling_coeffs(below), lie._coupling_coeffs(above), rtol=1e-8)
    np.testing.assert_allclose(lie._rodrigues_coeffs(below), lie._rodrigues_coeffs(above), rtol=1e-8)
    assert lie._inv_coeff(below) == pytest.approx(lie._inv_coeff(above), rel=1e-8)


def test_ad_self_commutator_vanishes():
    xi = np.array([0.3, -1.2, 0.5, 2.0, 0.1, -0.7])
    np.testing.assert_allclose(lie.ad(xi) @ xi, 0.0, atol=1e-15)


def test_ad_is_vee_of_bracket():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 6))
    A, B = lie.hat(a), lie.hat(b)
    np.testing.assert_allclose(lie.ad(a) @ b, lie.vee(A @ B - B @ A), atol=1e-13)


def test_Ad_identity():
    np.testing.assert_array_equal(lie.Ad(np.eye(4)), np.eye(6))


def test_Ad_conjugation():
    rng = np.random.default_rng(5)
    g = lie.exp(rng.normal(size=6))
    xi = rng.normal(size=6)
    np.testing.assert_allclose(lie.Ad(g) @ xi, lie.vee(g @ lie.hat(xi) @ lie.inverse(g)), atol=1e-12)


def test_Ad_exp_equals_expm_ad():
    rng = np.random.default_rng(6)
    for _ in range(20):
        xi = 0.3 * rng.normal(size=6)
        np.testing.assert_allclose(lie.Ad(lie.exp(xi)), scipy.linalg.expm(lie.ad(xi)), atol=1e-12)


def test_right_jacobian_at_zero():
    np.testing.assert_allclose(lie.right_jacobian(np.zeros(6)), np.eye(6), atol=1e-15)
    np.testing.assert_allclose(lie.right_jacobian_inv(np.zeros(6)), np.eye(6), atol=1e-15)


def _fd_right_jacobian(xi, eps=1e-6):
    J = np.empty((6, 6))
    g_inv = lie.inverse(lie.exp(xi))
    for j in range(6):
        d = np.zeros(6)
        d[j] = eps
        J[:, j] = (lie.log(g_inv @ lie.exp(xi + d)) - lie.log(g_inv @ lie.exp(xi - d))) / (2 * eps)
    return J


def test_right_jacobian_finite_difference():
    rng = np.random.default_rng(7)
    for _ in range(100):
        k = rng.normal(size=3)
        k *= rng.uniform(0, 2.5) / np.linalg.norm(k)
        xi = np.concatenate([k, rng.normal(size=3)])
        Jr = lie.right_jacobian(xi)
        np.testing.assert_allclose(Jr, _fd_right_jacobian(xi), atol=1e-6 * max(1, np.abs(Jr).max()))


@settings(max_examples=200, deadline=None)
@given(twists(max_angle=3.0, max_lin=2.0))
def test_right_jacobian_inverse_consistency(xi):
    np.testing.assert_allclose(lie.right_jacobian(xi) @ lie.right_jacobian_inv(xi), np.eye(6), atol=1e-10)


def test_right_jacobian_small_angle_fd():
    rng = np.random.default_rng(8)
    for scale in (1e-3, 1e-5, 1e-7):
        xi = np.concatenate([scale * rng.normal(size=3), rng.normal(size=3)])
        np.testing.assert_allclose(lie.right_jacobian(xi), _fd_right_jacobian(xi), atol=1e-7)


@settings(max_examples=100, deadline=None)
@given(twists(), twists())
def test_group_closure(a, b):
    assert lie.is_valid_pose(lie.exp(a) @ lie.exp(b))


def test_project_pose_returns_valid_rotation():
    rng = np.random.default_rng(9)
    g = lie.exp(rng.normal(size=6))
    g[:3, :3] += 1e-3 * rng.normal(size=(3, 3))
    p = lie.project_pose(g)
    assert lie.is_valid_pose(p)
    np.testing.assert_allclose(p[:3, 3], g[:3, 3])


def test_batched_forms_match_scalar():
    rng = np.random.default_rng(10)
    xis = np.vstack([rng.normal(size=(10, 6)), 1e-3 * rng.normal(size=(3, 6)), 1e-8 * rng.normal(size=(3, 6))])
    gs = lie.exp_many(xis)
    checks = [
        (lie.log, lie.log_many, gs),
        (lie.inverse, lie.inverse_many, gs),
        (lie.Ad, lie.Ad_many, gs),
        (lie.ad, lie.ad_many, xis),
        (lie.left_jacobian, lie.left_jacobian_many, xis),
        (lie.left_jacobian_inv, lie.left_jacobian_inv_many, xis),
        (lie.right_jacobian_inv, lie.right_jacobian_inv_many, xis),
    ]
    for scalar, batched, args in checks:
        out = batched(args)
        for a, b in zip(args, out):
            np.testing.assert_allclose(b, scalar(a), atol=1e-14)
