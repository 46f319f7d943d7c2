"""SO(3)/SE(3) operations with analytic differentials.

Twists are 6-vectors ordered ``[k_x, k_y, k_z, p_x, p_y, p_z]`` (angular part
first). Poses are 4x4 homogeneous matrices. Jacobians follow the right
perturbation convention ``g <- g @ exp(delta)``.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-6
# Below this angle coefficients whose closed forms cancel catastrophically
# ((t - sin t)/t^3, the inverse-Jacobian weight, the SE(3) coupling block) are
# taken from their Taylor series.
_COUPLING_SERIES_ANGLE = 0.05
_PI_MARGIN = 1e-6
_SKEW_TOL = 1e-9


class LogBranchError(ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def unskew(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def hat(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = skew(xi[:3])
    out[:3, 3] = xi[3:]
    return out


def vee(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = x[:3, :3]
    if np.max(np.abs(w + w.T)) > _SKEW_TOL:
        raise ValueError("rotation block of se(3) matrix is not skew-symmetric")
    return np.concatenate([unskew(w), x[:3, 3]])


def make_pose(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    g = np.eye(4)
    g[:3, :3] = R
    g[:3, 3] = t
    return g


def inverse(g: np.ndarray) -> np.ndarray:
    R, t = g[:3, :3], g[:3, 3]
    return make_pose(R.T, -R.T @ t)


def project_pose(g: np.ndarray) -> np.ndarray:
    """Nearest valid pose to a noisy 4x4 (polar decomposition of the rotation)."""
    g = np.asarray(g, dtype=float)
    u, _, vt = np.linalg.svd(g[:3, :3])
    d = np.sign(np.linalg.det(u @ vt))
    R = u @ np.diag([1.0, 1.0, d]) @ vt
    return make_pose(R, g[:3, 3])


def is_valid_pose(g: np.ndarray, tol: float = 1e-9) -> bool:
    R = g[:3, :3]
    return (
        g.shape == (4, 4)
        and np.linalg.norm(R.T @ R - np.eye(3)) < tol
        and abs(np.linalg.det(R) - 1.0) < tol
        and np.allclose(g[3], [0.0, 0.0, 0.0, 1.0])
    )


# --- scalar coefficient functions -------------------------------------------


def _rodrigues_coeffs(theta: float) -> tuple[float, float, float]:
    """(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)."""
    sa, sb, sc = _rodrigues_coeffs_series(theta)
    if theta < SMALL_ANGLE:
        return sa, sb, sc
    ca, cb, cc = _rodrigues_coeffs_closed(theta)
    return ca, cb, sc if theta < _COUPLING_SERIES_ANGLE else cc


def _rodrigues_coeffs_series(theta: float) -> tuple[float, float, float]:
    t2 = theta * theta
    return (
        1.0 - t2 / 6.0 + t2 * t2 / 120.0,
        0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2**3 / 362880.0,
    )


def _rodrigues_coeffs_closed(theta: float) -> tuple[float, float, float]:
    s, half = np.sin(theta), np.sin(0.5 * theta)
    return s / theta, 2.0 * half * half / theta**2, (theta - s) / theta**3


def _inv_coeff(theta: float) -> float:
    """1/t^2 - (1 + cos t) / (2 t sin t), the K^2 weight of the inverse SO(3) Jacobian."""
    if theta < _COUPLING_SERIES_ANGLE:
        return _inv_coeff_series(theta)
    return _inv_coeff_closed(theta)


def _inv_coeff_series(theta: float) -> float:
    t2 = theta * theta
    return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2**3 / 1209600.0


def _inv_coeff_closed(theta: float) -> float:
    return 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))


def _coupling_coeffs(theta: float) -> tuple[float, float, float]:
    t2 = theta * theta
    if theta < _COUPLING_SERIES_ANGLE:
        return (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2**3 / 362880.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0 - t2**3 / 3628800.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0 - t2**3 / 6652800.0,
        )
    s, c = np.sin(theta), np.cos(theta)
    return (
        (theta - s) / theta**3,
        (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
        (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5),
    )


# --- SO(3) ------------------------------------------------------------------


def so3_exp(k: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(k))
    a, b, _ = _rodrigues_coeffs(theta)
    K = skew(k)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    w = 0.5 * unskew(R - R.T)
    sin_t = float(np.linalg.norm(w))
    cos_t = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(sin_t, cos_t))
    if np.pi - theta < _PI_MARGIN:
        raise LogBranchError(f"rotation angle {theta:.9f} rad is within {_PI_MARGIN} of pi")
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * w
    return (theta / sin_t) * w


def so3_left_jacobian(k: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(k))
    _, b, c = _rodrigues_coeffs(theta)
    K = skew(k)
    return np.eye(3) + b * K + c * (K @ K)


def so3_left_jacobian_inv(k: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(k))
    K = skew(k)
    return np.eye(3) - 0.5 * K + _inv_coeff(theta) * (K @ K)


# --- SE(3) ------------------------------------------------------------------


def exp(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    k, p = xi[:3], xi[3:]
    theta = float(np.linalg.norm(k))
    a, b, c = _rodrigues_coeffs(theta)
    K = skew(k)
    K2 = K @ K
    g = np.eye(4)
    g[:3, :3] = np.eye(3) + a * K + b * K2
    g[:3, 3] = p + b * (K @ p) + c * (K2 @ p)
    return g


def exp_many(xis: np.ndarray) -> np.ndarray:
    """Vectorized :func:`exp` over an (n, 6) array; returns (n, 4, 4)."""
    xis = np.asarray(xis, dtype=float)
    k, p = xis[:, :3], xis[:, 3:]
    a, b, c = _rodrigues_coeffs_many(np.linalg.norm(k, axis=1))
    K = np.zeros((len(xis), 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -k[:, 2], k[:, 1], -k[:, 0]
    K[:, 1, 0], K[:, 2, 0], K[:, 2, 1] = k[:, 2], -k[:, 1], k[:, 0]
    K2 = K @ K
    out = np.zeros((len(xis), 4, 4))
    out[:, :3, :3] = np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2
    out[:, :3, 3] = (
        p
        + b[:, None] * np.einsum("nij,nj->ni", K, p)
        + c[:, None] * np.einsum("nij,nj->ni", K2, p)
    )
    out[:, 3, 3] = 1.0
    return out


def log(g: np.ndarray) -> np.ndarray:
    """SE(3) logarithm. Raises :class:`LogBranchError` near a half-turn."""
    k = so3_log(g[:3, :3])
    p = so3_left_jacobian_inv(k) @ g[:3, 3]
    return np.concatenate([k, p])


def ad(xi: np.ndarray) -> np.ndarray:
    """Lie-algebra adjoint: ``ad(a) @ b == vee(hat(a) @ hat(b) - hat(b) @ hat(a))``."""
    K = skew(xi[:3])
    out = np.zeros((6, 6))
    out[:3, :3] = K
    out[3:, 3:] = K
    out[3:, :3] = skew(xi[3:])
    return out


def Ad(g: np.ndarray) -> np.ndarray:
    """Group adjoint: ``Ad(g) @ xi == vee(g @ hat(xi) @ inverse(g))``."""
    R, t = g[:3, :3], g[:3, 3]
    out = np.zeros((6, 6))
    out[:3, :3] = R
    out[3:, 3:] = R
    out[3:, :3] = skew(t) @ R
    return out


def _coupling_block(k: np.ndarray, p: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(k))
    c1, c2, c3 = _coupling_coeffs(theta)
    K, P = skew(k), skew(p)
    KP, PK = K @ P, P @ K
    KPK = KP @ K
    KK = K @ K
    return (
        0.5 * P
        + c1 * (KP + PK + KPK)
        + c2 * (KK @ P + PK @ K - 3.0 * KPK)
        + c3 * (KPK @ K + KK @ PK)
    )


def left_jacobian(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    k, p = xi[:3], xi[3:]
    A = so3_left_jacobian(k)
    out = np.zeros((6, 6))
    out[:3, :3] = A
    out[3:, 3:] = A
    out[3:, :3] = _coupling_block(k, p)
    return out


def left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    k, p = xi[:3], xi[3:]
    Ainv = so3_left_jacobian_inv(k)
    out = np.zeros((6, 6))
    out[:3, :3] = Ainv
    out[3:, 3:] = Ainv
    out[3:, :3] = -Ainv @ _coupling_block(k, p) @ Ainv
    return out


def right_jacobian(xi: np.ndarray) -> np.ndarray:
    """``log(exp(xi)^-1 exp(xi + d)) ~= right_jacobian(xi) @ d``."""
    return left_jacobian(-np.asarray(xi, dtype=float))


def right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return left_jacobian_inv(-np.asarray(xi, dtype=float))


# --- batched forms over a leading axis -------------------------------------------


def skew_many(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2], out[..., 1, 2] = -v[..., 2], v[..., 1], -v[..., 0]
    out[..., 1, 0], out[..., 2, 0], out[..., 2, 1] = v[..., 2], -v[..., 1], v[..., 0]
    return out


def _safe_angle(theta: np.ndarray, threshold: float):
    small = theta < threshold
    return small, np.where(small, 1.0, theta)


def _rodrigues_coeffs_many(theta: np.ndarray):
    small, ts = _safe_angle(theta, SMALL_ANGLE)
    sa, sb, sc = _rodrigues_coeffs_series(theta)
    ca, cb, cc = _rodrigues_coeffs_closed(ts)
    return np.where(small, sa, ca), np.where(small, sb, cb), np.where(theta < _COUPLING_SERIES_ANGLE, sc, cc)


def _coupling_coeffs_many(theta: np.ndarray):
    small, ts = _safe_angle(theta, _COUPLING_SERIES_ANGLE)
    t2 = theta * theta
    series = (
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2**3 / 362880.0,
        1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0 - t2**3 / 3628800.0,
        1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0 - t2**3 / 6652800.0,
    )
    s, c, u2 = np.sin(ts), np.cos(ts), ts * ts
    closed = (
        (ts - s) / ts**3,
        (u2 + 2.0 * c - 2.0) / (2.0 * u2 * u2),
        (2.0 * ts - 3.0 * s + ts * c) / (2.0 * ts**5),
    )
    return tuple(np.where(small, a, b) for a, b in zip(series, closed))


def so3_log_many(R: np.ndarray) -> np.ndarray:
    w = 0.5 * np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1
    )
    sin_t = np.linalg.norm(w, axis=-1)
    cos_t = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_t, cos_t)
    if np.any(np.pi - theta < _PI_MARGIN):
        raise LogBranchError(f"rotation angle within {_PI_MARGIN} of pi")
    small, ss = _safe_angle(theta, SMALL_ANGLE)
    t2 = theta * theta
    scale = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, theta / np.where(small, 1.0, sin_t))
    return scale[..., None] * w


def _inv_coeff_many(theta: np.ndarray) -> np.ndarray:
    small, ts = _safe_angle(theta, _COUPLING_SERIES_ANGLE)
    return np.where(small, _inv_coeff_series(theta), _inv_coeff_closed(ts))


def so3_left_jacobian_inv_many(k: np.ndarray) -> np.ndarray:
    K = skew_many(k)
    d = _inv_coeff_many(np.linalg.norm(k, axis=-1))
    return np.eye(3) - 0.5 * K + d[..., None, None] * (K @ K)


def log_many(g: np.ndarray) -> np.ndarray:
    k = so3_log_many(g[..., :3, :3])
    p = np.einsum("...ij,...j->...i", so3_left_jacobian_inv_many(k), g[..., :3, 3])
    return np.concatenate([k, p], axis=-1)


def inverse_many(g: np.ndarray) -> np.ndarray:
    Rt = np.swapaxes(g[..., :3, :3], -1, -2)
    out = np.zeros(g.shape)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, g[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def ad_many(xi: np.ndarray) -> np.ndarray:
    K = skew_many(xi[..., :3])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = K
    out[..., 3:, 3:] = K
    out[..., 3:, :3] = skew_many(xi[..., 3:])
    return out


def Ad_many(g: np.ndarray) -> np.ndarray:
    R = g[..., :3, :3]
    out = np.zeros(g.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = skew_many(g[..., :3, 3]) @ R
    return out


def _coupling_block_many(k: np.ndarray, p: np.ndarray) -> np.ndarray:
    c1, c2, c3 = (c[..., None, None] for c in _coupling_coeffs_many(np.linalg.norm(k, axis=-1)))
    K, P = skew_many(k), skew_many(p)
    KP, PK = K @ P, P @ K
    KPK = KP @ K
    KK = K @ K
    return 0.5 * P + c1 * (KP + PK + KPK) + c2 * (KK @ P + PK @ K - 3.0 * KPK) + c3 * (KPK @ K + KK @ PK)


def left_jacobian_many(xi: np.ndarray) -> np.ndarray:
    k, p = xi[..., :3], xi[..., 3:]
    _, b, c = _rodrigues_coeffs_many(np.linalg.norm(k, axis=-1))
    K = skew_many(k)
    A = np.eye(3) + b[..., None, None] * K + c[..., None, None] * (K @ K)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = A
    out[..., 3:, 3:] = A
    out[..., 3:, :3] = _coupling_block_many(k, p)
    return out


def left_jacobian_inv_many(xi: np.ndarray) -> np.ndarray:
    k, p = xi[..., :3], xi[..., 3:]
    Ainv = so3_left_jacobian_inv_many(k)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Ainv
    out[..., 3:, 3:] = Ainv
    out[..., 3:, :3] = -Ainv @ _coupling_block_many(k, p) @ Ainv
    return out


def right_jacobian_inv_many(xi: np.ndarray) -> np.ndarray:
    return left_jacobian_inv_many(-np.asarray(xi, dtype=float))
