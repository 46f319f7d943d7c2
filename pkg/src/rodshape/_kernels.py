"""Compiled kernels for the Magnus factor, the SE(3) logarithm and retraction.

:func:`magnus_kernel` mirrors :func:`rodshape.factors.magnus_batch` (the numpy
reference) one interval at a time; the batched numpy path pays per-call
overhead that dominates on ten-interval graphs.
"""

from __future__ import annotations

import numba
import numpy as np

from .lie import SMALL_ANGLE, _COUPLING_SERIES_ANGLE, _PI_MARGIN


@numba.njit(cache=True)
def _mm(A, B):
    n, m, p = A.shape[0], A.shape[1], B.shape[1]
    out = np.zeros((n, p))
    for i in range(n):
        for k in range(m):
            a = A[i, k]
            if a != 0.0:
                for j in range(p):
                    out[i, j] += a * B[k, j]
    return out


@numba.njit(cache=True)
def _skew(v0, v1, v2):
    K = np.zeros((3, 3))
    K[0, 1], K[0, 2], K[1, 2] = -v2, v1, -v0
    K[1, 0], K[2, 0], K[2, 1] = v2, -v1, v0
    return K


@numba.njit(cache=True)
def _norm3(v0, v1, v2):
    return np.sqrt(v0 * v0 + v1 * v1 + v2 * v2)


@numba.njit(cache=True)
def _rodrigues(theta):
    t2 = theta * theta
    sa = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
    sb = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    sc = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2**3 / 362880.0
    if theta < SMALL_ANGLE:
        return sa, sb, sc
    s, half = np.sin(theta), np.sin(0.5 * theta)
    a, b = s / theta, 2.0 * half * half / theta**2
    c = sc if theta < _COUPLING_SERIES_ANGLE else (theta - s) / theta**3
    return a, b, c


@numba.njit(cache=True)
def _inv_coeff(theta):
    if theta < _COUPLING_SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2**3 / 1209600.0
    return 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))


@numba.njit(cache=True)
def _coupling(k, p):
    theta = _norm3(k[0], k[1], k[2])
    t2 = theta * theta
    if theta < _COUPLING_SERIES_ANGLE:
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2**3 / 362880.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0 - t2**3 / 3628800.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0 - t2**3 / 6652800.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta**3
        c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5)
    K, P = _skew(k[0], k[1], k[2]), _skew(p[0], p[1], p[2])
    KP, PK = _mm(K, P), _mm(P, K)
    KPK = _mm(KP, K)
    KK = _mm(K, K)
    return (
        0.5 * P
        + c1 * (KP + PK + KPK)
        + c2 * (_mm(KK, P) + _mm(PK, K) - 3.0 * KPK)
        + c3 * (_mm(KPK, K) + _mm(KK, PK))
    )


@numba.njit(cache=True)
def _exp(xi):
    theta = _norm3(xi[0], xi[1], xi[2])
    a, b, c = _rodrigues(theta)
    K = _skew(xi[0], xi[1], xi[2])
    K2 = _mm(K, K)
    g = np.eye(4)
    g[:3, :3] += a * K + b * K2
    p = xi[3:].copy()
    for i in range(3):
        g[i, 3] = p[i] + b * (K[i, 0] * p[0] + K[i, 1] * p[1] + K[i, 2] * p[2]) + c * (
            K2[i, 0] * p[0] + K2[i, 1] * p[1] + K2[i, 2] * p[2]
        )
    return g


@numba.njit(cache=True)
def _inverse(g):
    out = np.eye(4)
    for i in range(3):
        for j in range(3):
            out[i, j] = g[j, i]
    for i in range(3):
        out[i, 3] = -(g[0, i] * g[0, 3] + g[1, i] * g[1, 3] + g[2, i] * g[2, 3])
    return out


@numba.njit(cache=True)
def _sl3_inv(k):
    K = _skew(k[0], k[1], k[2])
    return np.eye(3) - 0.5 * K + _inv_coeff(_norm3(k[0], k[1], k[2])) * _mm(K, K)


@numba.njit(cache=True)
def _log(g, e):
    """Writes log(g) into ``e``; returns False near a half-turn."""
    w0 = 0.5 * (g[2, 1] - g[1, 2])
    w1 = 0.5 * (g[0, 2] - g[2, 0])
    w2 = 0.5 * (g[1, 0] - g[0, 1])
    sin_t = _norm3(w0, w1, w2)
    cos_t = 0.5 * (g[0, 0] + g[1, 1] + g[2, 2] - 1.0)
    theta = np.arctan2(sin_t, cos_t)
    if np.pi - theta < _PI_MARGIN:
        return False
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        scale = 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
    else:
        scale = theta / sin_t
    e[0], e[1], e[2] = scale * w0, scale * w1, scale * w2
    A = _sl3_inv(e[:3])
    for i in range(3):
        e[3 + i] = A[i, 0] * g[0, 3] + A[i, 1] * g[1, 3] + A[i, 2] * g[2, 3]
    return True


@numba.njit(cache=True)
def _ad(xi):
    out = np.zeros((6, 6))
    K = _skew(xi[0], xi[1], xi[2])
    out[:3, :3] = K
    out[3:, 3:] = K
    out[3:, :3] = _skew(xi[3], xi[4], xi[5])
    return out


@numba.njit(cache=True)
def _Ad(g):
    out = np.zeros((6, 6))
    R = g[:3, :3].copy()
    out[:3, :3] = R
    out[3:, 3:] = R
    out[3:, :3] = _mm(_skew(g[0, 3], g[1, 3], g[2, 3]), R)
    return out


@numba.njit(cache=True)
def _left_jacobian(xi):
    k, p = xi[:3].copy(), xi[3:].copy()
    _, b, c = _rodrigues(_norm3(k[0], k[1], k[2]))
    K = _skew(k[0], k[1], k[2])
    A = np.eye(3) + b * K + c * _mm(K, K)
    out = np.zeros((6, 6))
    out[:3, :3] = A
    out[3:, 3:] = A
    out[3:, :3] = _coupling(k, p)
    return out


@numba.njit(cache=True)
def _left_jacobian_inv(xi):
    k, p = xi[:3].copy(), xi[3:].copy()
    Ainv = _sl3_inv(k)
    out = np.zeros((6, 6))
    out[:3, :3] = Ainv
    out[3:, 3:] = Ainv
    out[3:, :3] = -_mm(_mm(Ainv, _coupling(k, p)), Ainv)
    return out


@numba.njit(cache=True)
def magnus_kernel(phi1, phi2, h, xi_ref, q, G_i, G_ip1, csign, jacobians):
    """Returns ``(ok, e, back, jr_inv, J_q)``; ``ok`` is False on a log-branch failure."""
    n, S = phi1.shape[0], phi1.shape[2]
    e = np.zeros((n, 6))
    back = np.zeros((n, 6, 6))
    jr_inv = np.zeros((n, 6, 6))
    J_q = np.zeros((n, 6, S))
    r3 = np.sqrt(3.0) / 12.0
    for m in range(n):
        P1, P2 = phi1[m], phi2[m]
        xi1 = xi_ref.copy()
        xi2 = xi_ref.copy()
        for i in range(6):
            for j in range(S):
                xi1[i] += P1[i, j] * q[j]
                xi2[i] += P2[i, j] * q[j]
        c = csign * r3 * h[m] * h[m]
        ad1 = _ad(xi1)
        omega = np.zeros(6)
        for i in range(6):
            acc = 0.0
            for j in range(6):
                acc += ad1[i, j] * xi2[j]
            omega[i] = 0.5 * h[m] * (xi1[i] + xi2[i]) + c * acc
        D = _mm(_inverse(G_i[m]), G_ip1[m])
        em = np.zeros(6)
        if not _log(_mm(_exp(-omega), D), em):
            return False, e, back, jr_inv, J_q
        e[m] = em
        if not jacobians:
            continue
        d_omega = 0.5 * h[m] * (P1 + P2) + c * (_mm(ad1, P2) - _mm(_ad(xi2), P1))
        jri = _left_jacobian_inv(-em)
        b = -_mm(jri, _Ad(_inverse(D)))
        jr_inv[m] = jri
        back[m] = b
        J_q[m] = _mm(b, _mm(_left_jacobian(omega), d_omega))
    return True, e, back, jr_inv, J_q


@numba.njit(cache=True)
def log_jr_inv_kernel(g):
    """Returns ``(ok, log(g), right_jacobian_inv(log(g)))``."""
    e = np.zeros(6)
    if not _log(np.ascontiguousarray(g), e):
        return False, e, np.zeros((6, 6))
    return True, e, _left_jacobian_inv(-e)


@numba.njit(cache=True)
def scatter_magnus(J, r, W, row0, node_i, node_j, q0, e, back, jr_inv, J_q):
    """Whiten stacked Magnus blocks and write them into the dense system."""
    n, S = J_q.shape[0], J_q.shape[2]
    for m in range(n):
        R, ci, cj = row0[m], 6 * node_i[m], 6 * node_j[m]
        for a in range(6):
            acc = 0.0
            for b in range(6):
                w = W[m, a, b]
                if w == 0.0:
                    continue
                acc += w * e[m, b]
                for c in range(6):
                    J[R + a, ci + c] += w * back[m, b, c]
                    J[R + a, cj + c] += w * jr_inv[m, b, c]
                for c in range(S):
                    J[R + a, q0 + c] += w * J_q[m, b, c]
            r[R + a] = acc


@numba.njit(cache=True)
def retract_kernel(G, delta):
    """``G[k] @ exp(delta[k])`` for stacked poses."""
    out = np.empty_like(G)
    for k in range(G.shape[0]):
        out[k] = _mm(G[k], _exp(delta[k]))
    return out


_warm = False


def warm_up() -> None:
    """Load the compiled kernels once per process so trial timings exclude it."""
    global _warm
    if _warm:
        return
    g = np.eye(4)
    phi = np.zeros((1, 6, 1))
    magnus_kernel(phi, phi, np.ones(1), np.zeros(6), np.zeros(1), g[None], g[None], 1.0, True)
    log_jr_inv_kernel(g)
    retract_kernel(g[None], np.zeros((1, 6)))
    one = np.zeros(1, dtype=np.int64)
    scatter_magnus(np.zeros((6, 13)), np.zeros(6), np.eye(6)[None], one, one, one + 1, 12,
                   np.zeros((1, 6)), np.zeros((1, 6, 6)), np.zeros((1, 6, 6)), np.zeros((1, 6, 1)))
    _warm = True
