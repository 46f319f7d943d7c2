"""Fourth-order Magnus propagation of backbone poses under a spline strain field."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import lie
from .basis import BasisConfig, basis_rows

_SQRT3 = np.sqrt(3.0)
GAUSS_NODES = (0.5 - _SQRT3 / 6.0, 0.5 + _SQRT3 / 6.0)
# Sign of the commutator term for the right-multiplied ODE g' = g xi^;
# confirmed against the RK4 oracle in tests/test_magnus.py.
COMMUTATOR_SIGN = 1.0


@dataclass(frozen=True)
class MagnusIncrement:
    omega: np.ndarray
    d_omega_dq: np.ndarray


def gauss_points(s_i: float, s_ip1: float) -> tuple[float, float]:
    h = s_ip1 - s_i
    return s_i + GAUSS_NODES[0] * h, s_i + GAUSS_NODES[1] * h


def omega_from_strains(xi1: np.ndarray, xi2: np.ndarray, h: float) -> np.ndarray:
    return 0.5 * h * (xi1 + xi2) + COMMUTATOR_SIGN * (_SQRT3 * h * h / 12.0) * (lie.ad(xi1) @ xi2)


def increment_from_basis(
    phi1: np.ndarray, phi2: np.ndarray, q: np.ndarray, xi_ref: np.ndarray, h: float
) -> MagnusIncrement:
    """Magnus vector and its q-sensitivity from basis rows at the two Gauss points."""
    xi1 = phi1 @ q + xi_ref
    xi2 = phi2 @ q + xi_ref
    c = COMMUTATOR_SIGN * _SQRT3 * h * h / 12.0
    omega = 0.5 * h * (xi1 + xi2) + c * (lie.ad(xi1) @ xi2)
    # d[xi1, xi2] = ad(xi1) dxi2 - ad(xi2) dxi1
    d_omega = 0.5 * h * (phi1 + phi2) + c * (lie.ad(xi1) @ phi2 - lie.ad(xi2) @ phi1)
    return MagnusIncrement(omega, d_omega)


def magnus_increment(cfg: BasisConfig, q: np.ndarray, s_i: float, s_ip1: float) -> MagnusIncrement:
    h = s_ip1 - s_i
    if not h > 0:
        raise ValueError(f"degenerate Magnus interval [{s_i}, {s_ip1}]")
    q = np.asarray(q, dtype=float)
    if q.shape != (cfg.size,):
        raise ValueError(f"expected {cfg.size} strain coefficients, got shape {q.shape}")
    phi1, phi2 = basis_rows(cfg, gauss_points(s_i, s_ip1))
    return increment_from_basis(phi1, phi2, q, cfg.reference, h)


def propagate(cfg: BasisConfig, q: np.ndarray, g_i: np.ndarray, s_i: float, s_ip1: float) -> np.ndarray:
    return g_i @ lie.exp(magnus_increment(cfg, q, s_i, s_ip1).omega)


def integrate_nodes(cfg: BasisConfig, q: np.ndarray, s_nodes: Sequence[float]) -> list[np.ndarray]:
    """Poses at ``s_nodes`` chained from the identity at ``s_nodes[0]``."""
    poses = [np.eye(4)]
    for a, b in zip(s_nodes[:-1], s_nodes[1:]):
        poses.append(propagate(cfg, q, poses[-1], a, b))
    return poses


def dense_query(
    cfg: BasisConfig,
    q: np.ndarray,
    nodes: Sequence[np.ndarray],
    s: float | Sequence[float],
) -> np.ndarray:
    """Continuous backbone from node poses at uniform arclengths.

    Each query point is propagated by one Magnus step from the closest node
    at or below it. A scalar ``s`` returns a single 4x4 pose; a sequence
    returns an (n, 4, 4) stack.
    """
    scalar = np.ndim(s) == 0
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    n_int = len(nodes) - 1
    L = cfg.length
    tol = 1e-12 * L
    bad = s_arr[(s_arr < -tol) | (s_arr > L + tol)]
    if bad.size:
        raise ValueError(f"query arclength {bad[0]:g} outside [0, {L:g}]")
    s_arr = np.clip(s_arr, 0.0, L)
    h_node = L / n_int
    idx = np.minimum(np.floor(s_arr / h_node + 1e-12).astype(int), n_int)
    s_lo = idx * h_node
    h = s_arr - s_lo

    out = np.empty((len(s_arr), 4, 4))
    at_node = h <= tol
    out[at_node] = np.asarray(nodes)[idx[at_node]]
    move = ~at_node
    if np.any(move):
        hm = h[move]
        c1 = s_lo[move] + GAUSS_NODES[0] * hm
        c2 = s_lo[move] + GAUSS_NODES[1] * hm
        xi_ref = cfg.reference
        xi1 = basis_rows(cfg, c1) @ q + xi_ref
        xi2 = basis_rows(cfg, c2) @ q + xi_ref
        comm = np.concatenate(
            [np.cross(xi1[:, :3], xi2[:, :3]),
             np.cross(xi1[:, :3], xi2[:, 3:]) - np.cross(xi2[:, :3], xi1[:, 3:])],
            axis=1,
        )
        omega = 0.5 * hm[:, None] * (xi1 + xi2) + COMMUTATOR_SIGN * (_SQRT3 * hm**2 / 12.0)[:, None] * comm
        out[move] = np.asarray(nodes)[idx[move]] @ lie.exp_many(omega)
    return out[0] if scalar else out
