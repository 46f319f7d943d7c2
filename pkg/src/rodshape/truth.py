"""Ground-truth rod shapes and synthetic sensor readings.

Two generators are provided: densely integrated prescribed spline strain
fields (mode A), and the static equilibrium of an extensible, shearable
Cosserat rod clamped at the base and loaded by a tip wrench (mode B), solved
by shooting on the base internal wrench.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
import scipy.linalg
from scipy.interpolate import CubicSpline

from . import lie
from .basis import XI_REF, BasisConfig, eval_strain_many
from .factors import MeasurementSet, PoseReading, PositionReading, Sensor, StrainReading
from .magnus import gauss_points, omega_from_strains

COARSE_STEPS = 200

log = logging.getLogger(__name__)

TABLE_HEADER = (
    "s_m r11 r12 r13 r21 r22 r23 r31 r32 r33 t_x_m t_y_m t_z_m "
    "k_x_radpm k_y_radpm k_z_radpm p_x p_y p_z"
)


class ShootingError(RuntimeError):
    def __init__(self, residual_norm: float, iterations: int):
        super().__init__(
            f"shooting did not converge after {iterations} Newton iterations "
            f"(tip wrench mismatch {residual_norm:.3e})"
        )
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class RodProperties:
    length: float = 0.4
    radius: float = 1e-3
    youngs_modulus: float = 54e9
    poisson: float = 0.3

    @property
    def stiffness(self) -> np.ndarray:
        """Diagonal of K = diag(EI, EI, GJ, GA, GA, EA)."""
        E = self.youngs_modulus
        G = E / (2.0 * (1.0 + self.poisson))
        I = np.pi * self.radius**4 / 4.0
        A = np.pi * self.radius**2
        return np.array([E * I, E * I, G * 2.0 * I, G * A, G * A, E * A])


@dataclass(frozen=True)
class TipWrench:
    """Tip load in the fixed (base) frame: force in N, moment in N m."""

    force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    moment: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_omega_rad: float = 0.01
    sigma_r_m: float = 1e-3
    sigma_k: float = 0.05
    sigma_p: float = 0.05

    def __post_init__(self):
        if min(self.sigma_omega_rad, self.sigma_r_m, self.sigma_k, self.sigma_p) < 0:
            raise ValueError("noise standard deviations must be nonnegative")


@dataclass(frozen=True)
class WrenchBounds:
    force_n: float = 1.5
    moment_nm: float = 0.02


@dataclass
class GroundTruth:
    s: np.ndarray
    poses: np.ndarray
    strains: np.ndarray
    provenance: dict = field(default_factory=dict)
    wrenches: np.ndarray | None = None

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def positions(self) -> np.ndarray:
        return self.poses[:, :3, 3]

    def strain_at(self, s: np.ndarray) -> np.ndarray:
        return CubicSpline(self.s, self.strains, axis=0)(s)

    def pose_at(self, s: float) -> np.ndarray:
        """Pose at an arbitrary arclength, one Magnus step from the closest table row below."""
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.s) - 1))
        if abs(self.s[i] - s) <= 1e-12 * self.length:
            return self.poses[i].copy()
        c1, c2 = gauss_points(self.s[i], s)
        xi1, xi2 = self.strain_at(np.array([c1, c2]))
        return self.poses[i] @ lie.exp(omega_from_strains(xi1, xi2, s - self.s[i]))

    def consistency_residual(self) -> float:
        """Largest one-step mismatch between consecutive table poses and the strain table."""
        spline = CubicSpline(self.s, self.strains, axis=0)
        worst = 0.0
        for m in range(len(self.s) - 1):
            a, b = self.s[m], self.s[m + 1]
            xi1, xi2 = spline(np.array(gauss_points(a, b)))
            step = lie.exp(omega_from_strains(xi1, xi2, b - a))
            err = lie.inverse(self.poses[m] @ step) @ self.poses[m + 1]
            worst = max(worst, float(np.linalg.norm(lie.log(err))))
        return worst

    def save(self, path: str | Path) -> None:
        table = np.column_stack(
            [self.s, self.poses[:, :3, :3].reshape(-1, 9), self.poses[:, :3, 3], self.strains]
        )
        np.savetxt(path, table, fmt="%.17g", header=TABLE_HEADER)

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        table = np.loadtxt(path, ndmin=2)
        if table.shape[1] != 19:
            raise ValueError(f"{path}: expected 19 columns, found {table.shape[1]}")
        poses = np.tile(np.eye(4), (len(table), 1, 1))
        poses[:, :3, :3] = table[:, 1:10].reshape(-1, 3, 3)
        poses[:, :3, 3] = table[:, 10:13]
        return cls(s=table[:, 0], poses=poses, strains=table[:, 13:19], provenance={"file": str(path)})


# --- RK4 kernels --------------------------------------------------------------


@numba.njit(cache=True)
def _mat_hat(xi):
    A = np.zeros((4, 4))
    A[0, 1], A[0, 2], A[1, 2] = -xi[2], xi[1], -xi[0]
    A[1, 0], A[2, 0], A[2, 1] = xi[2], -xi[1], xi[0]
    A[0, 3], A[1, 3], A[2, 3] = xi[3], xi[4], xi[5]
    return A


@numba.njit(cache=True)
def _rk4_pose_kernel(g0, xi_start, xi_mid, xi_end, h, stride):
    n = xi_start.shape[0]
    out = np.empty((n // stride + 1, 4, 4))
    g = g0.copy()
    out[0] = g
    for i in range(n):
        a1 = _mat_hat(xi_start[i])
        am = _mat_hat(xi_mid[i])
        a2 = _mat_hat(xi_end[i])
        k1 = g @ a1
        k2 = (g + 0.5 * h * k1) @ am
        k3 = (g + 0.5 * h * k2) @ am
        k4 = (g + h * k3) @ a2
        g = g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (i + 1) % stride == 0:
            out[(i + 1) // stride] = g
    return out


def integrate_rk4(strain_fn, s0: float, s1: float, n_steps: int, g0=None, stride: int | None = None):
    """Classical RK4 for g' = g hat(xi(s)) on a uniform grid.

    ``strain_fn`` maps an array of arclengths to an (n, 6) strain array.
    Returns poses every ``stride`` steps (default: only the end pose).
    """
    h = (s1 - s0) / n_steps
    grid = s0 + h * np.arange(n_steps + 1)
    mids = grid[:-1] + 0.5 * h
    xi_grid = np.ascontiguousarray(strain_fn(grid), dtype=float)
    xi_mid = np.ascontiguousarray(strain_fn(mids), dtype=float)
    g0 = np.eye(4) if g0 is None else np.asarray(g0, dtype=float)
    out = _rk4_pose_kernel(
        g0, xi_grid[:-1].copy(), xi_mid, xi_grid[1:].copy(), h, stride or n_steps
    )
    return out if stride else out[-1]


@numba.njit(cache=True)
def _cosserat_rhs(y, kinv, xi_ref, out):
    # y = [R row-major (9), p (3), W = (m, n) (6)]
    k0 = xi_ref[0] + kinv[0] * y[12]
    k1 = xi_ref[1] + kinv[1] * y[13]
    k2 = xi_ref[2] + kinv[2] * y[14]
    v0 = xi_ref[3] + kinv[3] * y[15]
    v1 = xi_ref[4] + kinv[4] * y[16]
    v2 = xi_ref[5] + kinv[5] * y[17]
    for r in range(3):
        a, b, c = y[3 * r], y[3 * r + 1], y[3 * r + 2]
        # R' = R skew(k)
        out[3 * r] = b * k2 - c * k1
        out[3 * r + 1] = c * k0 - a * k2
        out[3 * r + 2] = a * k1 - b * k0
        out[9 + r] = a * v0 + b * v1 + c * v2
    m0, m1, m2, n0, n1, n2 = y[12], y[13], y[14], y[15], y[16], y[17]
    out[12] = -(k1 * m2 - k2 * m1) - (v1 * n2 - v2 * n1)
    out[13] = -(k2 * m0 - k0 * m2) - (v2 * n0 - v0 * n2)
    out[14] = -(k0 * m1 - k1 * m0) - (v0 * n1 - v1 * n0)
    out[15] = -(k1 * n2 - k2 * n1)
    out[16] = -(k2 * n0 - k0 * n2)
    out[17] = -(k0 * n1 - k1 * n0)


@numba.njit(cache=True)
def _cosserat_kernel(W0, kinv, xi_ref, length, n_steps, stride):
    """RK4 of the rod state from the clamped base; rows every ``stride`` steps."""
    h = length / n_steps
    n_out = n_steps // stride + 1
    out = np.empty((n_out, 18))
    y = np.zeros(18)
    y[0] = y[4] = y[8] = 1.0
    y[12:] = W0
    f1, f2, f3, f4, tmp = np.empty(18), np.empty(18), np.empty(18), np.empty(18), np.empty(18)
    out[0] = y
    for i in range(n_steps):
        _cosserat_rhs(y, kinv, xi_ref, f1)
        for j in range(18):
            tmp[j] = y[j] + 0.5 * h * f1[j]
        _cosserat_rhs(tmp, kinv, xi_ref, f2)
        for j in range(18):
            tmp[j] = y[j] + 0.5 * h * f2[j]
        _cosserat_rhs(tmp, kinv, xi_ref, f3)
        for j in range(18):
            tmp[j] = y[j] + h * f3[j]
        _cosserat_rhs(tmp, kinv, xi_ref, f4)
        for j in range(18):
            y[j] += (h / 6.0) * (f1[j] + 2.0 * f2[j] + 2.0 * f3[j] + f4[j])
        if (i + 1) % stride == 0:
            out[(i + 1) // stride] = y
    return out


def _unpack_state(rows: np.ndarray):
    return rows[:, :9].reshape(-1, 3, 3), rows[:, 9:12], rows[:, 12:]


# --- generators ----------------------------------------------------------------


def gen_prescribed(cfg: BasisConfig, q_true: np.ndarray, n_dense: int = 401, substeps: int = 10) -> GroundTruth:
    q_true = np.asarray(q_true, dtype=float)
    n_steps = (n_dense - 1) * substeps
    poses = integrate_rk4(
        lambda s: eval_strain_many(cfg, q_true, np.clip(s, 0.0, cfg.length)),
        0.0, cfg.length, n_steps, stride=substeps,
    )
    s = np.linspace(0.0, cfg.length, n_dense)
    return GroundTruth(
        s=s,
        poses=poses,
        strains=eval_strain_many(cfg, q_true, s),
        provenance={"mode": "prescribed", "q": q_true.tolist(), "basis": cfg.to_dict()},
    )


def _tip_residual(Rs, Ws, wrench: TipWrench) -> np.ndarray:
    R_tip = Rs[-1]
    target = np.concatenate([R_tip.T @ np.asarray(wrench.moment), R_tip.T @ np.asarray(wrench.force)])
    return Ws[-1] - target


def _newton_shoot(residual, W, tol, max_iter):
    """Damped Newton on the base wrench with a central-difference Jacobian."""
    r = residual(W)
    it = 0
    J = None
    while np.max(np.abs(r)) > tol:
        if it >= max_iter:
            raise ShootingError(float(np.linalg.norm(r)), it)
        scale = np.maximum(np.abs(W), 1e-3)
        J = np.empty((6, 6))
        for j in range(6):
            d = np.zeros(6)
            d[j] = 1e-6 * scale[j]
            J[:, j] = (residual(W + d) - residual(W - d)) / (2.0 * d[j])
        try:
            step = -np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise ShootingError(float(np.linalg.norm(r)), it) from None
        alpha = 1.0
        while True:
            r_new = residual(W + alpha * step)
            if np.linalg.norm(r_new) < np.linalg.norm(r) or alpha < 1e-4:
                break
            alpha *= 0.5
        W, r = W + alpha * step, r_new
        it += 1
    return W, r, it, J


def _chord_refine(residual, W, J, tol, max_iter):
    """Newton iterations with a frozen Jacobian; falls back to fresh Newton if they stall."""
    if J is None:
        W, r, it, _ = _newton_shoot(residual, W, tol, max_iter)
        return W, r, it
    lu = scipy.linalg.lu_factor(J)
    r = residual(W)
    for it in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            return W, r, it
        W_new = W - scipy.linalg.lu_solve(lu, r)
        r_new = residual(W_new)
        if np.linalg.norm(r_new) > 0.5 * np.linalg.norm(r):
            W, r, extra, _ = _newton_shoot(residual, W, tol, max_iter)
            return W, r, it + extra
        W, r = W_new, r_new
    raise ShootingError(float(np.linalg.norm(r)), max_iter)


def gen_cosserat_tip_wrench(
    props: RodProperties,
    wrench: TipWrench,
    n_dense: int = 401,
    substeps: int = 4,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> GroundTruth:
    """Static clamped-free Cosserat rod under a tip wrench.

    The internal wrench W (moment first, body frame) obeys W' = ad(xi)^T W
    with xi = xi_ref + K^-1 W; the tip condition is W(L) = tip wrench rotated
    into the tip frame. Newton iterates on W(0) starting from the straight-rod
    value. If that fails, the load is ramped up in equal increments, each
    solve warm-started from the previous one.
    """
    force = np.asarray(wrench.force, dtype=float)
    moment = np.asarray(wrench.moment, dtype=float)
    if np.any(np.abs(force) > 5.0):
        raise ValueError("tip force components beyond +/-5 N are outside the shooting envelope")
    L = props.length
    kinv = 1.0 / props.stiffness
    n_steps = (n_dense - 1) * substeps

    def make_residual(load: TipWrench, steps: int):
        def residual(W0):
            Rs, _, Ws = _unpack_state(_cosserat_kernel(W0, kinv, XI_REF, L, steps, steps))
            return _tip_residual(Rs, Ws, load)
        return residual

    def straight_guess(f, m):
        return np.concatenate([m + np.cross([0.0, 0.0, L], f), f])

    # Newton on a coarse grid, then a chord refinement on the full grid reusing
    # the coarse Jacobian: the two discretizations differ only at O(h^4).
    coarse = min(n_steps, COARSE_STEPS)
    total_it = 0
    ramp = 1
    while True:
        try:
            W = straight_guess(force / ramp, moment / ramp)
            for k in range(1, ramp + 1):
                load = TipWrench(tuple(force * k / ramp), tuple(moment * k / ramp))
                W, r, it, J = _newton_shoot(make_residual(load, coarse), W, tol, max_iter)
                total_it += it
            W, r, it = _chord_refine(make_residual(wrench, n_steps), W, J, tol, max_iter)
            total_it += it
            break
        except ShootingError:
            if ramp >= 32:
                raise
            ramp *= 4

    Rs, ps, Ws = _unpack_state(_cosserat_kernel(W, kinv, XI_REF, L, n_steps, substeps))
    poses = np.tile(np.eye(4), (len(Rs), 1, 1))
    poses[:, :3, :3] = Rs
    poses[:, :3, 3] = ps
    return GroundTruth(
        s=np.linspace(0.0, L, n_dense),
        poses=poses,
        strains=XI_REF + kinv * Ws,
        wrenches=Ws,
        provenance={
            "mode": "cosserat",
            "force_n": force.tolist(),
            "moment_nm": moment.tolist(),
            "newton_iterations": total_it,
            "load_steps": ramp,
            "tip_residual": float(np.max(np.abs(r))),
        },
    )


def draw_wrench(bounds: WrenchBounds, rng: np.random.Generator) -> TipWrench:
    f = rng.uniform(-bounds.force_n, bounds.force_n, 3)
    m = rng.uniform(-bounds.moment_nm, bounds.moment_nm, 3)
    return TipWrench(tuple(f), tuple(m))


def _generate_one(args):
    props, bounds, seed, index, n_dense = args
    rng = np.random.default_rng([seed, index])
    wrench = draw_wrench(bounds, rng)
    try:
        truth = gen_cosserat_tip_wrench(props, wrench, n_dense=n_dense)
    except ShootingError as exc:
        return index, None, str(exc)
    truth.provenance["draw"] = index
    return index, truth, None


def batch_generate(
    bounds: WrenchBounds,
    count: int,
    seed: int,
    props: RodProperties = RodProperties(),
    n_dense: int = 401,
    jobs: int = 1,
) -> list[GroundTruth]:
    """Random tip-wrench equilibria; draw ``i`` uses RNG stream ``(seed, i)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    tasks = [(props, bounds, seed, i, n_dense) for i in range(count)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_generate_one, tasks))
    else:
        results = [_generate_one(t) for t in tasks]
    failed = [(i, msg) for i, truth, msg in results if truth is None]
    for i, msg in failed:
        log.warning("draw %d skipped: %s", i, msg)
    if len(failed) > 0.2 * count:
        raise RuntimeError(f"{len(failed)}/{count} draws failed to converge; check wrench bounds")
    return [truth for _, truth, _ in results if truth is not None]


# --- measurements --------------------------------------------------------------


def sample_measurements(
    truth: GroundTruth,
    sensors: Sequence[Sensor],
    noise: NoiseSpec,
    rng: np.random.Generator,
) -> MeasurementSet:
    """Noisy readings of ``truth`` at each sensor location.

    Pose noise is a body-frame perturbation ``g @ exp([d_omega; d_r])``.
    """
    meas = MeasurementSet()
    L = truth.length
    for sensor in sensors:
        if not -1e-12 <= sensor.s <= L + 1e-12:
            raise ValueError(f"sensor arclength {sensor.s} outside [0, {L}]")
        if sensor.kind == "strain":
            xi = truth.strain_at(np.array([sensor.s]))[0]
            w = np.concatenate([
                rng.normal(0.0, 1.0, 3) * noise.sigma_k,
                rng.normal(0.0, 1.0, 3) * noise.sigma_p,
            ])
            meas.strain.append(StrainReading(sensor.s, xi + w, sensor.cov))
        elif sensor.kind == "pose":
            g = truth.pose_at(sensor.s)
            d = np.concatenate([
                rng.normal(0.0, 1.0, 3) * noise.sigma_omega_rad,
                rng.normal(0.0, 1.0, 3) * noise.sigma_r_m,
            ])
            meas.pose.append(PoseReading(sensor.s, g @ lie.exp(d), sensor.cov))
        elif sensor.kind == "position":
            r = truth.pose_at(sensor.s)[:3, 3]
            meas.position.append(
                PositionReading(sensor.s, r + rng.normal(0.0, 1.0, 3) * noise.sigma_r_m, sensor.cov)
            )
        else:
            raise ValueError(f"unknown sensor type {sensor.kind!r}")
    return meas
