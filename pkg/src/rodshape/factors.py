"""Variables, Gaussian factors and graph assembly for backbone shape estimation.

Variables are the node poses ``g_0 .. g_N`` (keys ``0 .. N``) and the strain
coefficient vector (key :data:`Q_KEY`). Every Jacobian is taken with respect to
a right perturbation of the poses, ``g <- g @ exp(delta)``, and an additive
perturbation of ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import lie
from ._kernels import log_jr_inv_kernel, magnus_kernel, scatter_magnus
from .basis import BasisConfig, basis_row, basis_rows
from .magnus import COMMUTATOR_SIGN, MagnusIncrement, gauss_points, increment_from_basis, magnus_increment

Q_KEY = "q"
Key = Union[int, str]

# Information weight (per axis) standing in for a zero-covariance constraint.
CONSTRAINED_INFORMATION = 1e12
SENSOR_KINDS = ("pose", "position", "strain")


class DivergedLinearization(RuntimeError):
    """A residual could not be linearized (log evaluated near a half-turn)."""


# --- measurements ---------------------------------------------------------------


@dataclass
class Sensor:
    kind: str
    s: float
    cov: np.ndarray

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise ValueError(f"sensor type must be one of {SENSOR_KINDS}, got {self.kind!r}")
        self.cov = np.asarray(self.cov, dtype=float)
        dim = 3 if self.kind == "position" else 6
        if self.cov.shape != (dim, dim):
            raise ValueError(f"{self.kind} sensor covariance must be {dim}x{dim}")


@dataclass
class StrainReading:
    s: float
    value: np.ndarray
    cov: np.ndarray


@dataclass
class PoseReading:
    s: float
    value: np.ndarray
    cov: np.ndarray


@dataclass
class PositionReading:
    s: float
    value: np.ndarray
    cov: np.ndarray


@dataclass
class MeasurementSet:
    strain: list[StrainReading] = field(default_factory=list)
    pose: list[PoseReading] = field(default_factory=list)
    position: list[PositionReading] = field(default_factory=list)

    def __len__(self):
        return len(self.strain) + len(self.pose) + len(self.position)


# --- values -------------------------------------------------------------------------


@dataclass
class Values:
    poses: list[np.ndarray]
    q: np.ndarray

    def __getitem__(self, key: Key):
        return self.q if key == Q_KEY else self.poses[key]

    def copy(self) -> "Values":
        return Values([g.copy() for g in self.poses], self.q.copy())

    @classmethod
    def straight(cls, cfg: BasisConfig, n_intervals: int) -> "Values":
        """Undeformed rod: q = 0 and poses translated along z."""
        h = cfg.length / n_intervals
        poses = [lie.make_pose(np.eye(3), [0.0, 0.0, i * h]) for i in range(n_intervals + 1)]
        return cls(poses, np.zeros(cfg.size))


# --- residuals ----------------------------------------------------------------------


def _log(g: np.ndarray) -> np.ndarray:
    try:
        return lie.log(g)
    except lie.LogBranchError as exc:
        raise DivergedLinearization(str(exc)) from exc


def magnus_residual_from_increment(g_i, g_ip1, inc: MagnusIncrement, jacobians: bool = True):
    d = lie.inverse(g_i) @ g_ip1
    e = _log(lie.exp(-inc.omega) @ d)
    if not jacobians:
        return e
    jr_inv = lie.right_jacobian_inv(e)
    back = -jr_inv @ lie.Ad(lie.inverse(d))
    J_q = back @ lie.left_jacobian(inc.omega) @ inc.d_omega_dq
    return e, back, jr_inv, J_q


def magnus_factor_residual(g_i, g_ip1, q, cfg: BasisConfig, interval: tuple[float, float]):
    """Residual log(exp(-Omega) g_i^-1 g_ip1) and its Jacobians (J_gi, J_gip1, J_q)."""
    inc = magnus_increment(cfg, q, *interval)
    return magnus_residual_from_increment(g_i, g_ip1, inc)


def magnus_batch(phi1, phi2, h, xi_ref, q, G_i, G_ip1, jacobians: bool = True):
    """Vectorized Magnus residuals for stacked intervals.

    ``phi1``/``phi2`` are (n, 6, S) basis rows, ``h`` the (n,) interval lengths
    and ``G_i``/``G_ip1`` the (n, 4, 4) end poses. Returns ``e`` (n, 6) and,
    when requested, the stacked Jacobians ``(J_gi, J_gip1, J_q)``.
    """
    xi1 = phi1 @ q + xi_ref
    xi2 = phi2 @ q + xi_ref
    c = (COMMUTATOR_SIGN * np.sqrt(3.0) / 12.0) * h * h
    ad1 = lie.ad_many(xi1)
    omega = 0.5 * h[:, None] * (xi1 + xi2) + c[:, None] * np.einsum("nij,nj->ni", ad1, xi2)
    D = lie.inverse_many(G_i) @ G_ip1
    try:
        e = lie.log_many(lie.exp_many(-omega) @ D)
    except lie.LogBranchError as exc:
        raise DivergedLinearization(str(exc)) from exc
    if not jacobians:
        return e
    d_omega = 0.5 * h[:, None, None] * (phi1 + phi2) + c[:, None, None] * (
        ad1 @ phi2 - lie.ad_many(xi2) @ phi1
    )
    jr_inv = lie.right_jacobian_inv_many(e)
    back = -jr_inv @ lie.Ad_many(lie.inverse_many(D))
    J_q = back @ (lie.left_jacobian_many(omega) @ d_omega)
    return e, back, jr_inv, J_q


def strain_factor_residual(q, cfg: BasisConfig, s: float, measured: np.ndarray):
    phi = basis_row(cfg, s)
    return phi @ q + cfg.reference - measured, phi


def _log_jr_inv(g: np.ndarray):
    ok, e, J = log_jr_inv_kernel(np.asarray(g, dtype=float))
    if not ok:
        raise DivergedLinearization(f"rotation angle within {lie._PI_MARGIN} of pi")
    return e, J


def pose_factor_residual(g: np.ndarray, measured: np.ndarray):
    return _log_jr_inv(lie.inverse(measured) @ g)


def position_factor_residual(g: np.ndarray, measured: np.ndarray):
    J = np.zeros((3, 6))
    J[:, 3:] = g[:3, :3]
    return g[:3, 3] - measured, J


def root_prior_residual(g0: np.ndarray):
    return _log_jr_inv(g0)


def strain_prior_residual(q: np.ndarray):
    return np.array(q, dtype=float), np.eye(len(q))


# --- factors ------------------------------------------------------------------------


def sqrt_information(cov: np.ndarray | None, dim: int) -> np.ndarray:
    """Whitening matrix W with W^T W = cov^-1; ``None`` means a hard constraint."""
    if cov is None:
        return np.sqrt(CONSTRAINED_INFORMATION) * np.eye(dim)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (dim, dim):
        raise ValueError(f"covariance must be {dim}x{dim}, got {cov.shape}")
    return np.linalg.inv(np.linalg.cholesky(cov))


class Factor:
    keys: tuple[Key, ...]
    sqrt_info: np.ndarray
    label: str = "factor"

    def residual(self, values: Values) -> np.ndarray:
        raise NotImplementedError

    def linearize(self, values: Values) -> tuple[np.ndarray, list[np.ndarray]]:
        """Unwhitened residual and one Jacobian per key."""
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return self.sqrt_info.shape[0]

    def whitened(self, values: Values) -> np.ndarray:
        return self.sqrt_info @ self.residual(values)

    def error(self, values: Values) -> float:
        r = self.whitened(values)
        return 0.5 * float(r @ r)


class MagnusFactor(Factor):
    label = "magnus"

    def __init__(self, i: int, s_i: float, s_ip1: float, cfg: BasisConfig, cov: np.ndarray):
        self.keys = (i, i + 1, Q_KEY)
        self.interval = (s_i, s_ip1)
        self.h = s_ip1 - s_i
        if not self.h > 0:
            raise ValueError("Magnus factor needs s_i < s_ip1")
        self.phi1, self.phi2 = basis_rows(cfg, gauss_points(s_i, s_ip1))
        self.xi_ref = cfg.reference
        self.sqrt_info = sqrt_information(cov, 6)

    def increment(self, q: np.ndarray) -> MagnusIncrement:
        return increment_from_basis(self.phi1, self.phi2, q, self.xi_ref, self.h)

    def residual(self, values):
        i, j, _ = self.keys
        return magnus_residual_from_increment(values[i], values[j], self.increment(values.q), jacobians=False)

    def linearize(self, values):
        i, j, _ = self.keys
        e, J_i, J_j, J_q = magnus_residual_from_increment(values[i], values[j], self.increment(values.q))
        return e, [J_i, J_j, J_q]


class StrainFactor(Factor):
    label = "strain"

    def __init__(self, s: float, measured: np.ndarray, cfg: BasisConfig, cov: np.ndarray):
        self.keys = (Q_KEY,)
        self.s = s
        self.measured = np.asarray(measured, dtype=float)
        self.phi = basis_row(cfg, s)
        self.xi_ref = cfg.reference
        self.sqrt_info = sqrt_information(cov, 6)

    def residual(self, values):
        return self.phi @ values.q + self.xi_ref - self.measured

    def linearize(self, values):
        return self.residual(values), [self.phi]

    def affine(self):
        """``(A, b)`` with residual ``A q + b``."""
        return self.phi, self.xi_ref - self.measured


class PoseFactor(Factor):
    label = "pose"

    def __init__(self, node: int, measured: np.ndarray, cov: np.ndarray):
        self.keys = (node,)
        self.measured = np.asarray(measured, dtype=float)
        self.sqrt_info = sqrt_information(cov, 6)

    def residual(self, values):
        return _log_jr_inv(lie.inverse(self.measured) @ values[self.keys[0]])[0]

    def linearize(self, values):
        e, J = pose_factor_residual(values[self.keys[0]], self.measured)
        return e, [J]


class PositionFactor(Factor):
    label = "position"

    def __init__(self, node: int, measured: np.ndarray, cov: np.ndarray):
        self.keys = (node,)
        self.measured = np.asarray(measured, dtype=float)
        self.sqrt_info = sqrt_information(cov, 3)

    def residual(self, values):
        return values[self.keys[0]][:3, 3] - self.measured

    def linearize(self, values):
        e, J = position_factor_residual(values[self.keys[0]], self.measured)
        return e, [J]


class RootPrior(Factor):
    label = "root_prior"

    def __init__(self, cov: np.ndarray | None = None):
        self.keys = (0,)
        self.sqrt_info = sqrt_information(cov, 6)

    def residual(self, values):
        return _log_jr_inv(values[0])[0]

    def linearize(self, values):
        e, J = root_prior_residual(values[0])
        return e, [J]


class StrainPrior(Factor):
    label = "strain_prior"

    def __init__(self, variances: np.ndarray):
        variances = np.asarray(variances, dtype=float)
        self.keys = (Q_KEY,)
        self.sqrt_info = np.diag(1.0 / np.sqrt(variances))

    def residual(self, values):
        return np.array(values.q, dtype=float)

    def linearize(self, values):
        e, J = strain_prior_residual(values.q)
        return e, [J]

    def affine(self):
        n = self.sqrt_info.shape[0]
        return np.eye(n), np.zeros(n)


# --- graph ----------------------------------------------------------------------------


@dataclass
class FactorGraph:
    basis: BasisConfig
    node_s: np.ndarray
    factors: list[Factor] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.node_s)

    @property
    def tangent_dim(self) -> int:
        return 6 * self.n_nodes + self.basis.size

    def offset(self, key: Key) -> slice:
        if key == Q_KEY:
            start = 6 * self.n_nodes
            return slice(start, start + self.basis.size)
        return slice(6 * key, 6 * key + 6)

    def block_name(self, column: int) -> str:
        if column >= 6 * self.n_nodes:
            j = column - 6 * self.n_nodes
            for comp, sl in self.basis.blocks.items():
                if sl.start <= j < sl.stop:
                    return f"q[{comp}]"
        return f"g_{column // 6}"

    def add(self, factor: Factor) -> None:
        self.factors.append(factor)

    def _plan(self):
        """Evaluation plan cached on the factor list: stacked Magnus factors,
        factors linear in ``q`` collapsed to one whitened matrix, the rest."""
        ids = tuple(map(id, self.factors))
        cached = getattr(self, "_plan_cache", None)
        if cached is not None and cached[0] == ids:
            return cached[1]
        magnus, linear, other = [], [], []
        row = 0
        for f in self.factors:
            if isinstance(f, MagnusFactor):
                magnus.append((row, f))
            elif isinstance(f, (StrainFactor, StrainPrior)):
                linear.append((row, f))
            else:
                other.append((row, f))
            row += f.dim
        plan = {"rows": row, "magnus": None, "linear": None, "other": other}
        if magnus:
            mf = [f for _, f in magnus]
            plan["magnus"] = {
                "rows": (np.array([r for r, _ in magnus])[:, None] + np.arange(6)),
                "i": np.array([f.keys[0] for f in mf]),
                "j": np.array([f.keys[1] for f in mf]),
                "phi1": np.stack([f.phi1 for f in mf]),
                "phi2": np.stack([f.phi2 for f in mf]),
                "h": np.array([f.h for f in mf]),
                "xi_ref": mf[0].xi_ref,
                "W": np.stack([f.sqrt_info for f in mf]),
            }
        if linear:
            mats = [f.sqrt_info @ np.column_stack(f.affine()) for _, f in linear]
            M = np.vstack(mats)
            plan["linear"] = {
                "rows": np.concatenate([np.arange(r, r + f.dim) for r, f in linear]),
                "A": np.ascontiguousarray(M[:, :-1]),
                "b": M[:, -1].copy(),
            }
        self._plan_cache = (ids, plan)
        return plan

    def _magnus_eval(self, values: Values, jacobians: bool):
        st = self._plan()["magnus"]
        G = np.asarray(values.poses, dtype=float)
        ok, e, back, jr_inv, J_q = magnus_kernel(
            st["phi1"], st["phi2"], st["h"], st["xi_ref"], np.asarray(values.q, dtype=float),
            G[st["i"]], G[st["j"]], float(COMMUTATOR_SIGN), jacobians,
        )
        if not ok:
            raise DivergedLinearization(f"rotation angle within {lie._PI_MARGIN} of pi")
        return (e, back, jr_inv, J_q) if jacobians else e

    def cost(self, values: Values) -> float:
        r = self.whitened_residual(values)
        return 0.5 * float(r @ r)

    def whitened_residual(self, values: Values) -> np.ndarray:
        plan = self._plan()
        r = np.empty(plan["rows"])
        if plan["magnus"]:
            st = plan["magnus"]
            r[st["rows"]] = np.einsum("nij,nj->ni", st["W"], self._magnus_eval(values, jacobians=False))
        if plan["linear"]:
            lin = plan["linear"]
            r[lin["rows"]] = lin["A"] @ values.q + lin["b"]
        for row, f in plan["other"]:
            r[row:row + f.dim] = f.whitened(values)
        return r

    def linearize(self, values: Values) -> tuple[np.ndarray, np.ndarray]:
        """Dense whitened Jacobian and residual over the full tangent space."""
        plan = self._plan()
        J = np.zeros((plan["rows"], self.tangent_dim))
        r = np.empty(plan["rows"])
        qs = self.offset(Q_KEY)
        if plan["magnus"]:
            st = plan["magnus"]
            e, J_i, J_j, J_q = self._magnus_eval(values, jacobians=True)
            scatter_magnus(J, r, st["W"], st["rows"][:, 0], st["i"], st["j"], qs.start, e, J_i, J_j, J_q)
        if plan["linear"]:
            lin = plan["linear"]
            r[lin["rows"]] = lin["A"] @ values.q + lin["b"]
            J[lin["rows"], qs] = lin["A"]
        for row, f in plan["other"]:
            d = f.dim
            e, blocks = f.linearize(values)
            Wf = f.sqrt_info
            r[row:row + d] = Wf @ e
            for key, block in zip(f.keys, blocks):
                J[row:row + d, self.offset(key)] += Wf @ block
        return J, r

    def residual_norms(self, values: Values) -> list[tuple[str, tuple, float]]:
        return [(f.label, f.keys, float(np.linalg.norm(f.whitened(values)))) for f in self.factors]

    def variables_touched(self) -> set:
        return {k for f in self.factors for k in f.keys}


def q_prior_variances(cfg: BasisConfig, angular: float, linear: float) -> np.ndarray:
    out = np.empty(cfg.size)
    for comp, sl in cfg.blocks.items():
        out[sl] = angular if comp.startswith("k") else linear
    return out


def node_index(node_s: np.ndarray, s: float, kind: str) -> int:
    i = int(np.argmin(np.abs(node_s - s)))
    tol = 1e-9 * max(node_s[-1], 1.0)
    if abs(node_s[i] - s) > tol:
        raise ValueError(
            f"{kind} measurement at s={s:.6g} does not coincide with an estimation node "
            f"(nearest node {i} at s={node_s[i]:.6g})"
        )
    return i


def build_graph(scenario, meas: MeasurementSet) -> FactorGraph:
    """Assemble priors, Magnus factors and one factor per measurement.

    ``scenario`` needs ``basis``, ``n_intervals``, ``magnus_cov``,
    ``q_prior_angular``, ``q_prior_linear`` and ``root_constrained``.
    """
    cfg: BasisConfig = scenario.basis
    n = scenario.n_intervals
    node_s = np.linspace(0.0, cfg.length, n + 1)
    graph = FactorGraph(cfg, node_s)
    root_cov = None if scenario.root_constrained else scenario.root_cov
    graph.add(RootPrior(root_cov))
    graph.add(StrainPrior(q_prior_variances(cfg, scenario.q_prior_angular, scenario.q_prior_linear)))
    for i in range(n):
        graph.add(MagnusFactor(i, node_s[i], node_s[i + 1], cfg, scenario.magnus_cov))
    for m in meas.strain:
        graph.add(StrainFactor(m.s, m.value, cfg, m.cov))
    for m in meas.pose:
        graph.add(PoseFactor(node_index(node_s, m.s, "pose"), m.value, m.cov))
    for m in meas.position:
        graph.add(PositionFactor(node_index(node_s, m.s, "position"), m.value, m.cov))
    return graph

