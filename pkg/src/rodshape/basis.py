"""Cubic B-spline strain parameterization ``xi(s; q) = Phi(s) @ q + xi_ref``."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import BSpline

COMPONENTS = ("k_x", "k_y", "k_z", "p_x", "p_y", "p_z")
XI_REF = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
DEGREE = 3


class RankDeficientFit(ValueError):
    def __init__(self, component: str, rank: int, needed: int):
        super().__init__(
            f"design matrix for component {component} has rank {rank} < {needed}"
        )
        self.component = component


def clamped_uniform_knots(n_ctrl: int, length: float, degree: int = DEGREE) -> np.ndarray:
    interior = np.linspace(0.0, length, n_ctrl - degree + 1)[1:-1]
    return np.concatenate([np.zeros(degree + 1), interior, np.full(degree + 1, length)])


def bspline_basis(knots: np.ndarray, degree: int, s: np.ndarray) -> np.ndarray:
    """Dense (len(s), n_ctrl) matrix of B-spline basis values.

    The right end of the domain belongs to the last nonempty span, so the
    clamped end condition holds at s = L.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return BSpline.design_matrix(s, knots, degree).toarray()


@dataclass(frozen=True)
class BasisConfig:
    """Per-component control-point counts; a count of 0 marks the component inactive."""

    length: float
    n_ctrl: Mapping[str, int] = field(default_factory=dict)
    xi_ref: tuple[float, ...] = tuple(XI_REF)

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("rod length must be positive")
        unknown = set(self.n_ctrl) - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown strain components {sorted(unknown)}")
        for name, n in self.n_ctrl.items():
            if n and n < DEGREE + 1:
                raise ValueError(f"{name}: need at least {DEGREE + 1} control points, got {n}")
        object.__setattr__(
            self, "n_ctrl", {c: int(self.n_ctrl.get(c, 0)) for c in COMPONENTS}
        )
        if self.size < 1:
            raise ValueError("at least one strain component must be active")

    @property
    def size(self) -> int:
        return sum(self.n_ctrl.values())

    @property
    def active(self) -> list[str]:
        return [c for c in COMPONENTS if self.n_ctrl[c]]

    @cached_property
    def blocks(self) -> dict[str, slice]:
        """Column slice of q owned by each active component."""
        out, start = {}, 0
        for c in COMPONENTS:
            n = self.n_ctrl[c]
            if n:
                out[c] = slice(start, start + n)
                start += n
        return out

    @cached_property
    def knots(self) -> dict[str, np.ndarray]:
        return {c: clamped_uniform_knots(self.n_ctrl[c], self.length) for c in self.active}

    @property
    def reference(self) -> np.ndarray:
        return np.array(self.xi_ref)

    def to_dict(self) -> dict:
        return {"rod_length_m": self.length, "n_ctrl": {c: n for c, n in self.n_ctrl.items() if n}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "BasisConfig":
        return cls(length=float(d["rod_length_m"]), n_ctrl=dict(d["n_ctrl"]))

    def __hash__(self):
        return hash((self.length, tuple(self.n_ctrl.values()), self.xi_ref))


def _check_arclength(cfg: BasisConfig, s: np.ndarray) -> None:
    tol = 1e-12 * cfg.length
    if np.any(s < -tol) or np.any(s > cfg.length + tol):
        raise ValueError(f"arclength outside [0, {cfg.length}]")


def basis_rows(cfg: BasisConfig, s: Sequence[float] | np.ndarray) -> np.ndarray:
    """Stack of Phi(s) for many arclengths, shape (len(s), 6, S)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    _check_arclength(cfg, s)
    s = np.clip(s, 0.0, cfg.length)
    out = np.zeros((len(s), 6, cfg.size))
    for row, c in enumerate(COMPONENTS):
        if cfg.n_ctrl[c]:
            out[:, row, cfg.blocks[c]] = bspline_basis(cfg.knots[c], DEGREE, s)
    return out


def basis_row(cfg: BasisConfig, s: float) -> np.ndarray:
    """Phi(s), shape (6, S)."""
    return basis_rows(cfg, [s])[0]


def _check_coeffs(cfg: BasisConfig, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (cfg.size,):
        raise ValueError(f"expected {cfg.size} strain coefficients, got shape {q.shape}")
    return q


def eval_strain(cfg: BasisConfig, q: np.ndarray, s: float) -> np.ndarray:
    q = _check_coeffs(cfg, q)
    return basis_row(cfg, s) @ q + cfg.reference


def eval_strain_many(cfg: BasisConfig, q: np.ndarray, s: np.ndarray) -> np.ndarray:
    q = _check_coeffs(cfg, q)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    _check_arclength(cfg, s)
    s = np.clip(s, 0.0, cfg.length)
    out = np.tile(cfg.reference, (len(s), 1))
    for row, c in enumerate(COMPONENTS):
        if cfg.n_ctrl[c]:
            out[:, row] += BSpline.design_matrix(s, cfg.knots[c], DEGREE) @ q[cfg.blocks[c]]
    return out


def fit_coeffs(
    cfg: BasisConfig, s: Sequence[float], strains: np.ndarray
) -> tuple[np.ndarray, float]:
    """Least-squares projection of sampled strains onto the basis.

    Returns the coefficients and the residual norm over all samples and all
    six components (inactive components contribute their full deviation
    from the reference strain).
    """
    s = np.asarray(s, dtype=float)
    strains = np.asarray(strains, dtype=float).reshape(len(s), 6)
    _check_arclength(cfg, s)
    target = strains - cfg.reference
    q = np.zeros(cfg.size)
    for row, c in enumerate(COMPONENTS):
        n = cfg.n_ctrl[c]
        if not n:
            continue
        A = bspline_basis(cfg.knots[c], DEGREE, np.clip(s, 0.0, cfg.length))
        rank = np.linalg.matrix_rank(A)
        if rank < n:
            raise RankDeficientFit(c, rank, n)
        q[cfg.blocks[c]] = np.linalg.lstsq(A, target[:, row], rcond=None)[0]
    resid = eval_strain_many(cfg, q, s) - strains
    return q, float(np.linalg.norm(resid))
