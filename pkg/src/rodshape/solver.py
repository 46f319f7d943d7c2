"""Levenberg-Marquardt on SE(3)^(N+1) x R^S with Marquardt (diagonal) damping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._kernels import retract_kernel
from .factors import DivergedLinearization, FactorGraph, Q_KEY, Values


@dataclass
class SolverSettings:
    max_iterations: int = 50
    relative_tol: float = 1e-9
    gradient_tol: float = 1e-10
    # Cost decreases below this are treated as round-off (zero-residual problems).
    absolute_tol: float = 1e-20
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_rejections: int = 10
    # Retry a rejected step once with a correction from the same factorization.
    second_order_correction: bool = True
    init: str = "straight"

    def __post_init__(self):
        numeric = (
            self.max_iterations, self.relative_tol, self.gradient_tol, self.absolute_tol,
            self.lambda_init, self.lambda_up, self.lambda_down, self.max_rejections,
        )
        if min(numeric) <= 0:
            raise ValueError("solver settings must all be positive")
        if self.init != "straight":
            raise ValueError(f"unsupported initialization {self.init!r}")


@dataclass
class SolveReport:
    status: str
    iterations: int
    initial_cost: float
    final_cost: float
    cost_history: list[float] = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    wall_time_s: float = 0.0
    deficient_blocks: list[str] = field(default_factory=list)
    final_lambda: float = 0.0
    rejected_steps: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def retract(values: Values, graph: FactorGraph, delta: np.ndarray) -> Values:
    n = graph.n_nodes
    poses = retract_kernel(np.asarray(values.poses, dtype=float), np.ascontiguousarray(delta[:6 * n]).reshape(n, 6))
    return Values(list(poses), values.q + delta[graph.offset(Q_KEY)])


def _deficient_blocks(graph: FactorGraph, A: np.ndarray, tol: float = 1e-10) -> list[str]:
    d = np.diag(A)
    zero = np.flatnonzero(d <= 0.0)
    if len(zero):
        return sorted({graph.block_name(c) for c in zero})
    s = 1.0 / np.sqrt(d)
    w, v = np.linalg.eigh(s[:, None] * A * s[None, :])
    null = v[:, w < tol * max(w.max(), 1.0)]
    cols = np.flatnonzero(np.max(np.abs(null), axis=1) > 1e-3) if null.size else []
    return sorted({graph.block_name(c) for c in cols})


def damped_factor(A: np.ndarray, lam: float):
    """Cholesky factor of the Jacobi-scaled (A + lam diag(A)).

    Raises ``np.linalg.LinAlgError`` when the damped matrix is not positive definite.
    """
    d = np.diag(A)
    if np.any(d <= 0.0):
        raise np.linalg.LinAlgError("normal equations have empty columns")
    s = 1.0 / np.sqrt(d)
    M = s[:, None] * A * s[None, :]
    M[np.diag_indices_from(M)] += lam
    c, low = scipy.linalg.cho_factor(M, check_finite=False)
    if np.any(np.diag(c) <= 0):
        raise np.linalg.LinAlgError("Cholesky produced a non-positive pivot")
    return s, (c, low)


def damped_solve(factor, grad: np.ndarray) -> np.ndarray:
    s, cho = factor
    return s * scipy.linalg.cho_solve(cho, -s * grad, check_finite=False)


def damped_step(A: np.ndarray, grad: np.ndarray, lam: float) -> np.ndarray:
    """Solve (A + lam diag(A)) delta = -grad."""
    return damped_solve(damped_factor(A, lam), grad)


def _safe_cost(graph: FactorGraph, values: Values) -> float:
    try:
        return graph.cost(values)
    except DivergedLinearization:
        return np.inf


def linearize_and_step(values: Values, graph: FactorGraph, lam: float, linearization=None):
    """One damped Gauss-Newton step.

    Returns the retracted candidate, the model-predicted cost decrease and the
    tangent step. ``linearization`` may pass a precomputed ``(J, r)``.
    """
    J, r = linearization if linearization is not None else graph.linearize(values)
    A = J.T @ J
    grad = J.T @ r
    delta = damped_step(A, grad, lam)
    predicted = -(grad @ delta) - 0.5 * delta @ (A @ delta)
    return retract(values, graph, delta), float(predicted), delta


def solve(graph: FactorGraph, init: Values, settings: SolverSettings | None = None):
    """Minimize the graph cost; returns ``(values, SolveReport)``.

    Never raises on numerical trouble: a stalled or rank-deficient problem
    comes back with the corresponding report status.
    """
    settings = settings or SolverSettings()
    missing = set(range(graph.n_nodes)) | {Q_KEY}
    missing -= graph.variables_touched()
    t0 = time.perf_counter()
    values = init.copy()
    cost = graph.cost(values)
    report = SolveReport("max_iterations", 0, cost, cost, [cost])
    if missing:
        report.status = "rank_deficient"
        report.deficient_blocks = sorted(f"g_{k}" if k != Q_KEY else "q" for k in missing)
        report.wall_time_s = time.perf_counter() - t0
        return values, report

    lam = settings.lambda_init
    for _ in range(settings.max_iterations):
        J, r = graph.linearize(values)
        A = J.T @ J
        grad = J.T @ r
        if np.max(np.abs(grad)) < settings.gradient_tol:
            report.status = "converged"
            break
        rejections = 0
        accepted = False
        done = False
        while rejections < settings.max_rejections:
            try:
                factor = damped_factor(A, lam)
            except np.linalg.LinAlgError:
                lam *= settings.lambda_up
                rejections += 1
                continue
            delta = damped_solve(factor, grad)
            predicted = -(grad @ delta) - 0.5 * delta @ (A @ delta)
            if predicted < settings.absolute_tol:
                done = True
                break
            candidate = retract(values, graph, delta)
            new_cost = _safe_cost(graph, candidate)
            if new_cost < cost:
                accepted = True
                break
            if settings.second_order_correction and np.isfinite(new_cost):
                # Stiff curved factors (the Magnus chain) reject steps that are
                # good to first order; one chord step pulls the candidate back.
                r_c = graph.whitened_residual(candidate)
                candidate = retract(candidate, graph, damped_solve(factor, J.T @ r_c))
                new_cost = _safe_cost(graph, candidate)
                if new_cost < cost:
                    accepted = True
                    break
            lam *= settings.lambda_up
            rejections += 1
        report.rejected_steps += rejections
        if done:
            report.status = "converged"
            break
        if not accepted:
            blocks = _deficient_blocks(graph, A)
            report.status = "rank_deficient" if blocks else "stalled"
            report.deficient_blocks = blocks
            break
        decrease = cost - new_cost
        values, cost = candidate, new_cost
        lam = max(lam / settings.lambda_down, 1e-12)
        report.iterations += 1
        report.cost_history.append(cost)
        if decrease <= settings.relative_tol * (cost + decrease) or decrease < settings.absolute_tol:
            report.status = "converged"
            break

    report.final_cost = cost
    report.final_lambda = lam
    report.residual_norms = graph.residual_norms(values)
    report.wall_time_s = time.perf_counter() - t0
    return values, report
