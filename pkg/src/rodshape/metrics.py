"""Backbone error statistics: per-node tables and batch aggregates."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import COMPONENTS, BasisConfig, eval_strain_many

ORIENTATION_METRIC = "geodesic angle |log(R_true^T R_est)|"


@dataclass
class ErrorReport:
    s: np.ndarray
    position_error: np.ndarray
    orientation_error: np.ndarray
    strain_error: np.ndarray | None = None
    solve_time_ms: float = 0.0
    query_time_ms: float = 0.0
    iterations: int = 0
    converged: bool = True

    @property
    def total_time_ms(self) -> float:
        return self.solve_time_ms + self.query_time_ms

    def write_csv(self, path: str | Path, length: float | None = None) -> None:
        length = length or float(self.s[-1])
        pmax = max(float(self.position_error.max()), 1e-300)
        rmax = max(float(self.orientation_error.max()), 1e-300)
        header = [
            "s_m", "pos_err_m", "pos_err_over_L", "pos_err_over_max",
            "rot_err_rad", "rot_err_over_max",
        ]
        if self.strain_error is not None:
            header += [f"strain_err_{c}" for c in COMPONENTS]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for m in range(len(self.s)):
                row = [
                    self.s[m], self.position_error[m], self.position_error[m] / length,
                    self.position_error[m] / pmax, self.orientation_error[m],
                    self.orientation_error[m] / rmax,
                ]
                if self.strain_error is not None:
                    row += list(self.strain_error[m])
                w.writerow([f"{v:.17g}" for v in row])


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of one or many rotation matrices, valid on [0, pi]."""
    R = np.asarray(R)
    w = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1)
    sin_t = 0.5 * np.linalg.norm(w, axis=-1)
    cos_t = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(sin_t, cos_t)


def pose_errors(
    est: np.ndarray, truth: np.ndarray, s_est: Sequence[float], s_truth: Sequence[float]
) -> ErrorReport:
    s_est = np.asarray(s_est, dtype=float)
    s_truth = np.asarray(s_truth, dtype=float)
    if s_est.shape != s_truth.shape or np.max(np.abs(s_est - s_truth), initial=0.0) > 1e-12:
        raise ValueError("estimated and true pose tables are on different arclength grids")
    est, truth = np.asarray(est), np.asarray(truth)
    pos = np.linalg.norm(est[:, :3, 3] - truth[:, :3, 3], axis=1)
    rel = np.swapaxes(truth[:, :3, :3], 1, 2) @ est[:, :3, :3]
    return ErrorReport(s=s_est, position_error=pos, orientation_error=rotation_angle(rel))


def strain_errors(cfg: BasisConfig, q_hat: np.ndarray, s: Sequence[float], truth_strains: np.ndarray) -> np.ndarray:
    return np.abs(eval_strain_many(cfg, q_hat, np.asarray(s, dtype=float)) - np.asarray(truth_strains))


def _stats(x: np.ndarray, scale: float = 1.0) -> dict:
    x = np.asarray(x, dtype=float) * scale
    return {"mean": float(x.mean()), "std": float(x.std()), "max": float(x.max())}


def aggregate(reports: Sequence[ErrorReport]) -> dict:
    """Mean, std and max over all (trial, node) pairs, in mm / deg / ms.

    Timing statistics are returned under ``"timing"`` so callers can keep
    them out of files that must be reproducible byte-for-byte.
    """
    if not reports:
        raise ValueError("aggregate needs at least one report")
    pos = np.concatenate([r.position_error for r in reports])
    rot = np.concatenate([r.orientation_error for r in reports])
    L = float(reports[0].s[-1])
    iters = np.array([r.iterations for r in reports], dtype=float)
    out = {
        "trials": len(reports),
        "converged": int(sum(r.converged for r in reports)),
        "position_error_mm": _stats(pos, 1e3),
        "position_error_over_L": _stats(pos, 1.0 / L),
        "rotation_error_deg": _stats(rot, 180.0 / np.pi),
        "rotation_metric": ORIENTATION_METRIC,
        "iterations": {"mean": float(iters.mean()), "std": float(iters.std()), "max": float(iters.max())},
    }
    if all(r.strain_error is not None for r in reports):
        strain = np.concatenate([r.strain_error for r in reports])
        out["strain_error_mean"] = dict(zip(COMPONENTS, map(float, strain.mean(axis=0))))
    out["timing"] = {
        "solve_ms": _stats([r.solve_time_ms for r in reports]),
        "query_ms": _stats([r.query_time_ms for r in reports]),
        "total_ms": _stats([r.total_time_ms for r in reports]),
    }
    return out


def table_row(name: str, summary: dict) -> str:
    """One row laid out like the published statistics table."""
    p, r = summary["position_error_mm"], summary["rotation_error_deg"]
    t, it = summary["timing"]["total_ms"], summary["iterations"]
    return (
        f"{name:<4} | {p['mean']:.2f}±{p['std']:.2f} | {p['max']:.2f} | "
        f"{r['mean']:.2f}±{r['std']:.2f} | {r['max']:.2f} | "
        f"{t['mean']:.2f}±{t['std']:.2f} | {it['mean']:.2f}±{it['std']:.2f}"
    )


TABLE_HEADER = "ID   | Pos. Error, mm | Max. Pos. Error, mm | Rot. Error, deg | Max. Rot. Error, deg | Total Time, ms | Iterations"


def write_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
