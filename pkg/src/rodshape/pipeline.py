"""End-to-end runs: truth, measurements, graph, solve, dense query, reports.

Trial ``i`` of a run draws its truth from RNG stream ``(seed, i)`` and its
sensor noise from ``(seed, i, 1)``, so results do not depend on the number of
worker processes or on trial order.

Run directory layout::

    manifest.json          config hash, seed, versions, per-trial status
    scenario.yaml          the resolved scenario
    summary.json           batch error statistics (no wall-clock values)
    timing.json            solve / query timing statistics
    trial_000/backbone.csv estimated dense poses at the truth arclengths
    trial_000/errors.csv   per-node errors (raw and normalized)
    trial_000/estimate.json node poses, coefficients, solver report
"""

from __future__ import annotations

import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._kernels import warm_up
from .basis import BasisConfig
from .factors import Values, build_graph
from .magnus import dense_query
from .metrics import ErrorReport, aggregate, pose_errors, strain_errors, write_json
from .scenario import Scenario
from .solver import solve
from .truth import (
    GroundTruth,
    ShootingError,
    _generate_one,
    gen_prescribed,
    sample_measurements,
)

log = logging.getLogger(__name__)

POSE_COLUMNS = "s_m,r11,r12,r13,r21,r22,r23,r31,r32,r33,t_x_m,t_y_m,t_z_m"


@dataclass
class TrialResult:
    index: int
    status: str
    errors: ErrorReport | None = None
    estimate: Values | None = None
    report: object = None
    failure: str | None = None
    truth_provenance: dict | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def make_truth(scenario: Scenario, index: int) -> GroundTruth:
    """Ground truth for trial ``index``; raises ``RuntimeError`` if shooting fails."""
    spec = scenario.truth
    if spec.mode == "prescribed":
        rng = np.random.default_rng([scenario.seed, index])
        q = np.empty(scenario.basis.size)
        for comp, sl in scenario.basis.blocks.items():
            std = spec.q_std_angular if comp.startswith("k") else spec.q_std_linear
            q[sl] = rng.normal(0.0, std, sl.stop - sl.start)
        return gen_prescribed(scenario.basis, q, n_dense=spec.n_dense)
    _, truth, msg = _generate_one((scenario.rod, spec.bounds, scenario.seed, index, spec.n_dense))
    if truth is None:
        raise RuntimeError(f"truth generation failed: {msg}")
    return truth


def run_trial(scenario: Scenario, truth: GroundTruth, index: int) -> TrialResult:
    rng = np.random.default_rng([scenario.seed, index, 1])
    meas = sample_measurements(truth, scenario.sensors, scenario.sampling_noise, rng)
    graph = build_graph(scenario, meas)
    warm_up()
    t0 = time.perf_counter()
    values, report = solve(graph, Values.straight(scenario.basis, scenario.n_intervals), scenario.solver)
    t1 = time.perf_counter()
    est = dense_query(scenario.basis, values.q, values.poses, truth.s)
    t2 = time.perf_counter()
    errors = pose_errors(est, truth.poses, truth.s, truth.s)
    errors.strain_error = strain_errors(scenario.basis, values.q, truth.s, truth.strains)
    errors.solve_time_ms = 1e3 * (t1 - t0)
    errors.query_time_ms = 1e3 * (t2 - t1)
    errors.iterations = report.iterations
    errors.converged = report.converged
    return TrialResult(index, report.status, errors, values, report, truth_provenance=truth.provenance)


def _trial_task(args) -> TrialResult:
    scenario, index, truth_path = args
    try:
        truth = GroundTruth.load(truth_path) if truth_path else make_truth(scenario, index)
    except (ShootingError, RuntimeError, OSError, ValueError) as exc:
        return TrialResult(index, "generation_failed", failure=str(exc))
    result = run_trial(scenario, truth, index)
    if not result.converged:
        result.failure = f"solver status {result.status} after {result.report.iterations} iterations"
    return result


def run_trials(
    scenario: Scenario, jobs: int = 1, truth_files: Sequence[str | Path] | None = None
) -> list[TrialResult]:
    n = len(truth_files) if truth_files is not None else scenario.trials
    tasks = [(scenario, i, str(truth_files[i]) if truth_files is not None else None) for i in range(n)]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(min(jobs, n)) as pool:
            results = list(pool.map(_trial_task, tasks))
    else:
        results = [_trial_task(t) for t in tasks]
    return sorted(results, key=lambda r: r.index)


def _write_trial(result: TrialResult, scenario: Scenario, node_s: np.ndarray, trial_dir: Path) -> None:
    trial_dir.mkdir(parents=True, exist_ok=True)
    est = dense_query(scenario.basis, result.estimate.q, result.estimate.poses, result.errors.s)
    table = np.column_stack([result.errors.s, est[:, :3, :3].reshape(-1, 9), est[:, :3, 3]])
    np.savetxt(trial_dir / "backbone.csv", table, fmt="%.17g", delimiter=",", header=POSE_COLUMNS, comments="")
    result.errors.write_csv(trial_dir / "errors.csv", scenario.length)
    rep = result.report
    write_json(
        {
            "trial": result.index,
            "status": result.status,
            "iterations": rep.iterations,
            "initial_cost": rep.initial_cost,
            "final_cost": rep.final_cost,
            "rejected_steps": rep.rejected_steps,
            "deficient_blocks": rep.deficient_blocks,
            "node_s_m": node_s.tolist(),
            "node_poses": [g.tolist() for g in result.estimate.poses],
            "q": result.estimate.q.tolist(),
            "basis": scenario.basis.to_dict(),
            "truth": _jsonable(result.truth_provenance),
            "solve_time_ms": result.errors.solve_time_ms,
            "query_time_ms": result.errors.query_time_ms,
        },
        trial_dir / "estimate.json",
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def versions() -> dict:
    import numba
    import scipy

    return {
        "rodshape": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def run_scenario(
    scenario: Scenario,
    out_dir: str | Path,
    jobs: int = 1,
    truth_files: Sequence[str | Path] | None = None,
) -> int:
    """Run every trial, write all artifacts and return the exit status.

    Returns 0 iff every trial generated and converged.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario.save(out / "scenario.yaml")
    results = run_trials(scenario, jobs, truth_files)
    node_s = np.linspace(0.0, scenario.length, scenario.n_intervals + 1)
    for r in results:
        if r.errors is not None:
            _write_trial(r, scenario, node_s, out / f"trial_{r.index:03d}")

    reports = [r.errors for r in results if r.errors is not None]
    summary = {"scenario": scenario.name, "requested_trials": len(results)}
    timing = {}
    if reports:
        stats = aggregate(reports)
        timing = stats.pop("timing")
        summary.update(stats)
    write_json(summary, out / "summary.json")
    write_json(timing, out / "timing.json")

    failures = {str(r.index): r.failure for r in results if r.failure}
    write_json(
        {
            "config_hash": scenario.config_hash(),
            "seed": scenario.seed,
            "trials": len(results),
            "versions": versions(),
            "statuses": {str(r.index): r.status for r in results},
            "failures": failures,
        },
        out / "manifest.json",
    )
    for idx, why in failures.items():
        log.error("trial %s failed: %s", idx, why)
    return 0 if not failures else 1


def load_estimate(run_dir: str | Path, trial: int) -> tuple[BasisConfig, Values]:
    path = Path(run_dir) / f"trial_{trial:03d}" / "estimate.json"
    if not path.exists():
        raise FileNotFoundError(f"no estimate for trial {trial} under {run_dir}")
    data = json.loads(path.read_text())
    cfg = BasisConfig.from_dict(data["basis"])
    poses = [np.array(g) for g in data["node_poses"]]
    return cfg, Values(poses, np.array(data["q"]))


def query(run_dir: str | Path, trial: int, s: Sequence[float]) -> np.ndarray:
    """Dense poses of a stored estimate at arclengths ``s`` (raises on out-of-range s)."""
    cfg, values = load_estimate(run_dir, trial)
    return dense_query(cfg, values.q, values.poses, np.asarray(s, dtype=float))


def write_pose_table(path: str | Path, s: Sequence[float], poses: np.ndarray) -> None:
    table = np.column_stack([np.asarray(s), poses[:, :3, :3].reshape(-1, 9), poses[:, :3, 3]])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=POSE_COLUMNS, comments="")


def load_trial_reports(run_dir: str | Path) -> list[ErrorReport]:
    """Rebuild per-trial error reports from an existing run directory."""
    out = []
    for trial_dir in sorted(Path(run_dir).glob("trial_*")):
        table = np.genfromtxt(trial_dir / "errors.csv", delimiter=",", names=True)
        est = json.loads((trial_dir / "estimate.json").read_text())
        strain_cols = [c for c in table.dtype.names if c.startswith("strain_err_")]
        out.append(
            ErrorReport(
                s=np.asarray(table["s_m"]),
                position_error=np.asarray(table["pos_err_m"]),
                orientation_error=np.asarray(table["rot_err_rad"]),
                strain_error=np.column_stack([table[c] for c in strain_cols]) if strain_cols else None,
                solve_time_ms=est["solve_time_ms"],
                query_time_ms=est["query_time_ms"],
                iterations=est["iterations"],
                converged=est["status"] == "converged",
            )
        )
    return out
