import json

import numpy as np
import pytest

from rodshape import pipeline
from rodshape.metrics import aggregate, pose_errors
from rodshape.scenario import TruthSpec, preset
from rodshape.solver import SolverSettings


def prescribed(name="S1", trials=2, **changes):
    return preset(name).replace(truth=TruthSpec(mode="prescribed"), trials=trials, **changes)


@pytest.fixture(scope="module")
def s1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    sc = preset("S1").replace(trials=2, seed=4)
    status = pipeline.run_scenario(sc, out)
    return sc, out, status


def test_run_writes_artifacts(s1_run):
    sc, out, status = s1_run
    assert status == 0
    for name in ("manifest.json", "summary.json", "timing.json", "scenario.yaml"):
        assert (out / name).exists()
    for t in ("trial_000", "trial_001"):
        for name in ("backbone.csv", "errors.csv", "estimate.json"):
            assert (out / t / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == sc.config_hash()
    assert manifest["seed"] == 4
    assert set(manifest["versions"]) >= {"rodshape", "numpy", "scipy", "python"}
    assert manifest["statuses"] == {"0": "converged", "1": "converged"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["position_error_mm"]["mean"] > 0
    assert summary["rotation_error_deg"]["mean"] > 0
    assert "timing" not in summary


def test_summary_byte_identical_across_runs(tmp_path):
    sc = preset("S3").replace(trials=1, seed=9)
    pipeline.run_scenario(sc, tmp_path / "a")
    pipeline.run_scenario(sc, tmp_path / "b", jobs=2)
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    assert (tmp_path / "a" / "trial_000" / "backbone.csv").read_bytes() == (
        tmp_path / "b" / "trial_000" / "backbone.csv"
    ).read_bytes()


def test_parallel_trials_match_serial():
    sc = preset("S2").replace(trials=3, seed=1)
    serial = pipeline.run_trials(sc, jobs=1)
    parallel = pipeline.run_trials(sc, jobs=3)
    assert [r.index for r in parallel] == [0, 1, 2]
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.estimate.q, b.estimate.q)
        assert a.report.iterations == b.report.iterations


EVERY_NODE = [{"type": "pose", "s_m": k * 0.04} for k in range(11)]


def test_zero_noise_every_node_recovers_shape(tmp_path):
    sc = prescribed(trials=3, inject_noise=False, sensor_layout=EVERY_NODE)
    sc = sc.replace(truth=TruthSpec(mode="prescribed", q_std_angular=1.0))
    assert pipeline.run_scenario(sc, tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["position_error_mm"]["mean"] < 1e-2  # 1e-5 m


@pytest.mark.xfail(
    strict=True,
    reason="two pose sensors leave 28 coefficients under-determined; the prior-selected "
    "shape misses the truth by about 1 mm even without noise",
)
def test_zero_noise_s1_layout_recovers_shape(tmp_path):
    sc = prescribed(trials=3, inject_noise=False)
    pipeline.run_scenario(sc, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["position_error_mm"]["mean"] < 1e-2


def test_query_at_nodes_returns_stored_poses(s1_run):
    _, out, _ = s1_run
    est = json.loads((out / "trial_000" / "estimate.json").read_text())
    poses = pipeline.query(out, 0, est["node_s_m"])
    np.testing.assert_array_equal(poses, np.array(est["node_poses"]))
    # the root constraint is a finite (1e12) weight, so g_0 is identity to ~1e-13
    np.testing.assert_allclose(pipeline.query(out, 0, [0.0])[0], np.eye(4), atol=1e-12)


def test_query_rejects_out_of_range(s1_run):
    _, out, _ = s1_run
    with pytest.raises(ValueError):
        pipeline.query(out, 0, [0.41])
    with pytest.raises(FileNotFoundError):
        pipeline.query(out, 7, [0.1])


def test_dense_query_consistent_with_trial_errors(s1_run):
    sc, out, _ = s1_run
    truth = pipeline.make_truth(sc, 1)
    s = truth.s[1:]  # 400 uniform arclengths
    est = pipeline.query(out, 1, s)
    rep = pose_errors(est, truth.poses[1:], s, s)
    stored = np.genfromtxt(out / "trial_001" / "errors.csv", delimiter=",", names=True)
    np.testing.assert_allclose(rep.position_error, stored["pos_err_m"][1:], atol=1e-15)
    np.testing.assert_allclose(rep.orientation_error, stored["rot_err_rad"][1:], atol=1e-15)


def test_reports_reload_from_disk(s1_run):
    _, out, _ = s1_run
    reloaded = aggregate(pipeline.load_trial_reports(out))
    summary = json.loads((out / "summary.json").read_text())
    assert reloaded["position_error_mm"] == pytest.approx(summary["position_error_mm"], rel=1e-14)
    assert reloaded["iterations"] == summary["iterations"]


def test_solver_failure_gives_nonzero_exit(tmp_path):
    sc = preset("S1").replace(trials=1, solver=SolverSettings(max_iterations=1))
    assert pipeline.run_scenario(sc, tmp_path) == 1
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["statuses"]["0"] == "max_iterations"
    assert "max_iterations" in manifest["failures"]["0"]


def test_generation_failure_reported(tmp_path):
    result = pipeline._trial_task((preset("S1"), 0, str(tmp_path / "missing.txt")))
    assert result.status == "generation_failed"
    assert "missing.txt" in result.failure


def test_trial_streams_independent_of_batch_size():
    a = pipeline.run_trials(prescribed(trials=1))
    b = pipeline.run_trials(prescribed(trials=3))
    np.testing.assert_array_equal(a[0].estimate.q, b[0].estimate.q)
