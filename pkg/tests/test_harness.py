import csv
import filecmp

import numpy as np
import pytest

from orbitfb import harness
from orbitfb.errors import ConfigError
from orbitfb.harness import ExperimentConfig, MetricsSummary, compare_report, compute_metrics


def test_metrics_example():
    m = compute_metrics([np.array([0.25, 0.1, 0.04])], 0.05)
    assert (m.min_rms, m.max_rms, m.final_rms) == (0.04, 0.25, 0.04)
    assert m.steps_to_threshold == 2 and m.reach_fraction == 1.0


def test_metrics_not_reached():
    m = compute_metrics([[0.1, 0.1]], 0.05)
    assert m.steps_to_threshold is None and not m.reached
    assert m.per_trajectory_steps == [None]


def test_metrics_all_zero():
    m = compute_metrics([np.zeros(4)], 0.05)
    assert m.min_rms == m.max_rms == m.final_rms == 0.0
    assert m.steps_to_threshold == 0


def test_metrics_aggregate_over_reaching_trajectories():
    m = compute_metrics([[0.2, 0.04, 0.03], [0.2, 0.1, 0.01], [0.2, 0.2, 0.2]], 0.05)
    assert m.steps_to_threshold == pytest.approx(1.5)
    assert m.reach_fraction == pytest.approx(2 / 3)
    assert m.final_rms == pytest.approx((0.03 + 0.01 + 0.2) / 3)
    assert m.final_rms_std == pytest.approx(np.std([0.03, 0.01, 0.2]))


def test_metrics_empty_input():
    with pytest.raises(ValueError):
        compute_metrics([], 0.05)


def _summary(final, steps):
    return MetricsSummary(
        min_rms=final,
        min_rms_std=0.0,
        max_rms=0.25,
        max_rms_std=0.0,
        final_rms=final,
        final_rms_std=0.0,
        steps_to_threshold=steps,
        steps_std=None if steps is None else 0.0,
        reach_fraction=0.0 if steps is None else 1.0,
        n_trajectories=1,
        threshold=0.05,
        per_trajectory_steps=[steps],
    )


def test_report_single_row():
    text = compare_report({"svd": _summary(0.01, 5.0)})
    lines = text.strip().splitlines()
    assert len(lines) == 3 and lines[2].startswith("svd") and "*" not in text


def test_report_marks_best_and_na(tmp_path):
    text = compare_report(
        [("mbrl", _summary(0.0003, 3.0)), ("svd", _summary(0.026, 200.0)), ("supervised", _summary(0.16, None))],
        tmp_path / "report.txt",
    )
    rows = {ln.split()[0]: ln for ln in text.splitlines()[2:5]}
    assert "0.0003 *" in rows["mbrl"] and "3.0 *" in rows["mbrl"]
    assert "*" not in rows["supervised"].replace("0.25 *", "")
    assert rows["supervised"].rstrip().endswith("N/A")
    assert "Steps to reach 0.05" in text
    with open(tmp_path / "report.csv") as fh:
        body = list(csv.reader(fh))
    assert body[3][-1] == "N/A"


def test_summary_roundtrip(tmp_path):
    m = compute_metrics([[0.25, 0.1, 0.04], [0.3, 0.2, 0.1]], 0.05)
    harness.write_summary(tmp_path / "x_summary.csv", "x", m)
    name, back = harness.read_summary(tmp_path / "x_summary.csv")
    assert name == "x"
    assert back.final_rms == m.final_rms and back.steps_to_threshold == m.steps_to_threshold
    assert back.reach_fraction == m.reach_fraction


def test_config_errors(small_config_dict):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"env": {"dim": 0}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"methods": ["ppo"]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"rms_threshold": 0})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"mbrl": {"gamma": 0}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"env": [1, 2]})
    cfg = ExperimentConfig.from_dict(small_config_dict)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_yaml_config(small_config_file, tmp_path):
    cfg = ExperimentConfig.from_yaml(small_config_file)
    assert cfg.env.dim == 6 and cfg.mbrl.hidden == [8]
    (tmp_path / "bad.yaml").write_text("env: [unclosed\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(tmp_path / "missing.yaml")


def test_repo_configs_parse():
    from pathlib import Path

    for path in sorted((Path(__file__).parent.parent / "configs").glob("*.yaml")):
        ExperimentConfig.from_yaml(path)


def test_trajectory_seeds_deterministic_and_distinct():
    a = harness.trajectory_seeds(0, 50)
    assert a == harness.trajectory_seeds(0, 50)
    assert len(set(a)) == 50
    assert a[:10] == harness.trajectory_seeds(0, 10)
    assert a != harness.trajectory_seeds(1, 50)


def test_single_step_svd_run(tmp_path, small_config_dict):
    cfg = ExperimentConfig.from_dict({**small_config_dict, "methods": ["svd"], "n_trajectories": 1, "trajectory_length": 1})
    harness.run_experiment(cfg, tmp_path)
    with open(tmp_path / "svd_rms_curve.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "mean_rms", "std_rms"] and len(rows) == 3


def test_campaign_outputs_deterministic(tmp_path, small_config_dict):
    cfg = ExperimentConfig.from_dict(small_config_dict)
    s1 = harness.run_experiment(cfg, tmp_path / "a")
    harness.run_experiment(cfg, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    files = [p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()]
    assert len(files) > 10
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert not cmp.left_only and not cmp.right_only
    assert set(s1) == {"mbrl", "svd", "supervised"}
    events = (tmp_path / "a" / "mbrl_events.log").read_text().splitlines()
    assert any("refit linear" in ln for ln in events)


def test_metrics_recomputed_from_trajectory_csvs(tmp_path, small_config_dict):
    cfg = ExperimentConfig.from_dict({**small_config_dict, "methods": ["svd"]})
    harness.run_experiment(cfg, tmp_path)
    series = []
    for path in sorted((tmp_path / "svd_trajectories").glob("traj_*.csv")):
        with open(path) as fh:
            series.append([float(r[1]) for r in list(csv.reader(fh))[1:]])
    again = compute_metrics(series, cfg.rms_threshold)
    _, written = harness.read_summary(tmp_path / "svd_summary.csv")
    for key in ("min_rms", "max_rms", "final_rms", "final_rms_std", "steps_to_threshold", "reach_fraction"):
        assert getattr(again, key) == getattr(written, key), key
    curve = np.loadtxt(tmp_path / "svd_rms_curve.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(curve[:, 1], np.mean(series, axis=0))


def test_full_logs_written(tmp_path, small_config_dict):
    cfg = ExperimentConfig.from_dict({**small_config_dict, "methods": ["svd"], "full_logs": True, "n_trajectories": 1})
    harness.run_experiment(cfg, tmp_path)
    assert (tmp_path / "svd_trajectories" / "traj_0000_log.csv").exists()


def test_dimension_mismatch_before_any_run(tmp_path, small_config_dict):
    from orbitfb.neural import mlp_init

    cfg = ExperimentConfig.from_dict(small_config_dict)
    wrong = harness.PreparedMethod("mbrl", policy=mlp_init([5, 8, 5], 0))
    with pytest.raises(ConfigError):
        harness.run_experiment(cfg, tmp_path, {"mbrl": wrong})
    assert not list(tmp_path.glob("*_summary.csv"))


def test_trajectories_share_nominal_machine_but_differ(small_config_dict):
    cfg = ExperimentConfig.from_dict({**small_config_dict, "methods": ["svd"]})
    prep = harness.prepare_method(cfg, "svd")
    res = harness.run_campaign(cfg, prep)
    assert len({r.seed for r in res}) == len(res)
    assert not np.array_equal(res[0].rms_series, res[1].rms_series)
