import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel_err(a, b, floor=1e-30):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


SMALL_CONFIG = {
    "seed": 3,
    "methods": ["mbrl", "svd", "supervised"],
    "n_trajectories": 3,
    "trajectory_length": 40,
    "rms_threshold": 0.05,
    "env": {"dim": 6, "cond_number": 10.0, "drift_fraction": 0.05, "drift_steps": 30, "noise_sigma": 2e-4, "init_rms": 0.25, "seed": 1},
    "svd": {"lam": 0.01, "gain": 1.0},
    "supervised": {"n_samples": 200, "epochs": 3, "batch_size": 32, "lr": 1e-3, "action_scale": 1.0, "hidden": [8]},
    "mbrl": {
        "horizon": 5,
        "episodes": 20,
        "lr": 1e-3,
        "action_scale": 1.0,
        "refit_every": 15,
        "buffer_capacity": 50,
        "retrain_episodes": 2,
        "hidden": [8],
    },
}


@pytest.fixture
def small_config_dict():
    import copy

    return copy.deepcopy(SMALL_CONFIG)


@pytest.fixture
def small_config_file(tmp_path, small_config_dict):
    import yaml

    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(small_config_dict))
    return path


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
