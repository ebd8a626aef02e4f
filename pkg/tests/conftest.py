import numpy as np
import pytest

from airfedavg import constants as cst
from airfedavg.config import ExperimentConfig


def make_consts(K=1, L=1.0, mu=1.0, delta=0.0, phi_hat=0.0, n_b=1, G=0.0, W=1.0, gap=0.0, f_star=0.0):
    v = lambda x: np.broadcast_to(np.asarray(x, dtype=float), (K,)).copy()  # noqa: E731
    return cst.LearningConstants(
        smoothness=L,
        pl_constant=mu,
        grad_divergence=v(delta),
        grad_variance_hat=v(phi_hat),
        minibatch_size=n_b,
        grad_bound=v(G),
        model_bound=v(W),
        optimum_loss=f_star,
        initial_gap=gap,
    )


def make_cfg(K=1, T=1, omega=2, noise=0.0, q=1, pmax=5.0, pave=1.0):
    return cst.SystemConfig(K, q, noise, pmax, pave, T, omega)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_exp(tmp_path):
    """Reduced default config that runs each CLI command in a few seconds."""
    return ExperimentConfig.from_dict(
        {
            "system": {"outer_iters": 10},
            "data": {"samples_per_device": 200, "minibatch_size": 100, "test_samples": 200},
            "experiment": {"seeds": [0, 1], "output_dir": str(tmp_path / "out")},
            "latency": {"max_outer_iters": 20, "local_epochs_range": [2, 6], "device_sweep": [3, 5]},
            "bound": {"outer_iters": [5], "local_epochs_range": [2, 6]},
        }
    )


# one "PASS/FAIL criterion N: ..." line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
