import numpy as np
import pytest

from ofdm_mapem.estimator import ReparamState
from ofdm_mapem.simulator import ExperimentConfig, generate_frame


def small_frame(n=8, L=2, training=0.5, snr=10.0, seed=0, trial=0, perm="identity", **kw):
    taps = kw.pop("n_nonzero_taps", L)
    cfg = ExperimentConfig(
        n_subcarriers=n,
        channel_len=L,
        n_nonzero_taps=taps,
        snr_db=snr,
        training_fraction=training,
        permutation_seed=perm,
        rng_seed=seed,
        **kw,
    )
    return generate_frame(cfg, trial=trial)


def random_state(L, rng, tau=np.inf):
    g = rng.standard_normal(2 * L)
    return ReparamState(g, float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.5, 3.0)), tau)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
