import time

import numpy as np
import pytest

from adaptmol.episodes import TrainConfig, meta_train
from adaptmol.synthetic import motif_dataset

MOTIF_EPISODES = 500


@pytest.fixture(scope="session")
def motif():
    return motif_dataset(n_molecules=500, n_train_tasks=8, n_test_tasks=2, seed=0)


@pytest.fixture(scope="session")
def trained(motif):
    """The synthetic-motif model, trained once per session with default settings."""
    ds, split = motif
    cfg = TrainConfig(shots=10, episodes=MOTIF_EPISODES, seed=0)
    start = time.process_time()
    model, history = meta_train(ds, split, cfg)
    return {"model": model, "history": history, "cfg": cfg, "cpu_seconds": time.process_time() - start}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
