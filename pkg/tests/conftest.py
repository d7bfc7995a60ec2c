import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synthetic_run():
    """Five-seed training of the (1, ws, me) variant on a 1,000-caption
    synthetic corpus with the oracle reward, plus held-out splits.  Shared by
    the acceptance and training-property tests."""
    from vgnsl.synthetic import gen_synthetic_corpus
    from vgnsl.training import TrainConfig, select_checkpoints, train_seed

    train = gen_synthetic_corpus(0, 1000)
    val = gen_synthetic_corpus(1, 200)
    test = gen_synthetic_corpus(2, 500)
    cfg = TrainConfig(variant="1,ws,me", seeds=5)
    rewards = {}

    def on_step(rec):
        rewards.setdefault(rec["seed"], {}).setdefault(rec["epoch"], []).append(rec["mean_reward"])

    import time
    t0 = time.perf_counter()
    streams = [train_seed(train.corpus, cfg, s, concreteness=train.concreteness, on_step=on_step)
               for s in range(cfg.seeds)]
    selection = select_checkpoints(streams, val.corpus)
    return {"train": train, "val": val, "test": test, "config": cfg, "streams": streams,
            "selection": selection, "rewards": rewards, "train_seconds": time.perf_counter() - t0}
