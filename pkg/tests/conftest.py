import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20241019)


@pytest.fixture(scope="session")
def trained_network():
    """Network trained once per session on the default synthetic corpus.

    Returns ``(params, history, train_seconds)``.
    """
    import time

    from deepdvl import beamsnet as bn
    from deepdvl import pipeline

    t0 = time.perf_counter()
    corpus = pipeline.training_corpus(seeds=range(8))
    params, history, _ = bn.train(corpus, bn.TrainConfig(seed=0))
    return params, history, time.perf_counter() - t0
