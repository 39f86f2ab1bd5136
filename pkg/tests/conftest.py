import numpy as np
import pytest

from silencio import kernels
from silencio.netblocks import Dims
from silencio.synthcorpus import CorpusConfig, generate_corpus


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # one-time JIT compile/cache load so timed tests measure the algorithms
    kernels.warm_up()


@pytest.fixture(scope="session")
def tiny_corpus():
    """2 speakers x 5 pairs: enough structure for every pipeline stage."""
    return generate_corpus(CorpusConfig(speakers=2, utterances_per_speaker=5, seed=11))


@pytest.fixture(scope="session")
def small_dims():
    """Dims small enough for exhaustive finite-difference checks."""
    return Dims(d_t=3, d_l=2, d_f=5, d_a=4, enc_hidden=4, gru_hidden=4, prenet_dim=3, disc_hidden=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
