"""The single random stream used for graphs, initial points and minibatches.

Every random draw in the package goes through ``numpy.random.Generator``
backed by ``PCG64`` seeded with a 64-bit integer, so a stream can be
reproduced by any PCG64 implementation given the same seed.
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFF_FFFF_FFFF_FFFF))
