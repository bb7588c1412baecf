"""Independent random streams derived from one experiment seed."""

import numpy as np

STREAMS = {"model": 0, "attack": 1, "dataset": 2, "trials": 3}

_MASK64 = (1 << 64) - 1


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for ``(seed, name)``; draws on one stream never shift another."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & _MASK64, STREAMS[name]])))
