"""Counter-based random streams keyed by (seed, stream, counter...).

Each draw is a pure function of its key, so results do not depend on the
order or the process in which draws are made.
"""

import numpy as np
from scipy.special import ndtri

# stream identifiers; keep stable, they are part of the reproducibility contract
STREAM_TEMPLATE = 1
STREAM_ORDER = 2
STREAM_TAU = 3

_MASK64 = (1 << 64) - 1


def _check_seed(seed) -> int:
    if seed is None or isinstance(seed, bool) or int(seed) != seed or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed) & _MASK64


def keyed_uniform(seed: int, stream: int, *counter: int) -> float:
    """A uniform draw in the open interval (0, 1)."""
    c = list(counter) + [0] * (4 - len(counter))
    if len(c) > 4:
        raise ValueError("at most four counter words")
    bg = np.random.Philox(key=[_check_seed(seed), stream], counter=c)
    bits = int(bg.random_raw()) >> 11
    return (bits + 0.5) / 9007199254740992.0


def keyed_uniforms(seed: int, stream: int, indices, *extra: int) -> np.ndarray:
    return np.array([keyed_uniform(seed, stream, int(i), *extra) for i in indices])


def keyed_normals(seed: int, stream: int, indices, *extra: int) -> np.ndarray:
    """Standard normals by inverse CDF of keyed uniforms."""
    return ndtri(keyed_uniforms(seed, stream, indices, *extra))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=_check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
