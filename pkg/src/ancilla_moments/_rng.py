"""Counter-based RNG sub-streams.

Every random draw in the package comes from a generator keyed by
``(seed, stream, index, chunk)``.  Work split into chunks of ``CHUNK``
samples therefore produces the same numbers regardless of how chunks are
distributed over workers.
"""

import numpy as np

CHUNK = 1 << 16

# stream identifiers
SAMPLE = 1
DIRECT = 2
SCAN = 3
BOOTSTRAP = 4
TOTAL = 5


def generator(seed, *key):
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def chunk_sizes(count, chunk=CHUNK):
    full, rest = divmod(int(count), chunk)
    sizes = [chunk] * full
    if rest:
        sizes.append(rest)
    return sizes
