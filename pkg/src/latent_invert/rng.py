"""Named, reproducible random streams.

Every stream is a numpy ``Generator`` over the PCG64 bit generator (a 128-bit
linear congruential state with a permuted output).  Streams are keyed by the
run seed plus a stream name, so adding a consumer never shifts another
consumer's draws.
"""

import zlib

import numpy as np

STREAMS = ("F", "P", "D", "G", "init", "data", "ood", "ood-probe", "eval", "ood-eval",
           "cluster", "render", "gradcheck")


def stream(seed, name):
    key = zlib.crc32(name.encode("ascii"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), key])))


def box_muller(rng, shape):
    """Standard normals from uniform pairs (cosine and sine branches both used)."""
    shape = tuple(np.atleast_1d(shape))
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]: log never sees 0
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return out.reshape(shape)
