"""Seeded, splittable random streams.

All randomness comes from numpy's ``Philox4x32-10`` counter-based bit
generator. Sub-streams are derived with :class:`numpy.random.SeedSequence`
spawn keys, so a stream is identified by ``(master_seed, purpose, trial)``:

==========  =========================================
purpose     use
==========  =========================================
``DATA``    problem data (matrix, ground truth, noise)
``X0``      initial iterate, one per trial
``SAMPLE``  oracle draws (sample indices or gradient noise)
``KSTAR``   randomized output-index draws
==========  =========================================

Gaussian variates use numpy's ziggurat sampler (``Generator.standard_normal``).

:class:`SampleStream` hands out draws from fixed-size blocks, so the values a
trajectory sees do not depend on how many draws are requested per call.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x32-10/seedsequence"
GAUSSIAN_METHOD = "ziggurat"

DATA, X0, SAMPLE, KSTAR = 0, 1, 2, 3
BLOCK = 4096


def seed_sequence(master_seed: int, purpose: int, trial: int | None = None) -> np.random.SeedSequence:
    key = (purpose,) if trial is None else (purpose, int(trial))
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)


def generator(seed) -> np.random.Generator:
    """Philox generator from an int or a :class:`~numpy.random.SeedSequence`."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


class SampleStream:
    """Per-trial oracle stream with block-buffered draws.

    Two independent buffers are kept: standard normals and integers in
    ``[0, high)``. A problem only ever uses one of them.
    """

    def __init__(self, seed, high: int | None = None):
        self._gen = generator(seed)
        self.high = high
        self._normal = np.empty(0)
        self._index = np.empty(0, dtype=np.int64)
        self.consumed = 0

    def normals(self, count: int) -> np.ndarray:
        while self._normal.size < count:
            self._normal = np.concatenate([self._normal, self._gen.standard_normal(BLOCK)])
        out, self._normal = self._normal[:count], self._normal[count:]
        self.consumed += count
        return out

    def indices(self, count: int) -> np.ndarray:
        if self.high is None:
            raise ValueError("index draws need a sample count")
        while self._index.size < count:
            self._index = np.concatenate([self._index, self._gen.integers(0, self.high, size=BLOCK)])
        out, self._index = self._index[:count], self._index[count:]
        self.consumed += count
        return out


class BatchDraws:
    """Row-stacked view of several :class:`SampleStream` objects.

    ``take(count)`` returns a ``(T, count)`` array whose row ``t`` is the next
    ``count`` draws of stream ``t``. Streams are refilled in chunks to keep
    Python-level calls per iteration low.
    """

    def __init__(self, streams: list[SampleStream], kind: str, chunk: int = 8192):
        if kind not in ("normal", "index"):
            raise ValueError(kind)
        self.streams = streams
        self.kind = kind
        # bound the buffer to a few million entries across all rows
        self.chunk = max(64, min(chunk, 4_000_000 // max(1, len(streams))))
        dtype = np.float64 if kind == "normal" else np.int64
        self._buf = np.empty((len(streams), 0), dtype=dtype)
        self._pos = 0
        self.drawn = 0

    def take(self, count: int) -> np.ndarray:
        if self._pos + count > self._buf.shape[1]:
            need = max(count, self.chunk)
            rest = self._buf[:, self._pos:]
            if self.kind == "normal":
                fresh = np.stack([s.normals(need) for s in self.streams])
            else:
                fresh = np.stack([s.indices(need) for s in self.streams])
            self._buf = np.concatenate([rest, fresh], axis=1)
            self._pos = 0
        out = self._buf[:, self._pos:self._pos + count]
        self._pos += count
        self.drawn += count
        return out
