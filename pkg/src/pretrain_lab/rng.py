"""Counter-based, splittable random streams.

Each stream is a Philox-4x64 generator keyed by ``(master_seed, stream_id)``.
Philox is a counter-based generator, so the draws of a stream depend only on
its key and how far its counter has advanced; two trials never share state
and scheduling order cannot change results.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, int):
        return tag & _MASK64
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Deterministic random stream keyed by ``(master_seed, stream_id)``.

    Behaves like a :class:`numpy.random.Generator` for the draws this package
    needs (``normal``, ``uniform``, ``integers``, ...); any other attribute is
    forwarded to the underlying generator.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        if master_seed < 0 or stream_id < 0:
            raise ValueError("master_seed and stream_id must be non-negative")
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        bitgen = np.random.Philox(key=np.array([self.master_seed, self.stream_id], dtype=np.uint64))
        self.generator = np.random.Generator(bitgen)

    @property
    def counter(self) -> int:
        """Current position of the Philox counter (low 64 bits)."""
        return int(self.generator.bit_generator.state["state"]["counter"][0])

    def child(self, tag: int | str) -> "RngStream":
        """Independent sub-stream, a pure function of this stream's key and ``tag``.

        The parent's counter is not consulted, so children can be created in
        any order.
        """
        seq = np.random.SeedSequence([self.master_seed, self.stream_id, _tag_to_int(tag)])
        key = seq.generate_state(2, dtype=np.uint64)
        out = RngStream.__new__(RngStream)
        out.master_seed = self.master_seed
        out.stream_id = self.stream_id
        out.generator = np.random.Generator(np.random.Philox(key=key))
        return out

    def __getattr__(self, name):
        # only reached for attributes not set in __init__
        return getattr(self.__dict__["generator"], name)

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id}, counter={self.counter})"


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator
    raise TypeError(f"expected RngStream, Generator or int seed, got {type(rng).__name__}")
