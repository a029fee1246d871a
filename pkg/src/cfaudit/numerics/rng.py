"""Labeled, forkable random streams.

A stream is identified by ``(seed, label)``. Forking derives a child label,
so two components that fork different labels never share draws no matter
the order in which they run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


@dataclass(frozen=True)
class RngStream:
    seed: int
    label: str = "root"

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def fork(self, *parts) -> "RngStream":
        sub = "/".join(str(p) for p in parts)
        return RngStream(self.seed, f"{self.label}/{sub}")

    def generator(self) -> np.random.Generator:
        """Fresh generator; identical (seed, label) always give identical draws."""
        seed = int(self.seed)
        entropy = [seed & 0xFFFFFFFF, seed >> 32] + _label_words(self.label)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def int_seed(self) -> int:
        return int(self.generator().integers(0, 2**63 - 1))
