"""Cyclic sampling with reshuffle.

Iteration ``k`` is written ``k = n*B + t``; within epoch ``B`` the sampled
component is ``xi_k = pi_B(t+1)``. Components are 0-based and positions
(``t+1``) are 1-based.

Each epoch's permutation comes from its own Philox counter-based stream
keyed by ``(seed, B)``, so any epoch can be regenerated without replaying
the ones before it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import numpy.typing as npt

Permutation = npt.NDArray[np.int64]

_U64 = (1 << 64) - 1


def permute(n: int, seed: int, B: int) -> Permutation:
    """Fisher-Yates shuffle of ``0..n-1`` drawn from the ``(seed, B)`` substream."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if B < 0:
        raise ValueError(f"epoch index must be >= 0, got {B}")
    key = np.array([seed & _U64, B & _U64], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.permutation(n).astype(np.int64)


@dataclass
class EpochSchedule:
    """Lazily generated per-epoch permutations ``pi_B`` with inverse lookup."""

    n: int
    seed: int
    _perms: Dict[int, Permutation] = field(default_factory=dict, repr=False, compare=False)
    _inverses: Dict[int, Permutation] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")

    def permutation(self, B: int) -> Permutation:
        perm = self._perms.get(B)
        if perm is None:
            perm = permute(self.n, self.seed, B)
            perm.setflags(write=False)
            self._perms[B] = perm
        return perm

    def _inverse(self, B: int) -> Permutation:
        inv = self._inverses.get(B)
        if inv is None:
            perm = self.permutation(B)
            inv = np.empty(self.n, dtype=np.int64)
            inv[perm] = np.arange(self.n)
            inv.setflags(write=False)
            self._inverses[B] = inv
        return inv

    def split(self, k: int) -> tuple[int, int]:
        """``k -> (B, t)`` with ``k = n*B + t``."""
        if k < 0:
            raise ValueError(f"iteration index must be >= 0, got {k}")
        return divmod(k, self.n)

    def sample_index(self, k: int) -> int:
        """Component ``xi_k`` sampled at iteration ``k``."""
        B, t = self.split(k)
        return int(self.permutation(B)[t])

    def inverse_position(self, B: int, v: int) -> int:
        """1-based position ``t+1`` in epoch ``B`` at which component ``v`` is sampled."""
        if not 0 <= v < self.n:
            raise ValueError(f"component {v} outside [0, {self.n})")
        return int(self._inverse(B)[v]) + 1
