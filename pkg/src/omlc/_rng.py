"""Counter-based per-step noise for stochastic trajectories.

Each trajectory owns a stream keyed by (master seed, trajectory index,
stream id); the draw for step ``i`` is obtained by advancing the
counter-based generator directly to position ``i``, so the value is a pure
function of the key and the step index — independent of chunk sizes,
restarts, or scheduling.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["CounterNoise"]

_INV_2_53 = 2.0 ** -53


class CounterNoise:
    """Uniform and Gaussian per-step draws on a Philox counter stream."""

    def __init__(self, master_seed: int, trajectory_index: int,
                 stream_id: int = 0, block: int = 4096):
        if block < 4 or block % 4:
            # Philox counter blocks hold four 64-bit words; aligned blocks
            # keep step -> counter addressing exact
            raise ValueError("block must be a positive multiple of 4")
        ss = np.random.SeedSequence(
            [int(master_seed), int(trajectory_index), int(stream_id)])
        self._key = ss.generate_state(2, np.uint64)
        self._block = int(block)
        self._start = -1
        self._uniforms = np.empty(0)

    def _fill(self, start: int) -> None:
        bg = np.random.Philox(key=self._key)
        if start:
            bg.advance(start // 4)
        raw = np.asarray(bg.random_raw(self._block), dtype=np.uint64)
        # open-interval uniforms in (0, 1): 53-bit mantissa, centered
        self._uniforms = ((raw >> np.uint64(11)).astype(np.float64)
                          + 0.5) * _INV_2_53
        self._start = start

    def uniform(self, step: int) -> float:
        """U(0,1) draw for the given step index."""
        base = (step // self._block) * self._block
        if base != self._start:
            self._fill(base)
        return float(self._uniforms[step - base])

    def normal(self, step: int) -> float:
        """N(0,1) draw for the given step index (inverse-CDF transform)."""
        return float(ndtri(self.uniform(step)))
