"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
(seed, stream) and positioned by a per-state draw counter, so the triple
(seed, stream, counter) fully determines the output on every platform.
Training derives one stream per purpose and iteration, which is what makes
checkpoint-resume bit-exact: nothing depends on how much randomness earlier
iterations consumed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream purposes. A stream id is (iteration << 8) | purpose, giving each
# training iteration its own independent family of streams.
PURPOSE_INIT = 0
PURPOSE_BATCH = 1
PURPOSE_DROPOUT = 2
PURPOSE_EVAL_TRAIN = 3
PURPOSE_EVAL_VAL = 4
PURPOSE_SAMPLE = 5


def stream_id(purpose: int, iteration: int = 0) -> int:
    if not 0 <= purpose < 256:
        raise ValueError(f"purpose must be in [0, 256), got {purpose}")
    return (iteration << 8) | purpose


class RngState:
    """A deterministic random stream with value semantics.

    Each draw spins up a fresh Philox generator whose 256-bit counter is
    offset by `counter << 192`, so successive draws can never overlap no
    matter how many values each one takes.
    """

    __slots__ = ("seed", "stream", "counter")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self.counter = int(counter)

    def clone(self) -> "RngState":
        return RngState(self.seed, self.stream, self.counter)

    def _next_generator(self) -> np.random.Generator:
        key = (self.stream << 64) | self.seed
        gen = np.random.Generator(np.random.Philox(counter=self.counter << 192, key=key))
        self.counter += 1
        return gen

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform float64 samples in [0, 1)."""
        return self._next_generator().random(shape)

    def normal(self, shape=(), std: float = 1.0, dtype=np.float32) -> np.ndarray:
        """Gaussian samples with mean 0, drawn in float64 then cast."""
        out = self._next_generator().standard_normal(shape) * std
        return np.asarray(out, dtype=dtype)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integer samples in [low, high)."""
        return self._next_generator().integers(low, high, size=shape, dtype=np.int64)

    def state_dict(self) -> dict:
        return {"seed": self.seed, "stream": self.stream, "counter": self.counter}

    @classmethod
    def from_state_dict(cls, d: dict) -> "RngState":
        return cls(d["seed"], d["stream"], d["counter"])

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, stream={self.stream}, counter={self.counter})"
