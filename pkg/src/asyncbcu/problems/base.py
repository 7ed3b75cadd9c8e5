"""Block-structured composite objectives ``F(x) = f(x) + sum_i r_i(x_i)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..stepsize_policy import ProblemConstants


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous, ordered, disjoint blocks covering ``0..n-1``."""

    ranges: tuple

    def __post_init__(self):
        ranges = tuple((int(a), int(b)) for a, b in self.ranges)
        if not ranges:
            raise ValueError("partition needs at least one block")
        if ranges[0][0] != 0:
            raise ValueError("first block must start at 0")
        for (a, b), (c, _) in zip(ranges, ranges[1:]):
            if b != c:
                raise ValueError("blocks must be contiguous and ordered")
        if any(b <= a for a, b in ranges):
            raise ValueError("blocks must be nonempty")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "_slices", tuple(slice(a, b) for a, b in ranges))

    @classmethod
    def even(cls, n: int, m: int) -> "BlockPartition":
        """``m`` equal blocks; the last one absorbs ``n mod m``."""
        if not 1 <= m <= n:
            raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
        size = n // m
        starts = [i * size for i in range(m)] + [n]
        return cls(tuple(zip(starts[:-1], starts[1:])))

    @classmethod
    def from_sizes(cls, sizes) -> "BlockPartition":
        ends = np.cumsum(sizes)
        starts = np.concatenate([[0], ends[:-1]])
        return cls(tuple(zip(starts, ends)))

    @property
    def m(self) -> int:
        return len(self.ranges)

    @property
    def n(self) -> int:
        return self.ranges[-1][1]

    @property
    def slices(self) -> tuple:
        return self._slices

    def __getitem__(self, i: int) -> slice:
        return self._slices[i]


class Problem:
    """Interface every instance implements.

    Vectors are flat ``float64`` arrays of length ``n``; block ``i`` is
    ``x[partition[i]]``. Subclasses provide the smooth part, its block
    gradients, the block proximal maps and the Lipschitz data. The ``cache``
    methods support the shared-residual gradient mode used by the threaded
    runner; the defaults fall back to recomputation.
    """

    partition: BlockPartition
    #: when True the engine divides the stepsize by block_lipschitz(i, x_hat)
    adaptive_lipschitz: bool = False
    kind: str = "abstract"

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def m(self) -> int:
        return self.partition.m

    # --- objective -----------------------------------------------------
    def smooth_value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def regularizer(self, x: np.ndarray) -> float:
        return 0.0

    def objective(self, x: np.ndarray) -> float:
        return self.smooth_value(x) + self.regularizer(x)

    # --- first-order oracles -------------------------------------------
    def partial_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([self.partial_grad(i, x) for i in range(self.m)])

    def prox_block(self, i: int, v: np.ndarray, eta: float) -> np.ndarray:
        return v

    def block_lipschitz(self, i: int, x: np.ndarray) -> float:
        return self.constants().L_c

    def block_step(self, i: int, x_hat: np.ndarray, eta: float) -> float:
        if self.adaptive_lipschitz:
            return eta / self.block_lipschitz(i, x_hat)
        return eta

    def constants(self) -> ProblemConstants:
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.n)

    # --- cached-residual gradient mode ---------------------------------
    def init_cache(self, x: np.ndarray) -> np.ndarray:
        return x.copy()

    def grad_from_cache(self, i: int, cache: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.partial_grad(i, cache)

    def update_cache(self, cache: np.ndarray, i: int, delta: np.ndarray, x: np.ndarray) -> None:
        cache[self.partition[i]] += delta
