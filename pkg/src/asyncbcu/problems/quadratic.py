from __future__ import annotations

import numpy as np

from ..stepsize_policy import ProblemConstants
from .base import BlockPartition, Problem


class QuadraticToy(Problem):
    """``0.5 x^T Q x - c^T x`` with diagonal ``Q``; minimiser ``Q^{-1} c`` is known."""

    kind = "quadratic"

    def __init__(self, q_diag, c, partition: BlockPartition, seed=None):
        self.q = np.asarray(q_diag, dtype=float)
        self.c = np.asarray(c, dtype=float)
        if np.any(self.q <= 0) or self.q.shape != self.c.shape:
            raise ValueError("need a positive diagonal and a matching linear term")
        self.partition = partition
        self.seed = seed
        self._q_blocks = [self.q[s] for s in partition.slices]
        self._c_blocks = [self.c[s] for s in partition.slices]

    @property
    def x_star(self) -> np.ndarray:
        return self.c / self.q

    @property
    def f_star(self) -> float:
        return -0.5 * float(self.c @ (self.c / self.q))

    def smooth_value(self, x):
        return 0.5 * float(x @ (self.q * x)) - float(self.c @ x)

    def partial_grad(self, i, x):
        s = self.partition[i]
        return self._q_blocks[i] * x[s] - self._c_blocks[i]

    def full_grad(self, x):
        return self.q * x - self.c

    def block_lipschitz(self, i, x=None):
        return float(self._q_blocks[i].max())

    def constants(self) -> ProblemConstants:
        # Q diagonal: a block perturbation only moves its own block gradient
        L = float(self.q.max())
        return ProblemConstants(self.m, L, L, L, float(self.q.min()))


def quadratic_toy(n: int, mu: float, L: float, seed=0, m=None, c=None) -> QuadraticToy:
    """Spectrum ``linspace(mu, L, n)``; ``c`` standard normal unless given."""
    if not 0 < mu <= L:
        raise ValueError("need 0 < mu <= L")
    q = np.linspace(mu, L, n)
    if c is None:
        c = np.random.default_rng(seed).standard_normal(n)
    part = BlockPartition.even(n, n if m is None else m)
    return QuadraticToy(q, c, part, seed=seed)
