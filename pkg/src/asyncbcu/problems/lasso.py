from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import svds

from ..stepsize_policy import ProblemConstants
from .base import BlockPartition, Problem

# Above this many coordinates the Gram matrix is not formed.
GRAM_LIMIT = 4096


def soft_threshold(v, theta: float) -> np.ndarray:
    """Componentwise ``sign(v) * max(|v| - theta, 0)``, the prox of ``theta * ||.||_1``."""
    if theta < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


class LassoInstance(Problem):
    """``0.5 ||A x - b||^2 + lam ||x||_1`` with column blocks of ``A``.

    Block gradients are ``A_i^T (A x - b)``. When ``n <= GRAM_LIMIT`` they
    are evaluated as ``(A^T A)_i x - (A^T b)_i`` from a precomputed Gram
    matrix, which is the same quantity at ``O(|block| n)`` cost.
    """

    kind = "lasso"

    def __init__(self, A, b, lam: float, partition: BlockPartition, seed=None, use_gram=None):
        A = np.ascontiguousarray(A, dtype=float)
        b = np.ascontiguousarray(b, dtype=float)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ValueError("A must be N x n and b of length N")
        if partition.n != A.shape[1]:
            raise ValueError("partition does not cover the columns of A")
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.A, self.b, self.lam = A, b, float(lam)
        self.partition = partition
        self.seed = seed
        self._blocks_T = [np.ascontiguousarray(A[:, s].T) for s in partition.slices]
        if use_gram is None:
            use_gram = A.shape[1] <= GRAM_LIMIT
        self.use_gram = bool(use_gram)
        if self.use_gram:
            G = A.T @ A
            Atb = A.T @ b
            self._gram_rows = [np.ascontiguousarray(G[s]) for s in partition.slices]
            self._Atb = [Atb[s].copy() for s in partition.slices]
        self._constants = None

    @property
    def N(self) -> int:
        return self.A.shape[0]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x - self.b

    def smooth_value(self, x):
        r = self.residual(x)
        return 0.5 * float(r @ r)

    def regularizer(self, x):
        return self.lam * float(np.abs(x).sum())

    def partial_grad(self, i, x):
        if self.use_gram:
            return self._gram_rows[i] @ x - self._Atb[i]
        return self._blocks_T[i] @ self.residual(x)

    def full_grad(self, x):
        return self.A.T @ self.residual(x)

    def prox_block(self, i, v, eta):
        return soft_threshold(v, eta * self.lam)

    def block_lipschitz(self, i, x=None):
        return self.constants().L_c

    def constants(self) -> ProblemConstants:
        if self._constants is None:
            A = self.A
            G = A.T @ A if not self.use_gram else None
            L_c = L_r = 0.0
            for k, s in enumerate(self.partition.slices):
                cols = (self._gram_rows[k].T if G is None else G[:, s])
                # ||A_i^T A_i||_2 and ||A^T A_i||_2 from the Gram columns
                L_c = max(L_c, float(np.linalg.eigvalsh(cols[s]).max()))
                L_r = max(L_r, float(np.sqrt(np.linalg.eigvalsh(cols.T @ cols).max())))
            L_f = float(svds(A, k=1, return_singular_vectors=False, random_state=0)[0] ** 2) \
                if min(A.shape) > 1 else float(np.linalg.norm(A, 2) ** 2)
            mu = None
            if A.shape[0] >= A.shape[1]:
                smin = np.linalg.svd(A, compute_uv=False)[-1] ** 2
                mu = float(smin) if smin > 1e-12 * L_f else None
            # guard the ordering against last-digit disagreements between routines
            L_r = min(max(L_r, L_c), L_f)
            self._constants = ProblemConstants(self.m, L_c, L_r, max(L_f, L_r), mu)
        return self._constants

    # cached residual r = A x - b
    def init_cache(self, x):
        return self.residual(x)

    def grad_from_cache(self, i, cache, x):
        return self._blocks_T[i] @ cache

    def update_cache(self, cache, i, delta, x):
        cache += self._blocks_T[i].T @ delta

    def duality_gap(self, x: np.ndarray) -> float:
        """``F(x) - D(theta)`` for the dual-feasible rescaled residual; bounds ``F(x) - F*``."""
        r = self.residual(x)
        corr = np.abs(self.A.T @ r).max()
        s = 1.0 if corr <= self.lam else self.lam / corr
        theta = s * r
        dual = -0.5 * float(theta @ theta) - float(theta @ self.b)
        return max(self.objective(x) - dual, 0.0)


def lasso_generate(N: int, n: int, lam=None, seed=0, m=None) -> LassoInstance:
    """Standard-normal ``A`` and ``b``; ``lam`` defaults to ``1/N``; ``m`` defaults to ``n``."""
    if N < 1 or n < 1:
        raise ValueError("N and n must be positive")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((N, n))
    b = rng.standard_normal(N)
    if lam is None:
        lam = 1.0 / N
    part = BlockPartition.even(n, n if m is None else m)
    return LassoInstance(A, b, lam, part, seed=seed)


def lasso_partial_grad(inst: LassoInstance, i: int, x_hat: np.ndarray, residual_mode: str = "recompute", cache=None):
    """``A_i^T (A x_hat - b)`` either recomputed or from a maintained residual ``cache``."""
    if residual_mode == "recompute":
        return inst.partial_grad(i, x_hat)
    if residual_mode == "cached_residual":
        if cache is None:
            raise ValueError("cached_residual mode needs the residual cache")
        return inst.grad_from_cache(i, cache, x_hat)
    raise ValueError(f"unknown residual mode {residual_mode!r}")
