from __future__ import annotations

import numpy as np

from ..stepsize_policy import ProblemConstants
from .base import BlockPartition, Problem

LIPSCHITZ_FLOOR = 0.001


def nmf_prox_and_normalize(is_x_column: bool, v) -> np.ndarray:
    """Project onto the nonnegative orthant; X columns are then rescaled to unit norm.

    A column that projects to zero is returned as zero.
    """
    w = np.maximum(np.asarray(v, dtype=float), 0.0)
    if is_x_column:
        nrm = np.linalg.norm(w)
        if nrm > 0:
            w = w / nrm
    return w


class NmfInstance(Problem):
    """``0.5 ||X Y^T - Z||_F^2`` over ``X >= 0`` (M x r) and ``Y >= 0`` (N x r).

    The flat variable stacks the columns of ``X`` and then the columns of
    ``Y``, so block ``j < r`` is column ``j`` of ``X`` and block ``r + j``
    is column ``j`` of ``Y``. Columns of ``X`` are kept at unit norm, which
    makes the block Lipschitz constant of a ``Y`` column equal to one; for
    an ``X`` column it is ``max(0.001, ||y_j||^2)``. Stepsizes are therefore
    relative (``adaptive_lipschitz``): the engine divides them by
    :meth:`block_lipschitz` evaluated at the read snapshot.
    """

    kind = "nmf"
    adaptive_lipschitz = True

    def __init__(self, Z, r: int, X0=None, Y0=None, seed=None):
        Z = np.ascontiguousarray(Z, dtype=float)
        if Z.ndim != 2 or np.any(Z < 0):
            raise ValueError("Z must be a nonnegative matrix")
        if r < 1:
            raise ValueError("rank must be positive")
        self.Z = Z
        self.ZT = np.ascontiguousarray(Z.T)
        self.r = int(r)
        self.M, self.N = Z.shape
        self.seed = seed
        self.partition = BlockPartition.from_sizes([self.M] * self.r + [self.N] * self.r)
        self._x0 = None
        if X0 is not None and Y0 is not None:
            self._x0 = self.pack(X0, Y0)

    # --- layout --------------------------------------------------------
    def pack(self, X, Y) -> np.ndarray:
        return np.concatenate([np.asarray(X, float).T.ravel(), np.asarray(Y, float).T.ravel()])

    def unpack(self, x: np.ndarray):
        """Views ``(X, Y)`` into ``x``."""
        k = self.M * self.r
        X = x[:k].reshape(self.r, self.M).T
        Y = x[k:].reshape(self.r, self.N).T
        return X, Y

    def is_x_block(self, i: int) -> bool:
        return i < self.r

    # --- objective -----------------------------------------------------
    def smooth_value(self, x):
        X, Y = self.unpack(x)
        R = X @ Y.T - self.Z
        return 0.5 * float(np.einsum("ij,ij->", R, R))

    def partial_grad(self, i, x):
        X, Y = self.unpack(x)
        if i < self.r:
            y = Y[:, i]
            return X @ (Y.T @ y) - self.Z @ y
        j = i - self.r
        xc = X[:, j]
        return Y @ (X.T @ xc) - self.ZT @ xc

    def full_grad(self, x):
        X, Y = self.unpack(x)
        R = X @ Y.T - self.Z
        return self.pack(R @ Y, R.T @ X)

    def prox_block(self, i, v, eta):
        return nmf_prox_and_normalize(self.is_x_block(i), v)

    def block_lipschitz(self, i, x):
        if i < self.r:
            y = self.unpack(x)[1][:, i]
            return max(LIPSCHITZ_FLOOR, float(y @ y))
        return 1.0

    def constants(self) -> ProblemConstants:
        # relative constants: the engine rescales per block by block_lipschitz
        return ProblemConstants(self.m, 1.0, 1.0, 1.0, None)

    def initial_point(self):
        if self._x0 is None:
            return np.zeros(self.n)
        return self._x0.copy()

    # cached residual R = X Y^T - Z
    def init_cache(self, x):
        X, Y = self.unpack(x)
        return X @ Y.T - self.Z

    def grad_from_cache(self, i, cache, x):
        X, Y = self.unpack(x)
        if i < self.r:
            return cache @ Y[:, i]
        return cache.T @ X[:, i - self.r]

    def update_cache(self, cache, i, delta, x):
        X, Y = self.unpack(x)
        if i < self.r:
            cache += np.outer(delta, Y[:, i])
        else:
            cache += np.outer(X[:, i - self.r], delta)


def nmf_partial_grad(inst: NmfInstance, block: int, X, Y) -> np.ndarray:
    """Gradient of the NMF objective with respect to one column of ``X`` or ``Y``."""
    return inst.partial_grad(block, inst.pack(X, Y))


def nmf_block_lipschitz(inst: NmfInstance, block: int, X, Y) -> float:
    return inst.block_lipschitz(block, inst.pack(X, Y))


def nmf_generate(M: int, N: int, r: int, seed=0):
    """Planted nonnegative rank-``r`` instance and a perturbed starting point.

    ``Z = Z_L Z_R^T`` with standard-normal factors clipped at zero; the start
    is ``Z_L + 0.5 Xi_L``, ``Z_R + 0.5 Xi_R`` clipped at zero with the
    ``X`` columns normalised. Returns ``(instance, X0, Y0)``.
    """
    if min(M, N, r) < 1:
        raise ValueError("M, N and r must be positive")
    rng = np.random.default_rng(seed)
    ZL = np.maximum(rng.standard_normal((M, r)), 0.0)
    ZR = np.maximum(rng.standard_normal((N, r)), 0.0)
    Z = ZL @ ZR.T
    X0 = np.maximum(ZL + 0.5 * rng.standard_normal((M, r)), 0.0)
    Y0 = np.maximum(ZR + 0.5 * rng.standard_normal((N, r)), 0.0)
    for j in range(r):
        X0[:, j] = nmf_prox_and_normalize(True, X0[:, j])
    inst = NmfInstance(Z, r, X0, Y0, seed=seed)
    inst.planted = (ZL, ZR)
    return inst, X0, Y0
