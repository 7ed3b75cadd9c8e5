"""Binary container for problem instances.

Layout (little-endian)::

    b"ABCU1"                      magic
    uint8   kind                  1 lasso, 2 nmf, 3 quadratic
    uint8   ndims, uint64[ndims]  lasso (N, n, m); nmf (M, N); quadratic (n, m)
    float64 param                 lambda for lasso, rank for nmf, 0 otherwise
    int64   seed                  -1 when unknown
    float64[...] payload          row-major arrays:
                                  lasso A, b; nmf Z, X0, Y0; quadratic diag(Q), c
"""

from __future__ import annotations

import struct

import numpy as np

from .base import BlockPartition
from .lasso import LassoInstance
from .nmf import NmfInstance
from .quadratic import QuadraticToy

MAGIC = b"ABCU1"
_KINDS = {"lasso": 1, "nmf": 2, "quadratic": 3}
_F8 = np.dtype("<f8")


def _even_m(part: BlockPartition) -> int:
    if BlockPartition.even(part.n, part.m) != part:
        raise ValueError("only evenly partitioned instances can be serialised")
    return part.m


def save_instance(path, problem) -> None:
    seed = -1 if getattr(problem, "seed", None) is None else int(problem.seed)
    if isinstance(problem, LassoInstance):
        dims = (problem.A.shape[0], problem.A.shape[1], _even_m(problem.partition))
        param, arrays = problem.lam, (problem.A, problem.b)
    elif isinstance(problem, NmfInstance):
        dims = (problem.M, problem.N)
        X0, Y0 = problem.unpack(problem.initial_point())
        param, arrays = float(problem.r), (problem.Z, X0, Y0)
    elif isinstance(problem, QuadraticToy):
        dims = (problem.n, _even_m(problem.partition))
        param, arrays = 0.0, (problem.q, problem.c)
    else:
        raise TypeError(f"cannot serialise {type(problem).__name__}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", _KINDS[problem.kind], len(dims)))
        fh.write(struct.pack(f"<{len(dims)}Q", *dims))
        fh.write(struct.pack("<dq", param, seed))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_F8).tobytes())


def load_instance(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != MAGIC:
        raise ValueError(f"{path}: not an instance file (bad magic)")
    kind, nd = struct.unpack_from("<BB", blob, 5)
    off = 7
    dims = struct.unpack_from(f"<{nd}Q", blob, off)
    off += 8 * nd
    param, seed = struct.unpack_from("<dq", blob, off)
    off += 16
    payload = np.frombuffer(blob, dtype=_F8, offset=off)
    seed = None if seed < 0 else seed

    def take(*shape):
        nonlocal payload
        k = int(np.prod(shape))
        if payload.size < k:
            raise ValueError(f"{path}: truncated payload")
        out, payload = payload[:k].reshape(shape).copy(), payload[k:]
        return out

    if kind == 1:
        N, n, m = dims
        A, b = take(N, n), take(N)
        inst = LassoInstance(A, b, param, BlockPartition.even(n, m), seed=seed)
    elif kind == 2:
        M, N = dims
        r = int(param)
        Z, X0, Y0 = take(M, N), take(M, r), take(N, r)
        inst = NmfInstance(Z, r, X0, Y0, seed=seed)
    elif kind == 3:
        n, m = dims
        q, c = take(n), take(n)
        inst = QuadraticToy(q, c, BlockPartition.even(n, m), seed=seed)
    else:
        raise ValueError(f"{path}: unknown problem kind {kind}")
    if payload.size:
        raise ValueError(f"{path}: {payload.size} trailing values")
    return inst
