"""
Delay distributions and the delay statistics used by the stepsize rules.

A delay ``j`` is the number of global updates that land between a worker's
read of the shared iterate and its own write. Three families are supported:
``Poisson(p)``, ``Empirical(q)`` (a probability vector over ``t = 0..t_max``)
and ``Deterministic(t0)``.

The statistics computed by :func:`moments` are, for a chosen ``rho > 1``::

    T       = E[j]
    S       = E[j^2]
    M_rho   = E[rho^j]
    N_rho   = E[j rho^j]
    gamma1  = sum_t q_t (rho^(t/2) - 1) / (rho^(1/2) - 1)
    gamma2  = sqrt( sum_t q_t t (rho^t - 1) / (1 - 1/rho) )

``gamma2`` is the square root of the weighted sum. The closed form printed
for the Poisson family in some references carries an exponent of -1 instead;
that form is not consistent with the defining sum and is not used here.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import gammainc

__all__ = [
    "Poisson",
    "Empirical",
    "Deterministic",
    "DelaySpec",
    "DelayMoments",
    "pmf",
    "tail",
    "moments",
    "moments_truncated",
    "sample",
    "fit_poisson",
    "poisson_kl",
    "default_history",
    "load_empirical",
    "save_empirical",
    "load_histogram",
    "save_histogram",
]


@dataclass(frozen=True)
class Poisson:
    p: float

    def __post_init__(self):
        if not (self.p >= 0 and math.isfinite(self.p)):
            raise ValueError(f"Poisson rate must be finite and nonnegative, got {self.p}")


@dataclass(frozen=True)
class Empirical:
    q: tuple

    def __post_init__(self):
        q = tuple(float(v) for v in np.asarray(self.q, dtype=float).ravel())
        if len(q) == 0:
            raise ValueError("empirical delay distribution needs at least one entry")
        if any(v < 0 for v in q):
            raise ValueError("empirical probabilities must be nonnegative")
        if abs(math.fsum(q) - 1.0) > 1e-12:
            raise ValueError(f"empirical probabilities sum to {math.fsum(q)!r}, not 1")
        object.__setattr__(self, "q", q)

    @classmethod
    def from_counts(cls, counts) -> "Empirical":
        c = np.asarray(counts, dtype=float)
        total = c.sum()
        if total <= 0:
            raise ValueError("histogram has no counts")
        return cls(tuple(c / total))


@dataclass(frozen=True)
class Deterministic:
    t0: int

    def __post_init__(self):
        if int(self.t0) != self.t0 or self.t0 < 0:
            raise ValueError(f"deterministic delay must be a nonnegative integer, got {self.t0}")
        object.__setattr__(self, "t0", int(self.t0))


DelaySpec = Union[Poisson, Empirical, Deterministic]


@dataclass(frozen=True)
class DelayMoments:
    """Delay statistics at a fixed ``rho``; see the module docstring."""

    rho: float
    T: float
    S: float
    M_rho: float
    N_rho: float
    gamma1: float
    gamma2: float
    method: str = "closed_form"
    truncation_error_bound: float = 0.0

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "T": self.T,
            "S": self.S,
            "M_rho": self.M_rho,
            "N_rho": self.N_rho,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "method": self.method,
            "truncation_error_bound": self.truncation_error_bound,
        }


# ---------------------------------------------------------------------------
# pmf / tail


def _poisson_logpmf(p: float, t: int) -> float:
    if p == 0:
        return 0.0 if t == 0 else -math.inf
    return t * math.log(p) - p - math.lgamma(t + 1)


def pmf(spec: DelaySpec, t: int) -> float:
    """Probability that the delay equals ``t``."""
    if t < 0:
        return 0.0
    if isinstance(spec, Poisson):
        return math.exp(_poisson_logpmf(spec.p, t))
    if isinstance(spec, Empirical):
        return spec.q[t] if t < len(spec.q) else 0.0
    if isinstance(spec, Deterministic):
        return 1.0 if t == spec.t0 else 0.0
    raise TypeError(f"unknown delay spec {spec!r}")


def tail(spec: DelaySpec, k: int) -> float:
    """``c_k = P(j >= k)``."""
    if k <= 0:
        return 1.0
    if isinstance(spec, Poisson):
        if spec.p == 0:
            return 0.0
        # P(j >= k) is the regularized lower incomplete gamma P(k, p)
        return float(gammainc(k, spec.p))
    if isinstance(spec, Empirical):
        return math.fsum(spec.q[k:]) if k < len(spec.q) else 0.0
    if isinstance(spec, Deterministic):
        return 1.0 if spec.t0 >= k else 0.0
    raise TypeError(f"unknown delay spec {spec!r}")


def support_bound(spec: DelaySpec, eps: float = 1e-16) -> int:
    """Smallest ``t`` with ``P(j > t) < eps`` (exact maximum for finite support)."""
    if isinstance(spec, Empirical):
        return len(spec.q) - 1
    if isinstance(spec, Deterministic):
        return spec.t0
    t = 0
    while tail(spec, t + 1) >= eps:
        t += 1
    return t


def default_history(spec: DelaySpec, eps: float = 1e-6, cap: int = 4096) -> int:
    """Smallest ring-buffer length ``H`` with ``P(j >= H) < eps``, capped."""
    h = 1
    while h < cap and tail(spec, h) >= eps:
        h += 1
    return h


# ---------------------------------------------------------------------------
# moments


def _check_rho(rho: float) -> None:
    if not (rho > 1 and math.isfinite(rho)):
        raise ValueError(f"rho must be a finite number > 1, got {rho}")


def _finite_moments(ts: np.ndarray, q: np.ndarray, rho: float) -> DelayMoments:
    ts = ts.astype(float)
    sr = math.sqrt(rho)
    with np.errstate(over="raise"):
        try:
            rt = rho ** ts
            srt = sr ** ts
        except FloatingPointError as exc:
            raise OverflowError(f"rho^t overflows for rho={rho}; moments are not finite") from exc
    T = math.fsum(q * ts)
    S = math.fsum(q * ts * ts)
    M = math.fsum(q * rt)
    N = math.fsum(q * ts * rt)
    g1 = math.fsum(q * (srt - 1.0)) / (sr - 1.0)
    g2sq = math.fsum(q * ts * (rt - 1.0)) / (1.0 - 1.0 / rho)
    vals = (T, S, M, N, g1, g2sq)
    if not all(math.isfinite(v) for v in vals):
        raise OverflowError(f"delay moments are not finite at rho={rho}")
    return DelayMoments(rho, T, S, M, N, g1, math.sqrt(max(g2sq, 0.0)), "truncated_sum", 0.0)


def moments(spec: DelaySpec, rho: float, tol: float = 1e-15) -> DelayMoments:
    """All delay statistics at ``rho``.

    Poisson uses the closed forms; finite-support distributions are summed
    exactly. ``tol`` is only used by the Poisson truncated-sum path
    (:func:`moments_truncated`).
    """
    _check_rho(rho)
    if isinstance(spec, Poisson):
        p = spec.p
        sr = math.sqrt(rho)
        try:
            M = math.exp(p * (rho - 1.0))
            g1 = math.expm1(p * (sr - 1.0)) / (sr - 1.0)
        except OverflowError as exc:
            raise OverflowError(f"Poisson({p}) moments overflow at rho={rho}") from exc
        N = rho * p * M
        g2sq = (N - p) / (1.0 - 1.0 / rho)
        out = DelayMoments(
            rho=rho,
            T=p,
            S=p * (p + 1.0),
            M_rho=M,
            N_rho=N,
            gamma1=g1,
            gamma2=math.sqrt(max(g2sq, 0.0)),
            method="closed_form",
            truncation_error_bound=0.0,
        )
        if not all(math.isfinite(v) for v in (M, N, g1, g2sq)):
            raise OverflowError(f"Poisson({p}) moments are not finite at rho={rho}")
        return out
    if isinstance(spec, Empirical):
        q = np.asarray(spec.q)
        return _finite_moments(np.arange(len(q)), q, rho)
    if isinstance(spec, Deterministic):
        return _finite_moments(np.array([spec.t0]), np.array([1.0]), rho)
    raise TypeError(f"unknown delay spec {spec!r}")


def moments_truncated(spec: Poisson, rho: float, tol: float = 1e-15, max_terms: int = 100_000) -> DelayMoments:
    """Poisson statistics by direct series summation.

    Independent of the closed forms in :func:`moments`, which it is used to
    check. Every summand ``q_t h(t)`` has ``h(t+1)/h(t) <= rho ((t+1)/t)^2``,
    so past ``t`` the term ratio is bounded by ``R_t = rho p (t+1) / t^2``,
    which decreases in ``t``; once ``R_t < 1`` the remaining tail of every
    series is at most ``term_t R_t / (1 - R_t)``. Summation stops when that
    bound falls below ``tol`` times each partial sum, and the largest such
    relative bound is reported.
    """
    if not isinstance(spec, Poisson):
        raise TypeError("truncated-sum path is only defined for Poisson delays")
    _check_rho(rho)
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = spec.p
    if p == 0:
        return DelayMoments(rho, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, "truncated_sum", 0.0)

    lr, lsr = math.log(rho), 0.5 * math.log(rho)
    sr = math.sqrt(rho)
    parts = [[] for _ in range(6)]  # T, S, M, N, gamma1, gamma2^2
    err = math.inf
    for t in range(max_terms):
        lq = _poisson_logpmf(p, t)
        q = math.exp(lq)
        qr = math.exp(lq + t * lr)
        terms = (
            t * q,
            t * t * q,
            qr,
            t * qr,
            q * math.expm1(t * lsr) / (sr - 1.0),
            t * q * math.expm1(t * lr) / (1.0 - 1.0 / rho),
        )
        for acc, v in zip(parts, terms):
            acc.append(v)
        if t >= 1:
            R = rho * p * (t + 1) / (t * t)
            if R < 1:
                sums = [math.fsum(a) for a in parts]
                rel = max(
                    (v * R / (1 - R)) / s if s > 0 else 0.0 for v, s in zip(terms, sums)
                )
                if rel < tol:
                    err = rel
                    break
    else:
        raise RuntimeError(f"series did not converge within {max_terms} terms")

    T, S, M, N, g1, g2sq = (math.fsum(a) for a in parts)
    return DelayMoments(rho, T, S, M, N, g1, math.sqrt(g2sq), "truncated_sum", err)


# ---------------------------------------------------------------------------
# sampling


@functools.lru_cache(maxsize=64)
def _poisson_cdf_table(p: float) -> np.ndarray:
    # CDF by the pmf recurrence q_{t+1} = q_t p / (t+1), carried in log space
    # so large rates do not underflow at t = 0
    cdf = []
    acc = []
    t = 0
    while True:
        acc.append(math.exp(_poisson_logpmf(p, t)))
        c = math.fsum(acc)
        cdf.append(c)
        if t > p and (1.0 - c < 1e-17 or acc[-1] < 1e-300):
            break
        t += 1
    table = np.asarray(cdf)
    table[-1] = 1.0
    return table


def _cdf_table(spec: DelaySpec) -> np.ndarray:
    if isinstance(spec, Poisson):
        return _poisson_cdf_table(float(spec.p))
    if isinstance(spec, Empirical):
        c = np.cumsum(spec.q)
        c[-1] = 1.0
        return c
    raise TypeError(f"no CDF table for {spec!r}")


def sample(spec: DelaySpec, rng: np.random.Generator, size=None):
    """Draw delays by CDF inversion; deterministic given the generator state."""
    if isinstance(spec, Deterministic):
        if size is None:
            return spec.t0
        return np.full(size, spec.t0, dtype=np.int64)
    cdf = _cdf_table(spec)
    u = rng.random(size)
    t = np.searchsorted(cdf, u, side="right")
    if size is None:
        return int(t)
    return t.astype(np.int64)


# ---------------------------------------------------------------------------
# fitting


def _poisson_folded(p: float, nbins: int) -> np.ndarray:
    """Poisson(p) probabilities over ``0..nbins-1`` with the tail folded into the last bin."""
    ref = np.array([pmf(Poisson(p), t) for t in range(nbins)])
    ref[-1] = tail(Poisson(p), nbins - 1)
    return ref


def poisson_kl(histogram, p: float) -> float:
    """KL(empirical || Poisson(p)) over the histogram bins, tail folded into the last bin."""
    counts = np.asarray(histogram, dtype=float)
    total = counts.sum()
    if counts.size == 0 or total <= 0:
        raise ValueError("histogram has no counts")
    last = int(np.nonzero(counts)[0][-1])
    emp = counts[: last + 1] / total
    ref = _poisson_folded(p, last + 1)
    mask = emp > 0
    if np.any(ref[mask] == 0):
        return math.inf
    return float(np.sum(emp[mask] * np.log(emp[mask] / ref[mask])))


def fit_poisson(histogram) -> tuple:
    """Poisson maximum-likelihood fit of a delay histogram.

    Returns ``(p_hat, divergence)`` where ``p_hat`` is the sample mean and
    ``divergence`` is :func:`poisson_kl` against ``Poisson(p_hat)``.
    """
    counts = np.asarray(histogram, dtype=float)
    if counts.size == 0 or counts.sum() <= 0:
        raise ValueError("cannot fit an empty histogram")
    if np.any(counts < 0):
        raise ValueError("histogram counts must be nonnegative")
    p_hat = float(np.dot(np.arange(counts.size), counts) / counts.sum())
    return p_hat, poisson_kl(counts, p_hat)


# ---------------------------------------------------------------------------
# plain-text tables


def save_empirical(path, spec: Empirical) -> None:
    with open(path, "w") as fh:
        for t, q in enumerate(spec.q):
            fh.write(f"{t} {q!r}\n")


def load_empirical(path) -> Empirical:
    data = np.loadtxt(path, ndmin=2)
    ts = data[:, 0].astype(int)
    q = np.zeros(ts.max() + 1)
    q[ts] = data[:, 1]
    return Empirical(tuple(q))


def save_histogram(path, counts) -> None:
    with open(path, "w") as fh:
        for t, c in enumerate(np.asarray(counts)):
            fh.write(f"{t} {int(c)}\n")


def load_histogram(path) -> np.ndarray:
    data = np.loadtxt(path, ndmin=2, dtype=np.int64)
    out = np.zeros(data[:, 0].max() + 1, dtype=np.int64)
    out[data[:, 0]] = data[:, 1]
    return out
