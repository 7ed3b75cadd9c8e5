"""
Fixed stepsizes for asynchronous block-coordinate updates.

Each ``eta_*`` function maps problem constants and delay statistics to the
largest stepsize admitted by the corresponding convergence guarantee,
scaled by a safety factor, together with the predicted rate where one is
available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .delay_model import DelayMoments, DelaySpec, moments

DEFAULT_SAFETY = 0.99


class Regime(str, Enum):
    SMOOTH_NONCONVEX = "SmoothNonconvex"
    SMOOTH_CONVEX = "SmoothConvex"
    NONSMOOTH_NONCONVEX = "NonsmoothNonconvex"
    NONSMOOTH_CONVEX = "NonsmoothConvex"
    EXPECTED_DELAY = "ExpectedDelayExperiment"
    MAX_DELAY = "MaxDelayExperiment"
    EXPLICIT = "Explicit"  # user-supplied eta, no guarantee attached


@dataclass(frozen=True)
class ProblemConstants:
    """Lipschitz data of a block-structured problem.

    ``L_c`` bounds how fast a block gradient changes with its own block,
    ``L_r`` how fast the full gradient changes with a single block, and
    ``L_f`` is the full-gradient Lipschitz constant.
    """

    m: int
    L_c: float
    L_r: float
    L_f: float
    mu: Optional[float] = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if not (self.L_c > 0 and self.L_r > 0 and self.L_f > 0):
            raise ValueError("Lipschitz constants must be positive")
        # tiny relative tolerance: the constants are usually computed numerically
        tol = 1e-12
        if self.L_c > self.L_r * (1 + tol) or self.L_r > self.L_f * (1 + tol):
            raise ValueError(
                f"expected L_c <= L_r <= L_f, got {self.L_c}, {self.L_r}, {self.L_f}"
            )
        if self.mu is not None and self.mu < 0:
            raise ValueError("mu must be nonnegative")

    @property
    def kappa(self) -> float:
        return self.L_r / self.L_c


@dataclass(frozen=True)
class RatePrediction:
    kind: str  # "sublinear" | "linear"
    linear_factor: Optional[float] = None
    D: Optional[float] = None


@dataclass(frozen=True)
class StepsizeChoice:
    eta: float
    regime: Regime
    bound: float
    safety: float = 1.0
    rho_used: Optional[float] = None
    rate: Optional[RatePrediction] = None

    def as_dict(self) -> dict:
        out = {
            "eta": self.eta,
            "regime": self.regime.value,
            "bound": self.bound,
            "safety": self.safety,
            "rho_used": self.rho_used,
        }
        if self.rate is not None:
            out["rate"] = {
                "kind": self.rate.kind,
                "linear_factor": self.rate.linear_factor,
                "D": self.rate.D,
            }
        return out


def _check_safety(safety: float, allow_one: bool) -> None:
    hi_ok = safety <= 1 if allow_one else safety < 1
    if not (safety > 0 and hi_ok):
        rng = "(0, 1]" if allow_one else "(0, 1)"
        raise ValueError(f"safety must lie in {rng}, got {safety}")


def eta_smooth_nonconvex(c: ProblemConstants, T: float, safety: float = DEFAULT_SAFETY) -> StepsizeChoice:
    """Smooth nonconvex case: ``eta < (1/L_c) / (1 + 2 kappa T / sqrt(m))``.

    The guarantee also needs ``q_0 > 0`` or a bounded gradient; this holds
    for Poisson delays (``q_0 = exp(-p)``) and is not checked here.
    """
    _check_safety(safety, allow_one=False)
    bound = (1.0 / c.L_c) / (1.0 + 2.0 * c.kappa * T / math.sqrt(c.m))
    return StepsizeChoice(safety * bound, Regime.SMOOTH_NONCONVEX, bound, safety)


def smooth_convex_D(c: ProblemConstants, mom: DelayMoments, eta: float) -> float:
    """Per-iteration decrease constant ``D`` of the smooth convex analysis."""
    sm = math.sqrt(c.m)
    return (eta / (2 * c.m)) * (
        2.0 - (eta * c.L_r / sm) * (2 * mom.N_rho * mom.M_rho + mom.T) - eta * c.L_c * mom.M_rho
    )


def eta_smooth_convex(c: ProblemConstants, mom: DelayMoments, safety: float = DEFAULT_SAFETY) -> StepsizeChoice:
    rho = mom.rho
    if not rho > 1:
        raise ValueError("moments must be evaluated at rho > 1")
    _check_safety(safety, allow_one=False)
    sm = math.sqrt(c.m)
    grad_ratio_bound = (rho - 1.0) * sm / (rho * c.L_r * (1.0 + mom.M_rho))
    decrease_bound = 2.0 / (c.L_c * (mom.M_rho + c.kappa * (2 * mom.N_rho * mom.M_rho + mom.T) / sm))
    bound = min(grad_ratio_bound, decrease_bound)
    eta = safety * bound
    D = smooth_convex_D(c, mom, eta)
    if not D > 0:
        raise ValueError(f"decrease constant D={D} is not positive; inputs are inconsistent")
    factor = None
    if c.mu is not None:
        factor = 1.0 - 2.0 * c.mu * D
    kind = "linear" if factor is not None else "sublinear"
    return StepsizeChoice(eta, Regime.SMOOTH_CONVEX, bound, safety, rho, RatePrediction(kind, factor, D))


def eta_nonsmooth_nonconvex(c: ProblemConstants, S: float, safety: float = DEFAULT_SAFETY) -> StepsizeChoice:
    """Nonsmooth nonconvex case: ``eta < (1/L_c) / (1 + kappa^2 S / (2m))``."""
    _check_safety(safety, allow_one=False)
    bound = (1.0 / c.L_c) / (1.0 + c.kappa**2 * S / (2.0 * c.m))
    return StepsizeChoice(safety * bound, Regime.NONSMOOTH_NONCONVEX, bound, safety)


def nonsmooth_convex_bounds(c: ProblemConstants, mom: DelayMoments) -> tuple:
    """The two stepsize bounds of the nonsmooth convex analysis.

    The first keeps consecutive gradient-map norms within a factor ``rho``
    of each other; the second gives monotone expected objective. Raises if
    ``(1 - 1/rho) sqrt(m) <= 4`` since then no positive stepsize exists.
    """
    rho = mom.rho
    sm = math.sqrt(c.m)
    head = (1.0 - 1.0 / rho) * sm - 4.0
    if head <= 0:
        raise ValueError(
            f"m too small for this rho: (1 - 1/rho) sqrt(m) = {head + 4.0:.6g} <= 4 "
            f"(m={c.m}, rho={rho})"
        )
    g1, g2 = mom.gamma1, mom.gamma2
    ratio_bound = head / (2.0 * c.L_r * (1.0 + g1 + g2))
    descent_bound = 1.0 / (c.L_c + 2.0 * c.L_f * g2**2 / c.m + 2.0 * c.L_r * g2 / sm)
    return ratio_bound, descent_bound


def eta_nonsmooth_convex(c: ProblemConstants, mom: DelayMoments, safety: float = DEFAULT_SAFETY) -> StepsizeChoice:
    _check_safety(safety, allow_one=True)
    bound = min(nonsmooth_convex_bounds(c, mom))
    eta = safety * bound
    factor = None
    if c.mu is not None and c.mu > 0:
        factor = nonsmooth_linear_factor(eta, c.mu, c.m)
    kind = "linear" if factor is not None else "sublinear"
    return StepsizeChoice(eta, Regime.NONSMOOTH_CONVEX, bound, safety, mom.rho, RatePrediction(kind, factor))


def nonsmooth_linear_factor(eta: float, mu: float, m: int) -> float:
    """Per-iteration contraction of the potential under strong convexity."""
    return 1.0 - eta * mu / (m * (1.0 + eta * mu))


def eta_experiment(c: ProblemConstants, p_or_tau: float, which: str = "expected") -> StepsizeChoice:
    """``eta = (1/L_c) / (1 + kappa^2 v^2 / (2m))`` with ``v`` the expected or maximum delay."""
    regimes = {"expected": Regime.EXPECTED_DELAY, "max": Regime.MAX_DELAY}
    if which not in regimes:
        raise ValueError(f"which must be 'expected' or 'max', got {which!r}")
    eta = (1.0 / c.L_c) / (1.0 + c.kappa**2 * p_or_tau**2 / (2.0 * c.m))
    return StepsizeChoice(eta, regimes[which], eta, 1.0)


def choose_rho(p: float) -> float:
    """``1 + 1/p`` for ``p >= 1``; 2 otherwise (every rho works at zero delay)."""
    if p >= 1:
        return 1.0 + 1.0 / p
    return 2.0


def best_rho_nonsmooth_convex(
    c: ProblemConstants, delay: DelaySpec, grid: Optional[np.ndarray] = None
) -> float:
    """The ``rho`` on a grid that maximises the nonsmooth convex stepsize bound.

    Useful when ``1 + 1/p`` is infeasible, i.e. ``(1 - 1/rho) sqrt(m) <= 4``.
    """
    if grid is None:
        grid = 1.0 + np.geomspace(1e-3, 20.0, 400)
    best, best_rho = -math.inf, None
    for rho in grid:
        try:
            b = min(nonsmooth_convex_bounds(c, moments(delay, float(rho))))
        except (ValueError, OverflowError):
            continue
        if b > best:
            best, best_rho = b, float(rho)
    if best_rho is None:
        raise ValueError(f"no rho on the grid admits a positive stepsize for m={c.m}")
    return best_rho


def sublinear_bound(
    regime: Regime,
    k: int,
    *,
    D: Optional[float] = None,
    B: Optional[float] = None,
    gap0: Optional[float] = None,
    eta: Optional[float] = None,
    m: Optional[int] = None,
    phi0: Optional[float] = None,
) -> float:
    """Theoretical upper envelope on the expected optimality gap at iteration ``k``.

    ``SmoothConvex`` needs ``D``, ``B`` (bound on the distance to the solution
    set) and ``gap0 = f(x0) - f*``; returns ``1 / (1/gap0 + k D / B^2)``.
    ``NonsmoothConvex`` needs ``eta``, ``m`` and ``phi0`` (the potential at
    ``x0``); returns ``m phi0 / (2 eta (m + k))``.
    """
    regime = Regime(regime)
    if regime is Regime.SMOOTH_CONVEX:
        if D is None or B is None or gap0 is None:
            raise ValueError("SmoothConvex envelope needs D, B and gap0")
        if gap0 <= 0:
            return 0.0
        return 1.0 / (1.0 / gap0 + k * D / B**2)
    if regime is Regime.NONSMOOTH_CONVEX:
        if eta is None or m is None or phi0 is None:
            raise ValueError("NonsmoothConvex envelope needs eta, m and phi0")
        return m * phi0 / (2.0 * eta * (m + k))
    raise ValueError(f"no sublinear envelope for regime {regime.value}")
