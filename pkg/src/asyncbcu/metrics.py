"""
Convergence and delay diagnostics, and CSV emission of traces and histograms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .delay_model import fit_poisson, poisson_kl


@dataclass(frozen=True)
class TraceSample:
    epoch: float
    objective: float
    grad_map_norm: float
    elapsed_seconds: float
    clamp_events: int = 0


@dataclass(frozen=True)
class RateReport:
    empirical_linear_factor: float
    theoretical_factor: float
    sublinear_envelope_violations: int
    phi_trace: Optional[tuple] = None


@dataclass(frozen=True)
class DelayReport:
    normalized: np.ndarray
    p_hat: float
    kl_vs_model: float
    kl_vs_fit: float
    model_p: float
    note: str = ""


class RateUndefinedError(ValueError):
    """A value in a rate fit is nonpositive (e.g. the iterate hit the floating-point floor)."""


def phi(problem, x, eta: float, x_star, F_star: Optional[float] = None) -> float:
    """``||x - x*||^2 + 2 eta (F(x) - F*)`` with ``x*`` standing in for the projection onto the solution set."""
    x, x_star = np.asarray(x), np.asarray(x_star)
    if F_star is None:
        F_star = problem.objective(x_star)
    d = x - x_star
    return float(d @ d) + 2.0 * eta * (problem.objective(x) - F_star)


def fit_linear_rate(values: Sequence[float], iterations: Optional[Sequence[float]] = None) -> float:
    """``exp`` of the least-squares slope of ``log(values)`` against the iteration index."""
    v = np.asarray(values, dtype=float)
    if v.size < 10:
        raise ValueError("need at least 10 samples for a rate fit")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise RateUndefinedError("rate undefined: trace contains nonpositive or non-finite values")
    k = np.arange(v.size, dtype=float) if iterations is None else np.asarray(iterations, dtype=float)
    slope = np.polyfit(k, np.log(v), 1)[0]
    return float(np.exp(slope))


def nonsmooth_envelope(k, m: int, eta: float, phi0: float):
    """``m phi0 / (2 eta (m + k))``, vectorised over ``k``."""
    k = np.asarray(k, dtype=float)
    return m * phi0 / (2.0 * eta * (m + k))


def check_sublinear(
    values: Sequence[float],
    envelope: Sequence[float],
    iterations: Sequence[float],
    m: int,
    slack: float = 0.05,
    extra: float = 0.0,
) -> int:
    """Count samples past the one-epoch burn-in that exceed ``(1 + slack) envelope + extra``."""
    v = np.asarray(values, dtype=float)
    e = np.asarray(envelope, dtype=float)
    k = np.asarray(iterations, dtype=float)
    mask = k >= m
    return int(np.count_nonzero(v[mask] > (1.0 + slack) * e[mask] + extra))


def estimate_B(distances: Sequence[float]) -> float:
    """Post-hoc bound on the distance to the solution set: the trace maximum."""
    return float(np.max(np.asarray(distances, dtype=float)))


def delay_report(histogram, threads: int) -> DelayReport:
    """Normalised delay histogram with Poisson fits against ``threads - 1`` and the MLE."""
    if threads < 1:
        raise ValueError("threads must be at least 1")
    counts = np.asarray(histogram, dtype=float)
    if counts.size == 0 or counts.sum() <= 0:
        raise ValueError("empty delay histogram")
    p_hat, kl_fit = fit_poisson(counts)
    model_p = float(threads - 1)
    kl_model = poisson_kl(counts, model_p)
    note = ""
    if threads > 1 and abs(p_hat - model_p) > 0.25 * model_p:
        note = (
            f"mean delay {p_hat:.3g} deviates from {model_p:g}; thread speeds are "
            "unequal on this machine (scheduling, cores shared across sockets)"
        )
    return DelayReport(counts / counts.sum(), p_hat, kl_model, kl_fit, model_p, note)


# ---------------------------------------------------------------------------
# CSV

TRACE_FIELDS = tuple(f.name for f in fields(TraceSample))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def write_trace_csv(fh_or_path, trace: Sequence[TraceSample]) -> None:
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for s in trace:
            w.writerow([_fmt(v) for v in astuple(s)])

    if isinstance(fh_or_path, io.TextIOBase):
        emit(fh_or_path)
    else:
        with open(fh_or_path, "w", newline="") as fh:
            emit(fh)


def read_trace_csv(fh_or_path) -> list:
    def parse(fh):
        rows = list(csv.DictReader(fh))
        return [
            TraceSample(
                float(r["epoch"]),
                float(r["objective"]),
                float(r["grad_map_norm"]),
                float(r["elapsed_seconds"]),
                int(r["clamp_events"]),
            )
            for r in rows
        ]

    if isinstance(fh_or_path, io.TextIOBase):
        return parse(fh_or_path)
    with open(fh_or_path, newline="") as fh:
        return parse(fh)


def write_histogram_csv(path, counts) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("delay", "count"))
        for t, c in enumerate(np.asarray(counts)):
            w.writerow((t, int(c)))


def read_histogram_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = np.zeros(max((int(r["delay"]) for r in rows), default=-1) + 1, dtype=np.int64)
    for r in rows:
        out[int(r["delay"])] = int(r["count"])
    return out


# ---------------------------------------------------------------------------
# reference solutions


def reference_solution(problem, eta: float, epochs: int, seed: int = 12345, target: float = 1e-10):
    """Best iterate (by gradient-map norm) of a long serial run.

    Stands in for the projection onto the solution set and for ``F*``.
    Returns ``(x_ref, F_ref, grad_map_norm)``.
    """
    from .engine import RunConfig, gradient_map, run_serial

    x = problem.initial_point()
    best_x, best_norm = x, gradient_map(problem, x, eta)[1]
    chunk = max(1, min(epochs, 20))
    done = 0
    while done < epochs and best_norm > target:
        e = min(chunk, epochs - done)
        res = run_serial(
            problem,
            RunConfig(mode="serial", epochs=e, stepsize=eta, seed=seed + done, x0=x, trace_every=problem.m * e,
                      trace_grad_map=False),
        )
        x = res.x
        done += e
        nrm = gradient_map(problem, x, eta)[1]
        if nrm < best_norm:
            best_x, best_norm = x.copy(), nrm
    return best_x, problem.objective(best_x), best_norm


def linear_rate_report(phi_values, iterations, theoretical_factor: float) -> RateReport:
    return RateReport(
        fit_linear_rate(phi_values, iterations),
        float(theoretical_factor),
        0,
        tuple(float(v) for v in phi_values),
    )
