"""
Serial, simulated-delay and multithreaded execution of the asynchronous
block-coordinate update

    x_i <- prox_{eta r_i}( x_i - eta grad_i f(x_hat) )   for the sampled block i,

where ``x_hat`` is the (possibly stale) iterate read by the worker.
"""

from __future__ import annotations

import math
import sys
import threading
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ..delay_model import DelaySpec, Deterministic, default_history, sample
from ..metrics import TraceSample
from ..stepsize_policy import StepsizeChoice
from .shared import SharedIterate

MODES = ("serial", "simulated", "async")
READ_MODES = ("consistent_snapshot", "relaxed")
GRAD_MODES = ("recompute", "cached_residual")
CLAMP_WARN_RATE = 0.01


@dataclass
class RunConfig:
    mode: str = "serial"
    epochs: int = 1
    stepsize: Union[StepsizeChoice, float] = 1.0
    seed: int = 0
    trace_every: Optional[int] = None  # iterations; defaults to one epoch
    threads: int = 1
    delay: Optional[DelaySpec] = None
    history: Optional[int] = None
    read_mode: str = "consistent_snapshot"
    grad_mode: Optional[str] = None  # recompute for serial/simulated, cached_residual for async
    x0: Optional[np.ndarray] = None
    trace_grad_map: bool = True
    switch_interval: Optional[float] = 1e-5  # async only; GIL switch interval during the run
    read_pause: Optional[float] = 1e-6  # async only; seconds slept between read and write

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError("epochs must be a nonnegative integer")
        if self.mode == "simulated" and self.delay is None:
            raise ValueError("simulated mode needs a delay distribution")
        if self.history is not None and self.history < 1:
            raise ValueError("history must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.read_mode not in READ_MODES:
            raise ValueError(f"read_mode must be one of {READ_MODES}")
        if self.grad_mode is not None and self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
        if self.trace_every is not None and self.trace_every < 1:
            raise ValueError("trace_every must be positive")
        if not self.eta > 0:
            raise ValueError("stepsize must be positive")
        if self.read_pause is not None and self.read_pause < 0:
            raise ValueError("read_pause must be nonnegative")

    @property
    def eta(self) -> float:
        s = self.stepsize
        return float(s.eta if isinstance(s, StepsizeChoice) else s)


@dataclass
class RunResult:
    x: np.ndarray
    trace: list
    delay_histogram: np.ndarray
    iterations: int
    wall_time: float
    initial: Optional[TraceSample] = None
    clamp_events: int = 0
    diverged: bool = False
    eta: float = float("nan")
    snapshot_retries: int = 0
    extra: dict = field(default_factory=dict)


def gradient_map(problem, x: np.ndarray, eta: float):
    """``d = prox_{eta R}(x - eta grad f(x)) - x`` blockwise, and ``||d||``.

    ``d`` vanishes exactly at critical points. For problems with adaptive
    block Lipschitz constants each block uses its own step ``eta / L_i(x)``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    x = np.asarray(x, dtype=float)
    g = problem.full_grad(x)
    d = np.empty_like(x)
    for i, s in enumerate(problem.partition.slices):
        step = problem.block_step(i, x, eta)
        d[s] = problem.prox_block(i, x[s] - step * g[s], step) - x[s]
    return d, float(np.linalg.norm(d))


@np.errstate(over="ignore", invalid="ignore")
def _sample_point(problem, x, eta, k, m, t0, clamps, with_grad_map) -> TraceSample:
    gm = gradient_map(problem, x, eta)[1] if with_grad_map else float("nan")
    return TraceSample(k / m, problem.objective(x), gm, time.perf_counter() - t0, clamps)


def _merge_counts(total: np.ndarray, counts: np.ndarray) -> np.ndarray:
    if counts.size > total.size:
        counts = counts.copy()
        counts[: total.size] += total
        return counts
    total[: counts.size] += counts
    return total


def _rngs(seed):
    block_ss, delay_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(block_ss), np.random.default_rng(delay_ss)


def simulated_delays(delay: DelaySpec, seed, iterations: int, m: int) -> np.ndarray:
    """The delays a simulated run with this seed draws, without running it."""
    block_rng, delay_rng = _rngs(seed)
    out = []
    for start in range(0, iterations, m):
        out.append(sample(delay, delay_rng, size=min(m, iterations - start)))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@np.errstate(over="ignore", invalid="ignore")  # divergence is detected from the trace
def _run_stale(problem, cfg: RunConfig, delay: Optional[DelaySpec], callback) -> RunResult:
    """Single-threaded loop shared by the serial runner (``delay=None``) and the simulator.

    Block indices and delays come from independent streams spawned from the
    run seed, so the block sequence does not depend on the delay model.
    """
    m = problem.m
    K = cfg.epochs * m
    eta = cfg.eta
    te = cfg.trace_every or m
    slices = problem.partition.slices
    x0 = problem.initial_point() if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    x = x0.copy()
    block_rng, delay_rng = _rngs(cfg.seed)

    t0 = time.perf_counter()
    initial = _sample_point(problem, x, eta, 0, m, t0, 0, cfg.trace_grad_map)
    trace = []
    hist = np.zeros(1, dtype=np.int64)
    clamps = 0
    diverged = False

    H = 0
    if delay is not None:
        H = cfg.history or default_history(delay)
        never_delayed = isinstance(delay, Deterministic) and delay.t0 == 0
        buf = None if never_delayed else np.empty((H, x.size))

    k = 0
    while k < K and not diverged:
        blocks = block_rng.integers(m, size=min(m, K - k))
        if delay is not None:
            delays = sample(delay, delay_rng, size=blocks.size)
            hist = _merge_counts(hist, np.bincount(delays))
        else:
            delays = None
        for step_idx in range(blocks.size):
            i = int(blocks[step_idx])
            j = 0
            if delays is not None:
                j = int(delays[step_idx])
                if buf is not None:
                    buf[k % H] = x
            if j == 0:
                xhat = x
            elif j >= k:
                # reads at or before the start see x^0
                xhat = x0
            elif j >= H:
                xhat = buf[(k - H + 1) % H]
                clamps += 1
            else:
                xhat = buf[(k - j) % H]
            s = slices[i]
            g = problem.partial_grad(i, xhat)
            step = problem.block_step(i, xhat, eta)
            x[s] = problem.prox_block(i, x[s] - step * g, step)
            k += 1
            if callback is not None:
                callback(k, i, j, x)
            if k % te == 0:
                smp = _sample_point(problem, x, eta, k, m, t0, clamps, cfg.trace_grad_map)
                trace.append(smp)
                if not math.isfinite(smp.objective):
                    diverged = True
                    break

    if delay is None:
        hist = np.array([k], dtype=np.int64)
    wall = time.perf_counter() - t0
    if delay is not None and k and clamps / k > CLAMP_WARN_RATE:
        warnings.warn(
            f"{clamps} of {k} reads ({clamps / k:.1%}) fell outside the history of {H} iterates; "
            "increase history",
            RuntimeWarning,
            stacklevel=3,
        )
    return RunResult(x, trace, hist, k, wall, initial, clamps, diverged, eta)


def run_serial(problem, config: RunConfig, callback: Optional[Callable] = None) -> RunResult:
    """Randomised serial block-coordinate update (every delay is zero)."""
    return _run_stale(problem, config, None, callback)


def run_simulated(problem, config: RunConfig, callback: Optional[Callable] = None) -> RunResult:
    """Single-threaded run where step ``k`` reads ``x^{max(0, k - j_k)}`` with ``j_k`` drawn from ``config.delay``.

    The last ``history`` iterates are kept in a ring buffer; an older read
    uses the oldest retained iterate and is counted as a clamp event.
    """
    if config.delay is None:
        raise ValueError("simulated run needs config.delay")
    return _run_stale(problem, config, config.delay, callback)


def run_async(problem, config: RunConfig) -> RunResult:
    """Run ``config.threads`` workers on a shared iterate.

    Each worker reads the iterate (a seqlock-protected snapshot, or a
    relaxed copy), computes the block gradient, re-reads its block, writes
    the prox-linear update and bumps the global counter. The delay of an
    update is the counter value at its write minus the value at its read.

    With ``read_pause`` set the worker sleeps briefly between its read and
    its write, which hands the interpreter lock to another worker. This
    stands in for the gradient computation overlapping the other workers'
    updates; without it most updates finish inside one scheduling slice and
    nearly every delay is zero. In consistent mode exactly ``epochs * m`` updates are
    written; in relaxed mode up to ``threads - 1`` extra updates may land.
    """
    m = problem.m
    K = config.epochs * m
    eta = config.eta
    te = config.trace_every or m
    threads = config.threads
    grad_mode = config.grad_mode or "cached_residual"
    cached = grad_mode == "cached_residual"
    consistent = config.read_mode == "consistent_snapshot"
    slices = problem.partition.slices

    x0 = problem.initial_point() if config.x0 is None else np.array(config.x0, dtype=float)
    shared = SharedIterate(x0, problem.init_cache(x0) if cached else None)
    seeds = np.random.SeedSequence(config.seed).spawn(threads)
    hists = [[] for _ in range(threads)]
    snaps = [[] for _ in range(threads)]
    errors = []
    stop = threading.Event()
    t0 = time.perf_counter()
    initial = _sample_point(problem, x0, eta, 0, m, t0, 0, config.trace_grad_map)

    @np.errstate(over="ignore", invalid="ignore")
    def worker(w):
        rng = np.random.default_rng(seeds[w])
        delays, local_snaps = hists[w], snaps[w]
        try:
            while not stop.is_set() and shared.counter.value < K:
                i = int(rng.integers(m))
                s = slices[i]
                if consistent:
                    k_read, xhat, chat = shared.snapshot(cached)
                else:
                    k_read, xhat, chat = shared.relaxed_read(cached)
                if cached:
                    g = problem.grad_from_cache(i, chat, xhat)
                else:
                    g = problem.partial_grad(i, xhat)
                step = problem.block_step(i, xhat, eta)
                if config.read_pause is not None:
                    time.sleep(config.read_pause)
                if consistent:
                    with shared.seqlock.write():
                        if shared.counter.value >= K:
                            break
                        cur = shared.x[s].copy()
                        new = problem.prox_block(i, cur - step * g, step)
                        shared.x[s] = new
                        if cached:
                            problem.update_cache(shared.cache, i, new - cur, shared.x)
                        k_write = shared.counter.fetch_add(1)
                        if (k_write + 1) % te == 0:
                            local_snaps.append((k_write + 1, time.perf_counter(), shared.x.copy()))
                else:
                    cur = shared.x[s].copy()
                    new = problem.prox_block(i, cur - step * g, step)
                    shared.x[s] = new
                    if cached:
                        with shared.cache_lock:
                            problem.update_cache(shared.cache, i, new - cur, shared.x)
                    k_write = shared.counter.fetch_add(1)
                    if (k_write + 1) % te == 0:
                        local_snaps.append((k_write + 1, time.perf_counter(), shared.x.copy()))
                delays.append(k_write - k_read)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)
            stop.set()

    old_interval = sys.getswitchinterval()
    if config.switch_interval is not None:
        sys.setswitchinterval(config.switch_interval)
    try:
        pool = [threading.Thread(target=worker, args=(w,), name=f"bcu-worker-{w}") for w in range(threads)]
        started = []
        try:
            for th in pool:
                th.start()
                started.append(th)
        except RuntimeError as exc:
            stop.set()
            for th in started:
                th.join()
            raise RuntimeError(f"could not start {threads} workers") from exc
        for th in pool:
            th.join()
    finally:
        sys.setswitchinterval(old_interval)
    wall = time.perf_counter() - t0
    if errors:
        raise RuntimeError("worker failed; partial results discarded") from errors[0]

    with np.errstate(over="ignore", invalid="ignore"):
        trace, diverged = _async_trace(problem, snaps, eta, m, t0, config.trace_grad_map)
    all_delays = np.concatenate([np.asarray(h, dtype=np.int64) for h in hists])
    hist = np.bincount(all_delays) if all_delays.size else np.zeros(1, dtype=np.int64)
    res = RunResult(
        shared.x.copy(), trace, hist, shared.counter.value, wall, initial, 0, diverged, eta,
        shared.seqlock.retries,
    )
    res.extra["per_worker_updates"] = [len(h) for h in hists]
    return res


def _async_trace(problem, snaps, eta, m, t0, with_grad_map):
    trace, diverged = [], False
    for k, t, xs in sorted((s for ss in snaps for s in ss), key=lambda s: s[0]):
        gm = gradient_map(problem, xs, eta)[1] if with_grad_map else float("nan")
        smp = TraceSample(k / m, problem.objective(xs), gm, t - t0, 0)
        trace.append(smp)
        diverged = diverged or not math.isfinite(smp.objective)
    return trace, diverged


def run(problem, config: RunConfig, callback: Optional[Callable] = None) -> RunResult:
    if config.mode == "serial":
        return run_serial(problem, config, callback)
    if config.mode == "simulated":
        return run_simulated(problem, config, callback)
    return run_async(problem, config)
