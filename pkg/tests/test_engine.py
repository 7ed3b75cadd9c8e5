import sys
import threading
import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncbcu.delay_model import Deterministic, Empirical, Poisson, fit_poisson
from asyncbcu.engine import (
    AtomicCounter,
    RunConfig,
    SeqLock,
    SharedIterate,
    gradient_map,
    run,
    run_async,
    run_serial,
    run_simulated,
    simulated_delays,
)
from asyncbcu.problems import lasso_generate, nmf_generate, quadratic_toy
from asyncbcu.stepsize_policy import eta_nonsmooth_nonconvex


def traces_equal(a, b):
    ka = [(s.epoch, s.objective, s.grad_map_norm, s.clamp_events) for s in a.trace]
    kb = [(s.epoch, s.objective, s.grad_map_norm, s.clamp_events) for s in b.trace]
    return ka == kb


@pytest.fixture(scope="module")
def quad():
    return quadratic_toy(40, 1.0, 10.0, seed=1, m=10)


@pytest.fixture(scope="module")
def lasso():
    return lasso_generate(30, 60, seed=2, m=12)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(mode="parallel")
        with pytest.raises(ValueError):
            RunConfig(mode="simulated")
        with pytest.raises(ValueError):
            RunConfig(stepsize=0.0)
        with pytest.raises(ValueError):
            RunConfig(mode="simulated", delay=Poisson(1), history=0)
        with pytest.raises(ValueError):
            RunConfig(threads=0)
        with pytest.raises(ValueError):
            RunConfig(read_mode="torn")

    def test_dispatch(self, quad):
        r = run(quad, RunConfig(mode="serial", epochs=1, stepsize=0.05))
        assert r.iterations == quad.m


class TestSerial:
    def test_zero_epochs(self, quad):
        r = run_serial(quad, RunConfig(epochs=0, stepsize=0.1))
        assert np.array_equal(r.x, quad.initial_point()) and r.iterations == 0 and r.trace == []

    def test_deterministic(self, lasso):
        cfg = RunConfig(epochs=4, stepsize=1e-2, seed=3)
        a, b = run_serial(lasso, cfg), run_serial(lasso, cfg)
        assert np.array_equal(a.x, b.x) and traces_equal(a, b)

    def test_monotone_decrease(self, quad):
        eta = 0.99 / quad.constants().L_c
        r = run_serial(quad, RunConfig(epochs=50, stepsize=eta, seed=0))
        f = [r.initial.objective] + [s.objective for s in r.trace]
        assert np.all(np.diff(f) <= 0)
        assert f[-1] - quad.f_star < 1e-6 * (f[0] - quad.f_star)

    def test_trace_cadence(self, quad):
        r = run_serial(quad, RunConfig(epochs=3, stepsize=0.05, trace_every=5))
        assert len(r.trace) == 3 * quad.m // 5
        assert [s.epoch for s in r.trace] == pytest.approx([k * 5 / quad.m for k in range(1, 7)])

    def test_histogram_counts_iterations(self, quad):
        r = run_serial(quad, RunConfig(epochs=2, stepsize=0.05))
        assert r.delay_histogram.tolist() == [2 * quad.m]

    def test_block_locality(self, lasso):
        prev = [lasso.initial_point()]
        parts = lasso.partition

        def cb(k, i, j, x):
            changed = np.flatnonzero(x != prev[0])
            s = parts[i]
            assert np.all((changed >= s.start) & (changed < s.stop))
            prev[0] = x.copy()

        run_serial(lasso, RunConfig(epochs=3, stepsize=1e-2, seed=5), callback=cb)
        prev[0] = lasso.initial_point()
        run_simulated(lasso, RunConfig(mode="simulated", epochs=3, stepsize=1e-2, seed=5, delay=Poisson(3)),
                      callback=cb)

    def test_divergence_stops(self, lasso):
        eta = 10.0 / lasso.constants().L_c
        r = run_serial(lasso, RunConfig(epochs=400, stepsize=eta, trace_grad_map=False))
        assert r.diverged and r.iterations < 400 * lasso.m
        assert not np.isfinite(r.trace[-1].objective)


class TestSimulated:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_zero_delay_collapse(self, seed, lasso, quad):
        for p in (lasso, quad, nmf_generate(12, 10, 3, seed=seed)[0]):
            base = dict(epochs=3, stepsize=0.02, seed=seed)
            a = run_serial(p, RunConfig(**base))
            b = run_simulated(p, RunConfig(mode="simulated", delay=Deterministic(0), **base))
            assert np.array_equal(a.x, b.x) and traces_equal(a, b)

    def test_read_at_start_is_x0(self, quad):
        # with delay 2 every one of the first two steps reads x^0
        eta = 0.05
        seen, snap = [], []
        r = run_simulated(quad, RunConfig(mode="simulated", epochs=1, stepsize=eta, seed=4, delay=Deterministic(2)),
                          callback=lambda k, i, j, x: seen.append((i, j)))
        assert [j for _, j in seen] == [2] * quad.m
        assert r.clamp_events == 0
        x0 = quad.initial_point()
        y = x0.copy()
        for i, _ in seen[:2]:
            s = quad.partition[i]
            y[s] = y[s] - eta * quad.partial_grad(i, x0)
        two = run_simulated(quad, RunConfig(mode="simulated", epochs=1, stepsize=eta, seed=4, delay=Deterministic(2)),
                            callback=lambda k, i, j, x: k == 2 and snap.append(x.copy()))
        assert np.array_equal(snap[0], y)
        assert two.iterations == quad.m

    def test_matches_hand_replay(self, quad):
        """The simulator equals a direct implementation with the full iterate history."""
        eta, delay = 0.05, Empirical((0.3, 0.2, 0.2, 0.3))
        cfg = RunConfig(mode="simulated", epochs=4, stepsize=eta, seed=8, delay=delay, history=4)
        steps = []
        r = run_simulated(quad, cfg, callback=lambda k, i, j, x: steps.append((i, j)))
        hist = [quad.initial_point()]
        for k, (i, j) in enumerate(steps):
            xhat = hist[max(0, k - j)]
            x = hist[-1].copy()
            s = quad.partition[i]
            x[s] = x[s] - eta * quad.partial_grad(i, xhat)
            hist.append(x)
        assert np.array_equal(hist[-1], r.x)

    def test_clamp_warning(self, quad):
        cfg = RunConfig(mode="simulated", epochs=20, stepsize=0.01, seed=0, delay=Poisson(6), history=2)
        with pytest.warns(RuntimeWarning, match="history"):
            r = run_simulated(quad, cfg)
        assert r.clamp_events > 0.01 * r.iterations

    def test_no_warning_with_default_history(self, quad):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            r = run_simulated(quad, RunConfig(mode="simulated", epochs=20, stepsize=0.01, seed=0, delay=Poisson(6)))
        assert r.clamp_events == 0

    def test_histogram_matches_delay_stream(self, quad):
        r = run_simulated(quad, RunConfig(mode="simulated", epochs=7, stepsize=0.01, seed=5, delay=Poisson(3)))
        d = simulated_delays(Poisson(3), 5, r.iterations, quad.m)
        assert np.array_equal(np.bincount(d), r.delay_histogram)
        assert r.delay_histogram.sum() == r.iterations

    def test_poisson_fit(self):
        q = quadratic_toy(100, 1.0, 2.0, seed=0, m=100)
        r = run_simulated(q, RunConfig(mode="simulated", epochs=1000, stepsize=0.1, seed=1, delay=Poisson(4),
                                       history=64, trace_every=10**5, trace_grad_map=False))
        assert r.iterations == 10**5
        p_hat, kl = fit_poisson(r.delay_histogram)
        assert 3.9 <= p_hat <= 4.1 and kl < 0.01

    def test_block_stream_independent_of_delay(self, quad):
        a, b = [], []
        run_simulated(quad, RunConfig(mode="simulated", epochs=2, stepsize=0.01, seed=9, delay=Poisson(1)),
                      callback=lambda k, i, j, x: a.append(i))
        run_simulated(quad, RunConfig(mode="simulated", epochs=2, stepsize=0.01, seed=9, delay=Poisson(7)),
                      callback=lambda k, i, j, x: b.append(i))
        assert a == b


class TestAsync:
    def test_single_thread(self, lasso):
        eta = 0.5 / lasso.constants().L_c
        r = run_async(lasso, RunConfig(mode="async", epochs=20, stepsize=eta, threads=1, seed=0))
        assert r.delay_histogram.tolist() == [20 * lasso.m]
        s = run_serial(lasso, RunConfig(epochs=20, stepsize=eta, seed=0))
        assert r.trace[-1].objective == pytest.approx(s.trace[-1].objective, rel=0.05)

    @pytest.mark.parametrize("read_mode", ["consistent_snapshot", "relaxed"])
    @pytest.mark.parametrize("grad_mode", ["recompute", "cached_residual"])
    def test_counter_conservation(self, lasso, read_mode, grad_mode):
        eta = 0.5 / lasso.constants().L_c
        cfg = RunConfig(mode="async", epochs=10, stepsize=eta, threads=4, seed=1, read_mode=read_mode,
                        grad_mode=grad_mode)
        r = run_async(lasso, cfg)
        assert r.delay_histogram.sum() == r.iterations == sum(r.extra["per_worker_updates"])
        assert 10 * lasso.m <= r.iterations <= 10 * lasso.m + 3
        if read_mode == "consistent_snapshot":
            assert r.iterations == 10 * lasso.m
        assert r.trace[-1].objective < r.initial.objective

    def test_nmf_async_keeps_invariants(self):
        inst = nmf_generate(20, 15, 3, seed=0)[0]
        r = run_async(inst, RunConfig(mode="async", epochs=10, stepsize=0.9, threads=3, seed=2))
        X, Y = inst.unpack(r.x)
        assert np.all(X >= 0) and np.all(Y >= 0)
        nrm = np.linalg.norm(X, axis=0)
        assert np.all((np.abs(nrm - 1) < 1e-12) | (nrm == 0))

    def test_switch_interval_restored(self, quad):
        before = sys.getswitchinterval()
        run_async(quad, RunConfig(mode="async", epochs=1, stepsize=0.01, threads=2))
        assert sys.getswitchinterval() == before

    def test_worker_error_surfaces(self, quad):
        class Broken(type(quad)):
            def partial_grad(self, i, x):
                raise FloatingPointError("boom")

        b = Broken(quad.q, quad.c, quad.partition)
        with pytest.raises(RuntimeError, match="worker failed"):
            run_async(b, RunConfig(mode="async", epochs=1, stepsize=0.01, threads=2, grad_mode="recompute"))

    def test_delays_spread_with_threads(self, lasso):
        r = run_async(lasso, RunConfig(mode="async", epochs=20, stepsize=1e-3, threads=3, seed=0))
        assert r.delay_histogram.size > 1


class TestPrimitives:
    def test_counter_fetch_add(self):
        c = AtomicCounter()

        def bump():
            for _ in range(2000):
                c.fetch_add()

        ts = [threading.Thread(target=bump) for _ in range(4)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        assert c.value == 8000
        assert c.fetch_add(5) == 8000 and c.value == 8005

    def test_seqlock_snapshots_never_torn(self):
        old = sys.getswitchinterval()
        sys.setswitchinterval(1e-6)
        try:
            shared = SharedIterate(np.zeros(2000))
            stop = threading.Event()
            bad = []

            def writer():
                v = 0.0
                while not stop.is_set():
                    v += 1.0
                    with shared.seqlock.write():
                        shared.x[:1000] = v
                        time.sleep(0)  # invite a reader into the middle of the write
                        shared.x[1000:] = v
                    time.sleep(1e-5)

            def reader():
                for _ in range(200):
                    _, x, _ = shared.snapshot()
                    if x.min() != x.max():
                        bad.append(x)

            w = threading.Thread(target=writer)
            rs = [threading.Thread(target=reader) for _ in range(2)]
            w.start()
            for r in rs:
                r.start()
            for r in rs:
                r.join()
            stop.set()
            w.join()
        finally:
            sys.setswitchinterval(old)
        assert not bad

    def test_seqlock_reader_waits_for_open_write(self):
        shared = SharedIterate(np.zeros(10))
        inside, release = threading.Event(), threading.Event()
        got = []

        def writer():
            with shared.seqlock.write():
                shared.x[:5] = 1.0
                inside.set()
                release.wait()
                shared.x[5:] = 1.0
                shared.counter.fetch_add(1)

        w = threading.Thread(target=writer)
        w.start()
        inside.wait()
        r = threading.Thread(target=lambda: got.append(shared.snapshot()))
        r.start()
        r.join(timeout=0.05)
        assert r.is_alive() and not got  # still retrying on the half-written vector
        release.set()
        r.join()
        w.join()
        k, x, _ = got[0]
        assert k == 1 and np.all(x == 1.0)
        assert shared.seqlock.retries > 0


class TestGradientMap:
    def test_zero_at_minimiser(self, quad):
        assert gradient_map(quad, quad.x_star, 0.1)[1] <= 1e-10

    def test_lasso_zero_optimal(self):
        inst = lasso_generate(10, 20, seed=0, m=5)
        inst.lam = float(np.abs(inst.A.T @ inst.b).max())
        d, nrm = gradient_map(inst, np.zeros(20), 1.0)
        assert nrm == 0.0

    @given(st.floats(1e-3, 10), st.integers(0, 2**31 - 1))
    @settings(max_examples=25)
    def test_no_regulariser_is_gradient_step(self, eta, seed):
        q = quadratic_toy(8, 1.0, 5.0, seed=1, m=4)
        x = np.random.default_rng(seed).standard_normal(8)
        d, nrm = gradient_map(q, x, eta)
        assert np.allclose(d, -eta * q.full_grad(x), rtol=1e-12, atol=1e-12)
        assert np.isfinite(nrm)

    def test_eta_positive(self, quad):
        with pytest.raises(ValueError):
            gradient_map(quad, quad.x_star, 0.0)


def test_nmf_nonconvex_stepsize_descends():
    inst = nmf_generate(30, 30, 3, seed=0)[0]
    eta = eta_nonsmooth_nonconvex(inst.constants(), Poisson(2).p * 3).eta
    r = run_simulated(inst, RunConfig(mode="simulated", epochs=30, stepsize=eta, seed=0, delay=Poisson(2)))
    assert r.trace[-1].objective < r.initial.objective
