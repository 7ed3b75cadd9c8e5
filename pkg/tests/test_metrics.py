import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asyncbcu.delay_model import Poisson, sample
from asyncbcu.metrics import (
    RateUndefinedError,
    TraceSample,
    check_sublinear,
    delay_report,
    estimate_B,
    fit_linear_rate,
    linear_rate_report,
    nonsmooth_envelope,
    phi,
    read_histogram_csv,
    read_trace_csv,
    reference_solution,
    write_histogram_csv,
    write_trace_csv,
)
from asyncbcu.problems import BlockPartition, QuadraticToy, lasso_generate, quadratic_toy


class TestPhi:
    def test_zero_at_minimiser(self):
        q = quadratic_toy(6, 1.0, 3.0, seed=0)
        assert phi(q, q.x_star, 0.3, q.x_star) == 0.0

    def test_hand_value(self):
        q = QuadraticToy([1.0, 2.0], [1.0, 2.0], BlockPartition.even(2, 2))
        assert phi(q, np.zeros(2), 0.5, q.x_star) == pytest.approx(3.5)

    @given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(1e-3, 2))
    def test_nonnegative(self, x, eta):
        q = quadratic_toy(6, 1.0, 3.0, seed=0)
        assert phi(q, np.array(x), eta, q.x_star) >= 0


class TestLinearRate:
    def test_geometric(self):
        assert fit_linear_rate(0.5 ** np.arange(30)) == pytest.approx(0.5, abs=1e-12)

    def test_constant(self):
        assert fit_linear_rate(np.full(12, 3.0)) == pytest.approx(1.0, abs=1e-14)

    def test_noisy(self):
        rng = np.random.default_rng(0)
        v = 0.995 ** np.arange(1000) * (1 + 0.01 * rng.standard_normal(1000))
        assert 0.994 <= fit_linear_rate(v) <= 0.996

    def test_iteration_axis(self):
        k = np.arange(0, 200, 10)
        assert fit_linear_rate(0.99**k, k) == pytest.approx(0.99, abs=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            fit_linear_rate([1.0] * 9)

    def test_floor_reported(self):
        with pytest.raises(RateUndefinedError):
            fit_linear_rate([1.0] * 10 + [0.0])

    def test_report(self):
        rep = linear_rate_report(0.9 ** np.arange(20), np.arange(20), 0.95)
        assert rep.empirical_linear_factor == pytest.approx(0.9) and rep.theoretical_factor == 0.95


class TestSublinear:
    k = np.arange(0, 1000, 10)

    def test_on_envelope(self):
        env = nonsmooth_envelope(self.k, 100, 0.1, 2.0)
        assert check_sublinear(env, env, self.k, 100) == 0

    def test_double_envelope(self):
        env = nonsmooth_envelope(self.k, 100, 0.1, 2.0)
        assert check_sublinear(2 * env, env, self.k, 100) == np.count_nonzero(self.k >= 100)

    def test_extra_slack(self):
        env = nonsmooth_envelope(self.k, 100, 0.1, 2.0)
        assert check_sublinear(env + 0.5, env, self.k, 100, extra=0.6) == 0

    def test_envelope_formula(self):
        assert nonsmooth_envelope(0, 100, 0.5, 10.0) == pytest.approx(10.0)

    def test_estimate_B(self):
        assert estimate_B([0.5, 3.0, 1.0]) == 3.0


class TestDelayReport:
    def test_single_thread(self):
        rep = delay_report([500], 1)
        assert rep.normalized.tolist() == [1.0] and rep.kl_vs_model == 0.0 and rep.p_hat == 0.0

    def test_poisson_nine(self):
        d = sample(Poisson(9), np.random.default_rng(1), size=10**5)
        rep = delay_report(np.bincount(d), 10)
        assert rep.kl_vs_model < 0.01 and rep.note == ""

    def test_deviation_noted(self):
        d = sample(Poisson(30), np.random.default_rng(1), size=10**4)
        rep = delay_report(np.bincount(d), 20)
        assert "deviates" in rep.note

    def test_errors(self):
        with pytest.raises(ValueError):
            delay_report([0, 0], 2)
        with pytest.raises(ValueError):
            delay_report([1], 0)


floats17 = st.floats(allow_nan=False, allow_infinity=True, width=64)


class TestCsv:
    @given(st.lists(st.tuples(st.floats(0, 1e6), floats17, floats17, st.floats(0, 1e4), st.integers(0, 10**9)),
                    max_size=20))
    def test_trace_roundtrip(self, rows):
        trace = [TraceSample(*r) for r in rows]
        buf = io.StringIO()
        write_trace_csv(buf, trace)
        buf.seek(0)
        assert read_trace_csv(buf) == trace

    def test_nan_roundtrip(self, tmp_path):
        trace = [TraceSample(1.0, float("nan"), float("inf"), 0.25, 3)]
        write_trace_csv(tmp_path / "t.csv", trace)
        back = read_trace_csv(tmp_path / "t.csv")[0]
        assert math.isnan(back.objective) and back.grad_map_norm == math.inf and back.clamp_events == 3

    def test_header(self, tmp_path):
        write_trace_csv(tmp_path / "t.csv", [])
        assert (tmp_path / "t.csv").read_text().strip() == "epoch,objective,grad_map_norm,elapsed_seconds,clamp_events"

    @given(st.lists(st.integers(0, 10**12), min_size=1, max_size=50))
    def test_histogram_roundtrip(self, counts):
        import tempfile, os

        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "h.csv")
            write_histogram_csv(path, counts)
            assert read_histogram_csv(path).tolist() == counts


def test_reference_solution_quadratic():
    q = quadratic_toy(20, 1.0, 4.0, seed=3, m=5)
    x, F, nrm = reference_solution(q, 0.2, 400)
    assert nrm < 1e-10
    assert np.allclose(x, q.x_star, atol=1e-9)
    assert F == pytest.approx(q.f_star, abs=1e-12)


def test_reference_solution_lasso_gap():
    inst = lasso_generate(40, 20, seed=1, m=10)
    eta = 1 / inst.constants().L_c
    x, F, nrm = reference_solution(inst, eta, 2000)
    assert nrm < 1e-10
    assert inst.duality_gap(x) < 1e-7
