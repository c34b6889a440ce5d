import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwhi import hyperopt as ho

LINE = ho.SearchSpace({"x": (-3.0, 7.0, False)})


def quadratic(opt):
    return lambda p: -(p["x"] - opt) ** 2


class TestEi:
    def test_at_incumbent_without_noise(self):
        assert ho.ei(1.0, 0.0, 1.0) == 0.0

    def test_deterministic_improvement(self):
        assert ho.ei(2.0, 0.0, 1.0) == 1.0

    def test_standard_normal(self):
        assert ho.ei(0.0, 1.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)

    @given(st.floats(-10, 10), st.floats(0.0, 5.0), st.floats(-10, 10), st.floats(0.0, 3.0))
    def test_non_negative_and_monotone(self, mean, std, inc, step):
        a, b = ho.ei(mean, std, inc), ho.ei(mean + step, std, inc)
        assert a >= 0.0
        assert b >= a - 1e-12


class TestGp:
    def test_interpolates_training_points(self, rng):
        x = rng.uniform(size=(8, 2))
        y = np.sin(3 * x[:, 0]) + x[:, 1] ** 2
        gp = ho.GpSurrogate(noise=1e-10).fit(x, y)
        mean, std = gp.predict(x)
        np.testing.assert_allclose(mean, y, atol=1e-4)
        assert np.all(std < 1e-2)

    def test_uncertainty_grows_away_from_data(self):
        x = np.array([[0.0], [0.1], [0.2]])
        gp = ho.GpSurrogate().fit(x, np.array([0.0, 0.5, 0.3]))
        assert gp.predict([[0.95]])[1][0] > gp.predict([[0.1]])[1][0]


class TestSpace:
    @given(st.lists(st.floats(-0.5, 1.5), min_size=3, max_size=3))
    def test_from_unit_respects_bounds(self, u):
        space = ho.SearchSpace({"a": (1, 4, True), "b": (0.0, 1e-2, False), "c": (16, 128, True)})
        p = space.from_unit(np.array(u))
        assert space.contains(p)
        assert isinstance(p["a"], int) and isinstance(p["c"], int)

    def test_unit_round_trip(self):
        space = ho.SearchSpace({"a": (2.0, 4.0, False)})
        assert space.from_unit(space.to_unit({"a": 3.5}))["a"] == pytest.approx(3.5)


class TestOptimize:
    def test_design_only(self):
        res = ho.optimize(LINE, quadratic(1.0), n_init=6, n_iter=0, seed=2)
        assert len(res.trace) == 6
        assert res.best_score == max(s for _, s in res.trace)

    def test_same_seed_same_trace(self):
        a = ho.optimize(LINE, quadratic(4.0), n_init=4, n_iter=4, seed=9)
        b = ho.optimize(LINE, quadratic(4.0), n_init=4, n_iter=4, seed=9)
        assert a.trace == b.trace

    def test_finds_quadratic_optimum(self):
        res = ho.optimize(LINE, quadratic(2.2), n_init=5, n_iter=15, seed=0)
        assert abs(res.best_params["x"] - 2.2) <= 0.05 * 10

    def test_proposals_in_bounds_with_integers(self):
        space = ho.SearchSpace({"n": (16, 128, True), "lr": (1e-4, 1e-2, False)})
        res = ho.optimize(space, lambda p: -abs(p["n"] - 60) - 1e3 * p["lr"], n_init=4, n_iter=5, seed=1)
        for p, _ in res.trace:
            assert space.contains(p) and isinstance(p["n"], int)

    def test_failures_recorded_and_search_continues(self):
        def flaky(p):
            if p["x"] > 5.0:
                raise RuntimeError("diverged")
            return -(p["x"] - 1.0) ** 2

        res = ho.optimize(LINE, flaky, n_init=8, n_iter=6, seed=3)
        assert len(res.trace) == 14
        assert any(s == -np.inf for _, s in res.trace)
        assert np.isfinite(res.best_score)

    def test_nan_counts_as_failure(self):
        res = ho.optimize(LINE, lambda p: float("nan"), n_init=3, n_iter=1, seed=0)
        assert all(s == -np.inf for _, s in res.trace)

    def test_small_design_rejected(self):
        with pytest.raises(ValueError):
            ho.optimize(LINE, quadratic(0.0), n_init=1)

    def test_trace_resume(self, tmp_path):
        path = tmp_path / "trace.csv"
        full = ho.optimize(LINE, quadratic(3.0), n_init=4, n_iter=4, seed=5)
        ho.optimize(LINE, quadratic(3.0), n_init=4, n_iter=2, seed=5, trace_path=path)
        assert path.read_text().splitlines()[0] == "iteration,x,f_all"
        calls = []

        def counted(p):
            calls.append(p)
            return quadratic(3.0)(p)

        resumed = ho.optimize(LINE, counted, n_init=4, n_iter=4, seed=5, trace_path=path)
        assert len(calls) == 2
        assert resumed.trace == full.trace
