import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from gwhi import criteria as cr
from gwhi.datamodel import HICurve


def curve(values, times=None, sid=1):
    values = np.asarray(values, dtype=float)
    times = np.arange(len(values), dtype=float) if times is None else np.asarray(times, dtype=float)
    return HICurve(sid, "t", times, values)


def mo_loops(t, y):
    """Straight double loop over the time-weighted sign ratios."""
    n = len(y)
    ratios = []
    for i in range(n - 1):
        num = sum((t[j] - t[i]) * np.sign(y[j] - y[i]) for j in range(i + 1, n))
        den = sum(t[j] - t[i] for j in range(i + 1, n))
        ratios.append(num / den)
    return abs(sum(ratios) / len(ratios))


# quarter-integers: exactly representable, so ties and orderings survive transforms
finite = st.integers(-400, 400).map(lambda k: k / 4)
curve_values = st.lists(finite, min_size=3, max_size=25)


class TestMonotonicity:
    def test_increasing(self):
        assert cr.monotonicity([curve([0, 1, 2, 3])]) == 1.0

    def test_constant(self):
        assert cr.monotonicity([curve([2, 2, 2])]) == 0.0

    def test_hand_value(self):
        got = cr.monotonicity([curve([0, 1, 0.5, 2], [0, 1, 2, 3])])
        assert abs(got - 7 / 9) <= 1e-12

    def test_decreasing_counts_as_monotone(self):
        assert cr.monotonicity([curve([3, 2, 1])]) == 1.0

    def test_duplicate_time_rejected(self):
        with pytest.raises(ValueError):
            cr._curve_mo([0, 0, 1], [1, 2, 3])

    @given(curve_values, st.integers(0, 2**32 - 1))
    def test_matches_loop_oracle(self, ys, seed):
        t = np.cumsum(np.random.default_rng(seed).uniform(0.1, 5.0, len(ys)))
        assert cr.monotonicity([curve(ys, t)]) == pytest.approx(mo_loops(t, ys), abs=1e-12)

    @given(curve_values)
    def test_invariant_under_increasing_transform(self, ys):
        y = np.array(ys)
        assert cr.monotonicity([curve(np.arctan(y) * 3 + 1)]) == pytest.approx(cr.monotonicity([curve(y)]), abs=1e-12)

    @given(curve_values, st.floats(-1e4, 1e4))
    def test_invariant_under_time_shift(self, ys, c):
        t = np.arange(len(ys), dtype=float) * 7.0
        assert cr.monotonicity([curve(ys, t + c)]) == pytest.approx(cr.monotonicity([curve(ys, t)]), abs=1e-9)


class TestPrognosability:
    def test_identical_ends(self):
        assert cr.prognosability([curve([0, 1]), curve([0.5, 1], sid=2)]) == 1.0

    def test_hand_value(self):
        got = cr.prognosability([curve([0, 1.0]), curve([0, 0.8], sid=2)])
        assert abs(got - math.exp(-0.1 / 0.9)) <= 1e-12

    def test_flat_curves_degenerate(self):
        with pytest.warns(cr.DegenerateCriterionWarning):
            assert cr.prognosability([curve([0, 0]), curve([0, 0], sid=2)]) == 0.0

    def test_sample_std_option(self):
        got = cr.prognosability([curve([0, 1.0]), curve([0, 0.8], sid=2)], ddof=1)
        assert got == pytest.approx(math.exp(-np.std([1.0, 0.8], ddof=1) / 0.9))


class TestTrendability:
    def test_identical(self):
        assert cr.trendability([curve([0, 1, 3]), curve([0, 1, 3], sid=2)]) == pytest.approx(1.0, abs=1e-12)

    def test_affine(self):
        y = np.array([0.0, 1.0, 0.5, 3.0])
        assert cr.trendability([curve(y), curve(2 * y + 3, sid=2)]) == pytest.approx(1.0, abs=1e-12)

    def test_anti(self):
        assert cr.trendability([curve([0, 1, 2]), curve([2, 1, 0], sid=2)]) == pytest.approx(-1.0, abs=1e-12)

    def test_unequal_lengths_are_resampled(self):
        a = curve(np.linspace(0, 1, 5))
        b = curve(np.linspace(0, 2, 9), sid=2)
        assert cr.trendability([a, b]) == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(st.lists(finite, min_size=6, max_size=6), min_size=2, max_size=5), st.randoms())
    def test_order_invariant(self, rows, rnd):
        assume(all(np.ptp(r) > 1e-6 for r in rows))
        cs = [curve(r, sid=i) for i, r in enumerate(rows)]
        perm = cs[:]
        rnd.shuffle(perm)
        assert cr.trendability(perm) == pytest.approx(cr.trendability(cs), abs=1e-12)


@pytest.mark.filterwarnings("ignore::gwhi.criteria.DegenerateCriterionWarning")
@given(st.lists(st.lists(finite, min_size=5, max_size=5), min_size=2, max_size=4),
       st.floats(0.1, 10), st.floats(-10, 10))
def test_pr_tr_affine_invariance(rows, a, b):
    assume(all(np.ptp(r) > 1e-3 for r in rows))
    cs = [curve(r, sid=i) for i, r in enumerate(rows)]
    ts = [c.with_values(a * c.values + b) for c in cs]
    assert cr.prognosability(ts) == pytest.approx(cr.prognosability(cs), rel=1e-9, abs=1e-12)
    assert cr.trendability(ts) == pytest.approx(cr.trendability(cs), abs=1e-9)


class TestTestCriteria:
    def test_pr_test_equal_mean(self):
        trains = [curve([0, 1.0], sid=1), curve([0, 0.6], sid=2)]
        assert cr.pr_test(curve([0, 0.8], sid=3), trains) == 1.0

    def test_mo_test_increasing(self):
        assert cr.mo_test(curve([0, 0.2, 0.9])) == 1.0

    def test_pr_test_hand_value(self):
        trains = [curve([0, 1.0], sid=1), curve([0, 1.0], sid=2)]
        test = curve([-0.3, 0.7], sid=3)
        assert abs(cr.pr_test(test, trains) - math.exp(-0.3)) <= 1e-12


class TestFitness:
    def test_perfect(self):
        rep = cr.evaluate([curve([0, 1, 2]), curve([0.5, 1.25, 2], sid=2)])
        assert rep.f_all == pytest.approx(3.0) and rep.percent_of_3 == pytest.approx(100.0)

    def test_published_row(self):
        assert cr.fitness_score(0.94, 0.91, 0.60) == pytest.approx(2.45, abs=1e-12)

    def test_weights(self):
        assert cr.fitness_score(1.0, 1.0, 0.3, k_tr=0.0) == 2.0

    @given(st.lists(st.lists(finite, min_size=5, max_size=5), min_size=3, max_size=4))
    def test_f_test_for_duplicate_training_curve(self, rows):
        assume(all(np.ptp(r) > 1e-3 for r in rows))
        cs = [curve(r, sid=i) for i, r in enumerate(rows)]
        dup = cs[0].with_values(cs[0].values)
        dup = HICurve(99, "t", dup.times, dup.values)
        rep = cr.evaluate(cs + [dup], test_id=99)
        alone = cr.evaluate([cs[0]] + cs[1:])
        assert rep.mo_test == pytest.approx(cr.monotonicity([cs[0]]), abs=1e-12)
        assert rep.tr == pytest.approx(min(alone.tr, 1.0), abs=1e-9)

    def test_report_and_aggregate(self):
        cs = [curve([0, 1, 2], sid=1), curve([0, 2, 3], sid=2), curve([0, 0.5, 2.5], sid=3)]
        reps = [cr.evaluate(cs, 1), cr.evaluate([c.with_values(c.values * 2) for c in cs], 1)]
        agg = cr.aggregate(reps)
        assert agg.n_seeds == 2
        assert agg.seed_std["tr"] == pytest.approx(0.0, abs=1e-12)
        text = agg.dumps({"fold": 1})
        assert "fold: 1" in text and "f_all_seed_std" in text

    def test_missing_test_specimen(self):
        with pytest.raises(ValueError):
            cr.evaluate([curve([0, 1]), curve([0, 2], sid=2)], test_id=7)


def test_all_pairs_used_for_trendability():
    ys = [[0, 1, 2, 3], [0, 1, 2, 4], [3, 2, 1, 0]]
    cs = [curve(y, sid=i) for i, y in enumerate(ys)]
    expect = min(np.corrcoef(a, b)[0, 1] for a, b in itertools.combinations(ys, 2))
    assert cr.trendability(cs) == pytest.approx(expect, abs=1e-12)
