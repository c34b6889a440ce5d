import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gwhi import features as ft

NAMES = ft.TIME_FEATURE_NAMES
T = {name: i for i, name in enumerate(NAMES)}


class TestTimeFeatures:
    def test_one_two_three(self):
        f = ft.time_features([1.0, 2.0, 3.0])
        assert f[T["mean"]] == 2.0
        assert f[T["std"]] == 1.0
        assert f[T["max_min_diff"]] == 2.0
        assert f[T["median"]] == 2.0

    def test_peak_and_rms(self):
        f = ft.time_features([3.0, -4.0])
        assert f[T["peak"]] == 4.0
        assert f[T["rms"]] == pytest.approx(np.sqrt(12.5), abs=1e-12)

    def test_constant_is_degenerate(self):
        f, flags = ft.time_features([5.0, 5.0, 5.0], return_flags=True)
        assert f[T["std"]] == 0.0
        for name in ("skewness", "kurtosis", "fm4"):
            assert f[T[name]] == 0.0 and flags[T[name]]

    def test_zero_signal(self):
        f, flags = ft.time_features(np.zeros(16), return_flags=True)
        assert np.all(f == 0.0) and flags.any()

    def test_median_is_order_statistic(self):
        assert ft.time_features([0.0, 0.0, 10.0, 1.0])[T["median"]] == 0.5

    @given(st.floats(0.01, 100), st.integers(0, 2**32 - 1))
    def test_scale_behaviour(self, c, seed):
        x = np.random.default_rng(seed).standard_normal(200)
        a, b = ft.time_features(x), ft.time_features(c * x)
        assert b[T["rms"]] == pytest.approx(c * a[T["rms"]], rel=1e-9)
        assert b[T["crest_factor"]] == pytest.approx(a[T["crest_factor"]], rel=1e-9)
        assert b[T["fm4"]] == pytest.approx(a[T["fm4"]], rel=1e-9)

    def test_batched_rows_match_single_rows(self, rng):
        x = rng.standard_normal((3, 50))
        np.testing.assert_array_equal(ft.time_features(x)[1], ft.time_features(x[1]))


class TestFreqFeatures:
    def test_point_mass(self):
        s = np.zeros(20)
        s[10] = 2.0
        f = ft.freq_features(s, np.arange(20.0))
        assert f[4] == 10.0 and f[5] == 0.0

    def test_flat_spectrum_centroid(self):
        assert ft.freq_features(np.ones(4), np.arange(4.0))[4] == 1.5

    def test_constant_magnitude_variance(self):
        assert ft.freq_features(np.full(8, 3.0), np.arange(8.0))[1] == 0.0

    def test_zero_spectrum_flags(self):
        f, flags = ft.freq_features(np.zeros(8), np.arange(8.0), return_flags=True)
        assert np.all(np.isfinite(f)) and flags[4]

    def test_negative_magnitude_rejected(self):
        with pytest.raises(ValueError):
            ft.freq_features(np.array([1.0, -1.0]), np.arange(2.0))


class TestDerivedMethods:
    def test_ht_of_cosine(self):
        n = 2000
        x = np.cos(2 * np.pi * 40 * np.arange(n) / n)
        f = ft.ht_features(x)
        assert f[T["mean"]] == pytest.approx(1.0, abs=1e-6)
        assert f[T["std"]] == pytest.approx(0.0, abs=1e-6)

    def test_emd_of_tone_matches_time_features(self):
        t = np.arange(2000) / 2000
        x = np.sin(2 * np.pi * 5 * t)
        a, b = ft.emd_features(x), ft.time_features(x)
        scale = np.maximum(np.abs(b), 0.02 * np.abs(b).max())
        assert np.all(np.abs(a - b) <= 0.02 * scale)

    def test_zero_signal_emd(self):
        f, flags = ft.emd_features(np.zeros(64), return_flags=True)
        assert np.all(f == 0.0) and flags.all()

    def test_tf_uniform_window(self):
        assert ft.tf_features(np.ones((1, 4))).tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_tf_two_bin_window(self):
        out = ft.tf_features(np.array([[0.0, 2.0]]))
        assert out[0] == 1.0 and out[1] == pytest.approx(np.sqrt(2.0))


class TestRegistry:
    def test_default_layout(self):
        assert ft.stft_window_count(2000) == 15
        reg = ft.FeatureRegistry(15)
        stft = reg.ids("stft")
        assert stft.min() == 72 and stft.max() == 131 and stft.size == 60
        assert 132 not in reg.ids()

    def test_completeness(self):
        reg = ft.FeatureRegistry(17)
        ids = reg.ids()
        assert len(set(ids.tolist())) == ids.size == 19 + 14 + 19 + 19 + 68
        assert ids.max() == 139
        assert [reg.method_of(i) for i in (1, 20, 34, 53, 72)] == list(ft.METHODS)

    def test_extracted_ids_follow_registry(self, rng):
        m = rng.standard_normal((2, 2000))
        ids, vals, _ = ft.extract_measurement(m, 2e6, ft.ExtractionOptions(methods=("raw", "fft", "stft")))
        np.testing.assert_array_equal(ids, ft.FeatureRegistry(15).ids()[np.isin(ft.FeatureRegistry(15).ids(), ids)])
        assert vals.shape == (2, 19 + 14 + 60)


class _FakeDataset:
    """Two-specimen dataset whose measurements are fixed matrices."""

    sample_rate_hz = 1.0

    def __init__(self, rows):
        self.rows = rows

    def specimens(self):
        return [1, 2]

    def frequencies(self):
        return [50]

    def timeline(self, sid):
        return np.array([1, 2]), np.array([0, 10])

    def iter_measurements(self, freqs=None):
        for sid in (1, 2):
            for ts in (1, 2):
                yield sid, 50, ts, self.rows * ts


class TestExtractAll:
    def test_path_averaging(self):
        rows = np.array([[1.0, 1.0, 1.0, 1.0], [3.0, 3.0, 3.0, 3.0]])
        ten = ft.extract_all(_FakeDataset(rows), ft.ExtractionOptions(methods=("raw",)))
        assert ten.matrix(1, 50, [1])[0, 0] == 2.0

    def test_single_path_identity(self, rng):
        row = rng.standard_normal((1, 32))
        ten = ft.extract_all(_FakeDataset(row), ft.ExtractionOptions(methods=("raw",)))
        np.testing.assert_array_equal(ten.values[1][0, 0], ft.time_features(row[0]))

    def test_duplicated_paths(self, rng):
        row = rng.standard_normal((1, 64))
        one = ft.extract_all(_FakeDataset(row), ft.ExtractionOptions(methods=("raw", "fft")))
        dup = ft.extract_all(_FakeDataset(np.vstack([row, row])), ft.ExtractionOptions(methods=("raw", "fft")))
        np.testing.assert_allclose(dup.values[2], one.values[2], rtol=1e-12)

    def test_synthetic_shape(self, small_tensor, small_spec):
        n_spec, n_freq, _, n_feat = small_tensor.shape
        assert (n_spec, n_freq, n_feat) == (small_spec.n_specimens, 2, 33)

    def test_determinism(self, small_spec):
        from gwhi.synth import SyntheticDataset

        m = SyntheticDataset(small_spec).measurement(1, 100, 3)
        a = ft.extract_measurement(m, 2e6)[1]
        b = ft.extract_measurement(m.copy(), 2e6)[1]
        np.testing.assert_array_equal(a, b)

    def test_save_load_round_trip(self, small_tensor, tmp_path):
        small_tensor.save(tmp_path / "f.csv")
        back = ft.FeatureTensor.load(tmp_path / "f.csv")
        for s in small_tensor.specimens:
            np.testing.assert_array_equal(back.values[s], small_tensor.values[s])
            np.testing.assert_array_equal(back.times[s], small_tensor.times[s])
        np.testing.assert_array_equal(back.feature_ids, small_tensor.feature_ids)


class TestRanking:
    def test_strict_benchmark(self):
        bench, sel = ft.select_above_mean([1.0, 2.0, 3.0])
        assert bench == 2.0 and sel.tolist() == [False, False, True]

    def test_all_equal_selects_nothing(self):
        with pytest.warns(RuntimeWarning):
            _, sel = ft.select_above_mean([2.0, 2.0, 2.0])
        assert not sel.any()

    def test_energy_features_rank_above_benchmark(self, small_tensor):
        table = ft.rank_and_select(small_tensor)
        rms = int(np.flatnonzero(table.feature_ids == 4)[0])
        assert table.selected[rms]
        assert table.f_all[rms] > table.benchmark

    def test_score_table_round_trip(self, small_tensor):
        table = ft.rank_and_select(small_tensor)
        back = ft.FeatureScoreTable.loads(table.dumps())
        np.testing.assert_array_equal(back.f_all, table.f_all)
        np.testing.assert_array_equal(back.selected, table.selected)
        summary = table.method_summary()
        assert set(summary) == {"raw", "fft"}
        assert summary["fft"]["n_features"] == 14
