"""Detector tests: covariance, GLRT confidence, voting, HR extraction."""

import statistics

import numpy as np
import pytest

from bcgbeat.detector import (
    BackgroundModel,
    ConfidenceSeries,
    DetectionParams,
    background_covariance,
    confidence_series,
    hr_from_beats,
    hr_from_confidence_dft,
    hsd_confidence,
    learn_detection_params,
    learn_detection_params_pooled,
    vote_beats,
)
from bcgbeat.dlfumi import Dictionary, FumiParams, fit
from bcgbeat.signals import Recording, build_bags, preprocess_recording
from bcgbeat.synth import SynthConfig, generate

FS = 100.0


class TestBackgroundCovariance:
    def test_single_instance_gives_ridge_identity(self):
        x = np.random.default_rng(0).standard_normal(5)
        model = background_covariance(x.reshape(-1, 1), ridge=0.1)
        np.testing.assert_allclose(model.covariance, 0.1 * np.eye(5), atol=1e-15)

    def test_matches_textbook_double_loop(self):
        d, n = 4, 4
        X = np.eye(d) * np.arange(1.0, d + 1.0)
        mean = X.mean(axis=1)
        S = np.zeros((d, d))
        for i in range(n):
            r = X[:, i] - mean
            S += np.outer(r, r)
        S /= n - 1
        model = background_covariance(X, ridge=1e-6)
        np.testing.assert_allclose(model.covariance - model.ridge * np.eye(d), S, atol=1e-12)

    def test_ridge_lands_on_the_diagonal(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((6, 40))
        plain = background_covariance(X, ridge=0.0)
        ridged = background_covariance(X, ridge=1e-3)
        np.testing.assert_allclose(
            np.diag(ridged.covariance) - np.diag(plain.covariance), 1e-3, atol=1e-15
        )
        off = ridged.covariance - np.diag(np.diag(ridged.covariance))
        off_plain = plain.covariance - np.diag(np.diag(plain.covariance))
        np.testing.assert_allclose(off, off_plain, atol=1e-15)

    def test_degenerate_sample_is_auto_regularized(self):
        # two identical instances: zero-variance directions need the ridge
        x = np.ones((4, 2))
        model = background_covariance(x, ridge=0.0)
        assert model.ridge > 0.0
        np.testing.assert_allclose(model.mahalanobis_sq(np.ones((4, 1))), 4.0 / model.ridge)

    def test_model_rejects_non_positive_definite_input(self):
        with pytest.raises(np.linalg.LinAlgError):
            BackgroundModel(covariance=np.zeros((3, 3)), ridge=0.0)


def orthonormal_triplet(rng, d=12):
    Q, _ = np.linalg.qr(rng.standard_normal((d, 3)))
    return Q[:, 0], Q[:, 1], Q[:, 2]


class TestHsdConfidence:
    def test_background_instance_scores_one(self):
        d1, d2, _ = orthonormal_triplet(np.random.default_rng(2))
        D = Dictionary(d1.reshape(-1, 1), d2.reshape(-1, 1))
        model = BackgroundModel(covariance=np.eye(12), ridge=0.0)
        assert hsd_confidence(d2.copy(), D, model, lam=0.0) == 1.0

    def test_residual_ratio_is_exact_for_orthonormal_atoms(self):
        # x = sqrt(3)*target + 1*off-dictionary direction:
        # background residual power 4, full residual power 1
        d1, d2, d3 = orthonormal_triplet(np.random.default_rng(3))
        D = Dictionary(d1.reshape(-1, 1), d2.reshape(-1, 1))
        model = BackgroundModel(covariance=np.eye(12), ridge=0.0)
        x = np.sqrt(3.0) * d1 + d3
        assert abs(hsd_confidence(x, D, model, lam=0.0) - 4.0) <= 1e-9

    def test_dimension_mismatch_is_rejected(self):
        rng = np.random.default_rng(4)
        d1, d2, _ = orthonormal_triplet(rng)
        D = Dictionary(d1.reshape(-1, 1), d2.reshape(-1, 1))
        model = BackgroundModel(covariance=np.eye(12), ridge=0.0)
        with pytest.raises(ValueError, match="does not match"):
            hsd_confidence(np.zeros(7), D, model, lam=0.0)
        bad_model = BackgroundModel(covariance=np.eye(5), ridge=0.0)
        with pytest.raises(ValueError, match="does not match"):
            hsd_confidence(np.zeros(12), D, bad_model, lam=0.0)


@pytest.fixture(scope="module")
def trained_small():
    """A small trained model shared by the confidence tests."""
    cfg = SynthConfig(duration_s=90.0, hr_bpm=66.0, snr_db=10.0, seed=7)
    res = generate(cfg)
    bags = build_bags(preprocess_recording(res.recording), res.recording.gt_beat_times)
    result = fit(bags, FumiParams(T=1, M=2), seed=0)
    neg = [inst for bag in bags if bag.label == 0 for inst in bag.instances]
    model = background_covariance(neg)
    return cfg, res, result, model


class TestConfidenceSeries:
    def test_all_zero_recording_has_no_candidates(self, trained_small):
        _, _, result, model = trained_small
        rec = Recording(channels=[np.zeros(2000) for _ in range(2)], sample_rate_hz=FS)
        series = confidence_series(rec, result.dictionary, model, lam=5e-3)
        assert series.n_channels == 2
        for idx, conf in zip(series.peak_indices, series.confidences):
            assert idx.size == 0 and conf.size == 0

    def test_planted_beat_is_the_only_confident_candidate(self, trained_small):
        cfg, res, result, model = trained_small
        n, plant = 3000, 1500
        rng = np.random.default_rng(11)
        channels = []
        for gain, delay in zip(cfg.gains, cfg.delays):
            sig = rng.normal(0.0, res.noise_sd, n)
            c = plant + int(delay)
            sig[c - 45 : c + 46] += gain * res.template
            channels.append(sig)
        rec = Recording(channels=channels, sample_rate_hz=FS)
        series = confidence_series(rec, result.dictionary, model, lam=5e-3)
        for ch, (idx, conf) in enumerate(zip(series.peak_indices, series.confidences)):
            confident = idx[conf >= 6.0]
            assert confident.size == 1
            assert abs(int(confident[0]) - (plant + int(cfg.delays[ch]))) <= 5

    def test_heartbeats_separate_from_background(self, trained_small):
        cfg, res, result, model = trained_small
        series = confidence_series(res.recording, result.dictionary, model, lam=5e-3)
        gt = res.recording.gt_beat_times
        beat_conf, bg_conf = [], []
        for idx, conf in zip(series.peak_indices, series.confidences):
            for i, c in zip(idx, conf):
                dist = int(np.min(np.abs(gt - i)))
                (beat_conf if dist <= 15 else bg_conf).append(float(c))
        assert statistics.median(beat_conf) >= 2.0 * statistics.median(bg_conf)

    def test_all_confidences_are_positive(self, trained_small):
        _, res, result, model = trained_small
        series = confidence_series(res.recording, result.dictionary, model, lam=5e-3)
        for conf in series.confidences:
            assert np.all(conf > 0.0)


def two_channel_series(indices_confs, n_samples=2000):
    idx = [np.asarray(i, dtype=int) for i, _ in indices_confs]
    conf = [np.asarray(c, dtype=float) for _, c in indices_confs]
    return ConfidenceSeries(fs=FS, n_samples=n_samples, peak_indices=idx, confidences=conf)


class TestVoteBeats:
    def test_two_channels_agree_on_the_median_index(self):
        series = two_channel_series([([100], [2.0]), ([110], [2.0])])
        params = DetectionParams(threshold=1.32, neighborhood=25, min_votes=2)
        beats = vote_beats(series, params)
        assert [b[0] for b in beats] == [105]

    def test_single_channel_cannot_confirm(self):
        series = two_channel_series([([100], [2.0]), ([400], [0.5])])
        params = DetectionParams(threshold=1.32, neighborhood=25, min_votes=2)
        assert vote_beats(series, params) == []

    def test_nothing_above_threshold(self):
        series = two_channel_series([([100], [1.0]), ([110], [1.2])])
        params = DetectionParams(threshold=1.32, neighborhood=25, min_votes=2)
        assert vote_beats(series, params) == []

    def test_same_channel_twice_is_one_vote(self):
        series = two_channel_series([([100, 110], [2.0, 2.0]), ([900], [2.0])])
        params = DetectionParams(threshold=1.32, neighborhood=25, min_votes=2)
        assert vote_beats(series, params) == []

    def test_raising_threshold_never_adds_beats(self):
        rng = np.random.default_rng(5)
        idx = [np.sort(rng.choice(4000, size=60, replace=False)) for _ in range(3)]
        conf = [rng.uniform(0.5, 3.0, 60) for _ in range(3)]
        series = ConfidenceSeries(fs=FS, n_samples=4000, peak_indices=idx, confidences=conf)
        prev = None
        for thr in np.arange(0.5, 3.1, 0.1):
            n = len(vote_beats(series, DetectionParams(threshold=float(thr))))
            if prev is not None:
                assert n <= prev
            prev = n

    def test_confirmed_beats_respect_refractory_spacing(self):
        rng = np.random.default_rng(6)
        for trial in range(10):
            idx = [np.sort(rng.choice(6000, size=80, replace=False)) for _ in range(4)]
            conf = [rng.uniform(0.5, 4.0, 80) for _ in range(4)]
            series = ConfidenceSeries(
                fs=FS, n_samples=6000, peak_indices=idx, confidences=conf
            )
            params = DetectionParams(threshold=1.0, neighborhood=20, refractory_s=0.3)
            beats = [b[0] for b in vote_beats(series, params)]
            if len(beats) > 1:
                assert np.min(np.diff(beats)) >= int(round(0.3 * FS))


class TestLearnDetectionParams:
    def make_separable(self):
        n = 12000
        gt = np.arange(100, n - 100, 100)
        noise = gt + 50
        idx = np.sort(np.concatenate([gt, noise]))
        conf = np.where(np.isin(idx, gt), 2.0, 1.13)
        series = ConfidenceSeries(
            fs=FS,
            n_samples=n,
            peak_indices=[idx, idx + 2],
            confidences=[conf.copy(), conf.copy()],
        )
        return series, gt

    def test_grid_picks_smallest_threshold_above_the_noise(self):
        series, gt = self.make_separable()
        params = learn_detection_params(series, gt)
        assert params.threshold == 1.15
        assert params.neighborhood == 15
        beats = vote_beats(series, params)
        assert len(beats) == gt.size

    def test_single_beat_is_found_at_default_grid(self):
        series = two_channel_series([([1000], [2.0]), ([1010], [2.0])])
        params = learn_detection_params(series, np.array([1005]))
        beats = vote_beats(series, params)
        assert len(beats) == 1

    def test_result_is_reproducible(self):
        series, gt = self.make_separable()
        assert learn_detection_params(series, gt) == learn_detection_params(series, gt)

    def test_empty_groundtruth_is_rejected(self):
        series, _ = self.make_separable()
        with pytest.raises(ValueError):
            learn_detection_params(series, np.array([], dtype=int))

    def test_pooled_with_one_recording_matches_single(self):
        series, gt = self.make_separable()
        single = learn_detection_params(series, gt)
        pooled = learn_detection_params_pooled([series, series], [gt, gt])
        assert single == pooled


class TestHrFromBeats:
    def test_one_second_period_is_sixty_bpm(self):
        beats = np.arange(0, 30001, 100)
        hr = hr_from_beats(beats, FS, window_s=60.0, step_s=15.0)
        assert hr.n_windows > 0
        np.testing.assert_allclose(hr.bpm, 60.0, atol=1e-12)

    def test_three_quarter_second_period_is_eighty_bpm(self):
        beats = np.arange(0, 30001, 75)
        hr = hr_from_beats(beats, FS)
        np.testing.assert_allclose(hr.bpm, 80.0, atol=1e-12)

    def test_periodic_train_is_exact_for_any_period(self):
        for period in (80, 120, 150):
            beats = np.arange(0, 24000, period)
            hr = hr_from_beats(beats, FS)
            np.testing.assert_allclose(hr.bpm, 6000.0 / period, atol=1e-12)

    def test_sparse_windows_are_gaps(self):
        beats = np.array([0, 100, 10000])
        hr = hr_from_beats(beats, FS, duration_s=100.0)
        assert np.isnan(hr.bpm[-1])
        assert not np.isnan(hr.bpm[0])

    def test_window_centers_follow_the_step(self):
        beats = np.arange(0, 20000, 100)
        hr = hr_from_beats(beats, FS)
        np.testing.assert_allclose(np.diff(hr.times), 15.0)
        assert hr.times[0] == 30.0


class TestHrFromConfidenceDft:
    def test_sinusoidal_confidence_maps_to_its_frequency(self):
        n = 12000
        t = np.arange(n) / FS
        conf = 2.0 + np.sin(2.0 * np.pi * 1.2 * t)
        series = ConfidenceSeries(
            fs=FS, n_samples=n, peak_indices=[np.arange(n)], confidences=[conf]
        )
        hr = hr_from_confidence_dft(series)
        assert hr.n_windows == 5
        np.testing.assert_allclose(hr.bpm, 72.0, atol=1.0)

    def test_constant_confidence_has_no_spectral_peak(self):
        n = 12000
        series = ConfidenceSeries(
            fs=FS, n_samples=n, peak_indices=[np.arange(n)], confidences=[np.full(n, 1.5)]
        )
        hr = hr_from_confidence_dft(series)
        assert np.all(np.isnan(hr.bpm))

    def test_empty_windows_are_gaps(self):
        # all candidates in the first minute; later windows hold nothing
        idx = np.arange(0, 6000, 90)
        series = ConfidenceSeries(
            fs=FS,
            n_samples=18000,
            peak_indices=[idx],
            confidences=[np.full(idx.size, 2.0)],
        )
        hr = hr_from_confidence_dft(series)
        assert not np.isnan(hr.bpm[0])
        assert np.isnan(hr.bpm[-1])
