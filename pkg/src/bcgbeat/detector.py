"""Heartbeat detection on top of a learned concept dictionary.

Every candidate peak gets a GLRT-style confidence: the ratio of the
background-only reconstruction error to the full-dictionary reconstruction
error, both measured in the Mahalanobis metric of the training background
covariance.  Peaks that look like heartbeats reconstruct much better once
the target atoms are allowed in, so their ratio is large.  Cross-channel
voting turns per-channel confidences into beat decisions, and two HR
estimators (beat-to-beat and spectral) turn those into windowed series.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as spl

from . import kernels
from .dlfumi import Dictionary, safe_step_length
from .metrics import HrSeries, greedy_match
from .signals import (
    DEFAULT_BAND_HZ,
    DEFAULT_FILTER_ORDER,
    DEFAULT_HALF_LEN,
    DEFAULT_MIN_SEPARATION,
    Recording,
    bandpass_filter,
    extract_instances,
    find_peaks,
)

log = logging.getLogger(__name__)

_RATIO_FLOOR = 1e-12
DEFAULT_CODE_ITERS = 50
DEFAULT_THRESHOLD_GRID = tuple(round(1.0 + 0.05 * i, 2) for i in range(41))
DEFAULT_NEIGHBORHOOD_GRID = (15, 20, 25, 30, 35)


@dataclass
class BackgroundModel:
    """Training background covariance with a cached solve handle."""

    covariance: np.ndarray
    ridge: float

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.covariance.ndim != 2 or self.covariance.shape[0] != self.covariance.shape[1]:
            raise ValueError("covariance must be square")
        self._cho = spl.cho_factor(self.covariance)

    @property
    def d(self) -> int:
        return self.covariance.shape[0]

    def mahalanobis_sq(self, residuals: np.ndarray) -> np.ndarray:
        """r^T Sigma^-1 r for each column of residuals."""
        R = np.atleast_2d(np.asarray(residuals, dtype=float))
        if R.shape[0] != self.d:
            R = R.T
        sol = spl.cho_solve(self._cho, R)
        return np.einsum("ij,ij->j", R, sol)


@dataclass(frozen=True)
class DetectionParams:
    """Voting parameters for turning confidences into beats."""

    threshold: float = 1.32
    neighborhood: int = 25
    min_votes: int = 2
    refractory_s: float = 0.3


@dataclass
class ConfidenceSeries:
    """Per-channel candidate-peak confidences for one recording."""

    fs: float
    n_samples: int
    peak_indices: list[np.ndarray]
    confidences: list[np.ndarray]

    def __post_init__(self):
        if len(self.peak_indices) != len(self.confidences):
            raise ValueError("per-channel index/confidence lists disagree")
        self.peak_indices = [np.asarray(p, dtype=int) for p in self.peak_indices]
        self.confidences = [np.asarray(c, dtype=float) for c in self.confidences]
        for p, c in zip(self.peak_indices, self.confidences):
            if p.shape != c.shape:
                raise ValueError("indices and confidences must align per channel")

    @property
    def n_channels(self) -> int:
        return len(self.peak_indices)


def background_covariance(instances, ridge: float = 0.0) -> BackgroundModel:
    """Sample covariance (n-1 normalization) of background instances.

    Accepts a (d, n) column-instance array or a list of instances/arrays.
    The result must be positive definite; if `ridge` does not achieve
    that it is raised automatically (starting at 1e-6 * trace / d) and the
    effective value is reported on the returned model and the log.
    """
    if isinstance(instances, np.ndarray):
        X = np.atleast_2d(np.asarray(instances, dtype=float))
    else:
        cols = [getattr(i, "features", i) for i in instances]
        X = np.column_stack([np.asarray(c, dtype=float) for c in cols])
    d, n = X.shape
    if n < 1:
        raise ValueError("need at least one instance")
    S = np.zeros((d, d)) if n == 1 else np.cov(X, ddof=1)
    eff = float(ridge)
    for _ in range(60):
        try:
            return BackgroundModel(covariance=S + eff * np.eye(d), ridge=eff)
        except np.linalg.LinAlgError:
            pass
        except spl.LinAlgError:
            pass
        floor = 1e-6 * np.trace(S) / d
        if floor <= 0:
            floor = 1e-6
        eff = max(eff * 10.0, floor) if eff > 0 else floor
        log.info("background covariance not PD; raising ridge to %g", eff)
    raise np.linalg.LinAlgError("could not make covariance positive definite")


def _code_test_instances(X: np.ndarray, D: Dictionary, lam: float, n_iter: int):
    """Background-only and full-dictionary codes for test instances.

    The full coding warm-starts from the background solution (target block
    zero), so its lasso objective can only improve on it; that is asserted
    per instance."""
    T = D.n_target
    Dbg = D.background_atoms
    G_bg = Dbg.T @ Dbg
    eta_bg = safe_step_length(Dbg)
    A_bg = kernels.ista_negative(
        G_bg, Dbg.T @ X, np.zeros((D.n_background, X.shape[1])), lam, eta_bg, n_iter
    )
    full = D.atoms
    G = full.T @ full
    eta = safe_step_length(D)
    corr = np.vstack([D.target_atoms.T @ X, Dbg.T @ X])
    A0 = np.vstack([np.zeros((T, X.shape[1])), A_bg])
    A_full = kernels.ista_positive(
        G, G_bg, corr, np.ones(X.shape[1]), A0, lam, eta, n_iter, T
    )

    def lasso_obj(A):
        R = X - full @ A
        return 0.5 * np.einsum("ij,ij->j", R, R) + lam * np.sum(np.abs(A), axis=0)

    obj_full = lasso_obj(A_full)
    obj_warm = lasso_obj(A0)
    assert np.all(obj_full <= obj_warm + 1e-9 * (1.0 + np.abs(obj_warm))), (
        "full-dictionary coding worsened its warm start"
    )
    return A_bg, A_full


def hsd_confidence(
    x: np.ndarray,
    D: Dictionary,
    model: BackgroundModel,
    lam: float,
    n_iter: int = DEFAULT_CODE_ITERS,
) -> float:
    """Confidence ratio for one instance.

    Lambda = (x - D_bg a_bg)^T Sigma^-1 (x - D_bg a_bg)
           / (x - D a)^T Sigma^-1 (x - D a),
    both residual norms floored at 1e-12, so an instance that the
    background already reconstructs exactly scores 1, not 0.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    return float(_confidence_batch(x, D, model, lam, n_iter)[0])


def _confidence_batch(
    X: np.ndarray,
    D: Dictionary,
    model: BackgroundModel,
    lam: float,
    n_iter: int,
) -> np.ndarray:
    if X.shape[0] != D.d:
        raise ValueError("instance dimension does not match dictionary")
    if model.d != D.d:
        raise ValueError("covariance dimension does not match dictionary")
    A_bg, A_full = _code_test_instances(X, D, lam, n_iter)
    num = model.mahalanobis_sq(X - D.background_atoms @ A_bg)
    den = model.mahalanobis_sq(X - D.atoms @ A_full)
    return np.maximum(num, _RATIO_FLOOR) / np.maximum(den, _RATIO_FLOOR)


def confidence_series(
    rec: Recording,
    D: Dictionary,
    model: BackgroundModel,
    lam: float,
    n_iter: int = DEFAULT_CODE_ITERS,
    low: float = DEFAULT_BAND_HZ[0],
    high: float = DEFAULT_BAND_HZ[1],
    order: int = DEFAULT_FILTER_ORDER,
    min_separation: int = DEFAULT_MIN_SEPARATION,
    half_len: int = DEFAULT_HALF_LEN,
    zscore: bool = False,
) -> ConfidenceSeries:
    """Per-channel candidate peaks with their confidence ratios."""
    idx_per_ch: list[np.ndarray] = []
    conf_per_ch: list[np.ndarray] = []
    for ch_id, raw in enumerate(rec.channels):
        filt = bandpass_filter(raw, rec.sample_rate_hz, low, high, order)
        peaks = find_peaks(filt, min_separation)
        instances = extract_instances(filt, peaks, half_len, channel_id=ch_id, zscore=zscore)
        if not instances:
            idx_per_ch.append(np.empty(0, dtype=int))
            conf_per_ch.append(np.empty(0))
            continue
        X = np.column_stack([inst.features for inst in instances])
        conf = _confidence_batch(X, D, model, lam, n_iter)
        idx_per_ch.append(np.asarray([inst.peak_index for inst in instances], dtype=int))
        conf_per_ch.append(conf)
    return ConfidenceSeries(
        fs=rec.sample_rate_hz,
        n_samples=rec.n_samples,
        peak_indices=idx_per_ch,
        confidences=conf_per_ch,
    )


def vote_beats(
    series: ConfidenceSeries, params: DetectionParams
) -> list[tuple[int, float]]:
    """Cross-channel voting: supra-threshold candidates from at least
    min_votes distinct channels, all within `neighborhood` samples of each
    other, confirm one beat at their median peak index.  Confirmed beats
    must stay at least the refractory apart; on a conflict the cluster
    with the higher summed confidence wins (earlier beat on an exact tie).
    Returns (beat_index, confidence_sum) pairs in time order.
    """
    events: list[tuple[int, int, float]] = []
    for ch, (idx, conf) in enumerate(zip(series.peak_indices, series.confidences)):
        for i, c in zip(idx, conf):
            if c > params.threshold:
                events.append((int(i), ch, float(c)))
    events.sort()
    candidates: list[tuple[int, float]] = []
    i = 0
    while i < len(events):
        j = i
        while j + 1 < len(events) and events[j + 1][0] - events[i][0] <= params.neighborhood:
            j += 1
        cluster = events[i : j + 1]
        channels = {e[1] for e in cluster}
        if len(channels) >= params.min_votes:
            med = int(np.median([e[0] for e in cluster]))
            candidates.append((med, sum(e[2] for e in cluster)))
        i = j + 1
    refractory = int(round(params.refractory_s * series.fs))
    beats: list[tuple[int, float]] = []
    for idx, s in candidates:
        if beats and idx - beats[-1][0] < refractory:
            if s > beats[-1][1]:
                beats[-1] = (idx, s)
        else:
            beats.append((idx, s))
    return beats


def learn_detection_params_pooled(
    series_list,
    gt_list,
    thresholds=DEFAULT_THRESHOLD_GRID,
    neighborhoods=DEFAULT_NEIGHBORHOOD_GRID,
    min_votes: int = 2,
    refractory_s: float = 0.3,
    match_tol_s: float = 0.3,
) -> DetectionParams:
    """Grid-search the voting threshold and neighborhood for best F1
    against groundtruth beats (matching within match_tol_s, one-to-one
    greedy), with counts pooled over the given recordings.  Ties prefer
    the smaller threshold, then the smaller neighborhood."""
    series_list = list(series_list)
    gt_list = [np.asarray(g) for g in gt_list]
    if not series_list or any(g.size == 0 for g in gt_list):
        raise ValueError("groundtruth beats required to learn detection parameters")
    best = None
    best_f1 = -1.0
    for thr in thresholds:
        for nb in neighborhoods:
            params = DetectionParams(
                threshold=float(thr),
                neighborhood=int(nb),
                min_votes=min_votes,
                refractory_s=refractory_s,
            )
            tp = fp = fn = 0
            for series, gt_beat_times in zip(series_list, gt_list):
                gt_s = np.asarray(gt_beat_times, dtype=float) / series.fs
                beats = vote_beats(series, params)
                est_s = np.asarray([b[0] for b in beats], dtype=float) / series.fs
                m = len(greedy_match(est_s, gt_s, match_tol_s))
                tp += m
                fp += est_s.size - m
                fn += gt_s.size - m
            f1 = 2.0 * tp / (2.0 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
            if f1 > best_f1:
                best_f1 = f1
                best = params
    return best


def learn_detection_params(
    series: ConfidenceSeries,
    gt_beat_times: np.ndarray,
    thresholds=DEFAULT_THRESHOLD_GRID,
    neighborhoods=DEFAULT_NEIGHBORHOOD_GRID,
    min_votes: int = 2,
    refractory_s: float = 0.3,
    match_tol_s: float = 0.3,
) -> DetectionParams:
    """Single-recording form of learn_detection_params_pooled."""
    return learn_detection_params_pooled(
        [series],
        [gt_beat_times],
        thresholds=thresholds,
        neighborhoods=neighborhoods,
        min_votes=min_votes,
        refractory_s=refractory_s,
        match_tol_s=match_tol_s,
    )


def hr_from_beats(
    beat_indices: np.ndarray,
    fs: float,
    window_s: float = 60.0,
    step_s: float = 15.0,
    duration_s: float | None = None,
) -> HrSeries:
    """Sliding-window heart rate from beat locations.

    Each window averages 60/interval over the beat-to-beat intervals that
    lie fully inside it; windows with fewer than two beats are gaps (NaN).
    Window centers step every step_s; duration defaults to the last beat.
    """
    beats = np.asarray(beat_indices, dtype=float) / fs
    if duration_s is None:
        duration_s = float(beats[-1]) if beats.size else 0.0
    times, bpm = [], []
    start = 0.0
    while start + window_s <= duration_s + 1e-9:
        inside = beats[(beats >= start - 1e-9) & (beats <= start + window_s + 1e-9)]
        times.append(start + window_s / 2.0)
        if inside.size >= 2:
            iv = np.diff(inside)
            bpm.append(float(np.mean(60.0 / iv)))
        else:
            bpm.append(np.nan)
        start += step_s
    return HrSeries(times=np.asarray(times), bpm=np.asarray(bpm))


def hr_from_confidence_dft(
    series: ConfidenceSeries,
    window_s: float = 60.0,
    step_s: float = 15.0,
    band_hz: tuple[float, float] = (0.66, 3.0),
    pulse_width_s: float = 0.0,
) -> HrSeries:
    """Spectral heart rate from the confidence series.

    Confidence values are embedded at their peak indices in a zero-filled
    series at the recording rate (optionally widened by convolution with a
    Hann pulse of pulse_width_s, which suppresses harmonics of the beat
    comb).  Per window and channel the mean is removed and the DFT taken;
    the in-band bin with the largest magnitude across all channels gives
    HR = 60 * f.  Windows with no confidence samples, or with no in-band
    energy after mean removal, are gaps.
    """
    fs = series.fs
    n = series.n_samples
    embedded = []
    pulse = None
    if pulse_width_s > 0:
        L = int(round(pulse_width_s * fs))
        L += 1 - (L % 2)  # odd length so the pulse is centered
        if L > 1:
            pulse = np.hanning(L + 2)[1:-1]
    for idx, conf in zip(series.peak_indices, series.confidences):
        arr = np.zeros(n)
        arr[idx] = conf
        if pulse is not None:
            arr = np.convolve(arr, pulse, mode="same")
        embedded.append(arr)

    times, bpm = [], []
    start = 0.0
    while start + window_s <= n / fs + 1e-9:
        i0 = int(round(start * fs))
        i1 = min(int(round((start + window_s) * fs)), n)
        times.append(start + window_s / 2.0)
        any_conf = any(
            np.any((idx >= i0) & (idx < i1)) for idx in series.peak_indices
        )
        if not any_conf:
            bpm.append(np.nan)
            start += step_s
            continue
        best_mag = 0.0
        best_f = np.nan
        scale = 0.0
        for arr in embedded:
            seg = arr[i0:i1]
            scale = max(scale, float(np.abs(seg).sum()))
            seg = seg - seg.mean()
            spec = np.abs(np.fft.rfft(seg))
            freqs = np.fft.rfftfreq(seg.size, d=1.0 / fs)
            mask = (freqs >= band_hz[0]) & (freqs <= band_hz[1])
            if not np.any(mask):
                continue
            j = int(np.argmax(spec[mask]))
            if spec[mask][j] > best_mag:
                best_mag = float(spec[mask][j])
                best_f = float(freqs[mask][j])
        if best_mag <= 1e-9 * scale or not np.isfinite(best_f):
            bpm.append(np.nan)
        else:
            bpm.append(60.0 * best_f)
        start += step_s
    return HrSeries(times=np.asarray(times), bpm=np.asarray(bpm))
