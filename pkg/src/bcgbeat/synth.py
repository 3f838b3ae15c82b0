"""Synthetic multi-channel BCG generator with known groundtruth.

Plants a fixed heartbeat template along a configurable heart-rate profile,
with per-channel gain and delay (the cross-channel misalignment the
multiple-instance formulation exists for), per-beat timing jitter,
respiration drift, and white noise at a requested SNR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .signals import Recording


@dataclass
class SynthConfig:
    """Generator settings; channel count follows len(gains)."""

    duration_s: float = 300.0
    fs: float = 100.0
    hr_bpm: float = 60.0
    hrv_amp_bpm: float = 0.0
    hrv_period_s: float = 60.0
    template_carrier_hz: float = 7.0
    template_width_s: float = 0.12
    half_len: int = 45
    gains: tuple = (1.0, 0.9, 0.8, 0.7)
    delays: tuple = (0, 3, 6, 9)
    jitter_sd_samples: float = 2.0
    respiration_amp: float = 0.05
    respiration_hz: float = 0.25
    noise_sd: float | None = None
    snr_db: float | None = 10.0
    artifact_rate_per_min: float = 0.0
    artifact_amp: float = 4.0
    artifact_width_s: tuple = (0.4, 1.2)
    seed: int = 0

    def validate(self):
        if self.duration_s <= 0 or self.fs <= 0:
            raise ValueError("duration_s and fs must be positive")
        if self.hr_bpm - abs(self.hrv_amp_bpm) <= 0:
            raise ValueError("heart rate profile must stay positive")
        if len(self.gains) != len(self.delays) or not self.gains:
            raise ValueError("gains and delays must be equal-length and non-empty")
        if any(g < 0 for g in self.gains):
            raise ValueError("gains must be non-negative")
        if self.half_len < 1:
            raise ValueError("half_len must be >= 1")
        if self.artifact_rate_per_min < 0:
            raise ValueError("artifact_rate_per_min must be >= 0")
        lo, hi = self.artifact_width_s
        if not (0 < lo <= hi):
            raise ValueError("artifact_width_s must be an increasing positive pair")


@dataclass
class SynthResult:
    """Recording plus everything the generator knows about it."""

    recording: Recording
    template: np.ndarray
    beat_times_s: np.ndarray
    noise_sd: float
    config: SynthConfig

    def hr_at(self, t) -> np.ndarray:
        """Analytic instantaneous heart-rate profile in bpm."""
        c = self.config
        t = np.asarray(t, dtype=float)
        return c.hr_bpm + c.hrv_amp_bpm * np.sin(2.0 * np.pi * t / c.hrv_period_s)

    def windowed_mean_hr(self, start_s: float, window_s: float, n_grid: int = 2001) -> float:
        """Mean of the analytic profile over a window (trapezoid rule)."""
        t = np.linspace(start_s, start_s + window_s, n_grid)
        return float(trapezoid(self.hr_at(t), t) / window_s)


def make_template(
    fs: float = 100.0,
    carrier_hz: float = 7.0,
    width_s: float = 0.12,
    half_len: int = 45,
) -> np.ndarray:
    """Gaussian-windowed cosine burst, unit norm, central positive peak."""
    t = (np.arange(2 * half_len + 1) - half_len) / fs
    w = np.exp(-0.5 * (t / width_s) ** 2)
    tpl = w * np.cos(2.0 * np.pi * carrier_hz * t)
    return tpl / np.linalg.norm(tpl)


def _beat_phase_times(cfg: SynthConfig) -> np.ndarray:
    """Beat instants where the integrated rate crosses whole beats."""
    mean_bps = cfg.hr_bpm / 60.0
    amp_bps = cfg.hrv_amp_bpm / 60.0

    def phase(t):
        if cfg.hrv_amp_bpm == 0.0:
            return mean_bps * t
        return mean_bps * t + amp_bps * cfg.hrv_period_s / (2.0 * np.pi) * (
            1.0 - np.cos(2.0 * np.pi * t / cfg.hrv_period_s)
        )

    total = phase(cfg.duration_s)
    # first beat sits at phase zero, so a beat may land exactly on the
    # final sample boundary and be dropped by the index-range filter
    times = [0.0]
    lo = 0.0
    for k in range(1, int(np.floor(total)) + 1):
        t_k = brentq(lambda t: phase(t) - k, lo, cfg.duration_s, xtol=1e-10)
        times.append(t_k)
        lo = t_k
    return np.asarray(times)


def generate(config: SynthConfig) -> SynthResult:
    """Deterministically synthesize a recording from the config.

    Groundtruth beat times are the jittered (but undelayed) beat instants;
    each channel adds the template at beat + its fixed delay, scaled by its
    gain, plus respiration and white noise.  When snr_db is set (and
    noise_sd is not), the noise level is calibrated against the average
    power of the clean beat trains.
    """
    config.validate()
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration_s * cfg.fs))
    tpl = make_template(cfg.fs, cfg.template_carrier_hz, cfg.template_width_s, cfg.half_len)
    h = cfg.half_len

    base = _beat_phase_times(cfg)
    if cfg.jitter_sd_samples > 0:
        base = base + rng.normal(0.0, cfg.jitter_sd_samples, base.size) / cfg.fs
    base = np.sort(base)
    idx = np.round(base * cfg.fs).astype(int)
    keep = (idx >= 0) & (idx < n)
    idx = np.unique(idx[keep])

    def place(train: np.ndarray, center: int, gain: float):
        lo = center - h
        hi = center + h + 1
        s0 = max(lo, 0)
        s1 = min(hi, n)
        if s0 >= s1:
            return
        train[s0:s1] += gain * tpl[s0 - lo : s1 - lo]

    clean = np.zeros((len(cfg.gains), n))
    for ch, (gain, delay) in enumerate(zip(cfg.gains, cfg.delays)):
        for b in idx:
            place(clean[ch], int(b) + int(delay), float(gain))

    if cfg.noise_sd is not None:
        sd = float(cfg.noise_sd)
    elif cfg.snr_db is not None:
        p_clean = float(np.mean(clean**2))
        sd = float(np.sqrt(p_clean / 10.0 ** (cfg.snr_db / 10.0))) if p_clean > 0 else 0.0
    else:
        sd = 0.0

    # template has unit L2 norm over its 2h+1 samples
    tpl_rms = 1.0 / np.sqrt(tpl.size)

    def add_artifacts(sig: np.ndarray, gain: float):
        """Sporadic motion bursts: detrended random walks, Hann-windowed,
        scaled well above the beat train.  Independent per channel, so
        cross-channel voting can reject them while single-channel energy
        detectors cannot."""
        n_bursts = rng.poisson(cfg.artifact_rate_per_min * cfg.duration_s / 60.0)
        for _ in range(int(n_bursts)):
            width = rng.uniform(cfg.artifact_width_s[0], cfg.artifact_width_s[1])
            w = max(int(round(width * cfg.fs)), 4)
            start = int(rng.integers(0, max(n - w, 1)))
            walk = np.cumsum(rng.normal(0.0, 1.0, w))
            walk -= np.linspace(walk[0], walk[-1], w)
            win = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(w) / (w - 1)))
            burst = walk * win
            rms = float(np.sqrt(np.mean(burst**2)))
            if rms <= 0:
                continue
            target = cfg.artifact_amp * gain * tpl_rms
            sig[start : start + w] += burst * (target / rms)

    t = np.arange(n) / cfg.fs
    resp = cfg.respiration_amp * np.sin(2.0 * np.pi * cfg.respiration_hz * t)
    channels = []
    for ch in range(len(cfg.gains)):
        sig = clean[ch] + resp
        if sd > 0:
            sig = sig + rng.normal(0.0, sd, n)
        if cfg.artifact_rate_per_min > 0:
            add_artifacts(sig, float(cfg.gains[ch]))
        channels.append(sig)

    rec = Recording(channels=channels, sample_rate_hz=cfg.fs, gt_beat_times=idx)
    return SynthResult(
        recording=rec,
        template=tpl,
        beat_times_s=idx / cfg.fs,
        noise_sd=sd,
        config=cfg,
    )
