"""Heartbeat detection in ballistocardiogram recordings.

The package learns a discriminative dictionary from weakly labelled
heartbeat windows (DL-FUMI, an EM algorithm over multiple-instance bags),
then detects beats with a likelihood-ratio test plus cross-channel voting,
and turns the detections into sliding-window heart-rate estimates.
"""

from .baselines import en_hr, pick_best_channel, wppd_hr
from .detector import (
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
from .dlfumi import (
    Dictionary,
    FitResult,
    FumiParams,
    adaptive_gamma,
    gamma_matrix,
    alpha_gradient,
    code_step_negative,
    code_step_positive,
    e_step,
    fit,
    flatten_bags,
    objective,
    resolve_psi,
    safe_step_length,
    soft_threshold,
    step_length,
    update_background_atom,
    update_target_atom,
)
from .metrics import (
    AgreementStats,
    HrSeries,
    bbi_relative_error,
    bland_altman,
    greedy_match,
    mae,
    matched_interval_pairs,
    paired_t,
    pearson_r,
    per_window_errors,
)
from .signals import (
    Bag,
    Instance,
    Recording,
    bandpass_filter,
    build_bags,
    extract_instances,
    find_peaks,
    preprocess_recording,
)
from .synth import SynthConfig, SynthResult, generate, make_template

__version__ = "0.1.0"

__all__ = [
    "AgreementStats",
    "BackgroundModel",
    "Bag",
    "ConfidenceSeries",
    "DetectionParams",
    "Dictionary",
    "FitResult",
    "FumiParams",
    "HrSeries",
    "Instance",
    "Recording",
    "SynthConfig",
    "SynthResult",
    "adaptive_gamma",
    "gamma_matrix",
    "alpha_gradient",
    "background_covariance",
    "bandpass_filter",
    "bbi_relative_error",
    "bland_altman",
    "build_bags",
    "code_step_negative",
    "code_step_positive",
    "confidence_series",
    "e_step",
    "en_hr",
    "extract_instances",
    "find_peaks",
    "fit",
    "flatten_bags",
    "generate",
    "greedy_match",
    "hr_from_beats",
    "hr_from_confidence_dft",
    "hsd_confidence",
    "learn_detection_params",
    "learn_detection_params_pooled",
    "mae",
    "make_template",
    "matched_interval_pairs",
    "objective",
    "paired_t",
    "pearson_r",
    "per_window_errors",
    "pick_best_channel",
    "preprocess_recording",
    "resolve_psi",
    "safe_step_length",
    "soft_threshold",
    "step_length",
    "update_background_atom",
    "update_target_atom",
    "vote_beats",
    "wppd_hr",
]
