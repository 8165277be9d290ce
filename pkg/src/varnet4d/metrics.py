"""Reconstruction skill metrics: normalized RMSE scores and the minimal
resolved space/time scales from a wavenumber-frequency spectral score.

The spectral score compares the error power spectrum against the truth
power spectrum, score = 1 - PSD_err / PSD_truth, on a (frequency,
zonal-wavenumber) grid computed with mean removal and Hann windows in
time and along x (power averaged over rows). A scale counts as resolved
while the marginal score stays above 0.5; the reported lambda is the
first crossing searched from the large-scale end, linearly interpolated
between bins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import FieldSeq
from .autodiff import ShapeError


@dataclass
class MetricsRecord:
    mu_rmse_score: float
    sigma_rmse_score: float
    lambda_x: float  # degrees
    lambda_t: float  # days

    def validate(self, cell_deg: float, dt_days: float) -> None:
        if not (self.mu_rmse_score <= 1.0 + 1e-12):
            raise ValueError("mu RMSE-score cannot exceed 1")
        if self.sigma_rmse_score < 0:
            raise ValueError("sigma RMSE-score must be nonnegative")
        if self.lambda_x < 2 * cell_deg - 1e-12 or self.lambda_t < 2 * dt_days - 1e-12:
            raise ValueError("resolved scales cannot beat the Nyquist wavelengths")


def _as_values(x) -> np.ndarray:
    return x.values if isinstance(x, FieldSeq) else np.asarray(x, dtype=np.float64)


def rmse_score_series(x_hat, x_true) -> tuple[np.ndarray, float, float]:
    """Per-day normalized scores 1 - RMSE(x_hat, x)/RMS(x), plus mean/std."""
    a, b = _as_values(x_hat), _as_values(x_true)
    if a.shape != b.shape:
        raise ShapeError(f"rmse_score: shapes differ, {a.shape} vs {b.shape}")
    rmse = np.sqrt(np.mean((a - b) ** 2, axis=(1, 2)))
    rms = np.sqrt(np.mean(b ** 2, axis=(1, 2)))
    if np.any(rms == 0):
        raise ValueError("degenerate truth: zero RMS on at least one day")
    scores = 1.0 - rmse / rms
    return scores, float(scores.mean()), float(scores.std())


def error_maps(x_hat, x_true) -> tuple[np.ndarray, np.ndarray]:
    """(per-cell RMSE over days, per-day RMSE over cells)."""
    a, b = _as_values(x_hat), _as_values(x_true)
    if a.shape != b.shape:
        raise ShapeError(f"error_maps: shapes differ, {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    return np.sqrt(sq.mean(axis=0)), np.sqrt(sq.mean(axis=(1, 2)))


def _spacetime_psd(arr: np.ndarray) -> np.ndarray:
    """(T, H, W) -> power on (frequency 0..T//2, wavenumber 0..W//2).

    Mean removed; Hann windows along time and x; power averaged over rows
    and folded onto nonnegative frequencies.
    """
    T, H, W = arr.shape
    a = arr - arr.mean()
    wt = np.hanning(T) if T > 1 else np.ones(1)
    wx = np.hanning(W) if W > 1 else np.ones(1)
    a = a * wt[:, None, None] * wx[None, None, :]
    F = np.fft.fft(np.fft.rfft(a, axis=2), axis=0)  # (T, H, W//2+1)
    P = (F.real ** 2 + F.imag ** 2).mean(axis=1)  # average over rows
    nf = T // 2 + 1
    folded = P[:nf].copy()
    if T > 1:
        tail = P[nf:][::-1]  # negative frequencies
        folded[1 : 1 + tail.shape[0]] += tail
    return folded


def psd_score_grid(x_hat, x_true) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Score(f, k) plus the frequency (1/day) and wavenumber (1/deg) axes."""
    a, b = _as_values(x_hat), _as_values(x_true)
    if a.shape != b.shape:
        raise ShapeError(f"psd score: shapes differ, {a.shape} vs {b.shape}")
    T, H, W = a.shape
    if min(T, H, W) < 4:
        raise ShapeError(f"psd score needs T, H, W >= 4, got {(T, H, W)}")
    if not np.any(b):
        raise ValueError("degenerate truth: all-zero field")
    cell = x_true.cell_deg if isinstance(x_true, FieldSeq) else 0.05
    dt = x_true.dt_days if isinstance(x_true, FieldSeq) else 1.0
    P_err = _spacetime_psd(a - b)
    P_tru = _spacetime_psd(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = 1.0 - P_err / P_tru
    score[P_tru <= 0] = np.nan
    freqs = np.arange(T // 2 + 1) / (T * dt)
    wavenumbers = np.arange(W // 2 + 1) / (W * cell)
    return score, freqs, wavenumbers


def _crossing(scales: np.ndarray, score: np.ndarray) -> float:
    """First 0.5 crossing scanning from the largest scale; interpolated.

    scales are decreasing wavelengths/periods. If the score never drops
    below 0.5 the finest scale is resolved; if it is already below at the
    largest scale, nothing is resolved and the largest scale is returned.
    """
    ok = np.isfinite(score)
    scales, score = scales[ok], score[ok]
    if scales.size == 0:
        return float("nan")
    if score[0] < 0.5:
        return float(scales[0])
    for m in range(1, scales.size):
        if score[m] < 0.5:
            s0, s1 = score[m - 1], score[m]
            lam0, lam1 = scales[m - 1], scales[m]
            frac = (0.5 - s0) / (s1 - s0)
            return float(lam0 + frac * (lam1 - lam0))
    return float(scales[-1])


def _masked_axis_mean(score: np.ndarray, axis: int) -> np.ndarray:
    valid = np.isfinite(score)
    sums = np.where(valid, score, 0.0).sum(axis=axis)
    cnt = valid.sum(axis=axis)
    return np.divide(sums, cnt, out=np.full(sums.shape, np.nan), where=cnt > 0)


def psd_resolved_scales(x_hat, x_true) -> tuple[float, float]:
    """Minimal resolved spatial (degrees) and temporal (days) scales."""
    score, freqs, wavenumbers = psd_score_grid(x_hat, x_true)
    s_k = _masked_axis_mean(score, axis=0)  # frequency-averaged, per wavenumber
    s_f = _masked_axis_mean(score, axis=1)  # wavenumber-averaged, per frequency
    lam_x = _crossing(1.0 / wavenumbers[1:], s_k[1:])
    lam_t = _crossing(1.0 / freqs[1:], s_f[1:])
    return lam_x, lam_t


def metrics_record(x_hat, x_true) -> MetricsRecord:
    _, mu, sigma = rmse_score_series(x_hat, x_true)
    lam_x, lam_t = psd_resolved_scales(x_hat, x_true)
    return MetricsRecord(mu, sigma, lam_x, lam_t)
