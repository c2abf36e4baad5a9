"""Deterministic statistical features fused into the hybrid classifier head.

Eight features per series, always in this order: lag-1 autocorrelation, sum
of squared autocorrelations over lags 1-10, normalized spectral entropy,
trend strength, seasonal strength, stability, lumpiness, and median crossing
rate. All are computed on the raw (pre-normalization) valid region, never
produce NaN/Inf, and take no part in gradient flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import SeriesBatch
from .tensor import Tensor

FEATURE_NAMES = (
    "acf1",
    "acf10ss",
    "spectral_entropy",
    "trend_strength",
    "seasonal_strength",
    "stability",
    "lumpiness",
    "crossing_rate",
)
NUM_FEATURES = len(FEATURE_NAMES)

_VAR_TINY = 1e-12


def acf(x: np.ndarray, lag: int) -> float:
    """Sample autocorrelation at the given lag; 0 for constant series."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if lag < 1 or lag >= n:
        raise ValueError(f"acf lag must satisfy 1 <= lag < len(x), got lag={lag}, len={n}")
    xc = x - x.mean()
    denom = (xc * xc).sum()
    if denom < _VAR_TINY:
        return 0.0
    return float((xc[:-lag] * xc[lag:]).sum() / denom)


def acf_sum_sq(x: np.ndarray, max_lag: int = 10) -> float:
    """Sum of squared autocorrelations over lags 1..max_lag (capped at len-1)."""
    n = np.asarray(x).size
    top = min(max_lag, n - 1)
    return float(sum(acf(x, k) ** 2 for k in range(1, top + 1)))


def spectral_entropy(x: np.ndarray) -> float:
    """Shannon entropy of the normalized periodogram, scaled into [0, 1].

    The periodogram is the squared magnitude of the DFT of the demeaned
    series at positive frequencies. Zero-power (constant) series map to 0.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    spec = np.abs(np.fft.rfft(x - x.mean())[1:]) ** 2
    total = spec.sum()
    if spec.size <= 1 or total < _VAR_TINY:
        return 0.0
    p = spec / total
    p = p[p > 0]
    h = float(-(p * np.log(p)).sum() / np.log(spec.size))
    return min(max(h, 0.0), 1.0)


def _ma_weights(window: int) -> np.ndarray:
    """Centered moving-average weights; even windows get the classic 2xM form
    (window+1 taps with half-weight endpoints) so one full season averages out."""
    if window % 2 == 1:
        return np.full(window, 1.0 / window)
    w = np.full(window + 1, 1.0 / window)
    w[0] = w[-1] = 0.5 / window
    return w


def trend_seasonal_strength(x: np.ndarray, season: int) -> tuple[float, float]:
    """Variance-explained strengths from an additive moving-average decomposition.

    Strengths are computed on the interior where the centered average is fully
    covered. Too-short series (len < 2*season + 1) get seasonal strength 0 and
    a trend window of min(7, len // 2).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    seasonal_ok = season >= 2 and n >= 2 * season + 1
    window = season if seasonal_ok else max(1, min(7, n // 2))
    weights = _ma_weights(window)
    half = weights.size // 2
    trend = np.convolve(x, weights, mode="valid")
    interior = np.arange(half, n - half)
    detrended = x[interior] - trend
    if seasonal_ok:
        seasonal = np.zeros(interior.size)
        for phase in range(season):
            sel = interior % season == phase
            seasonal[sel] = detrended[sel].mean()
        seasonal -= seasonal.mean()
    else:
        seasonal = np.zeros(interior.size)
    resid = detrended - seasonal
    var_r = resid.var()
    var_tr = (trend + resid).var()
    var_sr = (seasonal + resid).var()
    t_strength = max(0.0, 1.0 - var_r / var_tr) if var_tr > _VAR_TINY else 0.0
    s_strength = max(0.0, 1.0 - var_r / var_sr) if seasonal_ok and var_sr > _VAR_TINY else 0.0
    return float(t_strength), float(s_strength)


def stability_lumpiness(x: np.ndarray, window: int) -> tuple[float, float]:
    """Variance of tiled-window means and variances, on the min-max scaled series."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    span = x.max() - x.min()
    scaled = (x - x.min()) / span if span > _VAR_TINY else np.zeros(n)
    n_windows = n // window
    if n_windows < 2:
        return 0.0, 0.0
    tiles = scaled[: n_windows * window].reshape(n_windows, window)
    return float(tiles.mean(axis=1).var()), float(tiles.var(axis=1).var())


def crossing_rate(x: np.ndarray) -> float:
    """Fraction of adjacent pairs that straddle the series median."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("crossing_rate needs at least 2 points")
    below = x <= np.median(x)
    return float((below[1:] != below[:-1]).mean())


def detect_season(x: np.ndarray, min_peak: float = 0.1, fallback: int = 8) -> int:
    """Pick the autocorrelation local peak in lags [2, len/2]; fall back if weak.

    UCR-style data carries no frequency metadata, so the season length must
    be inferred from the series itself.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    top = n // 2
    if top < 3:
        return fallback
    r = np.array([acf(x, k) for k in range(1, top + 1)])  # r[k-1] = acf at lag k
    best_lag, best_val = 0, min_peak
    for k in range(2, top):
        left, mid, right = r[k - 2], r[k - 1], r[k]
        if mid > left and mid >= right and mid > best_val:
            best_lag, best_val = k, mid
    return best_lag if best_lag >= 2 else fallback


def feature_vector(x: np.ndarray) -> np.ndarray:
    """All eight features for one valid (unpadded) series."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    season = detect_season(x)
    t_str, s_str = trend_seasonal_strength(x, season)
    window = max(8, n // 10)
    stab, lump = stability_lumpiness(x, window)
    vec = np.array(
        [
            acf(x, 1) if n > 1 else 0.0,
            acf_sum_sq(x),
            spectral_entropy(x),
            t_str,
            s_str,
            stab,
            lump,
            crossing_rate(x),
        ]
    )
    if not np.isfinite(vec).all():
        raise AssertionError(f"non-finite feature value: {dict(zip(FEATURE_NAMES, vec))}")
    return vec


def extract(batch: SeriesBatch) -> Tensor:
    """Per-series feature matrix (B, K); deterministic, gradient-free."""
    out = np.empty((batch.batch_size, NUM_FEATURES))
    for i in range(batch.batch_size):
        out[i] = feature_vector(batch.values[i][batch.valid[i]])
    return Tensor(out)


@dataclass
class FeatureScaler:
    """Per-feature standardization fit on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(features: np.ndarray | Tensor) -> "FeatureScaler":
        f = features.data if isinstance(features, Tensor) else np.asarray(features)
        return FeatureScaler(mean=f.mean(axis=0), std=np.maximum(f.std(axis=0), 1e-8))

    @staticmethod
    def identity(k: int = NUM_FEATURES) -> "FeatureScaler":
        return FeatureScaler(mean=np.zeros(k), std=np.ones(k))

    def transform(self, features: np.ndarray | Tensor) -> Tensor:
        f = features.data if isinstance(features, Tensor) else np.asarray(features)
        return Tensor((f - self.mean) / self.std)
