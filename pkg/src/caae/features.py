"""Per-window statistical and spectral features for the tabular estimators.

Each channel contributes five values in a fixed order: mean, population
standard deviation, max, min, dominant frequency in Hz. The order is part of
the model contract; CSV exports use the header names from feature_names().

The dominant frequency is the largest-magnitude bin of the real DFT with the
DC bin excluded (a nonzero-mean window would otherwise always report 0 Hz);
ties break toward the lower bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import SensorWindow
from .errors import DataError

STATS_PER_CHANNEL = 5
STAT_NAMES = ("mean", "sd", "max", "min", "domfreq")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # [channels * 5], ordered per STAT_NAMES
    user_id: int
    activity_id: int


def feature_names(channel_count: int) -> list[str]:
    return [f"channel{c}_{stat}" for c in range(channel_count) for stat in STAT_NAMES]


def dominant_frequency(samples: np.ndarray, sample_rate_hz: float) -> float:
    """Frequency (Hz) of the strongest non-DC bin of the window's spectrum."""
    n = len(samples)
    amplitude = np.abs(np.fft.rfft(samples))
    bin_index = 1 + int(np.argmax(amplitude[1:]))  # argmax takes the first max
    return bin_index * sample_rate_hz / n


def extract(win: SensorWindow, sample_rate_hz: float) -> FeatureVector:
    """Compute the five per-channel features of one window."""
    values = np.asarray(win.values, dtype=np.float64)
    if values.shape[1] < 2:
        raise DataError(f"window too short for feature extraction: {values.shape}")
    if sample_rate_hz <= 0:
        raise DataError(f"sample_rate_hz must be positive, got {sample_rate_hz}")
    out = np.empty(values.shape[0] * STATS_PER_CHANNEL)
    for c, channel in enumerate(values):
        out[c * 5 : c * 5 + 5] = (
            channel.mean(),
            channel.std(),  # population (1/N) standard deviation
            channel.max(),
            channel.min(),
            dominant_frequency(channel, sample_rate_hz),
        )
    return FeatureVector(values=out, user_id=win.user_id, activity_id=win.activity_id)


def extract_matrix(windows, sample_rate_hz: float):
    """Feature matrix plus label vectors for a list of windows."""
    if not windows:
        raise DataError("no windows to extract features from")
    rows = [extract(w, sample_rate_hz) for w in windows]
    X = np.stack([r.values for r in rows])
    y_activity = np.array([r.activity_id for r in rows], dtype=np.int64)
    y_user = np.array([r.user_id for r in rows], dtype=np.int64)
    return X, y_activity, y_user


def write_csv(path, X: np.ndarray, channel_count: int, y_activity=None, y_user=None):
    """Export a feature matrix with the documented header naming scheme."""
    X = np.asarray(X)
    header = feature_names(channel_count)
    if X.shape[1] != len(header):
        raise DataError(f"feature width {X.shape[1]} does not match {channel_count} channels")
    columns = list(header)
    extras = []
    if y_activity is not None:
        columns.append("activity_id")
        extras.append(np.asarray(y_activity))
    if y_user is not None:
        columns.append("user_id")
        extras.append(np.asarray(y_user))
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for i in range(X.shape[0]):
            row = [format(v, ".10g") for v in X[i]]
            row.extend(str(int(e[i])) for e in extras)
            fh.write(",".join(row) + "\n")
