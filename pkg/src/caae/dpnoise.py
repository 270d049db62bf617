"""Laplace-mechanism noise baseline for the privacy/utility study.

Noise is sampled by inverting the Laplace CDF on a seeded uniform stream,
which keeps runs reproducible. The per-feature variant estimates each
feature's range on training data, clamps values into that range at apply
time, and uses the range as the sensitivity bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class DpParams:
    epsilon: float
    sensitivity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not self.sensitivity > 0:
            raise ConfigError(f"sensitivity must be positive, got {self.sensitivity}")

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon


# Default privacy-budget sweep for experiments.
DEFAULT_EPSILONS = (0.1, 0.3, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


def laplace_density(x: float, epsilon: float) -> float:
    """Density of the unit-sensitivity Laplace mechanism at x."""
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    return epsilon / 2.0 * math.exp(-epsilon * abs(x))


def laplace_cdf(x, scale: float):
    """CDF of the zero-mean Laplace distribution with the given scale."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < 0, 0.5 * np.exp(x / scale), 1.0 - 0.5 * np.exp(-x / scale))


def _inverse_cdf(u, scale):
    # u in (0, 1); centered so the sign comes from which half u falls in
    centered = u - 0.5
    return -scale * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))


def sample_laplace(params: DpParams, count: int) -> np.ndarray:
    """Draw `count` i.i.d. Laplace(scale = sensitivity/epsilon) values."""
    if count < 0:
        raise ConfigError(f"count must be nonnegative, got {count}")
    rng = np.random.default_rng(params.seed)
    u = rng.random(count)
    return _inverse_cdf(u, params.scale)


def perturb(values, params: DpParams):
    """Add independent Laplace noise elementwise; shape is preserved.

    Accepts any array-like; SensorWindow callers pass .values and rewrap.
    """
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError("perturb requires finite input values")
    noise = sample_laplace(params, arr.size).reshape(arr.shape)
    return arr + noise


@dataclass
class FeatureNoiser:
    """Range-bounded Laplace noising of feature matrices.

    Per-coordinate sensitivity is the feature's range on the fitting split;
    apply() clamps into that range first so the bound actually holds.
    """

    lo: np.ndarray
    hi: np.ndarray
    epsilon: float

    @classmethod
    def fit(cls, features: np.ndarray, epsilon: float) -> "FeatureNoiser":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise DataError(f"expected a nonempty [n x d] feature matrix, got {features.shape}")
        if epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        return cls(lo=features.min(axis=0), hi=features.max(axis=0), epsilon=epsilon)

    def apply(self, features: np.ndarray, seed: int) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        clamped = np.clip(features, self.lo, self.hi)
        sensitivity = np.maximum(self.hi - self.lo, 1e-12)
        rng = np.random.default_rng(seed)
        u = rng.random(clamped.shape)
        return clamped + _inverse_cdf(u, sensitivity / self.epsilon)
