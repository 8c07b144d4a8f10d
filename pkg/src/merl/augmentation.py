"""Input-level ECG augmentations.

These exist for ablation comparisons against latent dropout; none of them is
part of the default training path.  All functions are pure: they return a new
array, never mutate the input, and are deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import ConfigurationError

DEFAULT_PARAMS = {"cutout": 0.1, "drop": 0.1, "gaussian_noise": 0.05}
KINDS = tuple(DEFAULT_PARAMS)


@dataclass
class AugmentationSpec:
    kind: str
    params: Dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        value = self.param_value()
        if self.kind == "gaussian_noise":
            if value < 0:
                raise ConfigurationError("sigma must be non-negative")
        elif not 0.0 < value < 1.0:
            raise ConfigurationError(f"{self.kind} fraction must be in (0, 1)")

    def param_value(self) -> float:
        return float(self.params.get(self.kind, DEFAULT_PARAMS[self.kind]))


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def cutout(signal: np.ndarray, segment_fraction: float = 0.1, seed: int = 0) -> np.ndarray:
    """Zero one contiguous window of ``floor(fraction * num_samples)`` samples
    per lead; the window position is uniform per lead."""
    signal = np.asarray(signal)
    num_samples = signal.shape[-1]
    width = int(segment_fraction * num_samples)
    if width < 1:
        raise ConfigurationError(
            f"segment_fraction {segment_fraction} selects no samples of {num_samples}"
        )
    rng = _rng(seed)
    out = signal.copy()
    for lead in range(signal.shape[0]):
        start = int(rng.integers(0, num_samples - width + 1))
        out[lead, start : start + width] = 0
    return out


def random_drop(signal: np.ndarray, point_fraction: float = 0.1, seed: int = 0) -> np.ndarray:
    """Zero ``floor(fraction * num_samples)`` uniformly chosen (without
    replacement) samples per lead."""
    signal = np.asarray(signal)
    num_samples = signal.shape[-1]
    count = int(point_fraction * num_samples)
    if count < 1:
        raise ConfigurationError(
            f"point_fraction {point_fraction} selects no samples of {num_samples}"
        )
    rng = _rng(seed)
    out = signal.copy()
    for lead in range(signal.shape[0]):
        idx = rng.choice(num_samples, size=count, replace=False)
        out[lead, idx] = 0
    return out


def gaussian_noise(signal: np.ndarray, sigma: float = 0.05, seed: int = 0) -> np.ndarray:
    """Add zero-mean Gaussian noise scaled per lead to ``sigma`` times that
    lead's standard deviation."""
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")
    signal = np.asarray(signal)
    if sigma == 0:
        return signal.copy()
    rng = _rng(seed)
    lead_std = signal.std(axis=-1, keepdims=True)
    noise = rng.standard_normal(signal.shape) * (sigma * lead_std)
    return (signal + noise).astype(signal.dtype)


def apply_augmentation(
    signal: np.ndarray, kind: str, param: Optional[float] = None, seed: int = 0
) -> np.ndarray:
    value = DEFAULT_PARAMS.get(kind) if param is None else param
    if kind == "cutout":
        return cutout(signal, value, seed)
    if kind == "drop":
        return random_drop(signal, value, seed)
    if kind == "gaussian_noise":
        return gaussian_noise(signal, value, seed)
    raise ConfigurationError(f"unknown augmentation kind {kind!r}")
