"""Instantaneous frequency, group delay, circular statistics, and error weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import MagnitudeMap, PhaseMap

BARYCENTER_TOL = 1e-12

ALIGN_FORWARD = "forward"
ALIGN_CENTERED = "centered"

WEIGHT_STRATEGIES = ("none", "mag", "sqrtmag", "smoothness")


def wrap_angle(theta):
    """Map angles to [-pi, pi); accepts scalars or arrays, rejects non-finite input."""
    arr = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot wrap non-finite angles")
    wrapped = (arr + np.pi) % (2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped >= np.pi, wrapped - 2.0 * np.pi, wrapped)
    return float(wrapped) if arr.ndim == 0 else wrapped


@dataclass(frozen=True)
class InstFreqMap:
    """Per-cell phase advance per hop, wrapped to [-pi, pi).

    `alignment` records whether rows are forward differences or centered
    (smoothed) differences; either way the map has as many rows as the
    phase map it came from, with boundary rows filled one-sided.
    """

    values: np.ndarray
    alignment: str = ALIGN_FORWARD

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected a T x F grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("instantaneous frequency contains non-finite values")
        if np.any(values < -np.pi) or np.any(values >= np.pi):
            raise ValueError("instantaneous frequency must lie in [-pi, pi)")
        if self.alignment not in (ALIGN_FORWARD, ALIGN_CENTERED):
            raise ValueError(f"unknown alignment {self.alignment!r}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class GroupDelayMap:
    """Wrapped phase differences between adjacent frequency bins: T x (F-1)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected a T x (F-1) grid, got shape {values.shape}")
        if np.any(values < -np.pi) or np.any(values >= np.pi):
            raise ValueError("group delay must lie in [-pi, pi)")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class WeightMap:
    """Nonnegative per-cell loss weights rescaled to mean 1."""

    values: np.ndarray
    strategy: str = "none"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected a T x F grid, got shape {values.shape}")
        if np.any(values < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(values.mean()) - 1.0) > 1e-9:
            raise ValueError("weights must average to 1")
        if self.strategy not in WEIGHT_STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def instantaneous_frequency(phase: PhaseMap) -> InstFreqMap:
    """Wrapped forward phase differences along time.

    The last row is repeated so the output keeps the input's row count.
    """
    v = phase.values
    if v.shape[0] < 2:
        raise ValueError("need at least 2 frames for a forward difference")
    diffs = wrap_angle(v[1:] - v[:-1])
    values = np.concatenate([diffs, diffs[-1:]], axis=0)
    return InstFreqMap(values=values, alignment=ALIGN_FORWARD)


def _unwrap_steps(diffs: np.ndarray) -> np.ndarray:
    """Unwrap a per-bin difference sequence along time.

    Each step gets the minimal-magnitude 2*pi correction; a step of exactly
    +-pi is resolved to +pi.
    """
    steps = wrap_angle(diffs[1:] - diffs[:-1])
    steps = np.where(steps == -np.pi, np.pi, steps)
    out = np.empty_like(diffs)
    out[0] = diffs[0]
    out[1:] = diffs[0] + np.cumsum(steps, axis=0)
    return out


def smoothed_if(phase: PhaseMap) -> InstFreqMap:
    """Centered instantaneous frequency from unwrapped forward differences.

    Per frequency bin the forward differences are unwrapped along time,
    averaged pairwise, and wrapped back; that makes each interior row a
    centered difference aligned with its frame. The first and last rows use
    the only difference available to them.
    """
    v = phase.values
    if v.shape[0] < 3:
        raise ValueError("need at least 3 frames for the centered difference")
    diffs = wrap_angle(v[1:] - v[:-1])
    unwrapped = _unwrap_steps(diffs)
    centered = wrap_angle(0.5 * (unwrapped[:-1] + unwrapped[1:]))
    values = np.concatenate(
        [wrap_angle(unwrapped[:1]), centered, wrap_angle(unwrapped[-1:])], axis=0
    )
    return InstFreqMap(values=values, alignment=ALIGN_CENTERED)


def group_delay(phase: PhaseMap) -> GroupDelayMap:
    """Wrapped forward phase differences along frequency."""
    v = phase.values
    if v.shape[1] < 2:
        raise ValueError("need at least 2 bins for a frequency difference")
    return GroupDelayMap(values=wrap_angle(v[:, 1:] - v[:, :-1]))


def circular_mean(angles) -> float:
    """Angle of the barycenter of the unit-circle points for `angles`.

    Raises when the barycenter is (numerically) at the origin, where the
    mean direction is undefined.
    """
    arr = np.asarray(angles, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("circular mean of an empty sequence")
    c = float(np.cos(arr).sum())
    s = float(np.sin(arr).sum())
    if np.hypot(c, s) / arr.size < BARYCENTER_TOL:
        raise ValueError("circular mean undefined: barycenter at the origin")
    return wrap_angle(float(np.arctan2(s, c)))


def _total_variation(values: np.ndarray) -> np.ndarray:
    """Sum of |wrapped difference| to each existing 4-neighbor."""
    tv = np.zeros_like(values)
    dt = np.abs(wrap_angle(values[1:] - values[:-1]))
    tv[:-1] += dt
    tv[1:] += dt
    df = np.abs(wrap_angle(values[:, 1:] - values[:, :-1]))
    tv[:, :-1] += df
    tv[:, 1:] += df
    return tv


def smoothness_weights(psi: InstFreqMap) -> WeightMap:
    """Inverse total variation of the instantaneous frequency, mean-1 rescaled."""
    v = psi.values
    if v.shape[0] < 2 or v.shape[1] < 2:
        raise ValueError("smoothness weights need at least a 2 x 2 grid")
    raw = 1.0 / (1.0 + _total_variation(v))
    return WeightMap(values=raw / raw.mean(), strategy="smoothness")


def error_weights(
    mag: MagnitudeMap | None,
    psi: InstFreqMap | None,
    strategy: str,
) -> WeightMap:
    """Build the per-cell loss weights for the chosen strategy.

    Magnitude strategies require the raw (unnormalized) magnitude; the
    smoothness strategy requires `psi`.
    """
    if strategy not in WEIGHT_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "smoothness":
        if psi is None:
            raise ValueError("smoothness weighting requires an IF map")
        return smoothness_weights(psi)
    if mag is None:
        raise ValueError(f"{strategy!r} weighting requires a magnitude map")
    if strategy == "none":
        return WeightMap(values=np.ones(mag.shape), strategy="none")
    if mag.normalized:
        raise ValueError("magnitude weighting requires the raw |X|, not normalized")
    base = mag.values if strategy == "mag" else np.sqrt(mag.values)
    mean = float(base.mean())
    if mean <= 0.0:
        raise ValueError("cannot weight by an all-zero magnitude")
    return WeightMap(values=base / mean, strategy=strategy)
