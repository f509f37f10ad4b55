"""Corpus slicing and training-example preparation shared by the CLI and tests."""

from __future__ import annotations

import numpy as np

from .dsp import (
    AudioClip,
    MagnitudeMap,
    StftConfig,
    decompose,
    normalize_magnitude,
    stft,
)
from .phase import InstFreqMap, WeightMap, error_weights, smoothed_if


def slice_clip(clip: AudioClip, slice_samples: int) -> list[AudioClip]:
    """Non-overlapping fixed-length slices; a trailing partial slice is dropped."""
    if slice_samples <= 0:
        raise ValueError("slice length must be positive")
    n_slices = len(clip) // slice_samples
    return [
        AudioClip(
            samples=clip.samples[i * slice_samples : (i + 1) * slice_samples],
            sample_rate=clip.sample_rate,
        )
        for i in range(n_slices)
    ]


def training_example(
    clip: AudioClip,
    config: StftConfig,
    strategy: str = "none",
) -> tuple[MagnitudeMap, InstFreqMap, WeightMap]:
    """Turn one slice into a (normalized magnitude, target IF, weights) triple.

    Targets use the centered (smoothed) instantaneous frequency; weights are
    computed from the raw magnitude before normalization.
    """
    mag, phase = decompose(stft(clip, config))
    psi = smoothed_if(phase)
    weights = error_weights(mag, psi, strategy)
    return normalize_magnitude(mag), psi, weights


def build_dataset(
    clips,
    config: StftConfig,
    slice_samples: int,
    strategy: str = "none",
) -> list[tuple[MagnitudeMap, InstFreqMap, WeightMap]]:
    """Slice every clip and prepare training triples in deterministic order."""
    dataset = []
    for clip in clips:
        for piece in slice_clip(clip, slice_samples):
            dataset.append(training_example(piece, config, strategy))
    return dataset


def sine_clip(
    freq_hz: float,
    num_samples: int,
    sample_rate: int = 16000,
    amplitude: float = 0.5,
    phase0: float = 0.0,
) -> AudioClip:
    """A plain sine, handy for synthetic corpora and calibration."""
    t = np.arange(num_samples) / sample_rate
    return AudioClip(
        samples=amplitude * np.sin(2.0 * np.pi * freq_hz * t + phase0),
        sample_rate=sample_rate,
    )
