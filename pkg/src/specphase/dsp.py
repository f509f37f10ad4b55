"""Waveform I/O, STFT analysis/synthesis, and magnitude normalization."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

DEFAULT_SAMPLE_RATE = 16000

# Below this, the overlap-added window energy is treated as zero coverage.
WINDOW_SUM_TOL = 1e-8
# Population std below this means a constant map; normalization refuses it.
STD_FLOOR = 1e-12

_PCM16_SCALE = 32768.0


def _wrap(theta: np.ndarray) -> np.ndarray:
    # Half-open wrap to [-pi, pi); the guard catches fp round-up at the seam.
    w = (theta + np.pi) % (2.0 * np.pi) - np.pi
    return np.where(w >= np.pi, w - 2.0 * np.pi, w)


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with its sample rate; samples are float64 in ~[-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class StftConfig:
    """Frame/FFT geometry. Defaults give 25 ms windows and 10 ms hops at 16 kHz."""

    window_length: int = 400
    hop_length: int = 160
    fft_size: int = 512
    window_kind: str = "hann"
    drop_dc: bool = True

    def __post_init__(self):
        if not (0 < self.hop_length <= self.window_length <= self.fft_size):
            raise ValueError(
                "need 0 < hop_length <= window_length <= fft_size, got "
                f"hop={self.hop_length} window={self.window_length} fft={self.fft_size}"
            )
        if self.window_kind not in ("hann", "rect"):
            raise ValueError(f"unknown window_kind {self.window_kind!r}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 if self.drop_dc else self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        n = self.window_length
        if self.window_kind == "rect":
            return np.ones(n)
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)

    def frame_count(self, num_samples: int) -> int:
        if num_samples < self.window_length:
            raise ValueError(
                f"clip of {num_samples} samples is shorter than one "
                f"{self.window_length}-sample window"
            )
        return 1 + (num_samples - self.window_length) // self.hop_length


@dataclass(frozen=True)
class ComplexSpectrogram:
    """T x F complex STFT grid plus the config and sample rate that produced it."""

    values: np.ndarray
    config: StftConfig
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim != 2:
            raise ValueError(f"expected a T x F grid, got shape {values.shape}")
        if values.shape[1] != self.config.num_bins:
            raise ValueError(
                f"grid has {values.shape[1]} bins but config implies {self.config.num_bins}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MagnitudeMap:
    """Nonnegative T x F grid; when normalized, carries (mean, std) to invert."""

    values: np.ndarray
    normalized: bool = False
    norm_stats: tuple[float, float] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected a T x F grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("magnitude contains non-finite values")
        if not self.normalized and np.any(values < -1e-9):
            raise ValueError("raw magnitude must be nonnegative")
        if self.normalized and self.norm_stats is None:
            raise ValueError("normalized map requires norm_stats")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PhaseMap:
    """T x F grid of wrapped angles in [-pi, pi)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected a T x F grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("phase contains non-finite values")
        if np.any(values < -np.pi) or np.any(values >= np.pi):
            raise ValueError("phase values must lie in [-pi, pi)")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def load_wav(path, expect_rate: int | None = None) -> AudioClip:
    """Read a 16-bit PCM RIFF WAV; multichannel input is averaged to mono.

    No resampling is performed: if `expect_rate` is given and the file rate
    differs, this raises instead.
    """
    with wave.open(str(path), "rb") as wf:
        if wf.getcomptype() != "NONE":
            raise ValueError(f"unsupported WAV compression {wf.getcomptype()!r}")
        if wf.getsampwidth() != 2:
            raise ValueError(
              f"only 16-bit PCM is supported, got {8 * wf.getsampwidth()}-bit"
            )
        rate = wf.getframerate()
        channels = wf.getnchannels()
        raw = wf.readframes(wf.getnframes())
    if expect_rate is not None and rate != expect_rate:
        raise ValueError(f"expected {expect_rate} Hz, file is {rate} Hz")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM16_SCALE
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return AudioClip(samples=data, sample_rate=rate)


def save_wav(path, clip: AudioClip) -> None:
    """Write a mono 16-bit PCM WAV, clipping samples to the representable range."""
    pcm = np.clip(np.rint(clip.samples * _PCM16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


def stft(clip: AudioClip, config: StftConfig | None = None) -> ComplexSpectrogram:
    """Windowed, hopped FFT of a clip.

    Frame t covers samples [t*hop, t*hop + window_length); frames are
    zero-padded up to fft_size before the FFT and no per-frame phase
    de-rotation is applied.
    """
    config = config or StftConfig()
    x = clip.samples
    n_frames = config.frame_count(len(x))
    frames = np.lib.stride_tricks.sliding_window_view(x, config.window_length)
    frames = frames[:: config.hop_length][:n_frames] * config.window()
    spectrum = np.fft.rfft(frames, n=config.fft_size, axis=1)
    if config.drop_dc:
        spectrum = spectrum[:, 1:]
    return ComplexSpectrogram(
        values=spectrum, config=config, sample_rate=clip.sample_rate
    )


def istft(spec: ComplexSpectrogram) -> AudioClip:
    """Least-squares inverse STFT via window-sum-normalized overlap-add.

    Each frame is inverted with the DC bin reinserted as zero; because frames
    are zero-padded past the window, the inverse FFT's padding tail exposes
    the dropped DC offset as a constant, which is subtracted back out. The
    overlap-add is weighted by the synthesis (= analysis) window and divided
    by the summed squared window wherever that sum is above tolerance.

    Raises if any sample between the first and last window has near-zero
    window coverage (degenerate window/hop combination).
    """
    cfg = spec.config
    win = cfg.window()
    n_frames = spec.frames
    values = spec.values
    if cfg.drop_dc:
        values = np.concatenate([np.zeros((n_frames, 1)), values], axis=1)
    frames = np.fft.irfft(values, n=cfg.fft_size, axis=1)
    if cfg.fft_size > cfg.window_length:
        # Padded samples were zero at analysis time, so any constant left in
        # the tail is exactly the per-frame offset lost with the DC bin.
        tail = frames[:, cfg.window_length :].mean(axis=1)
        frames = frames[:, : cfg.window_length] - tail[:, None]
    else:
        frames = frames[:, : cfg.window_length]

    out_len = (n_frames - 1) * cfg.hop_length + cfg.window_length
    out = np.zeros(out_len)
    wsum = np.zeros(out_len)
    wsq = win * win
    for t in range(n_frames):
        start = t * cfg.hop_length
        out[start : start + cfg.window_length] += frames[t] * win
        wsum[start : start + cfg.window_length] += wsq

    interior = wsum[cfg.window_length : out_len - cfg.window_length]
    if interior.size and np.any(interior < WINDOW_SUM_TOL):
        raise ValueError(
            "window sum falls below tolerance inside the signal; "
            "this window/hop combination cannot be inverted"
        )
    # The division cancels the same window values that shaped the numerator,
    # so it stays exact even where the summed window is tiny; only samples
    # with no coverage at all (e.g. the very first, where Hann is zero) are
    # left silent.
    covered = wsum > 0.0
    out[covered] /= wsum[covered]
    out[~covered] = 0.0
    return AudioClip(samples=out, sample_rate=spec.sample_rate)


def decompose(spec: ComplexSpectrogram) -> tuple[MagnitudeMap, PhaseMap]:
    """Split a complex grid into magnitude and wrapped phase.

    Exactly-zero cells get phase 0 by convention; arg = pi maps to -pi.
    """
    mag = np.abs(spec.values)
    phase = _wrap(np.angle(spec.values))
    return MagnitudeMap(values=mag), PhaseMap(values=phase)


def recompose(
    mag: MagnitudeMap,
    phase: PhaseMap,
    config: StftConfig,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> ComplexSpectrogram:
    """Build mag * exp(i*phase) as a spectrogram under the given config."""
    if mag.shape != phase.shape:
        raise ValueError(f"shape mismatch: {mag.shape} vs {phase.shape}")
    if mag.normalized:
        raise ValueError("recompose expects a raw (unnormalized) magnitude")
    return ComplexSpectrogram(
        values=mag.values * np.exp(1j * phase.values),
        config=config,
        sample_rate=sample_rate,
    )


def normalize_magnitude(mag: MagnitudeMap) -> MagnitudeMap:
    """Rescale to zero mean and unit population std over all cells."""
    if mag.normalized:
        raise ValueError("magnitude is already normalized")
    mean = float(np.mean(mag.values))
    std = float(np.std(mag.values))
    if std < STD_FLOOR:
        raise ValueError(
            "magnitude is constant (silence?); normalization is undefined"
        )
    return MagnitudeMap(
        values=(mag.values - mean) / std,
        normalized=True,
        norm_stats=(mean, std),
    )


def denormalize_magnitude(mag: MagnitudeMap) -> MagnitudeMap:
    """Invert normalize_magnitude using the stored statistics."""
    if not mag.normalized:
        raise ValueError("magnitude is not normalized")
    mean, std = mag.norm_stats
    values = np.maximum(mag.values * std + mean, 0.0)
    return MagnitudeMap(values=values, normalized=False)
