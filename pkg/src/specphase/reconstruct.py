"""Phase integration, offset retrieval, Griffin-Lim, and spectral convergence."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dsp import (
    DEFAULT_SAMPLE_RATE,
    AudioClip,
    ComplexSpectrogram,
    MagnitudeMap,
    PhaseMap,
    StftConfig,
    istft,
    stft,
)
from .phase import BARYCENTER_TOL, InstFreqMap, group_delay, wrap_angle

SC_NORM_FLOOR = 1e-12

TRACE_HEADER = ("k", "d_k", "log_sc")


@dataclass(frozen=True)
class ConvergenceTrace:
    """Per-iteration Griffin-Lim records, including the k = 0 warm-start point."""

    iterations: np.ndarray
    distances: np.ndarray
    log_sc: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "iterations", np.asarray(self.iterations, dtype=int))
        object.__setattr__(self, "distances", np.asarray(self.distances, dtype=float))
        object.__setattr__(self, "log_sc", np.asarray(self.log_sc, dtype=float))
        if not (
            self.iterations.shape == self.distances.shape == self.log_sc.shape
        ):
            raise ValueError("trace arrays must have matching lengths")

    def __len__(self) -> int:
        return self.iterations.shape[0]

    @property
    def records(self) -> list[tuple[int, float, float]]:
        return list(zip(self.iterations.tolist(), self.distances.tolist(),
                        self.log_sc.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(TRACE_HEADER)
            for k, d, sc in self.records:
                writer.writerow([k, repr(d), repr(sc)])


def integrate_if(psi: InstFreqMap, offsets) -> PhaseMap:
    """Accumulate instantaneous frequency along time from per-bin offsets.

    Row 0 is the offsets; row t+1 adds psi row t. The last psi row (the
    one-sided or repeated boundary row) is never consumed.
    """
    values = psi.values
    offsets = np.asarray(offsets, dtype=np.float64).ravel()
    if offsets.shape[0] != values.shape[1]:
        raise ValueError(
            f"got {offsets.shape[0]} offsets for {values.shape[1]} bins"
        )
    if not np.all(np.isfinite(offsets)):
        raise ValueError("offsets contain non-finite values")
    cum = np.concatenate(
        [np.zeros((1, values.shape[1])), np.cumsum(values[:-1], axis=0)], axis=0
    )
    return PhaseMap(values=wrap_angle(offsets[None, :] + cum))


def estimate_mean_group_delay(phases) -> float:
    """Circular mean of group-delay cells pooled over a corpus of phase maps."""
    c = 0.0
    s = 0.0
    count = 0
    for pm in phases:
        g = group_delay(pm).values
        c += float(np.cos(g).sum())
        s += float(np.sin(g).sum())
        count += g.size
    if count == 0:
        raise ValueError("empty corpus")
    if np.hypot(c, s) / count < BARYCENTER_TOL:
        raise ValueError("mean group delay undefined: barycenter at the origin")
    return wrap_angle(float(np.arctan2(s, c)))


def retrieve_offsets(psi: InstFreqMap, tau_bar: float) -> np.ndarray:
    """Per-bin initial phases that give every bin the target mean group delay.

    Integrates psi with zero offsets, measures each adjacent-bin pair's
    circular-mean group delay, and accumulates the correction tau_bar minus
    that mean across bins. Bin 0 is pinned to phase 0; that choice only sets
    a global delay.
    """
    values = psi.values
    n_bins = values.shape[1]
    if n_bins < 2:
        raise ValueError("offset retrieval needs at least 2 bins")
    phi0 = integrate_if(psi, np.zeros(n_bins)).values
    diffs = phi0[:, 1:] - phi0[:, :-1]
    c = np.cos(diffs).sum(axis=0)
    s = np.sin(diffs).sum(axis=0)
    resultant = np.hypot(c, s) / values.shape[0]
    if np.any(resultant < BARYCENTER_TOL):
        bad = int(np.argmin(resultant))
        raise ValueError(
            f"circular mean undefined between bins {bad} and {bad + 1}"
        )
    mean_gd = np.arctan2(s, c)
    offsets = np.zeros(n_bins)
    offsets[1:] = np.cumsum(tau_bar - mean_gd)
    return wrap_angle(offsets)


def _sc_from_arrays(est: np.ndarray, ref: np.ndarray) -> float:
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    norm = float(np.linalg.norm(est - ref))
    return float(np.log10(max(norm, SC_NORM_FLOOR)))


def spectral_convergence(est_mag, ref_mag) -> float:
    """log10 Frobenius norm of the magnitude difference, floored at 1e-12."""
    for m in (est_mag, ref_mag):
        if isinstance(m, MagnitudeMap) and m.normalized:
            raise ValueError("spectral convergence expects raw magnitudes")
    est = est_mag.values if isinstance(est_mag, MagnitudeMap) else np.asarray(est_mag)
    ref = ref_mag.values if isinstance(ref_mag, MagnitudeMap) else np.asarray(ref_mag)
    return _sc_from_arrays(np.asarray(est, float), np.asarray(ref, float))


def griffin_lim(
    ref_mag: MagnitudeMap,
    init_phase: PhaseMap,
    iterations: int,
    config: StftConfig,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> tuple[AudioClip, ConvergenceTrace]:
    """Alternating projection onto the fixed-magnitude and consistent-STFT sets.

    Records, for every k from 0 to `iterations`, the complex-domain distance
    between stft(x_k) and the magnitude-constrained target it came from, and
    the log spectral convergence of |stft(x_k)| against `ref_mag`. With
    iterations = 0 the returned waveform is just the initialization's.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if ref_mag.normalized:
        raise ValueError("Griffin-Lim needs the raw reference magnitude")
    ref = ref_mag.values
    if ref.shape != init_phase.values.shape:
        raise ValueError(
            f"shape mismatch: magnitude {ref.shape} vs phase {init_phase.values.shape}"
        )
    phase = init_phase.values
    ks = np.arange(iterations + 1)
    dists = np.empty(iterations + 1)
    log_sc = np.empty(iterations + 1)
    clip = None
    for k in range(iterations + 1):
        target = ComplexSpectrogram(
            values=ref * np.exp(1j * phase), config=config, sample_rate=sample_rate
        )
        clip = istft(target)
        redone = stft(clip, config)
        dists[k] = float(np.linalg.norm(redone.values - target.values))
        log_sc[k] = _sc_from_arrays(np.abs(redone.values), ref)
        phase = wrap_angle(np.angle(redone.values))
    trace = ConvergenceTrace(iterations=ks, distances=dists, log_sc=log_sc)
    return clip, trace


def reconstruct_waveform(
    ref_mag: MagnitudeMap,
    psi: InstFreqMap,
    tau_bar: float,
    gl_iterations: int,
    config: StftConfig,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> tuple[AudioClip, ConvergenceTrace]:
    """Integrate predicted IF with retrieved offsets, then refine with Griffin-Lim.

    gl_iterations = 0 yields the pure model-based reconstruction.
    """
    offsets = retrieve_offsets(psi, tau_bar)
    init_phase = integrate_if(psi, offsets)
    return griffin_lim(ref_mag, init_phase, gl_iterations, config, sample_rate)
