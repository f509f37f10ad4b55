"""specphase: STFT phase prediction from magnitudes, and everything around it.

The package covers the full loop: STFT analysis, instantaneous-frequency
targets, weighted circular losses, a small convolutional predictor trained
with hand-rolled gradients, group-delay-based phase-offset retrieval, and
Griffin-Lim inversion with a spectral-convergence benchmark.
"""

from .dsp import (
    AudioClip,
    ComplexSpectrogram,
    MagnitudeMap,
    PhaseMap,
    StftConfig,
    decompose,
    denormalize_magnitude,
    istft,
    load_wav,
    normalize_magnitude,
    recompose,
    save_wav,
    stft,
)
from .losses import HybridLossReport, LossReport, cosine_loss, hybrid_loss, magnitude_mse
from .model import (
    ArchConfig,
    ModelParams,
    TrainConfig,
    backward,
    embed,
    forward,
    init_model,
    linear_probe,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .phase import (
    GroupDelayMap,
    InstFreqMap,
    WeightMap,
    circular_mean,
    error_weights,
    group_delay,
    instantaneous_frequency,
    smoothed_if,
    smoothness_weights,
    wrap_angle,
)
from .reconstruct import (
    ConvergenceTrace,
    estimate_mean_group_delay,
    griffin_lim,
    integrate_if,
    reconstruct_waveform,
    retrieve_offsets,
    spectral_convergence,
)

__version__ = "0.1.0"
