import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import synthdata
from specphase.dsp import decompose, stft
from specphase.model import ArchConfig, TrainConfig, init_model, train
from specphase.prep import training_example
from specphase.reconstruct import estimate_mean_group_delay

TOY_ARCH = ArchConfig(
    input_shape=(synthdata.TOY_FRAMES, synthdata.TOY_STFT.num_bins),
    channels=(8, 16, 32),
    kernel=3,
    embedding_dim=16,
    heads=("phase",),
    pool=2,
)

TOY_TRAIN = TrainConfig(
    learning_rate=0.01,
    steps=2000,
    batch_size=2,
    weight_strategy="mag",
    seed=3,
)


@pytest.fixture(scope="session")
def tone_clips():
    return synthdata.tone_corpus()


@pytest.fixture(scope="session")
def tone_dataset(tone_clips):
    return [
        training_example(c, synthdata.TOY_STFT, TOY_TRAIN.weight_strategy)
        for c in tone_clips
    ]


@pytest.fixture(scope="session")
def tau_calibration(tone_clips):
    phases = [decompose(stft(c, synthdata.TOY_STFT))[1] for c in tone_clips]
    return estimate_mean_group_delay(phases)


@pytest.fixture(scope="session")
def trained_toy_model(tone_dataset):
    """2000-step SGD run on the 20-tone corpus; shared by the slow tests."""
    params = init_model(TOY_ARCH, seed=1)
    trained, history = train(params, tone_dataset, TOY_TRAIN)
    assert np.isfinite(history).all()
    return trained, history
