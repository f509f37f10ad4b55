import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import synthdata
from specphase.dsp import MagnitudeMap, PhaseMap, decompose, stft
from specphase.phase import (
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
from specphase.prep import sine_clip

SR = 16000

angles = st.floats(
    min_value=-50.0, max_value=50.0, allow_nan=False, allow_infinity=False
)


# ---------------------------------------------------------------------------
# wrap_angle
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "theta,expected",
    [
        (1.5 * np.pi, -0.5 * np.pi),
        (np.pi, -np.pi),
        (-np.pi, -np.pi),
        (0.0, 0.0),
        (5.0 * np.pi, -np.pi),
    ],
)
def test_wrap_angle_examples(theta, expected):
    assert wrap_angle(theta) == pytest.approx(expected, abs=1e-12)


def test_wrap_angle_rejects_nonfinite():
    with pytest.raises(ValueError):
        wrap_angle(np.inf)


@given(angles)
@settings(max_examples=200, deadline=None)
def test_wrap_angle_range_and_idempotence(theta):
    w = wrap_angle(theta)
    assert -np.pi <= w < np.pi
    assert wrap_angle(w) == pytest.approx(w, abs=1e-12)


@given(angles, st.integers(min_value=-5, max_value=5))
@settings(max_examples=200, deadline=None)
def test_wrap_angle_periodic(theta, k):
    assert wrap_angle(theta + 2 * np.pi * k) == pytest.approx(
        wrap_angle(theta), abs=1e-9
    )


# ---------------------------------------------------------------------------
# instantaneous frequency
# ---------------------------------------------------------------------------

def test_if_constant_phase():
    phase = PhaseMap(values=np.full((5, 3), 0.4))
    psi = instantaneous_frequency(phase)
    assert psi.alignment == "forward"
    assert psi.shape == (5, 3)
    np.testing.assert_allclose(psi.values, 0.0, atol=1e-15)


def test_if_linear_ramp():
    t = np.arange(8)[:, None] * (np.pi / 4)
    phase = PhaseMap(values=wrap_angle(np.tile(t, (1, 4))))
    psi = instantaneous_frequency(phase)
    np.testing.assert_allclose(psi.values, np.pi / 4, atol=1e-12)


def test_if_pure_tone_peak_bin():
    clip = sine_clip(1025.0, SR, SR, amplitude=1.0)
    mag, phase = decompose(stft(clip))
    peak = int(np.argmax(mag.values.sum(axis=0)))
    psi = instantaneous_frequency(phase)
    expected = wrap_angle(2 * np.pi * 1025.0 * 0.01)
    assert expected == pytest.approx(np.pi / 2, abs=1e-12)
    assert np.max(np.abs(psi.values[:-1, peak] - expected)) < 1e-3


def test_if_requires_two_frames():
    with pytest.raises(ValueError):
        instantaneous_frequency(PhaseMap(values=np.zeros((1, 4))))


def test_if_padding_repeats_last_row():
    rng = np.random.default_rng(0)
    phase = PhaseMap(values=wrap_angle(rng.uniform(-np.pi, np.pi, (6, 5))))
    psi = instantaneous_frequency(phase)
    np.testing.assert_array_equal(psi.values[-1], psi.values[-2])


def test_if_exact_inversion_invariant():
    # Cumulative sums of the interior rows rebuild the phase modulo 2*pi.
    clip = synthdata.speech_like_clip(4000)
    _, phase = decompose(stft(clip))
    psi = instantaneous_frequency(phase)
    rebuilt = phase.values[0][None, :] + np.concatenate(
        [np.zeros((1, phase.shape[1])), np.cumsum(psi.values[:-1], axis=0)]
    )
    err = wrap_angle(rebuilt - phase.values)
    assert np.max(np.abs(err)) < 1e-9


# ---------------------------------------------------------------------------
# smoothed (centered) instantaneous frequency
# ---------------------------------------------------------------------------

def test_smoothed_if_linear_ramp():
    t = np.arange(9)[:, None] * 0.3
    phase = PhaseMap(values=wrap_angle(np.tile(t, (1, 3))))
    psi = smoothed_if(phase)
    assert psi.alignment == "centered"
    np.testing.assert_allclose(psi.values, 0.3, atol=1e-12)


def test_smoothed_if_unwrap_rule():
    # Differences per frame: [pi - 0.1, -(pi - 0.1)] unwrap to
    # [pi - 0.1, pi + 0.1]; their centered mean wraps to -pi.
    d0 = np.pi - 0.1
    col = np.array([0.0, d0, d0 - (np.pi - 0.1)])
    phase = PhaseMap(values=wrap_angle(col)[:, None])
    psi = smoothed_if(phase)
    assert psi.values[1, 0] == pytest.approx(-np.pi, abs=1e-12)
    # boundary rows carry the one-sided unwrapped differences
    assert psi.values[0, 0] == pytest.approx(d0, abs=1e-12)
    assert psi.values[2, 0] == pytest.approx(wrap_angle(np.pi + 0.1), abs=1e-12)


def test_smoothed_if_matches_forward_on_tone():
    # A tone well away from DC and Nyquist keeps the negative-frequency
    # image's leakage below the tolerance; the phase differences are then
    # constant in time and centering changes nothing.
    clip = sine_clip(4031.25, SR, SR, amplitude=1.0)
    mag, phase = decompose(stft(clip))
    peak = int(np.argmax(mag.values.sum(axis=0)))
    forward = instantaneous_frequency(phase).values[1:-1, peak]
    centered = smoothed_if(phase).values[1:-1, peak]
    assert np.max(np.abs(forward - centered)) < 1e-6


def test_smoothed_if_equals_forward_where_locally_constant():
    rng = np.random.default_rng(1)
    slopes = rng.uniform(-np.pi, np.pi, 4)
    rows = np.arange(7)[:, None] * slopes[None, :]
    phase = PhaseMap(values=wrap_angle(rows))
    forward = instantaneous_frequency(phase)
    centered = smoothed_if(phase)
    err = wrap_angle(forward.values - centered.values)
    assert np.max(np.abs(err)) < 1e-9


def test_smoothed_if_requires_three_frames():
    with pytest.raises(ValueError):
        smoothed_if(PhaseMap(values=np.zeros((2, 4))))


# ---------------------------------------------------------------------------
# group delay
# ---------------------------------------------------------------------------

def test_group_delay_frequency_ramp():
    f = np.arange(6)[None, :] * 0.3
    phase = PhaseMap(values=wrap_angle(np.tile(f, (4, 1))))
    gd = group_delay(phase)
    assert gd.values.shape == (4, 5)
    np.testing.assert_allclose(gd.values, 0.3, atol=1e-12)


def test_group_delay_constant_phase():
    gd = group_delay(PhaseMap(values=np.full((3, 4), -1.0)))
    np.testing.assert_allclose(gd.values, 0.0, atol=1e-15)


def test_group_delay_shifted_impulse():
    # One window holding an impulse at n0: the DFT phase slope between
    # adjacent bins is -2*pi*n0/fft_size everywhere.
    n0 = 7
    fft_size = 512
    frame = np.zeros(400)
    frame[n0] = 1.0
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400)
    spectrum = np.fft.rfft(frame * window, n=fft_size)[1:]
    phase = PhaseMap(values=wrap_angle(np.angle(spectrum))[None, :])
    gd = group_delay(phase)
    expected = wrap_angle(-2 * np.pi * n0 / fft_size)
    np.testing.assert_allclose(gd.values, expected, atol=1e-9)


def test_group_delay_requires_two_bins():
    with pytest.raises(ValueError):
        group_delay(PhaseMap(values=np.zeros((4, 1))))


# ---------------------------------------------------------------------------
# circular mean
# ---------------------------------------------------------------------------

def test_circular_mean_examples():
    assert circular_mean([np.pi / 2, np.pi / 2]) == pytest.approx(np.pi / 2)
    assert circular_mean([-np.pi / 4, np.pi / 4]) == pytest.approx(0.0, abs=1e-12)


def test_circular_mean_degenerate():
    with pytest.raises(ValueError, match="barycenter"):
        circular_mean([0.0, np.pi])


def test_circular_mean_empty():
    with pytest.raises(ValueError):
        circular_mean([])


@given(
    st.lists(angles, min_size=1, max_size=12),
    st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
)
@settings(max_examples=150, deadline=None)
def test_circular_mean_rotation_equivariance(values, shift):
    arr = np.asarray(values)
    resultant = abs(np.exp(1j * arr).sum()) / arr.size
    shifted = abs(np.exp(1j * (arr + shift)).sum()) / arr.size
    if resultant < 1e-6 or shifted < 1e-6:
        return  # barycenter too close to the origin to be stable
    lhs = circular_mean(arr + shift)
    rhs = wrap_angle(circular_mean(arr) + shift)
    assert abs(wrap_angle(lhs - rhs)) < 1e-9


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def test_smoothness_constant_field():
    psi = InstFreqMap(values=np.full((4, 5), 0.7), alignment="forward")
    w = smoothness_weights(psi)
    np.testing.assert_allclose(w.values, 1.0, atol=1e-12)
    assert w.strategy == "smoothness"


def test_smoothness_plus_pattern_raw_value():
    # Center cell whose 4 neighbors each differ by a wrapped pi/2.
    v = np.zeros((3, 3))
    v[0, 1] = v[2, 1] = v[1, 0] = v[1, 2] = np.pi / 2
    psi = InstFreqMap(values=v, alignment="forward")
    w = smoothness_weights(psi)
    # Undo the mean-1 rescale to inspect the raw inverse total variation.
    raw_center = 1.0 / (1.0 + 2.0 * np.pi)
    rescale = w.values[1, 1] / raw_center
    total = np.abs(wrap_angle(v[0, 1] - v[1, 1]))
    assert w.values[1, 1] == pytest.approx(raw_center * rescale)
    assert total == pytest.approx(np.pi / 2)
    # The raw value itself, via the known rescale factor of the full map:
    tv = np.zeros_like(v)
    dt = np.abs(wrap_angle(v[1:] - v[:-1]))
    tv[:-1] += dt
    tv[1:] += dt
    df = np.abs(wrap_angle(v[:, 1:] - v[:, :-1]))
    tv[:, :-1] += df
    tv[:, 1:] += df
    raw = 1.0 / (1.0 + tv)
    assert raw[1, 1] == pytest.approx(raw_center, abs=1e-12)
    np.testing.assert_allclose(w.values, raw / raw.mean(), atol=1e-12)


def test_smoothness_direct_summation_oracle():
    rng = np.random.default_rng(2)
    v = wrap_angle(rng.uniform(-np.pi, np.pi, (6, 7)))
    psi = InstFreqMap(values=v, alignment="forward")
    w = smoothness_weights(psi)
    raw = np.zeros_like(v)
    for t in range(6):
        for f in range(7):
            total = 0.0
            for dt, df in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                tt, ff = t + dt, f + df
                if 0 <= tt < 6 and 0 <= ff < 7:
                    total += abs(wrap_angle(v[tt, ff] - v[t, f]))
            raw[t, f] = 1.0 / (1.0 + total)
    np.testing.assert_allclose(w.values, raw / raw.mean(), atol=1e-12)
    assert w.values.mean() == pytest.approx(1.0, abs=1e-12)


def test_error_weights_none():
    mag = MagnitudeMap(values=np.ones((3, 4)))
    w = error_weights(mag, None, "none")
    np.testing.assert_array_equal(w.values, np.ones((3, 4)))


def test_error_weights_magnitude():
    mag = MagnitudeMap(values=np.array([[1.0, 3.0]]))
    w = error_weights(mag, None, "mag")
    np.testing.assert_allclose(w.values, [[0.5, 1.5]])


def test_error_weights_sqrt():
    mag = MagnitudeMap(values=np.array([[1.0, 9.0]]))
    w = error_weights(mag, None, "sqrtmag")
    np.testing.assert_allclose(w.values, [[0.5, 1.5]])


def test_error_weights_require_raw_magnitude():
    from specphase.dsp import normalize_magnitude

    norm = normalize_magnitude(MagnitudeMap(values=np.array([[1.0, 3.0]])))
    with pytest.raises(ValueError, match="raw"):
        error_weights(norm, None, "mag")


def test_error_weights_zero_magnitude():
    with pytest.raises(ValueError, match="all-zero"):
        error_weights(MagnitudeMap(values=np.zeros((2, 2))), None, "mag")


def test_error_weights_unknown_strategy():
    with pytest.raises(ValueError, match="strategy"):
        error_weights(MagnitudeMap(values=np.ones((2, 2))), None, "magnitude")


def test_all_weight_maps_mean_one():
    rng = np.random.default_rng(3)
    mag = MagnitudeMap(values=rng.uniform(0, 5, (8, 9)))
    psi = InstFreqMap(values=wrap_angle(rng.uniform(-9, 9, (8, 9))))
    for strategy in ("none", "mag", "sqrtmag", "smoothness"):
        w = error_weights(mag, psi, strategy)
        assert np.all(w.values >= 0.0)
        assert w.values.mean() == pytest.approx(1.0, abs=1e-9)


def test_weight_map_validates_mean():
    with pytest.raises(ValueError, match="average"):
        WeightMap(values=np.full((2, 2), 2.0), strategy="none")
