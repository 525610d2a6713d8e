import numpy as np
import pytest
from scipy.io import wavfile

from conftest import sine
from core import dsp
from core.errors import EmptyAudioError, MalformedHeaderError, SampleRateError, UnsupportedEncodingError
from core.models import AudioClip

RATE = dsp.TARGET_RATE
BIN_HZ = RATE / dsp.FRAME_SIZE


def _peak_hz(samples: np.ndarray, rate: int = RATE) -> float:
    frame = samples[:dsp.FRAME_SIZE] * np.hanning(dsp.FRAME_SIZE)
    return float(np.argmax(np.abs(np.fft.rfft(frame))) * rate / dsp.FRAME_SIZE)


def test_read_int16_scaling(tmp_path):
    path = tmp_path / "three.wav"
    wavfile.write(path, RATE, np.array([0, 16384, -32768], dtype=np.int16))
    clip = dsp.read_wav(path)
    np.testing.assert_array_equal(clip.samples, [0.0, 0.5, -1.0])
    assert clip.sample_rate == RATE


def test_read_stereo_mixes_to_mono(tmp_path):
    path = tmp_path / "stereo.wav"
    wavfile.write(path, RATE, np.array([[0.2, 0.4]], dtype=np.float32))
    assert dsp.read_wav(path).samples[0] == pytest.approx(0.3, abs=1e-7)


def test_read_errors(tmp_path):
    truncated = tmp_path / "bad.wav"
    truncated.write_bytes(b"RIFF\x24\x00\x00\x00WAVEfm")
    with pytest.raises(MalformedHeaderError):
        dsp.read_wav(truncated)

    int32 = tmp_path / "int32.wav"
    wavfile.write(int32, RATE, np.array([1, 2, 3], dtype=np.int32))
    with pytest.raises(UnsupportedEncodingError):
        dsp.read_wav(int32)

    empty = tmp_path / "empty.wav"
    wavfile.write(empty, RATE, np.array([], dtype=np.int16))
    with pytest.raises(EmptyAudioError):
        dsp.read_wav(empty)

    with pytest.raises(FileNotFoundError):
        dsp.read_wav(tmp_path / "missing.wav")


def test_fft_matches_reference_and_roundtrips(rng):
    x = rng.standard_normal((3, 256))
    spectrum = dsp.fft(x)
    np.testing.assert_allclose(spectrum, np.fft.fft(x), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(dsp.ifft(spectrum).real, x, rtol=1e-9, atol=1e-12)
    energy = (x ** 2).sum(axis=1)
    assert np.allclose((np.abs(spectrum) ** 2).sum(axis=1) / 256, energy, rtol=1e-9)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        dsp.fft(np.ones(1000))


def test_resample_counts_and_identity():
    clip = AudioClip(np.sin(np.arange(22050) / 10.0), 22050)
    up = dsp.resample(clip, 44100)
    assert abs(up.samples.size - 44100) <= 1
    same = dsp.resample(clip, 22050)
    np.testing.assert_array_equal(same.samples, clip.samples)


def test_resample_keeps_dominant_frequency():
    clip = AudioClip(sine(1000.0, 0.5, rate=8000), 8000)
    up = dsp.resample(clip, RATE)
    assert abs(_peak_hz(up.samples) - 1000.0) <= BIN_HZ


def test_mel_spectrogram_geometry():
    clip = AudioClip(np.zeros(30 * RATE), RATE)
    mel = dsp.mel_spectrogram(clip)
    assert mel.values.shape == (40, 1292)
    assert np.all(mel.values == 0.0)


def test_mel_spectrogram_wrong_rate():
    with pytest.raises(SampleRateError):
        dsp.mel_spectrogram(AudioClip(np.zeros(100), 22050))


def test_mel_band_of_pure_tone():
    clip = AudioClip(sine(1000.0, 43 * dsp.FRAME_SIZE / RATE), RATE)
    values = dsp.mel_spectrogram(clip).values
    bands = values.argmax(axis=0)
    assert len(set(bands)) == 1
    tone_bin = int(round(1000.0 / BIN_HZ))
    covering = set(np.flatnonzero(dsp.mel_filterbank()[:, tone_bin] > 0))
    assert bands[0] in covering


def test_classical_feature_layout():
    assert len(dsp.CLASSICAL_FEATURE_NAMES) == 32
    assert dsp.CLASSICAL_FEATURE_NAMES[13] == "flux_mean"
    assert dsp.CLASSICAL_FEATURE_NAMES[-1] == "centroid_std"


def test_white_noise_centroid_and_rolloff(rng):
    clip = AudioClip(rng.uniform(-0.5, 0.5, RATE), RATE)
    features = dsp.classical_audio_features(clip)
    flux, rolloff, centroid = features[13:16]
    assert 8000 < centroid < 14000
    assert rolloff > centroid
    assert flux > 0


def test_silence_has_no_flux():
    features = dsp.frame_features(AudioClip(np.zeros(10 * dsp.FRAME_SIZE), RATE))
    np.testing.assert_array_equal(features[:, 13], 0.0)


def test_flux_spikes_only_at_boundary():
    frame = np.arange(dsp.FRAME_SIZE)
    low = 0.5 * np.sin(2 * np.pi * 10 * frame / dsp.FRAME_SIZE)
    high = 0.5 * np.sin(2 * np.pi * 47 * frame / dsp.FRAME_SIZE)
    samples = np.concatenate([np.tile(low, 10), np.tile(high, 10)])
    flux = dsp.frame_features(AudioClip(samples, RATE))[:, 13]
    assert flux[10] > 0
    np.testing.assert_array_equal(np.delete(flux, 10), 0.0)


def test_stationary_sine_has_no_flux_at_partial_tail():
    aligned = sine(10 * BIN_HZ, 2.0)
    assert aligned.size % dsp.FRAME_SIZE != 0
    features = dsp.frame_features(AudioClip(aligned, RATE))
    assert features.shape[0] == aligned.size // dsp.FRAME_SIZE
    np.testing.assert_allclose(features[1:, 13], 0.0, atol=1e-8)
    assert dsp.classical_audio_features(AudioClip(aligned, RATE))[13] == pytest.approx(0.0, abs=1e-8)

    tone = sine(440.0, 2.0)
    flux = dsp.frame_features(AudioClip(tone, RATE))[1:, 13]
    peak = np.sqrt(dsp.power_spectrum(tone[:dsp.FRAME_SIZE] * np.hanning(dsp.FRAME_SIZE))).max()
    assert flux.max() < 0.01 * peak


def test_frame_features_shorter_than_one_frame():
    features = dsp.frame_features(AudioClip(sine(440.0, 0.01), RATE))
    assert features.shape == (1, 16)
    assert features[0, 13] == 0.0


def test_pitch_shift_octave_up():
    clip = AudioClip(sine(440.0, 1.0), RATE)
    shifted = dsp.pitch_shift(clip, 12)
    assert abs(_peak_hz(shifted.samples) - 880.0) <= BIN_HZ
    assert abs(shifted.samples.size - clip.samples.size / 2) <= 1


def test_pitch_shift_down_and_identity():
    clip = AudioClip(sine(440.0, 0.5), RATE)
    assert abs(dsp.pitch_shift(clip, -12).samples.size - 2 * clip.samples.size) <= 1
    np.testing.assert_allclose(dsp.pitch_shift(clip, 0).samples, clip.samples)
    with pytest.raises(ValueError):
        dsp.pitch_shift(clip, 13)


def _band_energy(samples: np.ndarray, above_hz: float) -> float:
    spectrum = np.abs(np.fft.rfft(samples)) ** 2
    freqs = np.fft.rfftfreq(samples.size, 1.0 / RATE)
    return float(spectrum[freqs > above_hz].sum())


def test_lossy_removes_high_band():
    clip = AudioClip(sine(18000.0, 0.5), RATE)
    out = dsp.lossy_simulate(clip)
    assert out.samples.size == clip.samples.size
    assert _band_energy(out.samples, 16000) < 0.01 * _band_energy(clip.samples, 16000)


def test_lossy_keeps_speech_band_and_silence():
    clip = AudioClip(sine(1000.0, 0.5), RATE)
    out = dsp.lossy_simulate(clip)
    assert np.corrcoef(out.samples, clip.samples)[0, 1] > 0.95
    silent = dsp.lossy_simulate(AudioClip(np.zeros(3000), RATE))
    np.testing.assert_array_equal(silent.samples, 0.0)


def test_fix_length():
    np.testing.assert_array_equal(dsp.fix_length(np.ones(3), 5), [1, 1, 1, 0, 0])
    np.testing.assert_array_equal(dsp.fix_length(np.arange(6.0), 2), [0, 1])


def test_load_clip_resamples(write_wav):
    path = write_wav("low.wav", sine(500.0, 0.25, rate=22050), rate=22050)
    clip = dsp.load_clip(path)
    assert clip.sample_rate == RATE
    assert abs(clip.samples.size - RATE // 4) <= 1


def test_parallel_extraction_keeps_order():
    items = list(range(20))
    assert dsp.extract_features_parallel(items, lambda k: k * k, threads=4) == [k * k for k in items]
