"""Audio decoding, mel-spectrogram inputs, classical spectral features and augmentation."""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, TypeVar, Union

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import EmptyAudioError, MalformedHeaderError, SampleRateError, UnsupportedEncodingError
from .models import AudioClip, MelSpectrogram

logger = logging.getLogger(__name__)

TARGET_RATE = 44100
FRAME_SIZE = 1024
N_MELS = 40
N_MFCC = 13
ROLLOFF_FRACTION = 0.85

# Order of the 32-dim classical vector: 16 frame features, means first, then standard deviations.
FRAME_FEATURE_NAMES = [f"mfcc{i}" for i in range(N_MFCC)] + ["flux", "rolloff", "centroid"]
CLASSICAL_FEATURE_NAMES = ([f"{name}_mean" for name in FRAME_FEATURE_NAMES]
                           + [f"{name}_std" for name in FRAME_FEATURE_NAMES])


# =============================================================================
# WAV I/O
# =============================================================================

def read_wav(path: Union[str, Path]) -> AudioClip:
    """Decode a PCM WAV (16-bit integer or 32-bit float), mixing stereo down to mono."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except OSError:
        raise
    except Exception as e:
        raise MalformedHeaderError(f"{path}: cannot parse WAV header ({e})") from e

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample encoding {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise EmptyAudioError(f"{path}: no audio samples")
    return AudioClip(samples, int(rate))


def write_wav(path: Union[str, Path], clip: AudioClip, encoding: str = "int16") -> None:
    """Write a clip as 16-bit PCM or 32-bit float WAV."""
    if encoding == "int16":
        data = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif encoding == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise UnsupportedEncodingError(f"Cannot write encoding {encoding!r}")
    wavfile.write(path, clip.sample_rate, data)


# =============================================================================
# Radix-2 FFT
# =============================================================================

def _bit_reversal(n: int) -> np.ndarray:
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis (length a power of two)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    a = x[..., _bit_reversal(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    return a


def ifft(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of ``fft`` along the last axis."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    return np.conj(fft(np.conj(spectrum))) / spectrum.shape[-1]


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    """|FFT|² of real frames, non-negative bins only (n/2 + 1)."""
    n = frames.shape[-1]
    spec = fft(frames)[..., : n // 2 + 1]
    return spec.real ** 2 + spec.imag ** 2


def frame_signal(samples: np.ndarray, frame_size: int = FRAME_SIZE) -> np.ndarray:
    """Non-overlapping frames, the last partial frame zero-padded: [ceil(n/frame), frame]."""
    n_frames = -(-samples.size // frame_size)
    padded = np.zeros(n_frames * frame_size)
    padded[: samples.size] = samples
    return padded.reshape(n_frames, frame_size)


def _stft_power(clip: AudioClip, full_frames: bool = False) -> np.ndarray:
    samples = clip.samples
    if full_frames and samples.size >= FRAME_SIZE:
        samples = samples[: samples.size // FRAME_SIZE * FRAME_SIZE]
    window = get_window("hann", FRAME_SIZE)
    return power_spectrum(frame_signal(samples) * window)


# =============================================================================
# Mel scale
# =============================================================================

def hz_to_mel(hz):
    """Hz to mel (HTK formula)."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    """Mel to Hz (HTK formula)."""
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = FRAME_SIZE, sample_rate: int = TARGET_RATE,
                   fmin: float = 0.0, fmax: float = None) -> np.ndarray:
    """Triangular HTK-scale filters with unit peaks: [n_mels, n_fft/2 + 1]."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    bank = np.zeros((n_mels, freqs.size))
    for m in range(n_mels):
        lo, center, hi = edges[m:m + 3]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def _require_rate(clip: AudioClip, what: str) -> None:
    if clip.sample_rate != TARGET_RATE:
        raise SampleRateError(f"{what} needs {TARGET_RATE} Hz audio, got {clip.sample_rate} Hz")


def mel_spectrogram(clip: AudioClip, n_mels: int = N_MELS) -> MelSpectrogram:
    """log(1 + mel power) over Hann-windowed 1024-sample blocks with no overlap."""
    _require_rate(clip, "mel_spectrogram")
    mel = _stft_power(clip) @ mel_filterbank(n_mels).T
    return MelSpectrogram(np.log1p(mel).T, FRAME_SIZE / TARGET_RATE)


def frames_for_duration(seconds: float, sample_rate: int = TARGET_RATE) -> int:
    """Number of 1024-sample frames covering ``seconds``, the last one padded."""
    return -(-int(round(seconds * sample_rate)) // FRAME_SIZE)


# =============================================================================
# Classical features
# =============================================================================

def frame_features(clip: AudioClip) -> np.ndarray:
    """Per-frame [n_frames, 16]: 13 MFCCs, spectral flux, rolloff (Hz), centroid (Hz).

    Only whole 1024-sample frames are used; the partial tail is dropped unless
    the clip is shorter than one frame, in which case it is zero-padded.
    """
    _require_rate(clip, "classical_audio_features")
    power = _stft_power(clip, full_frames=True)
    freqs = np.arange(power.shape[1]) * TARGET_RATE / FRAME_SIZE

    log_mel = np.log(power @ mel_filterbank().T + 1e-10)
    mfcc = dct(log_mel, type=2, norm="ortho", axis=1)[:, :N_MFCC]

    magnitude = np.sqrt(power)
    flux = np.zeros(power.shape[0])
    if power.shape[0] > 1:
        rise = np.maximum(np.diff(magnitude, axis=0), 0.0)
        flux[1:] = np.sqrt((rise ** 2).sum(axis=1))

    total = power.sum(axis=1)
    safe = np.where(total > 0, total, 1.0)
    centroid = np.where(total > 0, (power * freqs).sum(axis=1) / safe, 0.0)
    reached = np.cumsum(power, axis=1) >= ROLLOFF_FRACTION * total[:, None]
    rolloff = np.where(total > 0, freqs[reached.argmax(axis=1)], 0.0)

    return np.column_stack([mfcc, flux, rolloff, centroid])


def classical_audio_features(clip: AudioClip) -> np.ndarray:
    """32-dim track vector: mean then std over frames of the 16 frame features."""
    feats = frame_features(clip)
    return np.concatenate([feats.mean(axis=0), feats.std(axis=0)])


# =============================================================================
# Resampling and augmentation
# =============================================================================

def _interpolate(samples: np.ndarray, ratio: float) -> np.ndarray:
    """Linear interpolation onto a grid ``ratio`` times denser."""
    n_out = max(1, int(round(samples.size * ratio)))
    positions = np.arange(n_out) / ratio
    return np.interp(positions, np.arange(samples.size), samples)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample by linear interpolation; the same rate returns a copy."""
    if target_rate <= 0:
        raise ValueError(f"Target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    return AudioClip(_interpolate(clip.samples, target_rate / clip.sample_rate), target_rate)


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Shift pitch by resampling and relabelling at the original rate; duration changes."""
    if abs(semitones) > 12:
        raise ValueError(f"Pitch shift limited to ±12 semitones, got {semitones}")
    factor = 2.0 ** (semitones / 12.0)
    if semitones == 0:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    return AudioClip(_interpolate(clip.samples, 1.0 / factor), clip.sample_rate)


def lossy_simulate(clip: AudioClip, cutoff_hz: float = 16000.0, levels: int = 256) -> AudioClip:
    """Per-block low-pass and magnitude quantization standing in for a perceptual codec."""
    n = clip.samples.size
    blocks = frame_signal(clip.samples)
    spectrum = fft(blocks)
    bins = np.arange(FRAME_SIZE)
    freqs = np.minimum(bins, FRAME_SIZE - bins) * clip.sample_rate / FRAME_SIZE
    spectrum[:, freqs > cutoff_hz] = 0.0

    magnitude = np.abs(spectrum)
    peak = magnitude.max(axis=1, keepdims=True)
    scale = np.where(peak > 0, peak, 1.0)
    steps = levels - 1
    quantized = np.round(magnitude / scale * steps) / steps * scale
    spectrum = quantized * np.exp(1j * np.angle(spectrum))
    out = ifft(spectrum).real.reshape(-1)[:n]
    return AudioClip(out, clip.sample_rate)


def fix_length(samples: np.ndarray, n: int) -> np.ndarray:
    """Cut or zero-pad to exactly ``n`` samples."""
    if samples.size >= n:
        return samples[:n].copy()
    out = np.zeros(n)
    out[: samples.size] = samples
    return out


def load_clip(path: Union[str, Path], target_rate: int = TARGET_RATE) -> AudioClip:
    """read_wav followed by resampling to ``target_rate`` when needed."""
    clip = read_wav(path)
    if clip.sample_rate != target_rate:
        logger.debug("Resampling %s from %d Hz to %d Hz", path, clip.sample_rate, target_rate)
        clip = resample(clip, target_rate)
    return clip


Item = TypeVar("Item")


def extract_features_parallel(items: Iterable[Item], fn: Callable[[Item], np.ndarray],
                              threads: int = 1) -> list[np.ndarray]:
    """Apply ``fn`` to every item, in input order, on up to ``threads`` workers."""
    items = list(items)
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
