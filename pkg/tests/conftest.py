import numpy as np
import pytest

from core import dsp
from core.models import AudioClip, MoodLabel, PredictionRow, PredictionSet, TrackRecord
from core.synthetic import write_synthetic_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sine(freq: float, seconds: float, rate: int = dsp.TARGET_RATE, amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(round(seconds * rate))) / rate
    return amplitude * np.sin(2 * np.pi * freq * t)


@pytest.fixture
def write_wav(tmp_path):
    """Write mono samples to ``tmp_path/<name>`` and return the path."""
    def _write(name: str, samples, rate: int = dsp.TARGET_RATE, encoding: str = "int16"):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        dsp.write_wav(path, AudioClip(np.asarray(samples, dtype=np.float64), rate), encoding)
        return path
    return _write


@pytest.fixture
def small_corpus(tmp_path):
    return write_synthetic_corpus(tmp_path / "corpus", n_tracks=15, seed=3, duration=0.5)


def make_record(msd_id: str, artist: str, valence: float = 0.0, arousal: float = 0.0, **kwargs) -> TrackRecord:
    return TrackRecord(msd_id, artist, f"Song {msd_id}", MoodLabel(valence, arousal), **kwargs)


def make_predictions(values, truth, split: str = "test", name: str = "p", prefix: str = "T") -> PredictionSet:
    """PredictionSet from [(v, a), ...] predictions and truths."""
    rows = [PredictionRow(f"{prefix}{k:03d}", split if isinstance(split, str) else split[k],
                          float(p[0]), float(p[1]), float(t[0]), float(t[1]))
            for k, (p, t) in enumerate(zip(values, truth))]
    return PredictionSet(rows, name=name)
