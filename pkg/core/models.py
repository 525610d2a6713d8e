"""Data models for MoodNet."""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np


class Mode(Enum):
    """Input modality of a model or pipeline."""
    AUDIO = "audio"
    LYRICS = "lyrics"
    BIMODAL = "bimodal"


class Augmentation(Enum):
    """Label-preserving transform applied to a training segment."""
    ORIGINAL = "original"
    PITCH_UP = "pitch_up"
    PITCH_DOWN = "pitch_down"
    LOSSY = "lossy"


class Split(Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


@dataclass(frozen=True)
class MoodLabel:
    """A point in valence/arousal space."""
    valence: float
    arousal: float

    def __post_init__(self):
        if not (math.isfinite(self.valence) and math.isfinite(self.arousal)):
            raise ValueError(f"MoodLabel values must be finite, got ({self.valence}, {self.arousal})")

    def as_array(self) -> np.ndarray:
        """(valence, arousal) as a length-2 array."""
        return np.array([self.valence, self.arousal])


@dataclass(frozen=True)
class LexiconEntry:
    """A word with its valence and arousal ratings."""
    word: str
    valence: float
    arousal: float

    def __post_init__(self):
        if not self.word or self.word != self.word.lower():
            raise ValueError(f"Lexicon words must be nonempty lowercase, got {self.word!r}")
        if not (math.isfinite(self.valence) and math.isfinite(self.arousal)):
            raise ValueError(f"Lexicon values for {self.word!r} must be finite")


@dataclass
class TrackRecord:
    """One song: identifiers, label and optional paths to its audio and lyrics."""
    msd_id: str
    artist: str
    title: str
    label: MoodLabel
    audio_path: Optional[str] = None
    lyrics: Optional[str] = None
    lyrics_path: Optional[str] = None
    extra: dict[str, str] = field(default_factory=dict)  # unknown CSV columns, kept on rewrite

    def __post_init__(self):
        if not self.artist:
            raise ValueError(f"Track {self.msd_id} has no artist")

    @property
    def split(self) -> Optional[str]:
        return self.extra.get("split")

    def with_label(self, label: MoodLabel) -> "TrackRecord":
        """Copy of the record with another label."""
        return TrackRecord(self.msd_id, self.artist, self.title, label, self.audio_path,
                           self.lyrics, self.lyrics_path, dict(self.extra))

    def to_dict(self) -> dict:
        """Convert to a flat dictionary, one entry per CSV column."""
        data = {
            'msd_id': self.msd_id,
            'artist': self.artist,
            'title': self.title,
            'valence': repr(self.label.valence),
            'arousal': repr(self.label.arousal),
        }
        if self.audio_path is not None:
            data['audio_path'] = self.audio_path
        if self.lyrics_path is not None:
            data['lyrics_path'] = self.lyrics_path
        data.update(self.extra)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'TrackRecord':
        """Create TrackRecord from dictionary."""
        known = {'msd_id', 'artist', 'title', 'valence', 'arousal', 'audio_path', 'lyrics_path'}
        return cls(
            msd_id=data['msd_id'],
            artist=data['artist'],
            title=data.get('title', ''),
            label=MoodLabel(float(data['valence']), float(data['arousal'])),
            audio_path=data.get('audio_path') or None,
            lyrics_path=data.get('lyrics_path') or None,
            extra={k: v for k, v in data.items() if k not in known},
        )


@dataclass
class LabelStats:
    """Per-dimension mean and population std used to z-score labels."""
    valence_mean: float
    valence_std: float
    arousal_mean: float
    arousal_std: float
    source: str = "train"

    def normalize(self, label: MoodLabel) -> MoodLabel:
        """Z-score a label."""
        return MoodLabel((label.valence - self.valence_mean) / self.valence_std,
                         (label.arousal - self.arousal_mean) / self.arousal_std)

    def denormalize(self, label: MoodLabel) -> MoodLabel:
        """Undo ``normalize``."""
        return MoodLabel(label.valence * self.valence_std + self.valence_mean,
                         label.arousal * self.arousal_std + self.arousal_mean)

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            'valence_mean': self.valence_mean,
            'valence_std': self.valence_std,
            'arousal_mean': self.arousal_mean,
            'arousal_std': self.arousal_std,
            'source': self.source,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'LabelStats':
        """Create LabelStats from dictionary."""
        return cls(
            valence_mean=float(data['valence_mean']),
            valence_std=float(data['valence_std']),
            arousal_mean=float(data['arousal_mean']),
            arousal_std=float(data['arousal_std']),
            source=data.get('source', 'train'),
        )


@dataclass
class AudioClip:
    """Mono samples in [-1, 1] at a sample rate in Hz."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("AudioClip needs at least one mono sample")
        if self.sample_rate <= 0:
            raise ValueError(f"Sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        """Clip length in seconds."""
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    """Log-compressed mel band energies [n_mels, n_frames]."""
    values: np.ndarray
    frame_duration: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class SegmentSample:
    """One model input segment cut from a track, with the track's label."""
    msd_id: str
    label: MoodLabel
    augmentation: Augmentation = Augmentation.ORIGINAL
    mel: Optional[np.ndarray] = None      # [n_mels, n_frames]
    lyrics: Optional[np.ndarray] = None   # [embedding_dim, words]
    start: float = 0.0                    # seconds into the track; word offset for lyrics-only

    def inputs(self) -> dict[str, np.ndarray]:
        """Model inputs by branch name (audio, lyrics)."""
        out = {}
        if self.mel is not None:
            out['audio'] = self.mel
        if self.lyrics is not None:
            out['lyrics'] = self.lyrics
        return out


@dataclass
class PredictionRow:
    """Track-level prediction against its true label."""
    msd_id: str
    split: str
    valence_pred: float
    arousal_pred: float
    valence_true: float
    arousal_true: float

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            'msd_id': self.msd_id,
            'split': self.split,
            'valence_pred': repr(self.valence_pred),
            'arousal_pred': repr(self.arousal_pred),
            'valence_true': repr(self.valence_true),
            'arousal_true': repr(self.arousal_true),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'PredictionRow':
        """Create PredictionRow from dictionary."""
        return cls(
            msd_id=data['msd_id'],
            split=data.get('split', 'test'),
            valence_pred=float(data['valence_pred']),
            arousal_pred=float(data['arousal_pred']),
            valence_true=float(data['valence_true']),
            arousal_true=float(data['arousal_true']),
        )


@dataclass
class PredictionSet:
    """One row per track."""
    rows: list[PredictionRow] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        ids = [r.msd_id for r in self.rows]
        if len(ids) != len(set(ids)):
            raise ValueError(f"Prediction set {self.name!r} has repeated track ids")

    @property
    def track_ids(self) -> set[str]:
        return {r.msd_id for r in self.rows}

    def by_id(self) -> dict[str, PredictionRow]:
        return {r.msd_id: r for r in self.rows}

    def subset(self, split: str) -> 'PredictionSet':
        """Rows of one split, same name."""
        return PredictionSet([r for r in self.rows if r.split == split], self.name)

    @property
    def splits(self) -> set[str]:
        return {r.split for r in self.rows}

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(predictions [N, 2], truth [N, 2]) in row order."""
        pred = np.array([[r.valence_pred, r.arousal_pred] for r in self.rows]).reshape(-1, 2)
        true = np.array([[r.valence_true, r.arousal_true] for r in self.rows]).reshape(-1, 2)
        return pred, true


@dataclass
class FusionRow:
    weight: float
    r2_valence: float
    r2_arousal: float


@dataclass
class FusionReport:
    """R² per late-fusion weight; the weight is the share of the first prediction set."""
    rows: list[FusionRow]
    best_valence_weight: float
    best_arousal_weight: float
    selection_split: str = "valid"
    evaluation_split: str = "test"

    def row(self, weight: float) -> FusionRow:
        return min(self.rows, key=lambda r: abs(r.weight - weight))


@dataclass
class ReportRow:
    """R² of one (mode, model) pair."""
    mode: str
    model: str
    r2_valence: float
    r2_arousal: float

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            'mode': self.mode,
            'model': self.model,
            'r2_valence': repr(self.r2_valence),
            'r2_arousal': repr(self.r2_arousal),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ReportRow':
        """Create ReportRow from dictionary."""
        return cls(data['mode'], data['model'], float(data['r2_valence']), float(data['r2_arousal']))


@dataclass
class BlendRow:
    """Best weighted mean of a classical and a deep prediction set for one modality."""
    modality: str
    best_weight: float  # share of the deep prediction
    blended_r2: float
    classical_r2: float
    deep_r2: float
