"""Persistence layer for MoodNet: config store, binary containers and CSV/JSON files."""
import csv
import json
import logging
import os
import struct
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .errors import CheckpointError, UsageError
from .models import FusionReport, FusionRow, LabelStats, PredictionRow, PredictionSet, ReportRow

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_MAGIC = b"MOODNET1"
CHECKPOINT_VERSION = 1
FEATURE_MAGIC = b"MOODFEAT"
FEATURE_VERSION = 1


class ConfigStore:
    """Typed run configuration read from ``key=value`` files."""

    DEFAULTS = {
        'seed': 0,
        'threads': 1,
        # training
        'learning_rate': 1e-3,
        'batch_size': 32,
        'epochs': 100,
        'patience': 10,
        'dropout': 0.5,
        'activation': 'relu',
        'lyrics_fusion_branch': 'ConvNet+LSTM',
        # geometry
        'n_mels': 40,
        'audio_frames': 1292,
        'embedding_dim': 100,
        'words_per_segment': 50,
        'segment_seconds': 30.0,
        'n_segments': 7,
        # classical
        'svr_C_grid': [0.1, 1.0, 10.0],
        'svr_epsilon': 0.1,
        'svr_tol': 1e-3,
        'svr_kernel': 'rbf',
        'forest_trees': 50,
        'forest_min_leaf': 1,
        'forest_max_depth': 0,  # 0 means unbounded
        'text_top_k': 2000,
        # word2vec
        'w2v_window': 5,
        'w2v_negatives': 5,
        'w2v_epochs': 5,
        'w2v_variant': 'skipgram',
        # dataset / evaluation
        'normalization_source': 'train',
        'fusion_selection': 'validation',
        'split_fractions': [0.6, 0.2, 0.2],
    }

    def __init__(self, path: Optional[PathLike] = None):
        self.settings: dict = {k: (list(v) if isinstance(v, list) else v) for k, v in self.DEFAULTS.items()}
        self.sources: dict[str, str] = {k: 'default' for k in self.DEFAULTS}
        if path is not None:
            self.load(path)

    @classmethod
    def _coerce(cls, key: str, raw: str):
        default = cls.DEFAULTS.get(key)
        raw = raw.strip()
        try:
            if isinstance(default, bool):
                return raw.lower() in ('1', 'true', 'yes', 'on')
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
            if isinstance(default, list):
                return [float(part) for part in raw.split(',') if part.strip()]
        except ValueError as e:
            raise UsageError(f"Config value for {key!r} is not valid: {raw!r}") from e
        return raw

    def load(self, path: PathLike) -> None:
        """Load ``key=value`` lines; ``#`` starts a comment."""
        path = Path(path)
        with open(path, 'r', encoding='utf-8') as f:
            for lineno, line in enumerate(f, 1):
                line = line.split('#', 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition('=')
                if not sep:
                    raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key = key.strip()
                if key not in self.DEFAULTS:
                    logger.warning("%s:%d: unknown config key %r kept as text", path, lineno, key)
                self.settings[key] = self._coerce(key, value)
                self.sources[key] = str(path)

    def save(self, path: PathLike) -> None:
        """Save settings to a key=value file."""
        with open(path, 'w', encoding='utf-8') as f:
            for key in sorted(self.settings):
                value = self.settings[key]
                if isinstance(value, list):
                    value = ','.join(repr(v) for v in value)
                f.write(f"{key}={value}\n")

    def get(self, key: str, default=None):
        """Get a setting value."""
        return self.settings.get(key, default)

    def set(self, key: str, value, source: str = 'flag') -> None:
        """Set a setting value and remember where it came from."""
        self.settings[key] = value
        self.sources[key] = source

    def override(self, values: Mapping[str, object], source: str = 'flag') -> None:
        """Apply non-None values, e.g. parsed command-line flags."""
        for key, value in values.items():
            if value is not None:
                self.set(key, value, source)

    def snapshot(self) -> dict:
        """Effective settings, sorted by key."""
        return dict(sorted(self.settings.items()))


# =============================================================================
# Named-tensor container
# =============================================================================

def write_checkpoint(path: PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named float64 tensors to the MOODNET1 container."""
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<I', CHECKPOINT_VERSION))
        f.write(struct.pack('<I', len(tensors)))
        for name, value in tensors.items():
            arr = np.asarray(value, dtype='<f8')
            if arr.ndim == 0:
                arr = arr.reshape(1)
            encoded = name.encode('utf-8')
            f.write(struct.pack('<I', len(encoded)))
            f.write(encoded)
            f.write(struct.pack('<I', arr.ndim))
            f.write(struct.pack(f'<{arr.ndim}Q', *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(f, n: int, path: PathLike) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"{path}: truncated container")
    return data


def read_checkpoint(path: PathLike) -> dict[str, np.ndarray]:
    """Read every named tensor from a MOODNET1 container, in file order."""
    tensors: dict[str, np.ndarray] = {}
    with open(path, 'rb') as f:
        if _read_exact(f, 8, path) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a MOODNET1 container")
        (version,) = struct.unpack('<I', _read_exact(f, 4, path))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported container version {version}")
        (count,) = struct.unpack('<I', _read_exact(f, 4, path))
        for _ in range(count):
            (name_len,) = struct.unpack('<I', _read_exact(f, 4, path))
            name = _read_exact(f, name_len, path).decode('utf-8')
            (rank,) = struct.unpack('<I', _read_exact(f, 4, path))
            dims = struct.unpack(f'<{rank}Q', _read_exact(f, 8 * rank, path))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(f, 8 * n, path), dtype='<f8')
            tensors[name] = data.astype(np.float64).reshape(dims)
    return tensors


# =============================================================================
# Feature cache
# =============================================================================

def write_feature_cache(path: PathLike, records: Iterable[tuple[str, str, np.ndarray]]) -> int:
    """Write (track id, kind tag, array) records. Returns the record count."""
    count = 0
    with open(path, 'wb') as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack('<I', FEATURE_VERSION))
        for track_id, kind, value in records:
            arr = np.asarray(value, dtype='<f8')
            for text in (track_id, kind):
                encoded = text.encode('utf-8')
                f.write(struct.pack('<I', len(encoded)))
                f.write(encoded)
            f.write(struct.pack('<I', arr.ndim))
            f.write(struct.pack(f'<{arr.ndim}Q', *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())
            count += 1
    return count


def read_feature_cache(path: PathLike) -> list[tuple[str, str, np.ndarray]]:
    """Read every (track id, kind, array) record of a MOODFEAT cache."""
    records = []
    with open(path, 'rb') as f:
        if _read_exact(f, 8, path) != FEATURE_MAGIC:
            raise CheckpointError(f"{path}: not a feature cache")
        (version,) = struct.unpack('<I', _read_exact(f, 4, path))
        if version != FEATURE_VERSION:
            raise CheckpointError(f"{path}: unsupported feature cache version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError(f"{path}: truncated feature cache")
            (id_len,) = struct.unpack('<I', head)
            track_id = _read_exact(f, id_len, path).decode('utf-8')
            (kind_len,) = struct.unpack('<I', _read_exact(f, 4, path))
            kind = _read_exact(f, kind_len, path).decode('utf-8')
            (rank,) = struct.unpack('<I', _read_exact(f, 4, path))
            dims = struct.unpack(f'<{rank}Q', _read_exact(f, 8 * rank, path))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(f, 8 * n, path), dtype='<f8').astype(np.float64)
            records.append((track_id, kind, data.reshape(dims)))
    return records


# =============================================================================
# CSV / JSON files
# =============================================================================

PREDICTION_COLUMNS = ['msd_id', 'split', 'valence_pred', 'arousal_pred', 'valence_true', 'arousal_true']
FUSION_COLUMNS = ['weight', 'r2_valence', 'r2_arousal']
HISTORY_COLUMNS = ['epoch', 'train_loss', 'valid_loss']
REPORT_COLUMNS = ['mode', 'model', 'r2_valence', 'r2_arousal']


def write_predictions_csv(predictions: PredictionSet, path: PathLike) -> None:
    """Write a prediction set as CSV."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=PREDICTION_COLUMNS)
        writer.writeheader()
        for row in predictions.rows:
            writer.writerow(row.to_dict())


def read_predictions_csv(path: PathLike) -> PredictionSet:
    """Read a prediction CSV; the set is named after the file stem."""
    with open(path, 'r', newline='', encoding='utf-8') as f:
        rows = [PredictionRow.from_dict(r) for r in csv.DictReader(f)]
    return PredictionSet(rows, name=Path(path).stem)


def write_fusion_csv(report: FusionReport, path: PathLike) -> None:
    """Write the fusion sweep, one row per weight."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(FUSION_COLUMNS)
        for row in report.rows:
            writer.writerow([f"{row.weight:.1f}", repr(row.r2_valence), repr(row.r2_arousal)])


def read_fusion_csv(path: PathLike) -> list[FusionRow]:
    """Read fusion sweep rows."""
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return [FusionRow(float(r['weight']), float(r['r2_valence']), float(r['r2_arousal']))
                for r in csv.DictReader(f)]


def write_history_csv(history: Iterable[tuple[int, float, float]], path: PathLike) -> None:
    """Write per-epoch train and validation losses."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for epoch, train_loss, valid_loss in history:
            writer.writerow([epoch, repr(train_loss), repr(valid_loss)])


def write_report_csv(rows: Iterable[ReportRow], path: PathLike) -> None:
    """Write report rows as CSV."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_dict())


def read_report_csv(path: PathLike) -> list[ReportRow]:
    """Read report rows."""
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return [ReportRow.from_dict(r) for r in csv.DictReader(f)]


def save_label_stats(stats: LabelStats, path: PathLike) -> None:
    """Save label normalization statistics as JSON."""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(stats.to_dict(), f, indent=2)


def load_label_stats(path: PathLike) -> LabelStats:
    """Load label normalization statistics."""
    with open(path, 'r', encoding='utf-8') as f:
        return LabelStats.from_dict(json.load(f))


def save_json(data: dict, path: PathLike) -> None:
    """Save a dict as sorted, indented JSON."""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)


def load_json(path: PathLike) -> dict:
    """Load a JSON file."""
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_embedding_text(words: list[str], vectors: np.ndarray, path: PathLike) -> None:
    """One ``word v1 ... vD`` line per row."""
    with open(path, 'w', encoding='utf-8') as f:
        for word, vec in zip(words, vectors):
            f.write(word + ' ' + ' '.join(repr(float(v)) for v in vec) + '\n')


def read_embedding_text(path: PathLike) -> tuple[list[str], np.ndarray]:
    """Read a word2vec text file into words and a [V, D] matrix."""
    words, rows = [], []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip('\n').split(' ')
            if len(parts) < 2:
                continue
            words.append(parts[0])
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError as e:
                raise CheckpointError(f"{path}:{lineno}: non-numeric embedding value") from e
    if rows and len({len(r) for r in rows}) != 1:
        raise CheckpointError(f"{path}: embedding rows have different lengths")
    return words, np.array(rows, dtype=np.float64)


def write_vocabulary_tsv(words: list[str], counts: list[int], path: PathLike) -> None:
    """Write ``word<TAB>count`` lines."""
    with open(path, 'w', encoding='utf-8') as f:
        for word, count in zip(words, counts):
            f.write(f"{word}\t{count}\n")


def read_vocabulary_tsv(path: PathLike) -> tuple[list[str], list[int]]:
    """Read a vocabulary TSV into words and counts."""
    words, counts = [], []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            word, _, count = line.rstrip('\n').partition('\t')
            words.append(word)
            counts.append(int(count or 0))
    return words, counts


def ensure_dir(path: PathLike) -> Path:
    """Create ``path`` and its parents if needed."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def env_seed(default: Optional[int] = None) -> Optional[int]:
    """MOODNET_SEED as an integer, when set."""
    raw = os.environ.get('MOODNET_SEED')
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise UsageError(f"MOODNET_SEED must be an integer, got {raw!r}") from e
