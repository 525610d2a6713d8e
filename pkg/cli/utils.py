"""Shared helpers for the command line: hashing, seeds, geometry and input loading."""
import hashlib
import logging
import os
from pathlib import Path
from typing import Iterable, Optional, Union

from core import dsp
from core.dataset import SegmentConfig, load_label_csv, records_in_split
from core.errors import UsageError
from core.models import TrackRecord
from core.persistence import ConfigStore, env_seed
from core.text_embed import EmbeddingMatrix, Vocabulary, load_embedding_text

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def sha256_file(path: Union[str, Path], chunk: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(chunk), b''):
            digest.update(block)
    return digest.hexdigest()


def hash_inputs(paths: Iterable[Union[str, Path]]) -> dict[str, str]:
    """sha256 of every input file; directories contribute each file they hold."""
    hashes = {}
    for path in paths:
        path = Path(path)
        if path.is_dir():
            for child in sorted(p for p in path.rglob('*') if p.is_file()):
                hashes[str(child)] = sha256_file(child)
        elif path.is_file():
            hashes[str(path)] = sha256_file(path)
    return hashes


def resolve_seed(flag: Optional[int], store: ConfigStore) -> int:
    """--seed flag, else MOODNET_SEED, else the configured seed."""
    if flag is not None:
        store.set('seed', flag, 'flag')
    elif store.sources.get('seed') == 'default':
        seed = env_seed()
        if seed is not None:
            store.set('seed', seed, 'env:MOODNET_SEED')
    return int(store.get('seed'))


def segment_config(store: ConfigStore) -> SegmentConfig:
    """Segment geometry; an explicit audio_frames setting overrides segment_seconds."""
    if store.sources.get('audio_frames') != 'default' and store.sources.get('segment_seconds') == 'default':
        store.set('segment_seconds', int(store.get('audio_frames')) * dsp.FRAME_SIZE / dsp.TARGET_RATE,
                  'derived:audio_frames')
    config = SegmentConfig.from_settings(store.settings)
    if store.sources.get('audio_frames') != 'default' and config.n_frames != int(store.get('audio_frames')):
        raise UsageError(f"audio_frames={store.get('audio_frames')} does not match "
                         f"segment_seconds={config.segment_seconds} ({config.n_frames} frames)")
    store.set('audio_frames', config.n_frames, store.sources.get('audio_frames', 'derived'))
    return config


def require_file(path: Optional[Union[str, Path]], flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{flag}: file not found: {path}")
    return path


def load_records(labels: Union[str, Path]) -> tuple[list[TrackRecord], Path]:
    """Label CSV records and the directory their relative paths start from."""
    path = require_file(labels, "--labels")
    return load_label_csv(path), path.parent


def split_records(records: list[TrackRecord]) -> dict[str, list[TrackRecord]]:
    split = {name: records_in_split(records, name) for name in ("train", "valid", "test")}
    if not any(split.values()):
        logger.warning("Label file has no split column; treating every track as train")
        split["train"] = list(records)
    return split


def load_embedding(path: Optional[Union[str, Path]]) -> tuple[Optional[Vocabulary], Optional[EmbeddingMatrix]]:
    if path is None:
        return None, None
    return load_embedding_text(require_file(path, "--embedding"))


def relative_to(path: Path, start: Path) -> str:
    """``path`` relative to ``start`` with forward slashes."""
    return Path(os.path.relpath(path, start)).as_posix()


def parse_splits(value: str) -> list[str]:
    splits = [s.strip() for s in value.split(',') if s.strip()]
    unknown = [s for s in splits if s not in ("train", "valid", "test")]
    if not splits or unknown:
        raise UsageError(f"--split takes train, valid and/or test separated by commas, got {value!r}")
    return splits
