"""Label construction, normalization, artist-disjoint splits and segment sampling."""
import csv
import logging
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import dsp
from .data_parser import LABEL_COLUMNS, parse_label_file
from .errors import EmptyDataError, InvalidIntervalError, MissingModalityError, ZeroVarianceError
from .models import (AudioClip, Augmentation, LabelStats, LexiconEntry, Mode, MoodLabel, SegmentSample,
                     TrackRecord)
from .text_embed import EmbeddingMatrix, Vocabulary, embed_sequence, tokenize

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "valid", "test")
SPLIT_TOLERANCE = 0.03


# =============================================================================
# Labels
# =============================================================================

def label_from_tags(tags: Iterable[str], lexicon: Mapping[str, LexiconEntry],
                    mood_tags: set[str]) -> Optional[MoodLabel]:
    """Mean lexicon (valence, arousal) over the tags that are mood tags and lexicon words."""
    if not lexicon:
        raise EmptyDataError("Lexicon is empty")
    kept = []
    for tag in dict.fromkeys(t.strip().lower() for t in tags):
        if tag in mood_tags and tag in lexicon:
            kept.append(lexicon[tag])
    if not kept:
        return None
    return MoodLabel(sum(e.valence for e in kept) / len(kept),
                     sum(e.arousal for e in kept) / len(kept))


def compute_label_stats(records: Sequence[TrackRecord], source: str = "train") -> LabelStats:
    """Population mean and std per dimension; raises ZeroVarianceError on a constant dimension."""
    if len(records) < 2:
        raise ZeroVarianceError(f"Need at least 2 records for label statistics, got {len(records)}")
    values = np.array([r.label.as_array() for r in records])
    means, stds = values.mean(axis=0), values.std(axis=0)
    for name, std in zip(("valence", "arousal"), stds):
        if not std > 0:
            raise ZeroVarianceError(f"{name} labels have zero variance")
    return LabelStats(float(means[0]), float(stds[0]), float(means[1]), float(stds[1]), source)


def apply_label_stats(records: Iterable[TrackRecord], stats: LabelStats) -> list[TrackRecord]:
    """Z-score every label with ``stats``."""
    return [r.with_label(stats.normalize(r.label)) for r in records]


def normalize_labels(records: Sequence[TrackRecord], reference: Optional[Sequence[TrackRecord]] = None,
                     source: str = "train") -> tuple[list[TrackRecord], LabelStats]:
    """Z-score every record with population statistics of ``reference`` (default: ``records``)."""
    stats = compute_label_stats(records if reference is None else reference,
                                source if reference is not None else "all")
    return apply_label_stats(records, stats), stats


def denormalize(label: MoodLabel, stats: LabelStats) -> MoodLabel:
    return stats.denormalize(label)


# =============================================================================
# Splits
# =============================================================================

class DatasetSplit(NamedTuple):
    train: list[TrackRecord]
    valid: list[TrackRecord]
    test: list[TrackRecord]


def artist_disjoint_split(records: Sequence[TrackRecord], fractions: Sequence[float] = (0.6, 0.2, 0.2),
                          seed: int = 0) -> DatasetSplit:
    """Shuffle artists and give each, with all its tracks, to the most underfilled split."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"Split fractions must be three non-negative values summing to 1, got {fractions}")
    by_artist: dict[str, list[TrackRecord]] = {}
    for record in records:
        by_artist.setdefault(record.artist, []).append(record)

    artists = sorted(by_artist)
    order = np.random.default_rng(seed).permutation(len(artists))
    total = len(records)
    buckets: list[list[TrackRecord]] = [[], [], []]
    for idx in order:
        tracks = by_artist[artists[idx]]
        deficits = [f * total - len(b) for f, b in zip(fractions, buckets)]
        buckets[int(np.argmax(deficits))].extend(tracks)

    if total:
        achieved = [len(b) / total for b in buckets]
        if any(abs(a - f) > SPLIT_TOLERANCE for a, f in zip(achieved, fractions)):
            logger.warning("Split fractions %s miss targets %s by more than %.0f points",
                           ", ".join(f"{a:.3f}" for a in achieved), tuple(fractions), SPLIT_TOLERANCE * 100)
    return DatasetSplit(*buckets)


def tag_splits(split: DatasetSplit) -> list[TrackRecord]:
    """Copies of every record with its split name in the ``split`` column."""
    tagged = []
    for name, records in zip(SPLIT_NAMES, split):
        for record in records:
            copy = record.with_label(record.label)
            copy.extra['split'] = name
            tagged.append(copy)
    return tagged


def records_in_split(records: Iterable[TrackRecord], name: str) -> list[TrackRecord]:
    return [r for r in records if r.split == name]


def label_tracks(tracks: Sequence[Mapping[str, str]], tags: Mapping[str, Sequence[str]],
                 lexicon: Mapping[str, LexiconEntry], mood_tags: set[str]) -> list[TrackRecord]:
    """TrackRecords for the tracks whose tags give a label; the others are dropped."""
    records, dropped = [], 0
    for track in tracks:
        label = label_from_tags(tags.get(track['msd_id'], ()), lexicon, mood_tags)
        if label is None:
            dropped += 1
            continue
        data = dict(track)
        data['valence'], data['arousal'] = label.valence, label.arousal
        records.append(TrackRecord.from_dict(data))
    if dropped:
        logger.info("%d of %d tracks have no mood tag in the lexicon and were dropped", dropped, len(tracks))
    return records


def prepare_dataset(records: Sequence[TrackRecord], fractions: Sequence[float] = (0.6, 0.2, 0.2),
                    seed: int = 0, normalization_source: str = "train") -> tuple[list[TrackRecord], LabelStats]:
    """Split by artist, z-score labels and tag every record with its split."""
    split = artist_disjoint_split(records, fractions, seed)
    reference = None
    if normalization_source == "train":
        if len(split.train) >= 2:
            reference = split.train
        else:
            logger.warning("Train split has %d track(s); normalizing with all tracks", len(split.train))
    elif normalization_source != "all":
        raise ValueError(f"normalization_source must be 'train' or 'all', got {normalization_source!r}")
    tagged = tag_splits(split)
    return normalize_labels(tagged, reference)


# =============================================================================
# Label CSV
# =============================================================================

def load_label_csv(path: Union[str, Path]) -> list[TrackRecord]:
    """Read a label sheet (CSV or XLSX) into TrackRecords."""
    return parse_label_file(path)


def write_label_csv(records: Sequence[TrackRecord], path: Union[str, Path]) -> None:
    """Write the label CSV; optional and unknown columns follow the five standard ones."""
    columns = list(LABEL_COLUMNS)
    rows = [r.to_dict() for r in records]
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=columns, restval='')
        writer.writeheader()
        writer.writerows(rows)


# =============================================================================
# Track inputs
# =============================================================================

def _resolve(path: str, base_dir: Optional[Path]) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else base_dir / p


def track_clip(record: TrackRecord, base_dir: Optional[Path] = None) -> Optional[AudioClip]:
    """Decoded audio of a record at 44.1 kHz, or None when it has no audio."""
    if not record.audio_path:
        return None
    return dsp.load_clip(_resolve(record.audio_path, base_dir))


def track_text(record: TrackRecord, base_dir: Optional[Path] = None) -> Optional[str]:
    """Lyrics of a record, inline or read from its lyrics file; None when absent."""
    if record.lyrics is not None:
        return record.lyrics
    if record.lyrics_path:
        return _resolve(record.lyrics_path, base_dir).read_text(encoding='utf-8')
    return None


def track_tokens(record: TrackRecord, base_dir: Optional[Path] = None) -> Optional[list[str]]:
    """Tokenized lyrics of a record, or None."""
    text = track_text(record, base_dir)
    return None if text is None else tokenize(text)


# =============================================================================
# Segments
# =============================================================================

def align_segment(audio_duration: float, segment: tuple[float, float], token_count: int) -> range:
    """Token range proportional to the segment's position in the audio."""
    start, end = segment
    if not (0 <= start < end <= audio_duration) or token_count < 0:
        raise InvalidIntervalError(
            f"Segment [{start}, {end}) is not inside a {audio_duration} s track with {token_count} tokens")
    return range(math.floor(start * token_count / audio_duration),
                 math.floor(end * token_count / audio_duration))


@dataclass
class SegmentConfig:
    """Geometry of model-input segments."""
    n_segments: int = 7
    segment_seconds: float = 30.0
    words_per_segment: int = 50
    n_mels: int = dsp.N_MELS
    pitch_steps: tuple[float, ...] = (1.0, -1.0)
    lossy: bool = True
    sample_rate: int = dsp.TARGET_RATE

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return -(-self.segment_samples // dsp.FRAME_SIZE)

    @property
    def variants_per_segment(self) -> int:
        """Original segment plus one per pitch step, plus the lossy copy when enabled."""
        return 1 + len(self.pitch_steps) + int(self.lossy)

    @classmethod
    def from_settings(cls, settings: Mapping) -> "SegmentConfig":
        """Geometry from a ConfigStore settings dict; augmentation keeps its defaults."""
        return cls(n_segments=int(settings.get('n_segments', 7)),
                   segment_seconds=float(settings.get('segment_seconds', 30.0)),
                   words_per_segment=int(settings.get('words_per_segment', 50)),
                   n_mels=int(settings.get('n_mels', dsp.N_MELS)))


def track_rng(seed: int, msd_id: str) -> np.random.Generator:
    """Per-track generator, independent of processing order."""
    return np.random.default_rng([seed, zlib.crc32(msd_id.encode('utf-8'))])


def _draw_starts(rng: np.random.Generator, candidates: int, count: int) -> np.ndarray:
    replace = candidates < count
    return np.sort(rng.choice(candidates, size=count, replace=replace))


def _audio_starts(n_samples: int, config: SegmentConfig, rng: Optional[np.random.Generator]) -> list[int]:
    """Random block-aligned starts for training, evenly spaced starts for inference."""
    seg = config.segment_samples
    if n_samples <= seg:
        return [0] * config.n_segments
    max_start = n_samples - seg
    if rng is None:
        return [int(round(s)) for s in np.linspace(0, max_start, config.n_segments)]
    candidates = max_start // dsp.FRAME_SIZE + 1
    return [int(c) * dsp.FRAME_SIZE for c in _draw_starts(rng, candidates, config.n_segments)]


def _token_starts(n_tokens: int, config: SegmentConfig, rng: Optional[np.random.Generator]) -> list[int]:
    width = config.words_per_segment
    if n_tokens <= width:
        return [0] * config.n_segments
    max_start = n_tokens - width
    if rng is None:
        return [int(round(s)) for s in np.linspace(0, max_start, config.n_segments)]
    return [int(c) for c in _draw_starts(rng, max_start + 1, config.n_segments)]


def _mel(samples: np.ndarray, config: SegmentConfig) -> np.ndarray:
    return dsp.mel_spectrogram(AudioClip(samples, config.sample_rate), config.n_mels).values


def _audio_variants(clip: AudioClip, start: int, config: SegmentConfig,
                    augment: bool) -> list[tuple[Augmentation, np.ndarray]]:
    seg = config.segment_samples
    window = dsp.fix_length(clip.samples[start:start + seg], seg)
    out = [(Augmentation.ORIGINAL, _mel(window, config))]
    if not augment:
        return out
    for steps in config.pitch_steps:
        factor = 2.0 ** (steps / 12.0)
        source = clip.samples[start:start + int(math.ceil(seg * factor))]
        shifted = dsp.pitch_shift(AudioClip(source, config.sample_rate), steps).samples
        tag = Augmentation.PITCH_UP if steps > 0 else Augmentation.PITCH_DOWN
        out.append((tag, _mel(dsp.fix_length(shifted, seg), config)))
    if config.lossy:
        lossy = dsp.lossy_simulate(AudioClip(window, config.sample_rate)).samples
        out.append((Augmentation.LOSSY, _mel(lossy, config)))
    return out


def _require(record: TrackRecord, mode: Mode, clip, tokens, vocab, emb) -> None:
    if mode in (Mode.AUDIO, Mode.BIMODAL) and clip is None:
        raise MissingModalityError(f"Track {record.msd_id} has no audio for {mode.value} mode")
    if mode in (Mode.LYRICS, Mode.BIMODAL):
        if not tokens:
            raise MissingModalityError(f"Track {record.msd_id} has no lyrics for {mode.value} mode")
        if vocab is None or emb is None:
            raise MissingModalityError(f"{mode.value} mode needs a vocabulary and embedding matrix")


def _segments(record: TrackRecord, mode: Mode, clip: Optional[AudioClip], tokens: Optional[list[str]],
              vocab: Optional[Vocabulary], emb: Optional[EmbeddingMatrix], config: SegmentConfig,
              rng: Optional[np.random.Generator]) -> list[SegmentSample]:
    mode = Mode(mode)
    _require(record, mode, clip, tokens, vocab, emb)
    augment = rng is not None
    width = config.words_per_segment

    if mode is Mode.LYRICS:
        return [SegmentSample(record.msd_id, record.label, Augmentation.ORIGINAL,
                              lyrics=embed_sequence(tokens[s:s + width], vocab, emb, width), start=float(s))
                for s in _token_starts(len(tokens), config, rng)]

    if clip.sample_rate != config.sample_rate:
        clip = dsp.resample(clip, config.sample_rate)
    samples = []
    for start in _audio_starts(clip.samples.size, config, rng):
        lyric = None
        if mode is Mode.BIMODAL:
            end = min(start + config.segment_samples, clip.samples.size) / clip.sample_rate
            span = align_segment(clip.duration, (start / clip.sample_rate, end), len(tokens))
            lyric = embed_sequence(tokens[span.start:span.stop][:width], vocab, emb, width)
        for tag, mel in _audio_variants(clip, start, config, augment):
            samples.append(SegmentSample(record.msd_id, record.label, tag, mel=mel, lyrics=lyric,
                                         start=start / clip.sample_rate))
    return samples


def make_training_segments(record: TrackRecord, mode: Union[Mode, str], seed: int,
                           clip: Optional[AudioClip] = None, tokens: Optional[list[str]] = None,
                           vocab: Optional[Vocabulary] = None, emb: Optional[EmbeddingMatrix] = None,
                           config: Optional[SegmentConfig] = None) -> list[SegmentSample]:
    """Random training extracts: 7 lyric segments, or 7 audio extracts with their augmented variants."""
    config = config or SegmentConfig()
    return _segments(record, Mode(mode), clip, tokens, vocab, emb, config, track_rng(seed, record.msd_id))


def make_inference_segments(record: TrackRecord, mode: Union[Mode, str],
                            clip: Optional[AudioClip] = None, tokens: Optional[list[str]] = None,
                            vocab: Optional[Vocabulary] = None, emb: Optional[EmbeddingMatrix] = None,
                            config: Optional[SegmentConfig] = None) -> list[SegmentSample]:
    """Evenly spaced extracts without augmentation."""
    config = config or SegmentConfig()
    return _segments(record, Mode(mode), clip, tokens, vocab, emb, config, None)
