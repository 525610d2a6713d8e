"""Synthetic tone-and-lyrics corpus and the desk-scale modality experiment.

Arousal is carried by the tone amplitude alone. Valence depends on an
interaction of the tone register (low/high) and the sentiment of the lyric
words, so neither modality predicts it well on its own and a weighted average
of unimodal predictions cannot express the interaction.
"""
import csv
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from . import dsp
from .calculator import fusion_grid_search, r2_pair
from .data_parser import load_lexicon, load_mood_tags, load_tag_file, parse_track_list
from .dataset import (SegmentConfig, label_tracks, prepare_dataset, records_in_split, track_tokens)
from .layers import build_audio_convnet, build_fusion_model, build_lyrics_model
from .models import AudioClip, Mode, PredictionSet, TrackRecord
from .persistence import ensure_dir
from .text_embed import train_word2vec
from .training import TrainConfig, build_training_set, predict_tracks, train

logger = logging.getLogger(__name__)

# amplitude level -> tag
AROUSAL_TAGS = {1: "serene", 2: "calm", 3: "lively", 4: "energetic", 5: "frantic"}
# (register, sentiment) -> (tag, valence); valence = 0.5*register + 0.5*sentiment + register*sentiment
VALENCE_TAGS = {
    (1, 1): ("euphoric", 2.0),
    (-1, -1): ("wistful", 0.0),
    (1, -1): ("bitter", -1.0),
    (-1, 1): ("bittersweet", -1.0),
}
REGISTER_HZ = {-1: 220.0, 1: 880.0}
POSITIVE_WORDS = ["joy", "love", "sunshine", "smile", "bright", "dance", "sweet", "glow"]
NEGATIVE_WORDS = ["grief", "tears", "lonely", "cold", "broken", "fear", "ashes", "gray"]
NEUTRAL_WORDS = ["the", "road", "we", "walk", "under", "window", "city", "and", "time",
                 "river", "train", "morning", "paper", "wall", "street", "hands"]
GENRE_TAGS = ["rock", "pop", "indie", "electronic"]


class SyntheticCorpus(NamedTuple):
    root: Path
    tracks: Path
    tags: Path
    lexicon: Path
    mood_tags: Path


def _tone(register: int, level: int, duration: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(int(round(duration * dsp.TARGET_RATE))) / dsp.TARGET_RATE
    freq = REGISTER_HZ[register] * float(rng.uniform(0.97, 1.03))
    phase = float(rng.uniform(0, 2 * np.pi))
    wave = np.sin(2 * np.pi * freq * t + phase) + 0.3 * np.sin(4 * np.pi * freq * t + phase)
    amplitude = 0.15 * level / 1.3
    return amplitude * wave + 0.002 * rng.standard_normal(t.size)


def _lyrics(sentiment: int, n_lines: int, words_per_line: int, rng: np.random.Generator) -> str:
    mood_words = POSITIVE_WORDS if sentiment > 0 else NEGATIVE_WORDS
    lines = []
    for _ in range(n_lines):
        words = [str(rng.choice(mood_words)) if rng.random() < 0.35 else str(rng.choice(NEUTRAL_WORDS))
                 for _ in range(words_per_line)]
        lines.append(" ".join(words).capitalize() + ",")
    return "\n".join(lines) + "\n"


def write_synthetic_corpus(out_dir: Union[str, Path], n_tracks: int = 120, seed: int = 0,
                           duration: float = 3.0, tracks_per_artist: int = 3,
                           n_lines: int = 8, words_per_line: int = 8) -> SyntheticCorpus:
    """Write WAVs, lyric texts, a track list, a tag file, the lexicon and the mood-tag list."""
    if n_tracks < 1:
        raise ValueError(f"n_tracks must be positive, got {n_tracks}")
    root = ensure_dir(out_dir)
    ensure_dir(root / "audio")
    ensure_dir(root / "lyrics")
    rng = np.random.default_rng(seed)
    corpus = SyntheticCorpus(root, root / "tracks.csv", root / "tags.csv", root / "lexicon.csv",
                             root / "mood_tags.txt")

    with open(corpus.tracks, 'w', newline='', encoding='utf-8') as f_tracks, \
            open(corpus.tags, 'w', newline='', encoding='utf-8') as f_tags:
        tracks = csv.writer(f_tracks)
        tracks.writerow(['msd_id', 'artist', 'title', 'audio_path', 'lyrics_path'])
        tags = csv.writer(f_tags)
        tags.writerow(['msd_id', 'tags'])
        for k in range(n_tracks):
            msd_id = f"TRSYN{k:05d}"
            register = int(rng.choice([-1, 1]))
            sentiment = int(rng.choice([-1, 1]))
            level = int(rng.integers(1, 6))
            clip = AudioClip(np.clip(_tone(register, level, duration, rng), -1.0, 1.0), dsp.TARGET_RATE)
            dsp.write_wav(root / "audio" / f"{msd_id}.wav", clip)
            (root / "lyrics" / f"{msd_id}.txt").write_text(
                _lyrics(sentiment, n_lines, words_per_line, rng), encoding='utf-8')
            tracks.writerow([msd_id, f"artist_{k // tracks_per_artist:04d}", f"Tone {k}",
                             f"audio/{msd_id}.wav", f"lyrics/{msd_id}.txt"])
            track_tags = [AROUSAL_TAGS[level], VALENCE_TAGS[(register, sentiment)][0], str(rng.choice(GENRE_TAGS))]
            tags.writerow([msd_id, "|".join(track_tags)])

    with open(corpus.lexicon, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['word', 'valence', 'arousal'])
        for level, tag in AROUSAL_TAGS.items():
            writer.writerow([tag, 0.0, float(level)])
        for tag, valence in VALENCE_TAGS.values():
            writer.writerow([tag, valence, 0.0])
        for word in POSITIVE_WORDS:
            writer.writerow([word, 7.5, 5.0])
        for word in NEGATIVE_WORDS:
            writer.writerow([word, 2.5, 5.0])
        for word in NEUTRAL_WORDS:
            writer.writerow([word, 5.0, 4.0])

    mood_tags = list(AROUSAL_TAGS.values()) + [tag for tag, _ in VALENCE_TAGS.values()]
    corpus.mood_tags.write_text("# synthetic mood tags\n" + "\n".join(mood_tags) + "\n", encoding='utf-8')
    logger.info("Synthetic corpus of %d tracks written to %s", n_tracks, root)
    return corpus


def load_synthetic_dataset(corpus: SyntheticCorpus, seed: int = 0,
                           normalization_source: str = "train") -> list[TrackRecord]:
    """Labelled, split and normalized records of a synthetic corpus."""
    records = label_tracks(parse_track_list(corpus.tracks), load_tag_file(corpus.tags),
                           load_lexicon(corpus.lexicon), load_mood_tags(corpus.mood_tags))
    records, _ = prepare_dataset(records, seed=seed, normalization_source=normalization_source)
    return records


@dataclass
class ExperimentConfig:
    """Reduced geometry and training settings for the synthetic experiment."""
    n_tracks: int = 120
    n_frames: int = 64
    embedding_dim: int = 16
    seq_len: int = 16
    n_segments: int = 3
    augment: bool = False
    lyrics_variant: str = "ConvNet+LSTM"
    drop_prob: float = 0.2
    epochs: int = 40
    patience: int = 10
    batch_size: int = 16
    learning_rate: float = 3e-3
    threads: int = 1
    w2v_epochs: int = 3

    @property
    def segment(self) -> SegmentConfig:
        return SegmentConfig(
            n_segments=self.n_segments,
            segment_seconds=self.n_frames * dsp.FRAME_SIZE / dsp.TARGET_RATE,
            words_per_segment=self.seq_len,
            pitch_steps=(1.0, -1.0) if self.augment else (),
            lossy=self.augment,
        )


class ExperimentResult(NamedTuple):
    """Test-split R² per (model, dimension)."""
    audio: tuple[float, float]
    lyrics: tuple[float, float]
    late_fusion: tuple[float, float]
    mid_fusion: tuple[float, float]
    late_weight: float


def _train_and_predict(model, mode: Mode, split: dict[str, list[TrackRecord]], vocab, emb,
                       cfg: ExperimentConfig, seed: int, base_dir: Path) -> PredictionSet:
    seg = cfg.segment
    train_segments = build_training_set(split['train'], mode, seed, vocab, emb, seg, base_dir,
                                        cfg.threads, augment=True)
    valid_segments = build_training_set(split['valid'], mode, seed, vocab, emb, seg, base_dir,
                                        cfg.threads, augment=False)
    train_cfg = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, epochs=cfg.epochs,
                            patience=min(cfg.patience, cfg.epochs), seed=seed, mode=mode.value,
                            variant=model.kind)
    result = train(model, train_segments, valid_segments, train_cfg)
    logger.info("%s: best epoch %d, valid loss %.4f", model.kind, result.best_epoch, result.best_valid_loss)
    rows = []
    for name in ("valid", "test"):
        preds = predict_tracks(result.model, split[name], mode, name, vocab, emb, seg, base_dir,
                               cfg.threads, name=model.kind)
        rows.extend(preds.rows)
    return PredictionSet(rows, name=model.kind)


def run_synthetic_experiment(work_dir: Union[str, Path], seed: int = 0,
                             config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Train audio, lyrics and mid-level fusion models on a fresh corpus; score them on test."""
    cfg = config or ExperimentConfig()
    corpus = write_synthetic_corpus(Path(work_dir) / f"corpus_{seed}", cfg.n_tracks, seed)
    records = load_synthetic_dataset(corpus, seed)
    split = {name: records_in_split(records, name) for name in ("train", "valid", "test")}
    base_dir = corpus.root

    sentences = [track_tokens(r, base_dir) for r in split['train']]
    vocab, emb = train_word2vec(sentences, dims=cfg.embedding_dim, window=3, epochs=cfg.w2v_epochs, seed=seed)

    audio = _train_and_predict(
        build_audio_convnet(n_frames=cfg.n_frames, seed=seed), Mode.AUDIO, split, None, None, cfg, seed, base_dir)
    lyrics = _train_and_predict(
        build_lyrics_model(cfg.lyrics_variant, cfg.embedding_dim, cfg.seq_len, drop_prob=cfg.drop_prob, seed=seed),
        Mode.LYRICS, split, vocab, emb, cfg, seed, base_dir)
    fusion = _train_and_predict(
        build_fusion_model(cfg.lyrics_variant, n_frames=cfg.n_frames, embedding_dim=cfg.embedding_dim,
                           seq_len=cfg.seq_len, seed=seed),
        Mode.BIMODAL, split, vocab, emb, cfg, seed, base_dir)

    report = fusion_grid_search(audio, lyrics)
    late = report.row(report.best_valence_weight)
    result = ExperimentResult(
        audio=r2_pair(audio.subset("test")),
        lyrics=r2_pair(lyrics.subset("test")),
        late_fusion=(late.r2_valence, report.row(report.best_arousal_weight).r2_arousal),
        mid_fusion=r2_pair(fusion.subset("test")),
        late_weight=report.best_valence_weight,
    )
    logger.info("Synthetic seed %d: %s", seed, result)
    return result


def median_results(results: Sequence[ExperimentResult]) -> ExperimentResult:
    """Field-wise median over repeated runs."""
    def pair(name: str) -> tuple[float, float]:
        return tuple(statistics.median(getattr(r, name)[i] for r in results) for i in (0, 1))

    return ExperimentResult(pair("audio"), pair("lyrics"), pair("late_fusion"), pair("mid_fusion"),
                            statistics.median(r.late_weight for r in results))
