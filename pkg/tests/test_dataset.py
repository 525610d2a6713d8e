import numpy as np
import pytest

from conftest import make_record, sine
from core.dataset import (SegmentConfig, align_segment, artist_disjoint_split, compute_label_stats,
                          label_from_tags, label_tracks, load_label_csv, make_inference_segments,
                          make_training_segments, normalize_labels, prepare_dataset, records_in_split,
                          track_tokens, write_label_csv)
from core.errors import EmptyDataError, InvalidIntervalError, MissingModalityError, ZeroVarianceError
from core.models import AudioClip, Augmentation, LexiconEntry
from core.text_embed import EmbeddingMatrix, Vocabulary

LEXICON = {
    "happy": LexiconEntry("happy", 8.0, 6.0),
    "sad": LexiconEntry("sad", 2.0, 3.0),
    "calm": LexiconEntry("calm", 7.0, 2.0),
}
MOOD_TAGS = {"happy", "sad"}


def _artists(n_artists=10, per_artist=10):
    return [make_record(f"TR{a:02d}{t:02d}", f"artist{a}", valence=float(a + t), arousal=float(a * t % 7))
            for a in range(n_artists) for t in range(per_artist)]


def test_label_from_tags_averages_mood_words():
    label = label_from_tags(["Happy", "sad", "rock", "calm", "happy"], LEXICON, MOOD_TAGS)
    assert label.valence == pytest.approx(5.0)
    assert label.arousal == pytest.approx(4.5)
    assert label_from_tags(["rock", "calm"], LEXICON, MOOD_TAGS) is None
    with pytest.raises(EmptyDataError):
        label_from_tags(["happy"], {}, MOOD_TAGS)


def test_label_tracks_drops_untagged():
    tracks = [{"msd_id": "TR1", "artist": "A"}, {"msd_id": "TR2", "artist": "B"}]
    records = label_tracks(tracks, {"TR1": ["sad"], "TR2": ["rock"]}, LEXICON, MOOD_TAGS)
    assert [r.msd_id for r in records] == ["TR1"]
    assert records[0].label.valence == 2.0


def test_normalize_labels():
    records = [make_record("a", "x", 0.0, 1.0), make_record("b", "y", 2.0, 3.0)]
    normalized, stats = normalize_labels(records)
    assert [r.label.valence for r in normalized] == [-1.0, 1.0]
    assert [r.label.arousal for r in normalized] == [-1.0, 1.0]
    assert stats.valence_std == 1.0


def test_zero_variance():
    with pytest.raises(ZeroVarianceError):
        compute_label_stats([make_record("a", "x", 1.0, 0.0), make_record("b", "y", 1.0, 2.0)])
    with pytest.raises(ZeroVarianceError):
        compute_label_stats([make_record("a", "x", 1.0, 0.0)])


def test_split_sizes_for_equal_artists():
    split = artist_disjoint_split(_artists(), seed=5)
    assert [len({r.artist for r in part}) for part in split] == [6, 2, 2]
    assert [len(part) for part in split] == [60, 20, 20]


def test_split_never_shares_an_artist():
    rng = np.random.default_rng(0)
    records = [make_record(f"TR{k}", f"artist{int(a)}") for k, a in enumerate(rng.integers(0, 40, 300))]
    for seed in range(200):
        split = artist_disjoint_split(records, seed=seed)
        artists = [{r.artist for r in part} for part in split]
        assert not (artists[0] & artists[1] or artists[0] & artists[2] or artists[1] & artists[2])
        assert sum(len(part) for part in split) == len(records)


def test_split_single_artist_and_determinism():
    records = [make_record(f"TR{k}", "solo") for k in range(5)]
    split = artist_disjoint_split(records, seed=1)
    assert (len(split.train), len(split.valid), len(split.test)) == (5, 0, 0)
    many = _artists(7, 3)
    assert artist_disjoint_split(many, seed=9) == artist_disjoint_split(many, seed=9)
    with pytest.raises(ValueError):
        artist_disjoint_split(many, fractions=(0.5, 0.5, 0.5))


def test_prepare_dataset_normalizes_with_training_split(tmp_path):
    records, stats = prepare_dataset(_artists(), seed=2)
    train = records_in_split(records, "train")
    assert stats.source == "train"
    assert len(train) == 60
    assert np.mean([r.label.valence for r in train]) == pytest.approx(0.0, abs=1e-12)

    path = tmp_path / "labels.csv"
    write_label_csv(records, path)
    loaded = load_label_csv(path)
    assert [r.split for r in loaded] == [r.split for r in records]
    assert loaded[3].label == records[3].label


def test_align_segment():
    assert align_segment(180.0, (60.0, 90.0), 300) == range(100, 150)
    assert align_segment(10.0, (0.0, 10.0), 0) == range(0, 0)
    with pytest.raises(InvalidIntervalError):
        align_segment(180.0, (90.0, 60.0), 300)
    with pytest.raises(InvalidIntervalError):
        align_segment(180.0, (170.0, 190.0), 300)


def test_track_tokens_from_file(tmp_path):
    (tmp_path / "TR1.txt").write_text("Love me, LOVE me", encoding="utf-8")
    record = make_record("TR1", "A", lyrics_path="TR1.txt")
    assert track_tokens(record, tmp_path) == ["love", "me", "love", "me"]
    assert track_tokens(make_record("TR2", "A")) is None


CONFIG = SegmentConfig(segment_seconds=0.5)


def _clip(seconds):
    return AudioClip(sine(330.0, seconds), 44100)


def test_training_segments_with_augmentation():
    segments = make_training_segments(make_record("TR1", "A"), "audio", seed=0, clip=_clip(3.0), config=CONFIG)
    assert len(segments) == 28
    assert all(s.mel.shape == (40, CONFIG.n_frames) for s in segments)
    tags = [s.augmentation for s in segments[:4]]
    assert tags == [Augmentation.ORIGINAL, Augmentation.PITCH_UP, Augmentation.PITCH_DOWN, Augmentation.LOSSY]
    again = make_training_segments(make_record("TR1", "A"), "audio", seed=0, clip=_clip(3.0), config=CONFIG)
    assert [s.start for s in again] == [s.start for s in segments]


def test_short_track_repeats_padded_segment():
    segments = make_training_segments(make_record("TR1", "A"), "audio", seed=0, clip=_clip(0.2), config=CONFIG)
    assert len(segments) == 28
    assert {s.start for s in segments} == {0.0}


def test_inference_segments_are_evenly_spaced():
    segments = make_inference_segments(make_record("TR1", "A"), "audio", clip=_clip(3.0), config=CONFIG)
    assert len(segments) == 7
    assert all(s.augmentation is Augmentation.ORIGINAL for s in segments)
    assert segments[0].start == 0.0
    assert segments[-1].start == pytest.approx(2.5)


def test_lyrics_segments():
    vocab = Vocabulary(["<unk>", "la"], [0, 350])
    emb = EmbeddingMatrix(np.ones((2, 100)))
    segments = make_training_segments(make_record("TR1", "A"), "lyrics", seed=3, tokens=["la"] * 350,
                                      vocab=vocab, emb=emb)
    assert len(segments) == 7
    assert all(s.lyrics.shape == (100, 50) and s.mel is None for s in segments)


def test_bimodal_segments_align_lyrics():
    vocab = Vocabulary(["<unk>", "w"], [0, 60])
    emb = EmbeddingMatrix(np.ones((2, 3)))
    segments = make_inference_segments(make_record("TR1", "A"), "bimodal", clip=_clip(3.0), tokens=["w"] * 60,
                                       vocab=vocab, emb=emb, config=SegmentConfig(segment_seconds=0.5,
                                                                                  words_per_segment=8))
    assert len(segments) == 7
    first = segments[0].lyrics
    assert first.shape == (3, 8)
    np.testing.assert_array_equal(first, 1.0)


def test_bimodal_without_lyrics():
    with pytest.raises(MissingModalityError):
        make_training_segments(make_record("TR1", "A"), "bimodal", seed=0, clip=_clip(1.0), config=CONFIG)
    with pytest.raises(MissingModalityError):
        make_inference_segments(make_record("TR1", "A"), "audio", config=CONFIG)
