import numpy as np
import pytest

from core import dsp
from core.dataset import records_in_split
from core.synthetic import (AROUSAL_TAGS, ExperimentConfig, ExperimentResult, load_synthetic_dataset,
                            median_results, run_synthetic_experiment, write_synthetic_corpus)


def test_corpus_files(small_corpus):
    root = small_corpus.root
    assert len(list((root / "audio").glob("*.wav"))) == 15
    assert len(list((root / "lyrics").glob("*.txt"))) == 15
    clip = dsp.read_wav(root / "audio" / "TRSYN00000.wav")
    assert clip.sample_rate == dsp.TARGET_RATE
    assert clip.duration == pytest.approx(0.5)
    assert "frantic" in small_corpus.mood_tags.read_text(encoding="utf-8")


def test_corpus_is_reproducible(tmp_path):
    first = write_synthetic_corpus(tmp_path / "a", n_tracks=4, seed=9, duration=0.1)
    second = write_synthetic_corpus(tmp_path / "b", n_tracks=4, seed=9, duration=0.1)
    assert first.tags.read_text() == second.tags.read_text()
    assert (first.root / "audio" / "TRSYN00003.wav").read_bytes() == \
        (second.root / "audio" / "TRSYN00003.wav").read_bytes()
    with pytest.raises(ValueError):
        write_synthetic_corpus(tmp_path / "c", n_tracks=0)


def test_dataset_is_labelled_split_and_normalized(small_corpus):
    records = load_synthetic_dataset(small_corpus, seed=0)
    assert len(records) == 15
    train = records_in_split(records, "train")
    assert {r.split for r in records} <= {"train", "valid", "test"}
    assert np.mean([r.label.arousal for r in train]) == pytest.approx(0.0, abs=1e-12)
    artists = [{r.artist for r in records_in_split(records, s)} for s in ("train", "valid", "test")]
    assert not (artists[0] & artists[1] or artists[0] & artists[2] or artists[1] & artists[2])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_train_statistics_center_the_test_split(tmp_path, seed):
    corpus = write_synthetic_corpus(tmp_path / "corpus", n_tracks=1200, seed=seed, duration=0.01,
                                    n_lines=1, words_per_line=4)
    records = load_synthetic_dataset(corpus, seed=seed)
    test = records_in_split(records, "test")
    assert len(test) > 150
    assert abs(np.mean([r.label.valence for r in test])) <= 0.25
    assert abs(np.mean([r.label.arousal for r in test])) <= 0.25


def test_arousal_follows_amplitude(small_corpus):
    records = {r.msd_id: r for r in load_synthetic_dataset(small_corpus, seed=0)}
    levels = {}
    for line in small_corpus.tags.read_text(encoding="utf-8").splitlines()[1:]:
        msd_id, tags = line.split(",", 1)
        level = [k for k, tag in AROUSAL_TAGS.items() if tag in tags.split("|")][0]
        levels[msd_id] = level
    rms = {k: float(np.sqrt(np.mean(dsp.read_wav(small_corpus.root / "audio" / f"{k}.wav").samples ** 2)))
           for k in records}
    order = sorted(records, key=lambda k: rms[k])
    assert [levels[k] for k in order] == sorted(levels[k] for k in order)
    assert np.corrcoef([rms[k] for k in records], [records[k].label.arousal for k in records])[0, 1] > 0.9


def test_median_results():
    runs = [ExperimentResult((a, a), (0.0, 0.0), (a, a), (a, a), w) for a, w in ((0.1, 0.2), (0.5, 0.4), (0.3, 0.9))]
    median = median_results(runs)
    assert median.audio == (0.3, 0.3)
    assert median.late_weight == 0.4


def test_small_experiment_runs(tmp_path):
    cfg = ExperimentConfig(n_tracks=45, embedding_dim=8, seq_len=8, n_segments=2, epochs=1, patience=1,
                           w2v_epochs=1)
    result = run_synthetic_experiment(tmp_path, seed=1, config=cfg)
    for pair in (result.audio, result.lyrics, result.late_fusion, result.mid_fusion):
        assert all(np.isfinite(v) and v <= 1.0 for v in pair)
    assert 0.0 <= result.late_weight <= 1.0


@pytest.mark.slow
def test_desk_scale_modality_experiment(tmp_path):
    median = median_results([run_synthetic_experiment(tmp_path, seed=s) for s in (0, 1, 2)])
    assert median.audio[1] >= median.lyrics[1] + 0.2
    assert median.mid_fusion[0] >= median.late_fusion[0] - 0.02
    assert median.mid_fusion[0] >= max(median.audio[0], median.lyrics[0]) + 0.05
