import numpy as np
import pytest

from conftest import make_predictions
from core.errors import CheckpointError, UsageError
from core.models import LabelStats
from core.persistence import (ConfigStore, env_seed, load_label_stats, read_checkpoint, read_feature_cache,
                              read_predictions_csv, save_label_stats, write_checkpoint, write_feature_cache,
                              write_predictions_csv)


def test_config_defaults_and_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# small run\nepochs = 3\nlearning_rate=0.01  # faster\nsvr_C_grid=1,10\n"
                    "activation=tanh\ncustom_note=hello\n", encoding="utf-8")
    store = ConfigStore(path)
    assert store.get("epochs") == 3
    assert store.get("learning_rate") == 0.01
    assert store.get("svr_C_grid") == [1.0, 10.0]
    assert store.get("activation") == "tanh"
    assert store.get("custom_note") == "hello"
    assert store.get("batch_size") == 32
    assert store.sources["epochs"] == str(path)
    assert store.sources["batch_size"] == "default"


def test_config_flags_override_file(tmp_path):
    store = ConfigStore()
    store.override({"epochs": 7, "batch_size": None})
    assert store.get("epochs") == 7 and store.sources["epochs"] == "flag"
    assert store.get("batch_size") == 32

    store.save(tmp_path / "saved.cfg")
    again = ConfigStore(tmp_path / "saved.cfg")
    assert again.snapshot() == store.snapshot()


def test_config_errors(tmp_path):
    bad_value = tmp_path / "bad.cfg"
    bad_value.write_text("epochs=many\n", encoding="utf-8")
    with pytest.raises(UsageError, match="epochs"):
        ConfigStore(bad_value)
    no_equals = tmp_path / "line.cfg"
    no_equals.write_text("epochs 4\n", encoding="utf-8")
    with pytest.raises(UsageError):
        ConfigStore(no_equals)


def test_checkpoint_keeps_names_and_shapes(tmp_path):
    path = tmp_path / "model.bin"
    tensors = {"audio.conv1.weight": np.arange(24.0).reshape(2, 3, 4), "scalar": np.array(2.5)}
    write_checkpoint(path, tensors)
    loaded = read_checkpoint(path)
    assert list(loaded) == ["audio.conv1.weight", "scalar"]
    np.testing.assert_array_equal(loaded["audio.conv1.weight"], tensors["audio.conv1.weight"])
    assert loaded["scalar"].shape == (1,)
    assert path.read_bytes()[:8] == b"MOODNET1"


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "model.bin"
    write_checkpoint(path, {"w": np.ones((4, 4))})
    data = path.read_bytes()

    (tmp_path / "magic.bin").write_bytes(b"NOTMOOD!" + data[8:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(tmp_path / "magic.bin")

    (tmp_path / "short.bin").write_bytes(data[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "short.bin")


def test_feature_cache(tmp_path):
    path = tmp_path / "features.bin"
    count = write_feature_cache(path, [("TR1", "mel", np.ones((2, 3))), ("TR2", "classical", np.arange(4.0))])
    assert count == 2
    records = read_feature_cache(path)
    assert [(tid, kind) for tid, kind, _ in records] == [("TR1", "mel"), ("TR2", "classical")]
    np.testing.assert_array_equal(records[1][2], np.arange(4.0))
    write_checkpoint(tmp_path / "other.bin", {})
    with pytest.raises(CheckpointError, match="feature cache"):
        read_feature_cache(tmp_path / "other.bin")


def test_predictions_csv_takes_name_from_file(tmp_path):
    predictions = make_predictions([(0.1, -0.2), (1.0 / 3.0, 2.0)], [(0.0, 0.0), (1.0, 1.0)], name="x")
    write_predictions_csv(predictions, tmp_path / "audio_convnet.csv")
    loaded = read_predictions_csv(tmp_path / "audio_convnet.csv")
    assert loaded.name == "audio_convnet"
    assert loaded.rows == predictions.rows


def test_label_stats_file(tmp_path):
    stats = LabelStats(5.1, 1.2, 4.3, 0.7, source="train")
    save_label_stats(stats, tmp_path / "stats.json")
    assert load_label_stats(tmp_path / "stats.json") == stats


def test_env_seed(monkeypatch):
    monkeypatch.delenv("MOODNET_SEED", raising=False)
    assert env_seed(4) == 4
    monkeypatch.setenv("MOODNET_SEED", "17")
    assert env_seed() == 17
    monkeypatch.setenv("MOODNET_SEED", "seventeen")
    with pytest.raises(UsageError):
        env_seed()
