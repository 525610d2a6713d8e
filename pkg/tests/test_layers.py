import numpy as np
import pytest

from core.errors import CheckpointError, ShapeError, UnknownVariantError
from core.layers import (LYRICS_VARIANTS, LSTM, GRU, Activation, BatchNorm, BiLSTM, Conv1D, Conv2D, Dense,
                         Dropout, Flatten, MaxPool1D, MaxPool2D, MeanEmbed, ModelGraph, build_audio_convnet,
                         build_fusion_model, build_lyrics_model, build_model, load_model)
from core.persistence import write_checkpoint
from core.tensor import Tape, Tensor, backward, gradient_check, mse_loss


def _graph(body, input_shape, width, rng, name="probe"):
    head = [Dense("head.out", width, 2, rng)]
    return ModelGraph(name, {"x": body}, head, {"x": tuple(input_shape)})


def _check(model, inputs, rng, max_entries=None):
    target = rng.standard_normal((2, 2))
    report = gradient_check(model, inputs, Tensor(target), step=1e-5, tol=1e-4, max_entries=max_entries)
    assert report.passed, report.errors


@pytest.mark.parametrize("body, shape, width", [
    (lambda r: [Conv1D("c", 3, 4, 3, 2, r), Activation("a", "tanh"), Flatten("f")], (3, 12), 20),
    (lambda r: [Conv1D("c", 3, 4, 3, 1, r), MaxPool1D("p", 2, 2), Flatten("f")], (3, 11), 16),
    (lambda r: [Conv1D("c", 3, 4, 3, 1, r), BatchNorm("bn", 4), Activation("a", "sigmoid"), Flatten("f")],
     (3, 8), 24),
    (lambda r: [Conv2D("c", 1, 2, (2, 2), r), Activation("a", "tanh"), MaxPool2D("p", 2, 2), Flatten("f")],
     (1, 5, 6), 8),
    (lambda r: [LSTM("l", 3, 4, r)], (3, 5), 4),
    (lambda r: [LSTM("l", 3, 4, r, return_sequence=True), Flatten("f")], (3, 5), 20),
    (lambda r: [GRU("g", 3, 4, r)], (3, 5), 4),
    (lambda r: [BiLSTM("b", 3, 4, r)], (3, 5), 8),
    (lambda r: [MeanEmbed("m"), Dense("d", 3, 6, r), BatchNorm("bn", 6), Dropout("drop", 0.5)], (3, 5), 6),
], ids=["conv1d", "maxpool1d", "batchnorm", "conv2d", "lstm", "lstm-sequence", "gru", "bilstm", "dense"])
def test_layer_gradients(body, shape, width, rng):
    model = _graph(body(rng), shape, width, rng)
    _check(model, rng.standard_normal((2,) + shape), rng)


def test_output_shape_matches_execution(rng):
    model = build_audio_convnet(n_frames=64, seed=0)
    out = model.forward(rng.standard_normal((2, 40, 64)), Tape(training=False))
    assert out.shape == (2, 2)
    assert model.describe()[-1][2] == (2,)


def test_audio_convnet_full_geometry(rng):
    model = build_audio_convnet(seed=0)
    trace = [shape for branch, name, shape in model.describe() if branch == "audio"]
    assert [s[1] for s in trace if len(s) == 2] == [1292, 1285, 1285, 1285, 321, 314, 314, 314, 78]
    out = model.predict(rng.standard_normal((2, 40, 1292)) * 0.1)
    assert out.shape == (2, 2)


def test_zero_weight_model_outputs_zero(rng):
    model = build_audio_convnet(n_frames=64, seed=0)
    for p in model.parameters():
        p.value.data[...] = 0.0
    np.testing.assert_array_equal(model.predict(rng.standard_normal((3, 40, 64))), np.zeros((3, 2)))


def test_lyrics_models_shapes(rng):
    model = build_lyrics_model("LSTM", seed=0)
    assert model.predict(rng.standard_normal((3, 100, 50)) * 0.1).shape == (3, 2)
    lstm = model.branches["lyrics"][0]
    assert lstm.hidden == 80

    deep = build_lyrics_model("2ConvNets+2LSTMs", seed=0)
    kinds = [spec.kind for spec in deep.layers]
    assert kinds.count("conv2d") == 2 and kinds.count("maxpool2d") == 2 and kinds.count("lstm") == 2
    assert all(s.hyperparameters["maps"] == 16 for s in deep.layers if s.kind == "conv2d")

    bi = build_lyrics_model("biLSTM", seed=0)
    assert bi.describe()[1][2] == (80,)


def test_unknown_variant():
    with pytest.raises(UnknownVariantError):
        build_lyrics_model("Transformer")
    with pytest.raises(UnknownVariantError):
        build_fusion_model("Transformer")


def test_wrong_input_shape(rng):
    model = build_lyrics_model("GRU", embedding_dim=8, seq_len=6, seed=0)
    with pytest.raises(ShapeError, match="lyrics"):
        model.predict(rng.standard_normal((2, 8, 7)))


def test_fusion_concatenates_branches(rng):
    model = build_fusion_model(n_frames=64, embedding_dim=8, seq_len=8, seed=0)
    trace = model.describe()
    audio_width = [s for b, n, s in trace if b == "audio"][-1][0]
    lyrics_width = [s for b, n, s in trace if b == "lyrics"][-1][0]
    concat = [s for b, n, s in trace if n == "concat"][0]
    assert concat == (audio_width + lyrics_width,)
    out = model.predict({"audio": rng.standard_normal((2, 40, 64)), "lyrics": rng.standard_normal((2, 8, 8))})
    assert out.shape == (2, 2)


def test_fusion_audio_branch_gets_gradient(rng):
    model = build_fusion_model(n_frames=64, embedding_dim=8, seq_len=8, seed=0)
    inputs = {"audio": rng.standard_normal((4, 40, 64)), "lyrics": rng.standard_normal((4, 8, 8))}
    target = np.repeat(inputs["lyrics"].mean(axis=(1, 2))[:, None], 2, axis=1)
    tape = Tape(training=True)
    backward(mse_loss(model.forward(inputs, tape, rng), Tensor(target)))
    audio_grads = [p.grad.numpy() for p in model.parameters()
                   if p.name.startswith("audio.conv") and p.name.endswith(".weight")]
    assert all(np.abs(g).sum() > 0 for g in audio_grads)


def _lyrics_inputs(rng, dims=8, steps=8):
    return rng.standard_normal((2, dims, steps))


def test_audio_builder_passes_gradient_check(rng):
    model = build_audio_convnet(n_frames=64, activation="tanh", seed=1)
    _check(model, rng.standard_normal((2, 40, 64)), rng, max_entries=6)


@pytest.mark.parametrize("variant", LYRICS_VARIANTS)
def test_lyrics_builders_pass_gradient_check(variant, rng):
    model = build_lyrics_model(variant, embedding_dim=8, seq_len=8, activation="tanh", seed=1)
    _check(model, _lyrics_inputs(rng), rng, max_entries=6)


def test_fusion_builder_passes_gradient_check(rng):
    model = build_fusion_model("ConvNet+LSTM", n_frames=64, embedding_dim=8, seq_len=8, activation="tanh", seed=1)
    inputs = {"audio": rng.standard_normal((2, 40, 64)), "lyrics": _lyrics_inputs(rng)}
    _check(model, inputs, rng, max_entries=6)


def test_lstm_step_matches_hand_unrolled_equations(rng):
    layer = LSTM("l", 3, 4, rng)
    x = rng.standard_normal((2, 3))
    h = rng.standard_normal((2, 4))
    c = rng.standard_normal((2, 4))
    got_h, got_c = layer.step(Tensor(x), Tensor(h), Tensor(c), Tape(training=False))

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    z = x @ layer.w.value.numpy() + h @ layer.u.value.numpy() + layer.b.value.numpy()
    i, f, g, o = sig(z[:, :4]), sig(z[:, 4:8]), np.tanh(z[:, 8:12]), sig(z[:, 12:])
    want_c = f * c + i * g
    np.testing.assert_allclose(got_c.numpy(), want_c, atol=1e-12)
    np.testing.assert_allclose(got_h.numpy(), o * np.tanh(want_c), atol=1e-12)


def test_batchnorm_inference_uses_running_statistics(rng):
    layer = BatchNorm("bn", 3)
    x = Tensor(rng.standard_normal((5, 3)) * 4 + 2)
    train_out = layer.forward(x, Tape(training=True), rng)
    np.testing.assert_allclose(train_out.numpy().mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(layer.running_mean, 0.1 * x.numpy().mean(axis=0))
    infer_out = layer.forward(x, Tape(training=False), rng)
    assert not np.allclose(infer_out.numpy(), train_out.numpy())


def test_save_and_load_model(tmp_path, rng):
    model = build_model("GRU", embedding_dim=6, seq_len=5, seed=4)
    x = rng.standard_normal((3, 6, 5))
    path = tmp_path / "gru.bin"
    model.save(path)
    loaded = load_model(path)
    assert loaded.kind == "GRU"
    assert loaded.input_shapes == {"lyrics": (6, 5)}
    np.testing.assert_array_equal(loaded.predict(x), model.predict(x))


def test_load_model_rejects_plain_container(tmp_path):
    path = tmp_path / "weights.bin"
    write_checkpoint(path, {"w": np.ones(3)})
    with pytest.raises(CheckpointError):
        load_model(path)


def test_bilstm_tied_weights_on_palindrome(rng):
    layer = BiLSTM("b", 3, 4, rng)
    for fwd, bwd in zip(layer.fwd.parameters(), layer.bwd.parameters()):
        bwd.value = Tensor(fwd.value.data.copy())
    half = rng.standard_normal((2, 3, 3))
    x = Tensor(np.concatenate([half, half[:, :, ::-1]], axis=2))
    out = layer.forward(x, Tape(training=False), rng).numpy()
    assert out.shape == (2, 8)
    np.testing.assert_allclose(out[:, :4], out[:, 4:], atol=1e-12)
