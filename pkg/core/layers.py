"""Layer abstractions and the audio, lyrics and bimodal model builders."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ShapeError, UnknownVariantError
from .persistence import read_checkpoint, write_checkpoint
from .tensor import Parameter, Tape, Tensor

logger = logging.getLogger(__name__)

LYRICS_VARIANTS = ("GRU", "LSTM", "biLSTM", "2LSTMs", "ConvNet+LSTM", "2ConvNets+2LSTMs")
ACTIVATIONS = ("relu", "tanh", "sigmoid")
AUDIO_GEOMETRY = (40, 1292)
LYRICS_GEOMETRY = (100, 50)


@dataclass
class LayerSpec:
    """Kind and hyperparameters of one layer."""
    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, value in self.hyperparameters.items():
            if isinstance(value, int) and not isinstance(value, bool) and value <= 0:
                raise ValueError(f"{self.kind}: hyperparameter {key} must be positive, got {value}")


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal_blocks(rng: np.random.Generator, hidden: int, blocks: int) -> np.ndarray:
    mats = []
    for _ in range(blocks):
        q, r = np.linalg.qr(rng.standard_normal((hidden, hidden)))
        mats.append(q * np.sign(np.diag(r)))
    return np.concatenate(mats, axis=1)


class Layer:
    """Base layer: stateless identity with no parameters."""
    kind = "layer"

    def __init__(self, name: str):
        self.name = name

    def parameters(self) -> list[Parameter]:
        """Trainable parameters, in checkpoint order."""
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state stored in checkpoints (running statistics)."""
        return {}

    def output_shape(self, shape: tuple) -> tuple:
        """Per-item output shape for a per-item input shape; raises ShapeError on misfit."""
        return shape

    def forward(self, x: Tensor, tape: Tape, rng: np.random.Generator) -> Tensor:
        """Apply the layer to a batch ``x`` on ``tape``; ``rng`` drives dropout masks."""
        return x

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(self.kind)

    def _param(self, suffix: str, value: np.ndarray) -> Parameter:
        return Parameter(f"{self.name}.{suffix}", Tensor(value))


class Conv1D(Layer):
    """Temporal convolution over [B, C, T] with ``maps`` filters of width ``kernel``."""
    kind = "conv1d"

    def __init__(self, name: str, in_channels: int, maps: int, kernel: int, stride: int,
                 rng: np.random.Generator):
        super().__init__(name)
        self.kernel, self.stride, self.maps = kernel, stride, maps
        self.weight = self._param("weight", _glorot(rng, (maps, in_channels, kernel),
                                                    in_channels * kernel, maps * kernel))
        self.bias = self._param("bias", np.zeros(maps))

    def parameters(self):
        return [self.weight, self.bias]

    def output_shape(self, shape):
        channels, length = shape
        if self.kernel > length:
            raise ShapeError(f"{self.name}: kernel {self.kernel} exceeds input length {length}")
        return (self.maps, (length - self.kernel) // self.stride + 1)

    def forward(self, x, tape, rng):
        return T.forward_primitive("conv1d_temporal", [x, tape.watch(self.weight), tape.watch(self.bias)],
                                   stride=self.stride)

    @property
    def spec(self):
        return LayerSpec(self.kind, {"maps": self.maps, "kernel": self.kernel, "stride": self.stride})


class Conv2D(Layer):
    """2-D convolution over [B, C, H, W], stride 1, no padding."""
    kind = "conv2d"

    def __init__(self, name: str, in_channels: int, maps: int, kernel: tuple[int, int],
                 rng: np.random.Generator):
        super().__init__(name)
        self.kernel, self.maps = tuple(kernel), maps
        kh, kw = self.kernel
        self.weight = self._param("weight", _glorot(rng, (maps, in_channels, kh, kw),
                                                    in_channels * kh * kw, maps * kh * kw))
        self.bias = self._param("bias", np.zeros(maps))

    def parameters(self):
        return [self.weight, self.bias]

    def output_shape(self, shape):
        _, h, w = shape
        kh, kw = self.kernel
        if kh > h or kw > w:
            raise ShapeError(f"{self.name}: kernel {self.kernel} exceeds input {shape[1:]}")
        return (self.maps, h - kh + 1, w - kw + 1)

    def forward(self, x, tape, rng):
        return T.forward_primitive("conv2d", [x, tape.watch(self.weight), tape.watch(self.bias)])

    @property
    def spec(self):
        return LayerSpec(self.kind, {"maps": self.maps, "kernel_h": self.kernel[0],
                                     "kernel_w": self.kernel[1], "stride": 1})


class MaxPool1D(Layer):
    """Max pooling along the time axis of [B, C, T]."""
    kind = "maxpool1d"

    def __init__(self, name: str, size: int, stride: int):
        super().__init__(name)
        self.size, self.stride = size, stride

    def output_shape(self, shape):
        channels, length = shape
        if self.size > length:
            raise ShapeError(f"{self.name}: pool size {self.size} exceeds input length {length}")
        return (channels, (length - self.size) // self.stride + 1)

    def forward(self, x, tape, rng):
        return T.forward_primitive("maxpool1d", [x], size=self.size, stride=self.stride)

    @property
    def spec(self):
        return LayerSpec(self.kind, {"size": self.size, "stride": self.stride})


class MaxPool2D(MaxPool1D):
    """Square max pooling over the last two axes of [B, C, H, W]."""
    kind = "maxpool2d"

    def output_shape(self, shape):
        channels, h, w = shape
        if self.size > h or self.size > w:
            raise ShapeError(f"{self.name}: pool size {self.size} exceeds input {shape[1:]}")
        return (channels, (h - self.size) // self.stride + 1, (w - self.size) // self.stride + 1)

    def forward(self, x, tape, rng):
        return T.forward_primitive("maxpool2d", [x], size=self.size, stride=self.stride)


class BatchNorm(Layer):
    """Per-feature-map normalization with running statistics for inference."""
    kind = "batchnorm"

    def __init__(self, name: str, features: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__(name)
        self.eps, self.momentum = eps, momentum
        self.gamma = self._param("gamma", np.ones(features))
        self.beta = self._param("beta", np.zeros(features))
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def forward(self, x, tape, rng):
        stats: dict = {}
        out = T.forward_primitive("batchnorm", [x, tape.watch(self.gamma), tape.watch(self.beta)],
                                  training=tape.training, running_mean=self.running_mean,
                                  running_var=self.running_var, eps=self.eps, stats=stats)
        if tape.training:
            self.running_mean[:] = self.momentum * self.running_mean + (1 - self.momentum) * stats["mean"]
            self.running_var[:] = self.momentum * self.running_var + (1 - self.momentum) * stats["var"]
        return out


class Activation(Layer):
    """Elementwise relu, tanh or sigmoid."""
    kind = "activation"

    def __init__(self, name: str, function: str = "relu"):
        super().__init__(name)
        if function not in ACTIVATIONS:
            raise ValueError(f"Unknown activation: {function}")
        self.function = function

    def forward(self, x, tape, rng):
        return T.forward_primitive(self.function, [x])

    @property
    def spec(self):
        return LayerSpec(self.kind, {"function": self.function})


class Flatten(Layer):
    """[B, ...] -> [B, prod(...)]."""
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, tape, rng):
        return T.reshape(x, (x.shape[0], -1))


class AddChannel(Layer):
    """[B, H, W] -> [B, 1, H, W] so a 2-D convolution can read an embedded segment."""
    kind = "add_channel"

    def output_shape(self, shape):
        return (1,) + tuple(shape)

    def forward(self, x, tape, rng):
        return T.reshape(x, (x.shape[0], 1) + x.shape[1:])


class ToSequence(Layer):
    """[B, C, H, W] -> [B, C*H, W]: the embedding axis becomes feature channels, W stays time."""
    kind = "to_sequence"

    def output_shape(self, shape):
        channels, h, w = shape
        return (channels * h, w)

    def forward(self, x, tape, rng):
        b, c, h, w = x.shape
        return T.reshape(x, (b, c * h, w))


class Dense(Layer):
    """Fully connected layer: x @ W + b."""
    kind = "dense"

    def __init__(self, name: str, in_features: int, units: int, rng: np.random.Generator):
        super().__init__(name)
        self.units = units
        self.weight = self._param("weight", _glorot(rng, (in_features, units), in_features, units))
        self.bias = self._param("bias", np.zeros(units))

    def parameters(self):
        return [self.weight, self.bias]

    def output_shape(self, shape):
        return (self.units,)

    def forward(self, x, tape, rng):
        return x @ tape.watch(self.weight) + tape.watch(self.bias)

    @property
    def spec(self):
        return LayerSpec(self.kind, {"units": self.units})


class Dropout(Layer):
    """Inverted dropout; the identity on inference tapes."""
    kind = "dropout"

    def __init__(self, name: str, drop_prob: float = 0.5):
        super().__init__(name)
        if not 0.0 <= drop_prob < 1.0:
            raise ValueError(f"drop probability must be in [0, 1), got {drop_prob}")
        self.drop_prob = drop_prob

    def forward(self, x, tape, rng):
        return T.dropout(x, self.drop_prob, tape.training, rng)

    @property
    def spec(self):
        return LayerSpec(self.kind, {"drop_prob": self.drop_prob})


class MeanEmbed(Layer):
    """Mean over the time axis of an embedded sequence: [B, D, T] -> [B, D]."""
    kind = "mean_embed"

    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x, tape, rng):
        return T.mean_over_axis(x, axis=2)


class LSTM(Layer):
    """LSTM with forget gate; gates ordered input, forget, cell, output.

    Consumes [B, D, T] and returns the final hidden state [B, H], or every
    hidden state [B, H, T] when ``return_sequence`` is set.
    """
    kind = "lstm"

    def __init__(self, name: str, input_dim: int, hidden: int, rng: np.random.Generator,
                 return_sequence: bool = False, reverse: bool = False):
        super().__init__(name)
        self.input_dim, self.hidden = input_dim, hidden
        self.return_sequence, self.reverse = return_sequence, reverse
        self.w = self._param("w", _glorot(rng, (input_dim, 4 * hidden), input_dim, 4 * hidden))
        self.u = self._param("u", _orthogonal_blocks(rng, hidden, 4))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.b = self._param("b", bias)

    def parameters(self):
        return [self.w, self.u, self.b]

    def output_shape(self, shape):
        if shape[0] != self.input_dim:
            raise ShapeError(f"{self.name}: expected {self.input_dim} features, got {shape[0]}")
        return (self.hidden, shape[1]) if self.return_sequence else (self.hidden,)

    def step(self, x_t: Tensor, h: Tensor, c: Tensor, tape: Tape) -> tuple[Tensor, Tensor]:
        n = self.hidden
        z = x_t @ tape.watch(self.w) + h @ tape.watch(self.u) + tape.watch(self.b)
        i = T.sigmoid(T.slice_axis(z, 1, 0, n))
        f = T.sigmoid(T.slice_axis(z, 1, n, 2 * n))
        g = T.tanh(T.slice_axis(z, 1, 2 * n, 3 * n))
        o = T.sigmoid(T.slice_axis(z, 1, 3 * n, 4 * n))
        c = f * c + i * g
        h = o * T.tanh(c)
        return h, c

    def initial_state(self, batch: int, tape: Tape) -> tuple[Tensor, Tensor]:
        zeros = np.zeros((batch, self.hidden))
        return Tensor(zeros), Tensor(zeros.copy())

    def forward(self, x, tape, rng):
        batch, _, steps = x.shape
        h, c = self.initial_state(batch, tape)
        order = range(steps - 1, -1, -1) if self.reverse else range(steps)
        states = []
        for t in order:
            h, c = self.step(T.select(x, 2, t), h, c, tape)
            states.append(h)
        if not self.return_sequence:
            return h
        if self.reverse:
            states.reverse()
        return T.concat([T.reshape(s, (batch, self.hidden, 1)) for s in states], axis=2)

    @property
    def spec(self):
        return LayerSpec(self.kind, {"units": self.hidden})


class GRU(Layer):
    """Gated recurrent unit: h' = z*h + (1-z)*n with reset applied before U_n."""
    kind = "gru"

    def __init__(self, name: str, input_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__(name)
        self.input_dim, self.hidden = input_dim, hidden
        self.w = self._param("w", _glorot(rng, (input_dim, 3 * hidden), input_dim, 3 * hidden))
        self.u_zr = self._param("u_zr", _orthogonal_blocks(rng, hidden, 2))
        self.u_n = self._param("u_n", _orthogonal_blocks(rng, hidden, 1))
        self.b = self._param("b", np.zeros(3 * hidden))

    def parameters(self):
        return [self.w, self.u_zr, self.u_n, self.b]

    def output_shape(self, shape):
        if shape[0] != self.input_dim:
            raise ShapeError(f"{self.name}: expected {self.input_dim} features, got {shape[0]}")
        return (self.hidden,)

    def step(self, x_t: Tensor, h: Tensor, tape: Tape) -> Tensor:
        """One GRU step: [B, D] input and [B, H] state to the next state."""
        n = self.hidden
        xw = x_t @ tape.watch(self.w) + tape.watch(self.b)
        hu = h @ tape.watch(self.u_zr)
        z = T.sigmoid(T.slice_axis(xw, 1, 0, n) + T.slice_axis(hu, 1, 0, n))
        r = T.sigmoid(T.slice_axis(xw, 1, n, 2 * n) + T.slice_axis(hu, 1, n, 2 * n))
        cand = T.tanh(T.slice_axis(xw, 1, 2 * n, 3 * n) + (r * h) @ tape.watch(self.u_n))
        return cand + z * (h - cand)

    def forward(self, x, tape, rng):
        """Run over [B, D, T] and return the final hidden state [B, H]."""
        batch, _, steps = x.shape
        h = Tensor(np.zeros((batch, self.hidden)))
        for t in range(steps):
            h = self.step(T.select(x, 2, t), h, tape)
        return h

    @property
    def spec(self):
        return LayerSpec(self.kind, {"units": self.hidden})


class BiLSTM(Layer):
    """Forward and backward LSTMs whose final states are concatenated."""
    kind = "bilstm"

    def __init__(self, name: str, input_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__(name)
        self.hidden = hidden
        self.fwd = LSTM(f"{name}.fwd", input_dim, hidden, rng)
        self.bwd = LSTM(f"{name}.bwd", input_dim, hidden, rng, reverse=True)

    def parameters(self):
        return self.fwd.parameters() + self.bwd.parameters()

    def output_shape(self, shape):
        self.fwd.output_shape(shape)
        return (2 * self.hidden,)

    def forward(self, x, tape, rng):
        return T.concat([self.fwd.forward(x, tape, rng), self.bwd.forward(x, tape, rng)], axis=1)

    @property
    def spec(self):
        return LayerSpec(self.kind, {"units": self.hidden})


# =============================================================================
# Model graph
# =============================================================================

Inputs = Union[Tensor, np.ndarray, Sequence, Mapping[str, Union[Tensor, np.ndarray]]]


@dataclass
class ModelGraph:
    """Branches (one per modality) feeding an optional concatenation and a dense head."""
    kind: str
    branches: dict[str, list[Layer]]
    head: list[Layer]
    input_shapes: dict[str, tuple]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ValueError(f"{self.kind}: parameter names are not unique")

    @property
    def modalities(self) -> list[str]:
        return list(self.branches)

    @property
    def layers(self) -> list[LayerSpec]:
        specs = []
        for branch in self.branches.values():
            specs.extend(layer.spec for layer in branch)
        if len(self.branches) > 1:
            specs.append(LayerSpec("concat_point"))
        specs.extend(layer.spec for layer in self.head)
        return specs

    def _all_layers(self) -> list[Layer]:
        out = [layer for branch in self.branches.values() for layer in branch]
        return out + list(self.head)

    def parameters(self) -> list[Parameter]:
        """Parameters of every branch, then the head."""
        return [p for layer in self._all_layers() for p in layer.parameters()]

    def zero_grad(self) -> None:
        """Reset accumulated gradients on every parameter."""
        for p in self.parameters():
            p.zero_grad()

    def _as_branch_inputs(self, inputs: Inputs) -> dict[str, Tensor]:
        if isinstance(inputs, Mapping):
            items = {name: inputs[name] for name in self.branches if name in inputs}
        elif isinstance(inputs, (Tensor, np.ndarray)):
            items = {self.modalities[0]: inputs}
        else:
            items = dict(zip(self.modalities, inputs))
        missing = [name for name in self.branches if name not in items]
        if missing:
            raise ShapeError(f"{self.kind}: missing input for branch {', '.join(missing)}")
        tensors = {}
        for name, value in items.items():
            t = value if isinstance(value, Tensor) else Tensor(value)
            if t.shape[1:] != tuple(self.input_shapes[name]):
                raise ShapeError(f"{self.kind}: {name} input {list(t.shape[1:])} does not match "
                                 f"expected {list(self.input_shapes[name])}")
            tensors[name] = t
        return tensors

    def forward(self, inputs: Inputs, tape: Tape, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Run each branch on its input, concatenate the branch outputs and apply the head."""
        rng = rng if rng is not None else np.random.default_rng(0)
        outputs = []
        for name, x in self._as_branch_inputs(inputs).items():
            for layer in self.branches[name]:
                x = layer.forward(x, tape, rng)
            outputs.append(x)
        x = outputs[0] if len(outputs) == 1 else T.concat(outputs, axis=1)
        for layer in self.head:
            x = layer.forward(x, tape, rng)
        return x

    def predict(self, inputs: Inputs, batch_size: int = 32) -> np.ndarray:
        """Inference-mode outputs [N, 2] as a plain array."""
        tensors = self._as_branch_inputs(inputs)
        n = next(iter(tensors.values())).shape[0]
        chunks = []
        for start in range(0, n, batch_size):
            batch = {k: Tensor(v.data[start:start + batch_size]) for k, v in tensors.items()}
            chunks.append(self.forward(batch, tape=Tape(training=False)).data)
        return np.concatenate(chunks, axis=0)

    def describe(self) -> list[tuple[str, str, tuple]]:
        """(branch, layer name, per-item output shape) for every layer."""
        trace = []
        widths = []
        for name, branch in self.branches.items():
            shape = tuple(self.input_shapes[name])
            trace.append((name, "input", shape))
            for layer in branch:
                shape = layer.output_shape(shape)
                trace.append((name, layer.name, shape))
            widths.append(shape)
        shape = widths[0] if len(widths) == 1 else (sum(int(np.prod(w)) for w in widths),)
        if len(widths) > 1:
            trace.append(("head", "concat", shape))
        for layer in self.head:
            shape = layer.output_shape(shape)
            trace.append(("head", layer.name, shape))
        return trace

    # -- checkpoints ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters and buffers by name, copied."""
        state = {p.name: p.value.data.copy() for p in self.parameters()}
        for layer in self._all_layers():
            state.update({k: v.copy() for k, v in layer.buffers().items()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Copy ``state`` into the parameters and buffers; raises CheckpointError on missing or misshaped entries."""
        for p in self.parameters():
            if p.name not in state:
                raise CheckpointError(f"Checkpoint lacks parameter {p.name}")
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(f"{p.name}: checkpoint shape {list(value.shape)} != {list(p.shape)}")
            p.value.data[...] = value
        for layer in self._all_layers():
            for key, buf in layer.buffers().items():
                if key in state:
                    buf[...] = state[key]

    def save(self, path: Union[str, Path]) -> None:
        """Write the model kind, its builder config and its state into a MOODNET1 checkpoint."""
        meta = "|".join([self.kind] + [f"{k}={v}" for k, v in sorted(self.config.items())])
        tensors = {"meta.kind": np.frombuffer(meta.encode("utf-8"), dtype=np.uint8).astype(np.float64)}
        tensors.update(self.state_dict())
        write_checkpoint(path, tensors)


def _apply(layers: list[Layer], shape: tuple) -> tuple:
    for layer in layers:
        shape = layer.output_shape(shape)
    return shape


def _audio_body(n_mels: int, n_frames: int, activation: str, rng: np.random.Generator,
                prefix: str = "audio") -> list[Layer]:
    layers: list[Layer] = []
    shape: tuple = (n_mels, n_frames)
    for idx, maps in enumerate((32, 16), start=1):
        stage = [
            Conv1D(f"{prefix}.conv{idx}", shape[0], maps, 8, 1, rng),
            BatchNorm(f"{prefix}.bn{idx}", maps),
            Activation(f"{prefix}.act{idx}", activation),
            MaxPool1D(f"{prefix}.pool{idx}", 4, 4),
        ]
        shape = _apply(stage, shape)
        layers.extend(stage)
    layers.append(Flatten(f"{prefix}.flatten"))
    return layers


def _lyrics_body(variant: str, embedding_dim: int, seq_len: int, activation: str,
                 rng: np.random.Generator, prefix: str = "lyrics") -> list[Layer]:
    if variant == "GRU":
        return [GRU(f"{prefix}.gru", embedding_dim, 40, rng)]
    if variant == "LSTM":
        return [LSTM(f"{prefix}.lstm", embedding_dim, 80, rng)]
    if variant == "biLSTM":
        return [BiLSTM(f"{prefix}.bilstm", embedding_dim, 40, rng)]
    if variant == "2LSTMs":
        return [LSTM(f"{prefix}.lstm1", embedding_dim, 40, rng, return_sequence=True),
                LSTM(f"{prefix}.lstm2", 40, 40, rng)]
    if variant in ("ConvNet+LSTM", "2ConvNets+2LSTMs"):
        n_conv = 1 if variant == "ConvNet+LSTM" else 2
        layers: list[Layer] = [AddChannel(f"{prefix}.channel")]
        shape: tuple = (1, embedding_dim, seq_len)
        for idx in range(1, n_conv + 1):
            stage = [
                Conv2D(f"{prefix}.conv{idx}", shape[0], 16, (2, 2), rng),
                Activation(f"{prefix}.act{idx}", activation),
                MaxPool2D(f"{prefix}.pool{idx}", 2, 2),
            ]
            shape = _apply(stage, shape)
            layers.extend(stage)
        layers.append(ToSequence(f"{prefix}.sequence"))
        features = shape[0] * shape[1]
        if n_conv == 1:
            layers.append(LSTM(f"{prefix}.lstm", features, 40, rng))
        else:
            layers.append(LSTM(f"{prefix}.lstm1", features, 40, rng, return_sequence=True))
            layers.append(LSTM(f"{prefix}.lstm2", 40, 40, rng))
        return layers
    raise UnknownVariantError(f"Unknown lyrics model variant: {variant!r} (expected one of {', '.join(LYRICS_VARIANTS)})")


def build_audio_convnet(n_mels: int = 40, n_frames: int = 1292, activation: str = "relu",
                        seed: int = 0) -> ModelGraph:
    """Two temporal convolution stages with batchnorm and pooling, then dense 64 and 2."""
    rng = np.random.default_rng(seed)
    body = _audio_body(n_mels, n_frames, activation, rng)
    width = _apply(body, (n_mels, n_frames))[0]
    head = [Dense("audio.dense1", width, 64, rng), Activation("audio.act3", activation),
            Dense("audio.out", 64, 2, rng)]
    return ModelGraph("convnet", {"audio": body}, head, {"audio": (n_mels, n_frames)},
                      config={"n_mels": n_mels, "n_frames": n_frames, "activation": activation})


def build_lyrics_model(variant: str, embedding_dim: int = 100, seq_len: int = 50,
                       activation: str = "relu", drop_prob: float = 0.5, seed: int = 0) -> ModelGraph:
    """Lyrics models of the recurrent and convolutional-recurrent families."""
    if variant not in LYRICS_VARIANTS:
        raise UnknownVariantError(
            f"Unknown lyrics model variant: {variant!r} (expected one of {', '.join(LYRICS_VARIANTS)})")
    rng = np.random.default_rng(seed)
    body = _lyrics_body(variant, embedding_dim, seq_len, activation, rng)
    width = _apply(body, (embedding_dim, seq_len))[0]
    hidden = 32 if "ConvNet" in variant else 64
    head = [Dropout("lyrics.drop1", drop_prob), Dense("lyrics.dense1", width, hidden, rng),
            Activation("lyrics.act_dense", activation), Dropout("lyrics.drop2", drop_prob),
            Dense("lyrics.out", hidden, 2, rng)]
    return ModelGraph(variant, {"lyrics": body}, head, {"lyrics": (embedding_dim, seq_len)},
                      config={"embedding_dim": embedding_dim, "seq_len": seq_len,
                              "activation": activation, "drop_prob": drop_prob})


def build_fusion_model(lyrics_variant: str = "ConvNet+LSTM", n_mels: int = 40, n_frames: int = 1292,
                       embedding_dim: int = 100, seq_len: int = 50, activation: str = "relu",
                       seed: int = 0) -> ModelGraph:
    """Mid-level fusion: both unimodal bodies without their dense layers, concatenated, dense 100 and 2."""
    if lyrics_variant not in LYRICS_VARIANTS:
        raise UnknownVariantError(f"Unknown lyrics model variant: {lyrics_variant!r}")
    rng = np.random.default_rng(seed)
    audio = _audio_body(n_mels, n_frames, activation, rng)
    lyrics = _lyrics_body(lyrics_variant, embedding_dim, seq_len, activation, rng)
    width = _apply(audio, (n_mels, n_frames))[0] + _apply(lyrics, (embedding_dim, seq_len))[0]
    head = [Dense("fusion.dense1", width, 100, rng), Activation("fusion.act", activation),
            Dense("fusion.out", 100, 2, rng)]
    return ModelGraph("fusion", {"audio": audio, "lyrics": lyrics}, head,
                      {"audio": (n_mels, n_frames), "lyrics": (embedding_dim, seq_len)},
                      config={"lyrics_variant": lyrics_variant, "n_mels": n_mels, "n_frames": n_frames,
                              "embedding_dim": embedding_dim, "seq_len": seq_len, "activation": activation})


MODEL_KINDS = ("convnet", "fusion") + LYRICS_VARIANTS


def build_model(kind: str, **config) -> ModelGraph:
    """Dispatch to the builder for ``kind`` (``convnet``, ``fusion`` or a lyrics variant)."""
    if kind == "convnet":
        keys = ("n_mels", "n_frames", "activation", "seed")
        return build_audio_convnet(**{k: v for k, v in config.items() if k in keys})
    if kind == "fusion":
        keys = ("lyrics_variant", "n_mels", "n_frames", "embedding_dim", "seq_len", "activation", "seed")
        return build_fusion_model(**{k: v for k, v in config.items() if k in keys})
    keys = ("embedding_dim", "seq_len", "activation", "drop_prob", "seed")
    return build_lyrics_model(kind, **{k: v for k, v in config.items() if k in keys})


def _parse_meta(meta: str) -> tuple[str, dict]:
    kind, *pairs = meta.split("|")
    config = {}
    for pair in pairs:
        key, _, value = pair.partition("=")
        for cast in (int, float):
            try:
                config[key] = cast(value)
                break
            except ValueError:
                continue
        else:
            config[key] = value
    return kind, config


def load_model(path: Union[str, Path]) -> ModelGraph:
    """Rebuild a model from a checkpoint written by ``ModelGraph.save``."""
    tensors = read_checkpoint(path)
    if "meta.kind" not in tensors:
        raise CheckpointError(f"{path}: not a model checkpoint (no meta.kind)")
    meta = tensors.pop("meta.kind").astype(np.uint8).tobytes().decode("utf-8")
    kind, config = _parse_meta(meta)
    model = build_model(kind, **config)
    model.load_state_dict(tensors)
    logger.info("Loaded %s model from %s", kind, path)
    return model
