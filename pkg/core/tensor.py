"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A ``Tape`` is created per forward pass. Primitives executed on tensors that
belong to a training tape are recorded as ``Node`` entries; ``backward`` walks
the nodes in reverse execution order and leaves dLoss/dParam on every watched
``Parameter``. Inference tapes record nothing.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Protocol, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError, TapeError

logger = logging.getLogger(__name__)


class Tensor:
    """n-dimensional array of 64-bit floats, optionally attached to a tape."""

    __slots__ = ("data", "tape", "param")

    def __init__(self, data, tape: Optional["Tape"] = None, param: Optional["Parameter"] = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if 0 in arr.shape:
            raise ShapeError(f"Tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.tape = tape
        self.param = param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_scalar(self) -> bool:
        return self.data.shape == (1,)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        return forward_primitive("add", [self, other])

    def __sub__(self, other: "Tensor") -> "Tensor":
        return forward_primitive("sub", [self, other])

    def __mul__(self, other: "Tensor") -> "Tensor":
        return forward_primitive("mul", [self, other])

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return forward_primitive("matmul", [self, other])

    def __repr__(self) -> str:
        tracked = ", tracked" if self.tape is not None else ""
        return f"Tensor(shape={list(self.shape)}{tracked})"


@dataclass
class Parameter:
    """A named trainable tensor and its gradient."""
    name: str
    value: Tensor
    grad: Tensor = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = Tensor(np.zeros_like(self.value.data))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = Tensor(np.zeros_like(self.value.data))


class Node(NamedTuple):
    """One executed primitive on a tape."""
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray, tuple[bool, ...]], Sequence[Optional[np.ndarray]]]


class Tape:
    """Execution record for one forward pass.

    ``training`` selects the behaviour of dropout and batchnorm. Only training
    tapes record nodes.
    """

    def __init__(self, training: bool = True):
        self.training = training
        self.nodes: list[Node] = []
        self._leaves: dict[int, Tensor] = {}
        self._consumed = False

    def watch(self, param: Parameter) -> Tensor:
        """Return the tape-local leaf tensor for ``param``."""
        leaf = self._leaves.get(id(param))
        if leaf is None:
            leaf = Tensor(param.value.data, tape=self if self.training else None, param=param)
            self._leaves[id(param)] = leaf
        return leaf

    def record(self, node: Node) -> None:
        if self._consumed:
            raise TapeError("Tape already consumed by backward(); start a new forward pass")
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        if loss.tape is not self:
            raise TapeError("Loss was not recorded on this tape (inference mode?)")
        if not loss.is_scalar:
            raise TapeError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
        if self._consumed:
            raise TapeError("backward() already ran for this forward pass")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            needs = tuple(t.tape is self for t in node.inputs)
            for tensor, grad, needed in zip(node.inputs, node.backward(upstream, needs), needs):
                if not needed or grad is None:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad

        for leaf in self._leaves.values():
            grad = grads.get(id(leaf))
            leaf.param.grad = Tensor(np.zeros_like(leaf.data) if grad is None else np.array(grad))
        self._consumed = True
        logger.debug("backward over %d nodes, %d parameters", len(self.nodes), len(self._leaves))


def backward(loss: Tensor) -> None:
    """Populate gradients of every parameter watched on the loss's tape."""
    if loss.tape is None:
        raise TapeError("Loss was not recorded on a training tape")
    loss.tape.backward(loss)


# =============================================================================
# Primitive registry
# =============================================================================

PrimitiveFn = Callable[..., tuple[np.ndarray, Callable]]
PRIMITIVES: dict[str, PrimitiveFn] = {}


def register_primitive(kind: str) -> Callable[[PrimitiveFn], PrimitiveFn]:
    """Register ``fn(arrays, **attrs) -> (output, backward)`` under ``kind``."""
    def decorator(fn: PrimitiveFn) -> PrimitiveFn:
        PRIMITIVES[kind] = fn
        return fn
    return decorator


def forward_primitive(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Execute a primitive and record it on the inputs' tape when training."""
    fn = PRIMITIVES.get(kind)
    if fn is None:
        raise ShapeError(f"Unknown primitive: {kind}")
    tape = None
    for t in inputs:
        if not np.isfinite(t.data).all():
            raise NonFiniteError(f"{kind}: non-finite input of shape {list(t.shape)}")
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeError(f"{kind}: inputs belong to different tapes")
            tape = t.tape
    out, grad_fn = fn([t.data for t in inputs], **attrs)
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{kind}: produced non-finite output")
    result = Tensor(out, tape=tape)
    if tape is not None:
        tape.record(Node(kind, tuple(inputs), result, grad_fn))
    return result


def _shape_error(kind: str, a: tuple, b: tuple, detail: str = "") -> ShapeError:
    suffix = f" ({detail})" if detail else ""
    return ShapeError(f"{kind}: incompatible shapes {list(a)} and {list(b)}{suffix}")


def _broadcast(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    # Only broadcasting over leading axes is allowed.
    if a.shape == b.shape:
        return
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    if a.ndim < b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return
    raise _shape_error(kind, a.shape, b.shape, "broadcast over leading axes only")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return grad.reshape((-1,) + shape).sum(axis=0)


@register_primitive("add")
def _add(arrays, **_):
    a, b = arrays
    _broadcast("add", a, b)

    def grad(g, needs):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return a + b, grad


@register_primitive("sub")
def _sub(arrays, **_):
    a, b = arrays
    _broadcast("sub", a, b)

    def grad(g, needs):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)
    return a - b, grad


@register_primitive("mul")
def _mul(arrays, **_):
    a, b = arrays
    _broadcast("mul", a, b)

    def grad(g, needs):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)
    return a * b, grad


@register_primitive("matmul")
def _matmul(arrays, **_):
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)

    def grad(g, needs):
        return (g @ b.T if needs[0] else None), (a.T @ g if needs[1] else None)
    return a @ b, grad


@register_primitive("sigmoid")
def _sigmoid(arrays, **_):
    (x,) = arrays
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def grad(g, needs):
        return (g * out * (1.0 - out),)
    return out, grad


@register_primitive("tanh")
def _tanh(arrays, **_):
    (x,) = arrays
    out = np.tanh(x)

    def grad(g, needs):
        return (g * (1.0 - out * out),)
    return out, grad


@register_primitive("relu")
def _relu(arrays, **_):
    (x,) = arrays
    mask = x > 0

    def grad(g, needs):
        return (g * mask,)
    return np.where(mask, x, 0.0), grad


@register_primitive("conv1d_temporal")
def _conv1d(arrays, stride: int = 1):
    x, w, b = arrays
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise _shape_error("conv1d_temporal", x.shape, w.shape, "expects [B,C,L] and [O,C,k]")
    k = w.shape[2]
    if k > x.shape[2]:
        raise _shape_error("conv1d_temporal", x.shape, w.shape, "kernel longer than input")
    windows = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    n_out = windows.shape[2]
    out = np.tensordot(windows, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1) + b[None, :, None]

    def grad(g, needs):
        gw = np.tensordot(g, windows, axes=([0, 2], [0, 2])) if needs[1] else None
        gb = g.sum(axis=(0, 2)) if needs[2] else None
        gx = None
        if needs[0]:
            gx = np.zeros_like(x)
            cols = np.tensordot(g, w, axes=([1], [0]))  # [B, L_out, C, k]
            span = stride * (n_out - 1) + 1
            for j in range(k):
                gx[:, :, j:j + span:stride] += cols[:, :, :, j].transpose(0, 2, 1)
        return gx, gw, gb
    return out, grad


@register_primitive("conv2d")
def _conv2d(arrays, stride: int = 1):
    x, w, b = arrays
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise _shape_error("conv2d", x.shape, w.shape, "expects [B,C,H,W] and [O,C,kh,kw]")
    kh, kw = w.shape[2:]
    if kh > x.shape[2] or kw > x.shape[3]:
        raise _shape_error("conv2d", x.shape, w.shape, "kernel larger than input")
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2:4]
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2) + b[None, :, None, None]

    def grad(g, needs):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])) if needs[1] else None
        gb = g.sum(axis=(0, 2, 3)) if needs[2] else None
        gx = None
        if needs[0]:
            gx = np.zeros_like(x)
            cols = np.tensordot(g, w, axes=([1], [0]))  # [B, Ho, Wo, C, kh, kw]
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return gx, gw, gb
    return out, grad


@register_primitive("maxpool1d")
def _maxpool1d(arrays, size: int, stride: int):
    (x,) = arrays
    if x.ndim != 3 or size > x.shape[2]:
        raise ShapeError(f"maxpool1d: cannot pool {list(x.shape)} with size {size}")
    windows = sliding_window_view(x, size, axis=2)[:, :, ::stride, :]
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def grad(g, needs):
        gx = np.zeros_like(x)
        pos = np.arange(idx.shape[2])[None, None, :] * stride + idx
        bi = np.arange(x.shape[0])[:, None, None]
        ci = np.arange(x.shape[1])[None, :, None]
        np.add.at(gx, (bi, ci, pos), g)
        return (gx,)
    return out, grad


@register_primitive("maxpool2d")
def _maxpool2d(arrays, size: int, stride: int):
    (x,) = arrays
    if x.ndim != 4 or size > x.shape[2] or size > x.shape[3]:
        raise ShapeError(f"maxpool2d: cannot pool {list(x.shape)} with size {size}")
    windows = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    bsz, chans, ho, wo = windows.shape[:4]
    flat = windows.reshape(bsz, chans, ho, wo, size * size)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def grad(g, needs):
        gx = np.zeros_like(x)
        rows = np.arange(ho)[None, None, :, None] * stride + idx // size
        cols = np.arange(wo)[None, None, None, :] * stride + idx % size
        bi = np.arange(bsz)[:, None, None, None]
        ci = np.arange(chans)[None, :, None, None]
        np.add.at(gx, (bi, ci, rows, cols), g)
        return (gx,)
    return out, grad


@register_primitive("batchnorm")
def _batchnorm(arrays, training: bool, running_mean: np.ndarray, running_var: np.ndarray,
               eps: float = 1e-5, stats: Optional[dict] = None):
    x, gamma, beta = arrays
    if x.ndim not in (2, 3) or gamma.shape != (x.shape[1],) or beta.shape != gamma.shape:
        raise _shape_error("batchnorm", x.shape, gamma.shape, "one scale per feature map")
    axes = (0, 2) if x.ndim == 3 else (0,)
    view = (1, -1, 1) if x.ndim == 3 else (1, -1)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if stats is not None:
            stats["mean"], stats["var"] = mean, var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(view)) * inv_std.reshape(view)
    out = gamma.reshape(view) * xhat + beta.reshape(view)
    count = x.size // x.shape[1]

    def grad(g, needs):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.reshape(view)
        if training:
            gx = inv_std.reshape(view) / count * (
                count * gxhat
                - gxhat.sum(axis=axes).reshape(view)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(view)
            )
        else:
            gx = gxhat * inv_std.reshape(view)
        return gx, ggamma, gbeta
    return out, grad


@register_primitive("concat")
def _concat(arrays, axis: int = -1):
    first = arrays[0]
    ax = axis % first.ndim
    for other in arrays[1:]:
        if other.ndim != first.ndim or any(
                d1 != d2 for i, (d1, d2) in enumerate(zip(first.shape, other.shape)) if i != ax):
            raise _shape_error("concat", first.shape, other.shape, f"axis {axis}")
    bounds = np.cumsum([a.shape[ax] for a in arrays])[:-1]

    def grad(g, needs):
        return np.split(g, bounds, axis=ax)
    return np.concatenate(arrays, axis=ax), grad


@register_primitive("mean_over_axis")
def _mean(arrays, axis: int):
    (x,) = arrays
    ax = axis % x.ndim
    n = x.shape[ax]
    out = x.mean(axis=ax)

    def grad(g, needs):
        g = g.reshape(out.shape) if out.ndim else g.reshape(())
        return (np.repeat(np.expand_dims(g, ax), n, axis=ax) / n,)
    return out, grad


@register_primitive("dropout_mask_apply")
def _dropout(arrays, mask: np.ndarray):
    (x,) = arrays
    if mask.shape != x.shape:
        raise _shape_error("dropout_mask_apply", x.shape, mask.shape)

    def grad(g, needs):
        return (g * mask,)
    return x * mask, grad


@register_primitive("mse_loss")
def _mse(arrays, **_):
    pred, target = arrays
    if pred.shape != target.shape:
        raise _shape_error("mse_loss", pred.shape, target.shape)
    diff = pred - target
    batch = pred.shape[0]
    loss = np.array([(diff * diff).sum() / batch])

    def grad(g, needs):
        scaled = 2.0 * g[0] * diff / batch
        return scaled, -scaled
    return loss, grad


@register_primitive("reshape")
def _reshape(arrays, shape: tuple):
    (x,) = arrays
    try:
        out = x.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {list(x.shape)} to {list(shape)}") from e

    def grad(g, needs):
        return (g.reshape(x.shape),)
    return out, grad


@register_primitive("transpose")
def _transpose(arrays, axes: tuple):
    (x,) = arrays
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {list(axes)} invalid for shape {list(x.shape)}")
    inverse = np.argsort(axes)

    def grad(g, needs):
        return (g.transpose(inverse),)
    return x.transpose(axes), grad


@register_primitive("slice")
def _slice(arrays, axis: int, start: int, stop: int):
    (x,) = arrays
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError(f"slice: [{start}, {stop}) out of range for axis {ax} of {list(x.shape)}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def grad(g, needs):
        gx = np.zeros_like(x)
        gx[index] = g
        return (gx,)
    return x[index], grad


@register_primitive("select")
def _select(arrays, axis: int, index: int):
    (x,) = arrays
    ax = axis % x.ndim
    if x.ndim < 2 or not 0 <= index < x.shape[ax]:
        raise ShapeError(f"select: index {index} invalid for axis {ax} of {list(x.shape)}")

    def grad(g, needs):
        gx = np.zeros_like(x)
        np.moveaxis(gx, ax, 0)[index] = g
        return (gx,)
    return np.take(x, index, axis=ax), grad


# =============================================================================
# Functional helpers
# =============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return forward_primitive("matmul", [a, b])


def sigmoid(x: Tensor) -> Tensor:
    return forward_primitive("sigmoid", [x])


def tanh(x: Tensor) -> Tensor:
    return forward_primitive("tanh", [x])


def relu(x: Tensor) -> Tensor:
    return forward_primitive("relu", [x])


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    return forward_primitive("concat", list(tensors), axis=axis)


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    return forward_primitive("mean_over_axis", [x], axis=axis)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return forward_primitive("reshape", [x], shape=tuple(shape))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return forward_primitive("transpose", [x], axes=tuple(axes))


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    return forward_primitive("slice", [x], axis=axis, start=start, stop=stop)


def select(x: Tensor, axis: int, index: int) -> Tensor:
    return forward_primitive("select", [x], axis=axis, index=index)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Per-item sum of squared errors, averaged over the batch axis."""
    return forward_primitive("mse_loss", [pred, target])


def dropout(x: Tensor, drop_prob: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: identity at inference, keep-mask scaled by 1/keep at training."""
    if not training or drop_prob <= 0.0:
        return x
    keep = 1.0 - drop_prob
    mask = (rng.random(x.shape) < keep) / keep
    return forward_primitive("dropout_mask_apply", [x], mask=mask)


# =============================================================================
# Finite-difference verification
# =============================================================================

class Differentiable(Protocol):
    def parameters(self) -> list[Parameter]: ...

    def forward(self, inputs, tape: Tape, rng: np.random.Generator) -> Tensor: ...


@dataclass
class GradientReport:
    """Max relative error per parameter between analytic and numeric gradients."""
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err <= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def gradient_check(model: Differentiable, inputs, target: Tensor, step: float = 1e-5,
                   tol: float = 1e-4, max_entries: Optional[int] = None, seed: int = 0,
                   abs_floor: float = 1e-4) -> GradientReport:
    """Compare backward() against central differences of the training loss.

    The relative error of an entry is ``|a - n| / max(|a|, |n|, abs_floor)``.
    Every forward pass reseeds the dropout generator so masks match.
    """
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")

    def loss_value() -> float:
        tape = Tape(training=True)
        out = model.forward(inputs, tape=tape, rng=np.random.default_rng(seed))
        return mse_loss(out, target).item()

    tape = Tape(training=True)
    for p in model.parameters():
        p.zero_grad()
    loss = mse_loss(model.forward(inputs, tape=tape, rng=np.random.default_rng(seed)), target)
    backward(loss)

    picker = np.random.default_rng(seed + 1)
    report = GradientReport(tol=tol)
    for p in model.parameters():
        analytic = p.grad.data.reshape(-1)
        flat = p.value.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(picker.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in entries:
            saved = flat[i]
            flat[i] = saved + step
            plus = loss_value()
            flat[i] = saved - step
            minus = loss_value()
            flat[i] = saved
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(analytic[i]), abs(numeric), abs_floor)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
        report.errors[p.name] = worst
        if worst > tol:
            logger.warning("gradient check failed for %s: rel error %.3e", p.name, worst)
    return report
