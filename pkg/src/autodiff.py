"""Minimal reverse-mode automatic differentiation engine.

Primitives record themselves on the active `Tape` of the current context.
Outside a tape nothing is recorded, which is how inference runs.
All arithmetic is float64.
"""

import contextvars
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Handle imports - try relative first, then absolute
try:
    from .exceptions import InvalidArgumentError, ShapeError
    from .logger import Logger
except ImportError:
    from exceptions import InvalidArgumentError, ShapeError
    from logger import Logger

logger = Logger.get_logger(__name__)

_active_tape: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    """n-dimensional float64 value with an optional gradient of the same shape."""

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    op: str
    inputs: List[Tensor]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of primitive applications; inputs always precede outputs."""

    def __init__(self):
        self.nodes: List[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, node: Node):
        self.nodes.append(node)


def apply_op(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
             backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap a forward result and record it on the active tape.

    backward_fn maps the output gradient to one gradient (or None) per input.
    """
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape.get()
    if tape is not None and out.requires_grad:
        tape.record(Node(op, list(inputs), out, backward_fn))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _shape_error(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply_op("relu", [x], np.where(mask, x.data, 0.0), lambda g: [g * mask])


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise _shape_error("add", x.shape, y.shape)
    return apply_op("add", [x, y], x.data + y.data, lambda g: [g, g])


def reshape(x: Tensor, shape) -> Tensor:
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", original, shape)
    return apply_op("reshape", [x], out, lambda g: [g.reshape(original)])


def dense(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x (N, D) @ W (D, M) + b (M,)."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise _shape_error("dense", x.shape, W.shape)
    if b is not None and b.shape != (W.shape[1],):
        raise _shape_error("dense bias", W.shape, b.shape)
    out = x.data @ W.data
    if b is not None:
        out = out + b.data

    def backward(g):
        grads = [g @ W.data.T, x.data.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = [x, W] + ([b] if b is not None else [])
    return apply_op("dense", inputs, out, backward)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0,
           bias: Optional[Tensor] = None) -> Tensor:
    """Cross-correlation of x (N, C, H, W) with kernel (O, C, KH, KW)."""
    if stride < 1 or pad < 0:
        raise InvalidArgumentError(f"conv2d: stride must be >= 1 and pad >= 0 (got {stride}, {pad})")
    if x.data.ndim != 4 or kernel.data.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise _shape_error("conv2d", x.shape, kernel.shape)
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise _shape_error("conv2d", x.shape, kernel.shape)
    if bias is not None and bias.shape != (o,):
        raise _shape_error("conv2d bias", kernel.shape, bias.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(cols, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        d_kernel = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        d_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                d_xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        d_x = d_xp[:, :, pad:pad + h, pad:pad + w] if pad else d_xp
        grads = [d_x, d_kernel]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = [x, kernel] + ([bias] if bias is not None else [])
    return apply_op("conv2d", inputs, np.ascontiguousarray(out), backward)


def maxpool2d(x: Tensor, window: int, stride: Optional[int] = None, pad: int = 0) -> Tensor:
    """Max over window x window patches; ties route the gradient to the first maximum."""
    stride = stride or window
    if window < 1 or stride < 1 or pad < 0:
        raise InvalidArgumentError("maxpool2d: window and stride must be >= 1, pad >= 0")
    if x.data.ndim != 4 or x.shape[2] + 2 * pad < window or x.shape[3] + 2 * pad < window:
        raise _shape_error("maxpool2d", x.shape, (window, window))
    n, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                constant_values=-np.inf) if pad else x.data
    ho = (h + 2 * pad - window) // stride + 1
    wo = (w + 2 * pad - window) // stride + 1
    patches = sliding_window_view(xp, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = patches.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        d_xp = np.zeros(xp.shape)
        for i in range(window):
            for j in range(window):
                hit = arg == (i * window + j)
                d_xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * hit
        return [d_xp[:, :, pad:pad + h, pad:pad + w] if pad else d_xp]

    return apply_op("maxpool2d", [x], out, backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise InvalidArgumentError("concat_channels needs at least one tensor")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.data.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise _shape_error("concat_channels", ref, t.shape)
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=1)
    return apply_op("concat_channels", list(xs), out, lambda g: np.split(g, splits, axis=1))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 4 or not 0 <= start < stop <= x.shape[1]:
        raise _shape_error("slice_channels", x.shape, (start, stop))

    def backward(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return [full]

    return apply_op("slice_channels", [x], x.data[:, start:stop].copy(), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    if x.data.ndim != 4:
        raise _shape_error("global_avg_pool", x.shape, ("N", "C", "H", "W"))
    n, c, h, w = x.shape
    return apply_op("global_avg_pool", [x], x.data.mean(axis=(2, 3)),
                    lambda g: [np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy()])


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over the batch; logits (N, K) or (K,), integer labels."""
    z = logits.data if logits.data.ndim == 2 else logits.data[None, :]
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != z.shape[0] or np.any(y < 0) or np.any(y >= z.shape[1]):
        raise _shape_error("softmax_cross_entropy", logits.shape, y.shape)
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    loss = -log_probs[rows, y].mean()

    def backward(g):
        probs = np.exp(log_probs)
        probs[rows, y] -= 1.0
        return [(g * probs / z.shape[0]).reshape(logits.shape)]

    return apply_op("softmax_cross_entropy", [logits], np.array(loss), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise _shape_error("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        return [g * 2.0 * diff / n, -g * 2.0 * diff / n]

    return apply_op("mse", [pred, target], np.array((diff ** 2).mean()), backward)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad of every tensor reached by the tape.

    Leaves that require grad but receive nothing end with a zero gradient.
    """
    if loss.size != 1:
        raise InvalidArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if len(tape) == 0:
        raise InvalidArgumentError("backward called on an empty tape")

    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad:
                t.grad = np.zeros(t.shape)
        node.output.grad = np.zeros(node.output.shape)
    loss.grad = np.ones(loss.shape)

    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None or not np.any(g):
            continue
        for t, dt in zip(node.inputs, node.backward_fn(g)):
            if t.requires_grad and dt is not None:
                t.grad = t.grad + dt


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_input: int = -1
    worst_index: int = -1


def grad_check(fn: Callable[[List[Tensor]], Tensor], input_shapes: Sequence[Sequence[int]],
               eps: float = 1e-4, tol: float = 1e-3, seed: int = 0,
               margin: float = 1e-2, inputs: Optional[Sequence[np.ndarray]] = None) -> GradCheckReport:
    """Compare backward() against central differences, element by element.

    fn maps a list of input tensors to a scalar tensor. Drawn inputs are
    kept at least `margin` away from zero.
    """
    if inputs is None:
        rng = np.random.default_rng(seed)
        inputs = []
        for shape in input_shapes:
            values = rng.standard_normal(tuple(shape))
            values = np.where(np.abs(values) < margin, np.copysign(margin, values), values)
            inputs.append(values)
    tensors = [Tensor(v, requires_grad=True) for v in inputs]

    with Tape() as tape:
        loss = fn(tensors)
    backward(tape, loss)
    analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in tensors]

    worst = GradCheckReport(0.0, True)
    for k, base in enumerate(inputs):
        flat = np.array(base, dtype=np.float64).reshape(-1)
        for idx in range(flat.size):
            probe = [np.array(v, dtype=np.float64) for v in inputs]
            plus = flat.copy()
            plus[idx] += eps
            probe[k] = plus.reshape(np.shape(base))
            f_plus = fn([Tensor(v) for v in probe]).item()
            minus = flat.copy()
            minus[idx] -= eps
            probe[k] = minus.reshape(np.shape(base))
            f_minus = fn([Tensor(v) for v in probe]).item()
            numeric = (f_plus - f_minus) / (2 * eps)
            a = analytic[k].reshape(-1)[idx]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst.max_rel_error:
                worst = GradCheckReport(rel, True, k, idx)
    worst.passed = worst.max_rel_error < tol
    if not worst.passed:
        logger.debug(f"grad_check failed: rel error {worst.max_rel_error:.3e} "
                     f"at input {worst.worst_input}[{worst.worst_index}]")
    return worst


@dataclass(frozen=True)
class PrimitiveCheck:
    """One gradient-check case: fn maps input tensors to a scalar."""
    name: str
    fn: Callable[[List[Tensor]], Tensor]
    shapes: Tuple[Tuple[int, ...], ...]
    spaced: bool = False


def _project(out: Tensor) -> Tensor:
    """Scalar readout of a tensor against a fixed random target."""
    target = np.random.default_rng(7).standard_normal(out.shape)
    return mse(out, target)


def _spaced_inputs(shapes, rng: np.random.Generator) -> List[np.ndarray]:
    # Distinct values 0.05 apart so no pooling window holds a near-tie
    inputs = []
    for shape in shapes:
        size = int(np.prod(shape))
        inputs.append((rng.permutation(size) * 0.05 - size * 0.025 + 0.01).reshape(shape))
    return inputs


def primitive_checks() -> List[PrimitiveCheck]:
    labels = np.array([0, 2, 4, 1])
    return [
        PrimitiveCheck("relu", lambda xs: _project(relu(xs[0])), ((2, 3, 4, 4),)),
        PrimitiveCheck("add", lambda xs: _project(add(xs[0], xs[1])), ((2, 3), (2, 3))),
        PrimitiveCheck("reshape", lambda xs: _project(reshape(xs[0], (2, 12))), ((2, 3, 4),)),
        PrimitiveCheck("dense", lambda xs: _project(dense(xs[0], xs[1], xs[2])),
                       ((3, 4), (4, 5), (5,))),
        PrimitiveCheck("conv2d", lambda xs: _project(conv2d(xs[0], xs[1], 1, 1, xs[2])),
                       ((2, 2, 5, 5), (3, 2, 3, 3), (3,))),
        PrimitiveCheck("conv2d_strided", lambda xs: _project(conv2d(xs[0], xs[1], 2, 0)),
                       ((1, 2, 7, 7), (2, 2, 3, 3))),
        PrimitiveCheck("maxpool2d", lambda xs: _project(maxpool2d(xs[0], 2)),
                       ((2, 2, 4, 4),), spaced=True),
        PrimitiveCheck("maxpool2d_padded", lambda xs: _project(maxpool2d(xs[0], 3, 1, 1)),
                       ((1, 2, 4, 4),), spaced=True),
        PrimitiveCheck("concat_channels", lambda xs: _project(concat_channels(xs)),
                       ((2, 2, 3, 3), (2, 3, 3, 3))),
        PrimitiveCheck("slice_channels", lambda xs: _project(slice_channels(xs[0], 1, 3)),
                       ((2, 4, 3, 3),)),
        PrimitiveCheck("global_avg_pool", lambda xs: _project(global_avg_pool(xs[0])),
                       ((2, 3, 4, 4),)),
        PrimitiveCheck("softmax_cross_entropy",
                       lambda xs: softmax_cross_entropy(xs[0], labels), ((4, 5),)),
        PrimitiveCheck("mse", lambda xs: mse(xs[0], xs[1]), ((3, 2), (3, 2))),
    ]


def check_primitives(seeds: int = 20, eps: float = 1e-4, tol: float = 1e-3,
                     checks: Optional[Sequence[PrimitiveCheck]] = None) -> Dict[str, GradCheckReport]:
    """Worst grad_check result per primitive over seeds 0..seeds-1."""
    results: Dict[str, GradCheckReport] = {}
    for check in checks or primitive_checks():
        worst = GradCheckReport(0.0, True)
        for seed in range(seeds):
            inputs = _spaced_inputs(check.shapes, np.random.default_rng(seed)) \
                if check.spaced else None
            report = grad_check(check.fn, check.shapes, eps=eps, tol=tol, seed=seed, inputs=inputs)
            if report.max_rel_error >= worst.max_rel_error:
                worst = report
        worst.passed = worst.max_rel_error < tol
        results[check.name] = worst
        logger.debug(f"grad_check {check.name}: max rel error {worst.max_rel_error:.3e}")
    return results
