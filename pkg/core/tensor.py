"""Dense float tensors with a reverse-mode gradient tape.

Every numeric quantity of the detector (features, refined and adjusted
representations, logits) is a ``Tensor``. Operations run eagerly on numpy
arrays; when at least one operand is attached to the active ``Tape`` the
operation is appended to it together with a vector-Jacobian product closure,
and ``backward`` sweeps the tape in reverse.

Broadcasting is deliberately narrow: the second operand of a binary operation
may be equal-shaped, a scalar, a trailing suffix of the first operand's shape
(a bias ``[d]`` against ``[B, d]``) or the first operand's shape with the last
extent set to 1 (per-row statistics against ``[B, d]``).
"""

import logging
import threading
from collections.abc import Mapping
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import GamedError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-6
DIVISION_EPS = 1e-12

Number = Union[int, float]
VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class TensorError(GamedError):
    """Base class for tensor-level failures."""


class ShapeMismatchError(TensorError):
    """Operand shapes are incompatible for the requested operation."""


class NumericDomainError(TensorError):
    """An operation was asked to leave its numeric domain (e.g. divide by ~0)."""


class InvalidAxisError(TensorError):
    """An axis argument does not exist on the operand."""


class NonScalarLossError(TensorError):
    """``backward`` was called on something other than a scalar."""


_state = threading.local()


def default_dtype() -> type:
    """Return the dtype new tensors are created with on this thread."""
    return getattr(_state, "dtype", np.float32)


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype of newly created tensors.

    The gradient checker runs in float64; everything else stays float32.
    """
    previous = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


def active_tape() -> Optional["Tape"]:
    """Return the tape currently recording on this thread, if any."""
    return getattr(_state, "tape", None)


class Tensor:
    """Dense n-dimensional array with optional tape participation."""

    __slots__ = ("values", "node", "_tape")

    def __init__(self, values, node: Optional[int] = None):
        self.values = np.asarray(values, dtype=default_dtype())
        self.node = node
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeMismatchError(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def is_attached(self, tape: Optional["Tape"] = None) -> bool:
        tape = tape if tape is not None else active_tape()
        return tape is not None and self.node is not None and self._tape is tape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("add", elementwise("scale", self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return elementwise("scale", self, other)
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __neg__(self):
        return elementwise("scale", self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class TapeNode:
    """One recorded operation."""

    node_id: int
    op: str
    inputs: Tuple[Optional[int], ...]
    shape: Tuple[int, ...]
    dtype: type
    vjp: Optional[VJP]


class Tape:
    """Append-only record of operations, used as a context manager.

    Usage:
        with Tape() as tape:
            tape.watch(*model.parameters())
            loss = compute(...)
            grads = backward(tape, loss)
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._watched: List[Tensor] = []
        self._previous: Optional["Tape"] = None

    def __enter__(self) -> "Tape":
        self._previous = active_tape()
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _state.tape = self._previous
        for tensor in self._watched:
            tensor.node = None
            tensor._tape = None
        self._watched.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, *tensors: Tensor) -> None:
        """Attach leaf tensors (typically parameters) to this tape."""
        for tensor in tensors:
            tensor.node = self._append("leaf", (), tensor.shape, tensor.values.dtype.type, None)
            tensor._tape = self
            self._watched.append(tensor)

    def _append(self, op: str, inputs, shape, dtype, vjp: Optional[VJP]) -> int:
        node_id = len(self.nodes)
        self.nodes.append(TapeNode(node_id, op, tuple(inputs), tuple(shape), dtype, vjp))
        return node_id


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _record(op: str, operands: Sequence[Tensor], out: np.ndarray, vjp: VJP) -> Tensor:
    result = Tensor(out)
    tape = active_tape()
    if tape is None:
        return result
    inputs = tuple(t.node if t.is_attached(tape) else None for t in operands)
    if all(node is None for node in inputs):
        return result
    result.node = tape._append(op, inputs, result.shape, result.values.dtype.type, vjp)
    result._tape = tape
    return result


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise InvalidAxisError(f"axis {axis} is invalid for a {ndim}-dimensional tensor")
    return axis % ndim


def _check_broadcast(a_shape: Tuple[int, ...], b_shape: Tuple[int, ...], op: str) -> None:
    if b_shape == a_shape or b_shape == ():
        return
    if len(b_shape) <= len(a_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape:
        return
    if len(b_shape) == len(a_shape) and b_shape[:-1] == a_shape[:-1] and b_shape[-1] == 1:
        return
    raise ShapeMismatchError(f"{op}: shapes {a_shape} and {b_shape} are not compatible")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product contracting the last axis of ``a`` with ``b[k, n]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} do not agree")
    av, bv = a.values, b.values
    out = av @ bv

    def vjp(g):
        grad_a = g @ bv.T
        grad_b = av.reshape(-1, bv.shape[0]).T @ g.reshape(-1, bv.shape[1])
        return grad_a, grad_b

    return _record("matmul", (a, b), out, vjp)


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """Per-sample matrix product ``a[B, n, k] @ b[B, k, m]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeMismatchError(f"batched_matmul: shapes {a.shape} and {b.shape} do not agree")
    av, bv = a.values, b.values
    out = np.einsum("bnk,bkm->bnm", av, bv)

    def vjp(g):
        return np.einsum("bnm,bkm->bnk", g, bv), np.einsum("bnk,bnm->bkm", av, g)

    return _record("batched_matmul", (a, b), out, vjp)


def swap_last_axes(x: Tensor) -> Tensor:
    """Transpose the last two axes."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise InvalidAxisError(f"swap_last_axes needs at least 2 dimensions, got {x.ndim}")
    out = np.swapaxes(x.values, -1, -2)
    return _record("swap_last_axes", (x,), out, lambda g: (np.swapaxes(g, -1, -2),))


def elementwise(kind: str, a: Tensor, b: Union[Tensor, Number]) -> Tensor:
    """Pointwise ``add | sub | mul | div | scale`` with last-axis broadcasting.

    ``scale`` multiplies ``a`` by the plain number ``b``.
    """
    a = _as_tensor(a)
    if kind == "scale":
        if isinstance(b, Tensor):
            if b.size != 1:
                raise ShapeMismatchError(f"scale: factor must be a scalar, got shape {b.shape}")
            b = b.item()
        factor = float(b)
        av = a.values
        out = av * np.asarray(factor, dtype=av.dtype)
        return _record("scale", (a,), out, lambda g: (g * factor,))

    b = _as_tensor(b)
    _check_broadcast(a.shape, b.shape, kind)
    av, bv = a.values, b.values
    a_shape, b_shape = a.shape, b.shape

    if kind == "add":
        out = av + bv
        vjp = lambda g: (g, _unbroadcast(g, b_shape))
    elif kind == "sub":
        out = av - bv
        vjp = lambda g: (g, -_unbroadcast(g, b_shape))
    elif kind == "mul":
        out = av * bv
        vjp = lambda g: (_unbroadcast(g * bv, a_shape), _unbroadcast(g * av, b_shape))
    elif kind == "div":
        if np.any(np.abs(bv) < DIVISION_EPS):
            raise NumericDomainError("div: divisor has entries with magnitude below 1e-12")
        out = av / bv

        def vjp(g):
            return _unbroadcast(g / bv, a_shape), _unbroadcast(-g * av / (bv * bv), b_shape)
    else:
        raise ValueError(f"unknown elementwise kind '{kind}'")

    return _record(kind, (a, b), out, vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)


def _softplus(x: np.ndarray) -> np.ndarray:
    return (np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))).astype(x.dtype, copy=False)


def activation(kind: str, x: Tensor) -> Tensor:
    """Pointwise ``sigmoid | silu | softplus`` in overflow-free form."""
    x = _as_tensor(x)
    xv = x.values
    s = _sigmoid(xv)
    if kind == "sigmoid":
        out = s
        vjp = lambda g: (g * s * (1 - s),)
    elif kind == "silu":
        out = xv * s
        vjp = lambda g: (g * (s + xv * s * (1 - s)),)
    elif kind == "softplus":
        out = _softplus(xv)
        vjp = lambda g: (g * s,)
    else:
        raise ValueError(f"unknown activation '{kind}'")
    return _record(kind, (x,), out, vjp)


def sigmoid(x: Tensor) -> Tensor:
    return activation("sigmoid", x)


def silu(x: Tensor) -> Tensor:
    return activation("silu", x)


def softplus(x: Tensor) -> Tensor:
    return activation("softplus", x)


def reduce_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Sum over one axis, or over everything when ``axis`` is None."""
    x = _as_tensor(x)
    shape = x.shape
    if axis is None:
        out = x.values.sum(keepdims=keepdims)
        return _record("sum", (x,), out, lambda g: (np.broadcast_to(g, shape).copy(),))
    axis = _normalize_axis(axis, x.ndim)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", (x,), out, vjp)


def reduce_mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over one axis, or over everything when ``axis`` is None."""
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[_normalize_axis(axis, x.ndim)]
    return elementwise("scale", reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_stats(x: Tensor, axis: int, keepdims: bool = False) -> Tuple[Tensor, Tensor]:
    """Population mean and standard deviation along ``axis``.

    The standard deviation divides by n and is floored at ``STD_FLOOR``.
    """
    x = _as_tensor(x)
    axis = _normalize_axis(axis, x.ndim)
    count = x.shape[axis]
    if count < 1:
        raise InvalidAxisError(f"axis {axis} has extent 0")
    mu = reduce_mean(x, axis=axis, keepdims=keepdims)

    xv = x.values
    centered = xv - xv.mean(axis=axis, keepdims=True)
    raw_std = np.sqrt((centered * centered).mean(axis=axis, keepdims=True))
    floored = raw_std <= STD_FLOOR
    std_keep = np.where(floored, STD_FLOOR, raw_std).astype(xv.dtype, copy=False)
    out = std_keep if keepdims else np.squeeze(std_keep, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        scale = np.where(floored, 0.0, g / (count * std_keep))
        return ((centered * scale).astype(xv.dtype, copy=False),)

    return mu, _record("std", (x,), out, vjp)


def bce_with_logits(logit: Tensor, target, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy on logits, ``max(o,0) - o*t + log(1 + exp(-|o|))``.

    Args:
        logit: Logit tensor (a scalar, or any shape when batched)
        target: 0/1 value or array broadcastable to ``logit``
        reduction: ``none``, ``mean`` or ``sum``

    Returns:
        Loss tensor (scalar unless ``reduction == "none"``)
    """
    logit = _as_tensor(logit)
    ov = logit.values
    tv = np.broadcast_to(np.asarray(target, dtype=ov.dtype), ov.shape)
    if not np.all((tv == 0) | (tv == 1)):
        raise ValueError("bce_with_logits: targets must be 0 or 1")
    losses = np.maximum(ov, 0) - ov * tv + np.log1p(np.exp(-np.abs(ov)))
    residual = _sigmoid(ov) - tv

    per_element = _record("bce", (logit,), losses.astype(ov.dtype, copy=False),
                          lambda g: (g * residual,))
    if reduction == "none":
        return per_element
    if reduction == "sum":
        return reduce_sum(per_element)
    if reduction == "mean":
        return reduce_mean(per_element)
    raise ValueError(f"unknown reduction '{reduction}'")


# ---------------------------------------------------------------------------
# Structural operations used by the network layers
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    original = x.shape
    out = x.values.reshape(tuple(shape))
    return _record("reshape", (x,), out, lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis``; all other extents must agree."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatchError("concat: nothing to concatenate")
    axis = _normalize_axis(axis, tensors[0].ndim)
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatchError(f"concat: {[t.shape for t in tensors]}: {exc}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", tensors, out, vjp)


def stack(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Stack equal-shaped tensors along a new axis."""
    tensors = [_as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.values for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record("stack", tensors, out, vjp)


def weighted_sum(weights: Tensor, items: Tensor) -> Tensor:
    """``out[b] = sum_n weights[b, n] * items[b, n]`` for ``items[B, N, d]``."""
    weights, items = _as_tensor(weights), _as_tensor(items)
    if items.ndim != 3 or weights.shape != items.shape[:2]:
        raise ShapeMismatchError(f"weighted_sum: shapes {weights.shape} and {items.shape} do not agree")
    wv, xv = weights.values, items.values
    out = np.einsum("bn,bnd->bd", wv, xv)

    def vjp(g):
        return np.einsum("bd,bnd->bn", g, xv), wv[:, :, None] * g[:, None, :]

    return _record("weighted_sum", (weights, items), out, vjp)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = _as_tensor(x)
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record("softmax", (x,), s, vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table[V, d]`` for an integer id array of any shape."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeMismatchError(f"embedding: ids outside [0, {vocab})")
    out = table.values[ids]

    def vjp(g):
        grad = np.zeros_like(table.values)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _record("embedding", (table,), out, vjp)


def constrained_conv2d(images: Tensor, kernels: Tensor) -> Tensor:
    """Valid-padding convolution with kernels whose center weight is -1.

    The response is computed in residual form ``sum_j w_j * (x_j - x_center)``
    over the surround, which equals the plain sliding-window product whenever
    the center is -1 and the surround sums to 1, and is exactly 0 on constant
    images. The center weight therefore receives no gradient.

    Args:
        images: ``[B, H, W]``
        kernels: ``[C, k, k]`` with odd ``k``

    Returns:
        Responses ``[B, C, H - k + 1, W - k + 1]``
    """
    images, kernels = _as_tensor(images), _as_tensor(kernels)
    if images.ndim != 3 or kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
        raise ShapeMismatchError(f"constrained_conv2d: shapes {images.shape} and {kernels.shape}")
    k = kernels.shape[1]
    if images.shape[1] < k or images.shape[2] < k:
        raise ShapeMismatchError(
            f"constrained_conv2d: kernel {k}x{k} larger than image {images.shape[1:]}"
        )
    c = k // 2
    windows = np.lib.stride_tricks.sliding_window_view(images.values, (k, k), axis=(1, 2))
    residual = windows - windows[..., c:c + 1, c:c + 1]
    kv = kernels.values
    out = np.einsum("bhwij,cij->bchw", residual, kv)

    def vjp(g):
        grad_images = None
        if images.is_attached():
            # scatter the per-window gradient back onto pixels
            per_window = np.einsum("bchw,cij->bhwij", g, kv)
            per_window[..., c, c] -= per_window.sum(axis=(-1, -2))
            grad_images = np.zeros_like(images.values)
            h_out, w_out = out.shape[2], out.shape[3]
            for i in range(k):
                for j in range(k):
                    grad_images[:, i:i + h_out, j:j + w_out] += per_window[..., i, j]
        return grad_images, np.einsum("bchw,bhwij->cij", g, residual)

    return _record("constrained_conv2d", (images, kernels), out, vjp)


# ---------------------------------------------------------------------------
# Reverse sweep
# ---------------------------------------------------------------------------

class GradientMap(Mapping):
    """Gradients keyed by node id; nodes the sweep never reached read as zero."""

    def __init__(self, tape: Tape, grads: Dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, key: Union[int, Tensor]) -> Tensor:
        if isinstance(key, Tensor):
            if key.node is None or key._tape is not self._tape:
                return Tensor(np.zeros(key.shape, dtype=key.values.dtype))
            key = key.node
        node = self._tape.nodes[key]
        grad = self._grads.get(key)
        if grad is None:
            grad = np.zeros(node.shape, dtype=node.dtype)
        return Tensor(grad)

    def __iter__(self):
        return iter(range(len(self._tape.nodes)))

    def __len__(self) -> int:
        return len(self._tape.nodes)

    def reached(self, key: Union[int, Tensor]) -> bool:
        if isinstance(key, Tensor):
            key = key.node
        return key in self._grads


def backward(tape: Tape, loss: Tensor) -> GradientMap:
    """Accumulate vector-Jacobian products from ``loss`` back to the leaves.

    Args:
        tape: The tape ``loss`` was recorded on
        loss: Scalar tensor attached to ``tape``

    Returns:
        Gradient map; ``grads[param]`` gives d loss / d param
    """
    if loss.size != 1:
        raise NonScalarLossError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None or loss._tape is not tape:
        raise TensorError("loss is not recorded on this tape")

    grads: Dict[int, np.ndarray] = {loss.node: np.ones(loss.shape, dtype=loss.values.dtype)}
    for node in reversed(tape.nodes[:loss.node + 1]):
        upstream = grads.get(node.node_id)
        if upstream is None or node.vjp is None:
            continue
        for input_id, part in zip(node.inputs, node.vjp(upstream)):
            if input_id is None or part is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + part
            else:
                grads[input_id] = part
    logger.debug(f"backward swept {loss.node + 1} nodes, reached {len(grads)}")
    return GradientMap(tape, grads)
