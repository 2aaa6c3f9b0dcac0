"""Dense float64 arrays with tape-based reverse-mode differentiation.

The operation set is deliberately small: exactly what the geometry
branches, the manifold maps, and the link-prediction head need. Forward
values are plain numpy; gradients come from replaying a :class:`Tape` in
reverse. Everything is float64 — the manifold maps operate close to
domain boundaries and need the headroom.
"""

from __future__ import annotations

import math
import struct
import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _np_erf

from .errors import ConfigError, IndexLookupError, ParseError, ShapeError

Array = np.ndarray

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation.

    ``grad`` is populated (accumulated) on leaf tensors by
    :meth:`Tape.backward`; intermediate results do not keep gradients.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    # Arithmetic sugar; scalars and ndarrays are promoted to constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return swapaxes(self, axis1, axis2)


def as_tensor(x) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class _TapeStack(threading.local):
    def __init__(self):
        self.stack: list["Tape"] = []


_tapes = _TapeStack()


def _active_tape() -> "Tape | None":
    stack = _tapes.stack
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations for one forward pass.

    Used as a context manager: ops executed inside the ``with`` block are
    recorded (when their output requires a gradient) in execution order,
    which is automatically topological. ``backward`` replays the record
    once, in reverse, then consumes the tape. Distinct tapes over disjoint
    tensors may run on different threads; the active-tape stack is
    thread-local.
    """

    def __init__(self):
        # Each node: (output, inputs, backward_fn) where backward_fn maps
        # the output gradient to one gradient (or None) per input.
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tapes.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _tapes.stack.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted: unbalanced enter/exit")
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...],
               backward_fn: Callable) -> None:
        self._nodes.append((output, inputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf tensor.

        A leaf is any ``requires_grad`` tensor that was not produced by an
        operation recorded on this tape. The tape is consumed afterwards.
        """
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward()")
        if loss.data.size != 1:
            raise ShapeError(
                f"backward needs a scalar loss, got shape {loss.shape}")
        if self._nodes and not any(out is loss for out, _, _ in self._nodes):
            raise RuntimeError(
                "loss was not produced on this tape; build it (including the"
                " final reduction) inside the tape context")
        grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        tensors: dict[int, Tensor] = {id(loss): loss}
        produced = set()
        for out, inputs, _ in self._nodes:
            produced.add(id(out))
            tensors[id(out)] = out
            for t in inputs:
                tensors[id(t)] = t

        for out, inputs, backward_fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue  # not on any path to the loss
            for t, ig in zip(inputs, backward_fn(g)):
                if ig is None or not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = ig if acc is None else acc + ig

        for tid, g in grads.items():
            t = tensors[tid]
            if t.requires_grad and tid not in produced:
                t.grad = g.copy() if t.grad is None else t.grad + g
        self._nodes.clear()
        self._consumed = True


def backward(loss: Tensor, tape: Tape) -> None:
    """Run reverse-mode accumulation of ``loss`` over ``tape``."""
    tape.backward(loss)


def _record(output: Tensor, inputs: tuple[Tensor, ...],
            backward_fn: Callable) -> None:
    tape = _active_tape()
    if tape is not None and output.requires_grad:
        tape.record(output, inputs, backward_fn)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and structural primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                    _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                    _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)
    _record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                    _unbroadcast(g * a.data, b.shape)))
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, a.requires_grad or b.requires_grad)

    def backward_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    _record(out, (a, b), backward_fn)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, a.requires_grad)
    _record(out, (a,), lambda g: (-g,))
    return out


def matmul(a, b) -> Tensor:
    """Matrix product with batched leading dimensions.

    1-D operands follow numpy semantics (treated as a row/column vector
    whose added axis is dropped from the result).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul operands must have at least 1 dimension")
    a2 = a.data[None, :] if a.ndim == 1 else a.data
    b2 = b.data[:, None] if b.ndim == 1 else b.data
    if a2.shape[-1] != b2.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as exc:  # mismatched batch dimensions
        raise ShapeError(str(exc)) from exc
    out = Tensor(out_data, a.requires_grad or b.requires_grad)

    def backward_fn(g):
        if a.ndim == 1 and b.ndim == 1:
            G = g.reshape(g.shape + (1, 1))
        elif a.ndim == 1:
            G = g[..., None, :]
        elif b.ndim == 1:
            G = g[..., :, None]
        else:
            G = g
        ga = np.matmul(G, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), G)
        ga = _unbroadcast(ga, a2.shape).reshape(a.shape)
        gb = _unbroadcast(gb, b2.shape).reshape(b.shape)
        return ga, gb

    _record(out, (a, b), backward_fn)
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad)
    _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.swapaxes(a.data, axis1, axis2), a.requires_grad)
    _record(out, (a,), lambda g: (np.swapaxes(g, axis1, axis2),))
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries of ``axis`` starting at ``start``."""
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(a.data[index], a.requires_grad)

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)

    _record(out, (a,), backward_fn)
    return out


def concat(a, b, axis: int = -1) -> Tensor:
    """Concatenate two tensors along ``axis``."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(np.concatenate([a.data, b.data], axis=axis),
                 a.requires_grad or b.requires_grad)
    split = a.shape[axis if axis >= 0 else a.ndim + axis]

    def backward_fn(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    _record(out, (a, b), backward_fn)
    return out


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        return (np.broadcast_to(g, a.shape).copy(),)

    _record(out, (a,), backward_fn)
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return reduce_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def _elementwise(a, fn, dfn) -> Tensor:
    a = as_tensor(a)
    out_data = fn(a.data)
    out = Tensor(out_data, a.requires_grad)
    _record(out, (a,), lambda g: (g * dfn(a.data, out_data),))
    return out


def exp(a) -> Tensor:
    return _elementwise(a, np.exp, lambda x, y: y)


def log(a) -> Tensor:
    return _elementwise(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a) -> Tensor:
    return _elementwise(a, np.sqrt, lambda x, y: 0.5 / y)


def tanh(a) -> Tensor:
    return _elementwise(a, np.tanh, lambda x, y: 1.0 - y * y)


def arctanh(a) -> Tensor:
    return _elementwise(a, np.arctanh, lambda x, y: 1.0 / (1.0 - x * x))


def sin(a) -> Tensor:
    return _elementwise(a, np.sin, lambda x, y: np.cos(x))


def cos(a) -> Tensor:
    return _elementwise(a, np.cos, lambda x, y: -np.sin(x))


def arccos(a) -> Tensor:
    return _elementwise(a, np.arccos,
                        lambda x, y: -1.0 / np.sqrt(1.0 - x * x))


def erf(a) -> Tensor:
    return _elementwise(a, _np_erf,
                        lambda x, y: 2.0 * _INV_SQRT_PI * np.exp(-x * x))


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through the interior."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi), a.requires_grad)

    def backward_fn(g):
        mask = np.ones_like(a.data)
        if lo is not None:
            mask *= a.data >= lo
        if hi is not None:
            mask *= a.data <= hi
        return (g * mask,)

    _record(out, (a,), backward_fn)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis``, computed max-shifted."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, a.requires_grad)

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    _record(out, (a,), backward_fn)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(ls, a.requires_grad)

    def backward_fn(g):
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    _record(out, (a,), backward_fn)
    return out


def dropout(a, p: float, training: bool = True, rng=None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by
    1/(1-p) so evaluation mode is the exact identity.

    ``rng`` is an integer seed or a ``numpy.random.Generator``; a fresh
    unseeded generator is used when omitted.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    if rng is None:
        rng = np.random.default_rng()
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    scale = (rng.random(a.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * scale, a.requires_grad)
    _record(out, (a,), lambda g: (g * scale,))
    return out


def embedding(table, indices) -> Tensor:
    """Gather rows of a 2-D ``table``; gradient scatter-adds back."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexLookupError(
            f"index out of bounds for table with {table.shape[0]} rows")
    out = Tensor(table.data[idx], table.requires_grad)

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    _record(out, (table,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# Composites
# ---------------------------------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    ``eps`` keeps the gradient defined for constant rows.
    """
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    x = as_tensor(x)
    m = mean(x, axis=-1, keepdims=True)
    centered = x - m
    var = mean(centered * centered, axis=-1, keepdims=True)
    normed = centered / sqrt(var + eps)
    return normed * gamma + beta


def gelu(x) -> Tensor:
    """Gaussian-error linear unit (erf form; smooth everywhere)."""
    x = as_tensor(x)
    return x * 0.5 * (1.0 + erf(x * (1.0 / math.sqrt(2.0))))


_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "gelu": gelu,
    "tanh": tanh,
}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    """Look up a smooth activation by config name."""
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}"
        ) from None


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

def derive_seeds(seed: int, n: int) -> list[int]:
    """Deterministically expand one seed into ``n`` independent seeds."""
    state = np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def xavier_uniform(shape: Sequence[int], seed: int) -> Tensor:
    """Uniform init on [-a, a] with a = sqrt(6 / (shape[0] + shape[1])).

    Applies to weight matrices (fan_in, fan_out) and embedding tables
    (rows, dim) alike; the bound is symmetric in the two extents.
    Deterministic for a fixed (shape, seed).
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2:
        raise ShapeError(f"xavier_uniform needs a 2-D shape, got {shape}")
    if min(shape) <= 0:
        raise ShapeError(f"xavier_uniform shape has a zero dimension: {shape}")
    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=shape))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn, inputs, step: float = 1e-5) -> float:
    """Compare tape gradients of a scalar ``fn`` against central differences.

    Returns ``max |analytic - numeric| / max(1, |numeric|)`` over every
    entry of every input tensor. Non-finite function values are reported
    as ``inf`` (a failed check) rather than raised. Inputs are modified in
    place (requires_grad forced on, ``grad`` cleared), so pass dedicated
    tensors.
    """
    if step <= 0:
        raise ConfigError(f"grad_check step must be positive, got {step}")
    inputs = [as_tensor(x) for x in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
    if out.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar fn, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        return math.inf
    tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad
                for t in inputs]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn(*inputs).data
            flat[i] = orig - step
            f_minus = fn(*inputs).data
            flat[i] = orig
            if not (np.isfinite(f_plus).all() and np.isfinite(f_minus).all()):
                return math.inf
            numeric = float((f_plus - f_minus).reshape(())) / (2.0 * step)
            err = abs(float(ana_flat[i]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------
#
# Binary layout (all integers little-endian):
#   magic "CATW" | version u32 | tensor count u32
#   per tensor: name length u32 | UTF-8 name | rank u32 |
#               extents u64 * rank | values f64 * prod(extents)

CHECKPOINT_MAGIC = b"CATW"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict) -> None:
    """Write named tensors to ``path`` in the CATW binary format."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, value in tensors.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.asarray(arr, dtype="<f8")  # keeps 0-d shapes intact
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, Array]:
    """Read a CATW checkpoint back into a name -> float64 array dict."""
    def read(fh, n, what):
        buf = fh.read(n)
        if len(buf) != n:
            raise ParseError(f"checkpoint truncated while reading {what}")
        return buf

    out: dict[str, Array] = {}
    with open(path, "rb") as fh:
        if read(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise ParseError(f"{path}: not a CATW checkpoint (bad magic)")
        version, count = struct.unpack("<II", read(fh, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", read(fh, 4, "name length"))
            name = read(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", read(fh, 4, "rank"))
            extents = struct.unpack(f"<{rank}Q", read(fh, 8 * rank, "extents"))
            nbytes = 8 * int(np.prod(extents, dtype=np.int64)) if rank else 8
            raw = read(fh, nbytes, f"values of {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(extents).copy()
    return out
