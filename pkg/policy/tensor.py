"""
Reverse-mode automatic differentiation over numpy arrays.

Operations record themselves on the active `Tape` (entered as a context
manager) when any input requires a gradient; outside a tape they simply
compute values. `Tape.backward` walks the recorded nodes once, in reverse.

Only the broadcasting the model needs is supported: adding a bias or a mask,
and batched matmul against an unbatched weight.
"""
import contextvars
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable

import numpy as np

from core.exceptions import InvalidUseError, ShapeError

DEFAULT_DTYPE = np.float32
MASK_VALUE = -1e9

_active_tape = contextvars.ContextVar('kemeny_active_tape', default=None)
_mac_counter = contextvars.ContextVar('kemeny_mac_counter', default=None)


class Tensor:
    __slots__ = ('data', 'requires_grad', 'grad', 'node_id')

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            array = np.asarray(data)
            dtype = array.dtype if np.issubdtype(array.dtype, np.floating) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    op: str
    output: Tensor
    parents: tuple
    backward: Callable


class Tape:
    """Ordered record of primitive operations; parents always precede children."""

    def __init__(self):
        self.nodes = []
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc_info):
        _active_tape.reset(self._token)
        self._token = None

    def record(self, op, output, parents, backward):
        output.node_id = len(self.nodes)
        self.nodes.append(_Node(op, output, parents, backward))

    def backward(self, loss: Tensor, params=None) -> dict:
        """Gradients of a scalar loss.

        With `params` (a name -> Tensor mapping) the result is keyed by name and
        parameters the loss does not touch get zeros; without it, every leaf
        tensor requiring a gradient gets its `.grad` set.
        """
        if loss.data.size != 1:
            raise InvalidUseError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            for parent, grad in zip(node.parents, node.backward(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + grad if key in grads else grad
                if parent.node_id is None:
                    leaves[key] = parent
        if params is None:
            for key, leaf in leaves.items():
                leaf.grad = grads[key]
            return {key: grads[key] for key in leaves}
        result = {}
        for name, param in params.items():
            grad = grads.get(id(param))
            param.grad = np.zeros_like(param.data) if grad is None else grad.astype(param.dtype, copy=False)
            result[name] = param.grad
        return result


def backward(loss: Tensor, params=None) -> dict:
    tape = _active_tape.get()
    if tape is None:
        raise InvalidUseError('backward needs an active tape')
    return tape.backward(loss, params)


class MacCounter:
    def __init__(self):
        self.total = 0


@contextmanager
def count_macs():
    """Count multiply-accumulates performed by matmul inside the block."""
    counter = MacCounter()
    token = _mac_counter.set(counter)
    try:
        yield counter
    finally:
        _mac_counter.reset(token)


def as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def _emit(op, data, parents, backward_fn) -> Tensor:
    requires_grad = any(parent.requires_grad for parent in parents)
    output = Tensor(data, requires_grad=requires_grad, dtype=data.dtype)
    tape = _active_tape.get()
    if requires_grad and tape is not None:
        tape.record(op, output, parents, backward_fn)
    return output


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def matmul(a: Tensor, b: Tensor, transpose_b=False) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError('matmul', a.shape, b.shape)
    right = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if a.shape[-1] != right.shape[-2]:
        raise ShapeError('matmul', a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], right.shape[:-2])
    except ValueError:
        raise ShapeError('matmul', a.shape, b.shape) from None
    data = np.matmul(a.data, right)
    counter = _mac_counter.get()
    if counter is not None:
        counter.total += int(data.size) * int(a.shape[-1])

    def backward(grad):
        grad_a = _unbroadcast(np.matmul(grad, np.swapaxes(right, -1, -2)), a.shape)
        grad_right = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), right.shape)
        return grad_a, np.swapaxes(grad_right, -1, -2) if transpose_b else grad_right

    return _emit('matmul', data, (a, b), backward)


def add(a: Tensor, b) -> Tensor:
    b = as_tensor(b, dtype=a.dtype)
    _broadcast_shape('add', a, b)
    data = a.data + b.data

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _emit('add', data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = as_tensor(b, dtype=a.dtype)
    _broadcast_shape('mul', a, b)
    data = a.data * b.data

    def backward(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _emit('mul', data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    data = a.data * a.dtype.type(factor)

    def backward(grad):
        return (grad * a.dtype.type(factor),)

    return _emit('scale', data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    data = np.where(positive, a.data, a.dtype.type(0))

    def backward(grad):
        return (grad * positive,)

    return _emit('relu', data, (a,), backward)


def _masked(op, x, mask):
    if mask is None:
        return x.data
    mask = np.asarray(mask, dtype=x.dtype)
    try:
        np.broadcast_shapes(x.shape, mask.shape)
    except ValueError:
        raise ShapeError(op, x.shape, mask.shape) from None
    return x.data + mask


def _stable_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis after adding an additive mask (0 or MASK_VALUE)."""
    data = _stable_softmax(_masked('softmax', x, mask))

    def backward(grad):
        return (data * (grad - (grad * data).sum(axis=-1, keepdims=True)),)

    return _emit('softmax', data, (x,), backward)


def log_softmax(x: Tensor, mask=None) -> Tensor:
    z = _masked('log_softmax', x, mask)
    shifted = z - z.max(axis=-1, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(grad):
        return (grad - np.exp(data) * grad.sum(axis=-1, keepdims=True),)

    return _emit('log_softmax', data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps=1e-5) -> Tensor:
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError('layer_norm', x.shape, gain.shape, bias.shape)
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    std = np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + x.dtype.type(eps))
    normalized = centered / std
    data = normalized * gain.data + bias.data

    def backward(grad):
        grad_normalized = grad * gain.data
        grad_x = (grad_normalized
                  - grad_normalized.mean(axis=-1, keepdims=True)
                  - normalized * (grad_normalized * normalized).mean(axis=-1, keepdims=True)) / std
        return grad_x, _unbroadcast(grad * normalized, gain.shape), _unbroadcast(grad, bias.shape)

    return _emit('layer_norm', data, (x, gain, bias), backward)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Row gather.

    For a (V, d) table, indices of shape (k,) give (k, d). For a batched
    (B, n, d) table, indices of shape (B,) pick one row per batch element and
    give (B, 1, d).
    """
    indices = np.asarray(indices, dtype=np.int64)
    if table.data.ndim == 2 and indices.ndim == 1:
        data = table.data[indices]

        def backward(grad):
            full = np.zeros_like(table.data)
            np.add.at(full, indices, grad)
            return (full,)
    elif table.data.ndim == 3 and indices.shape == (table.shape[0],):
        batch = np.arange(table.shape[0])
        data = table.data[batch, indices][:, None, :]

        def backward(grad):
            full = np.zeros_like(table.data)
            full[batch, indices] += grad[:, 0, :]
            return (full,)
    else:
        raise ShapeError('embedding_lookup', table.shape, indices.shape)
    return _emit('embedding_lookup', data, (table,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = tuple(tensors)
    try:
        data = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concat', *(tensor.shape for tensor in tensors)) from None
    bounds = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def backward(grad):
        return tuple(np.split(grad, bounds, axis=axis))

    return _emit('concat', data, tensors, backward)


def slice_axis(x: Tensor, start: int, stop: int, axis=-1) -> Tensor:
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError('slice', x.shape, (start, stop))
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = x.data[index]

    def backward(grad):
        full = np.zeros_like(x.data)
        full[index] = grad
        return (full,)

    return _emit('slice', data, (x,), backward)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def backward(grad):
        return (grad / x.data,)

    return _emit('log', data, (x,), backward)


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).astype(x.dtype),)

    return _emit('sum', data, (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)
