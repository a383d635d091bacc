"""Reverse-mode differentiation over the library's forward ops.

A :class:`Tape` records one :class:`Node` per op in execution order,
which for a forward pass is already a topological order. ``backward``
walks the tape once in reverse, accumulating float64 adjoints on the
nodes, and deposits float32 gradients on every :class:`Parameter` the
loss reaches. Graphs are rebuilt each forward pass; nodes alias the
parameter arrays, so a tape must not outlive an ``sgd_step``.

Forward values are computed by the same functions the inference paths
use (``nn``, ``tensor``), so a taped forward is bitwise identical to an
untaped one.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import nn
from . import tensor as T
from .errors import (
    DisconnectedLossError,
    LabelOutOfRangeError,
    NonScalarLossError,
    ShapeMismatchError,
)


class Parameter:
    """A trainable float32 tensor and its accumulated gradient."""

    def __init__(self, value, name: str):
        self.value = T.as_tensor(value)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    """One tape entry: value, parents, and how to push adjoints back."""

    __slots__ = ("tape", "op", "value", "parents", "grad", "backward_fn", "param")

    def __init__(self, tape, op, value, parents=(), backward_fn=None, param=None):
        self.tape = tape
        self.op = op
        self.value = value
        self.parents = tuple(parents)
        self.grad = None
        self.backward_fn = backward_fn
        self.param = param
        tape.nodes.append(self)


class Tape:
    """Append-only op record; append order doubles as topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def constant(self, value) -> Node:
        """A leaf that receives no gradient."""
        return Node(self, "const", T.as_tensor(value))

    def parameter(self, p: Parameter) -> Node:
        """A leaf aliasing ``p.value``; backward() adds into ``p.grad``."""
        return Node(self, "param", p.value, param=p)


def _accum(node: Node, delta) -> None:
    if node.grad is None:
        node.grad = np.zeros(node.value.shape, dtype=np.float64)
    node.grad += delta


def _sum_to_shape(grad, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Node, b: Node) -> Node:
    """Broadcast addition."""
    value = T.broadcast_add(a.value, b.value)

    def backward_fn(grad):
        _accum(a, _sum_to_shape(grad, a.value.shape))
        _accum(b, _sum_to_shape(grad, b.value.shape))

    return Node(a.tape, "add", value, (a, b), backward_fn)


def relu(x: Node) -> Node:
    """Elementwise max(x, 0); the derivative at exactly 0 is 0."""
    value = T.relu(x.value)
    mask = value > 0

    def backward_fn(grad):
        _accum(x, grad * mask)

    return Node(x.tape, "relu", value, (x,), backward_fn)


def _conv_backward(x: Node, k: Node, grad) -> None:
    kh, kw = k.value.shape[2:]
    windows = sliding_window_view(x.value, (kh, kw), axis=(1, 2)).astype(np.float64)
    _accum(k, np.einsum("phw,chwuv->pcuv", grad, windows))
    out_h, out_w = grad.shape[1], grad.shape[2]
    gx = np.zeros(x.value.shape, dtype=np.float64)
    k64 = k.value.astype(np.float64)
    for u in range(kh):
        for v in range(kw):
            gx[:, u : u + out_h, v : v + out_w] += np.einsum(
                "phw,pc->chw", grad, k64[:, :, u, v]
            )
    _accum(x, gx)


def conv2d(x: Node, k: Node) -> Node:
    """Valid cross-correlation; kernel node is rank 4."""
    value = nn.conv2d_valid(x.value, k.value)

    def backward_fn(grad):
        _conv_backward(x, k, grad)

    return Node(x.tape, "conv2d", value, (x, k), backward_fn)


def head1x1(x: Node, k: Node) -> Node:
    """1x1 convolution head (a conv2d with unit spatial extent)."""
    if k.value.shape[2:] != (1, 1):
        raise ShapeMismatchError(
            f"head kernel must be 1x1, got {k.value.shape[2]}x{k.value.shape[3]}"
        )
    value = nn.head1x1(x.value, k.value)

    def backward_fn(grad):
        _conv_backward(x, k, grad)

    return Node(x.tape, "head1x1", value, (x, k), backward_fn)


def depthwise(x: Node, z: Node) -> Node:
    """Channel-wise valid cross-correlation of search x with template z."""
    value = nn.depthwise_corr(x.value, z.value)
    kh, kw = z.value.shape[1], z.value.shape[2]

    def backward_fn(grad):
        windows = sliding_window_view(x.value, (kh, kw), axis=(1, 2)).astype(np.float64)
        _accum(z, np.einsum("chw,chwuv->cuv", grad, windows))
        out_h, out_w = grad.shape[1], grad.shape[2]
        gx = np.zeros(x.value.shape, dtype=np.float64)
        z64 = z.value.astype(np.float64)
        for u in range(kh):
            for v in range(kw):
                gx[:, u : u + out_h, v : v + out_w] += grad * z64[:, u, v, None, None]
        _accum(x, gx)

    return Node(x.tape, "depthwise", value, (x, z), backward_fn)


def xcorr(x: Node, z: Node) -> Node:
    """All-channel valid cross-correlation, single-channel output."""
    value = nn.xcorr(x.value, z.value)
    kh, kw = z.value.shape[1], z.value.shape[2]

    def backward_fn(grad):
        g2 = grad[0]
        windows = sliding_window_view(x.value, (kh, kw), axis=(1, 2)).astype(np.float64)
        _accum(z, np.einsum("hw,chwuv->cuv", g2, windows))
        out_h, out_w = g2.shape
        gx = np.zeros(x.value.shape, dtype=np.float64)
        z64 = z.value.astype(np.float64)
        for u in range(kh):
            for v in range(kw):
                gx[:, u : u + out_h, v : v + out_w] += g2[None] * z64[:, u, v, None, None]
        _accum(x, gx)

    return Node(x.tape, "xcorr", value, (x, z), backward_fn)


def affine(x: Node, w: Node, b: Node) -> Node:
    """Fully connected layer w @ x + b on a rank-1 input."""
    value = nn.fc_forward(x.value, nn.FcLayer(w.value, b.value))

    def backward_fn(grad):
        x64 = x.value.astype(np.float64)
        _accum(w, np.outer(grad, x64))
        _accum(b, grad)
        _accum(x, w.value.astype(np.float64).T @ grad)

    return Node(x.tape, "affine", value, (x, w, b), backward_fn)


def mlp3(x: Node, layers) -> Node:
    """Three affine layers with ReLU after the first two."""
    layers = tuple(layers)
    if len(layers) != 3:
        raise ValueError(f"mlp3 needs exactly 3 (weights, bias) pairs, got {len(layers)}")
    out = relu(affine(x, layers[0][0], layers[0][1]))
    out = relu(affine(out, layers[1][0], layers[1][1]))
    return affine(out, layers[2][0], layers[2][1])


def batchnorm(x: Node, gamma: Node, beta: Node, running_mean, running_var, eps: float = 1e-5) -> Node:
    """Inference-time batch norm; running statistics are constants."""
    params = nn.BatchNormParams(gamma.value, beta.value, running_mean, running_var, eps)
    value = nn.batchnorm_infer(x.value, params)
    inv = 1.0 / np.sqrt(params.running_var.astype(np.float64) + eps)
    centered = (
        x.value.astype(np.float64)
        - params.running_mean.astype(np.float64)[:, None, None]
    ) * inv[:, None, None]

    def backward_fn(grad):
        _accum(x, grad * (gamma.value.astype(np.float64) * inv)[:, None, None])
        _accum(gamma, (grad * centered).sum(axis=(1, 2)))
        _accum(beta, grad.sum(axis=(1, 2)))

    return Node(x.tape, "batchnorm", value, (x, gamma, beta), backward_fn)


def mean_pool(x: Node) -> Node:
    """Global average pool: C x H x W down to a length-C vector."""
    value = nn.global_avg_pool(x.value)
    area = x.value.shape[1] * x.value.shape[2]

    def backward_fn(grad):
        _accum(x, np.broadcast_to(grad[:, None, None] / area, x.value.shape))

    return Node(x.tape, "mean_pool", value, (x,), backward_fn)


def reshape(x: Node, shape) -> Node:
    """View the same values under a new shape."""
    value = x.value.reshape(shape)

    def backward_fn(grad):
        _accum(x, grad.reshape(x.value.shape))

    return Node(x.tape, "reshape", value, (x,), backward_fn)


def weighted_sum(x: Node, weights) -> Node:
    """Scalar projection sum(x * weights) with constant weights."""
    w64 = np.asarray(weights, dtype=np.float64)
    if w64.shape != x.value.shape:
        raise ShapeMismatchError(
            f"projection weights {w64.shape} do not match value {x.value.shape}"
        )
    value = np.float32((x.value.astype(np.float64) * w64).sum())

    def backward_fn(grad):
        _accum(x, float(grad) * w64)

    return Node(x.tape, "weighted_sum", np.asarray(value), (x,), backward_fn)


def softmax_xent(logits: Node, label: int) -> Node:
    """Cross-entropy of softmax(logits) against an integer label.

    Stabilized by subtracting the max logit before exponentiation.
    """
    if logits.value.ndim != 1:
        raise ShapeMismatchError("logits must be a rank-1 vector")
    k = logits.value.shape[0]
    if not 0 <= int(label) < k:
        raise LabelOutOfRangeError(f"label {label} outside [0, {k})")
    label = int(label)
    z = logits.value.astype(np.float64)
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - log_norm)
    value = np.float32(log_norm - shifted[label])

    def backward_fn(grad):
        delta = probs.copy()
        delta[label] -= 1.0
        _accum(logits, float(grad) * delta)

    return Node(logits.tape, "softmax_xent", np.asarray(value), (logits,), backward_fn)


def backward(tape: Tape, loss: Node) -> list[Parameter]:
    """Run reverse-mode accumulation from ``loss`` over the whole tape.

    Resets the gradient of every Parameter on the tape to zeros first,
    then adds each parameter node's adjoint in. Returns the parameters
    that actually received gradient, in first-use order.

    Raises:
        NonScalarLossError: loss holds more than one element.
        DisconnectedLossError: loss was not recorded on this tape.
    """
    if loss.value.size != 1:
        raise NonScalarLossError(f"loss has shape {loss.value.shape}")
    if loss.tape is not tape or not any(node is loss for node in tape.nodes):
        raise DisconnectedLossError("loss node is not on this tape")
    for node in tape.nodes:
        node.grad = None
    seen: dict[int, Parameter] = {}
    for node in tape.nodes:
        if node.param is not None and id(node.param) not in seen:
            seen[id(node.param)] = node.param
            node.param.grad[...] = 0
    loss_index = next(i for i, node in enumerate(tape.nodes) if node is loss)
    loss.grad = np.ones(loss.value.shape, dtype=np.float64)
    reached: list[Parameter] = []
    reached_ids: set[int] = set()
    for node in reversed(tape.nodes[: loss_index + 1]):
        if node.grad is None:
            continue
        if node.param is not None:
            node.param.grad += node.grad.astype(np.float32)
            if id(node.param) not in reached_ids:
                reached_ids.add(id(node.param))
                reached.append(node.param)
        if node.backward_fn is not None:
            node.backward_fn(node.grad)
    reached.reverse()
    return reached


def sgd_step(params, lr: float) -> None:
    """One plain SGD update, in place: value -= lr * grad; grads zeroed."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    rate = np.float32(lr)
    for p in params:
        p.value -= rate * p.grad
        p.grad[...] = 0


def finite_diff_grad(f, p: Parameter, eps: float) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. every entry of p.

    ``f`` must be a zero-argument callable that reads ``p.value``; each
    entry is nudged by +-eps in place (and restored) around the stored
    value. Returns a float64 array shaped like ``p.value``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = p.value.copy()
    grad = np.zeros(base.shape, dtype=np.float64)
    for idx in np.ndindex(*base.shape):
        p.value[idx] = base[idx] + np.float32(eps)
        hi = float(f())
        p.value[idx] = base[idx] - np.float32(eps)
        lo = float(f())
        p.value[idx] = base[idx]
        grad[idx] = (hi - lo) / (2.0 * eps)
    return grad
