"""Minimal reverse-mode differentiation over feature maps.

Arrays are channel-first: shape (C, *rest). The trailing axes are treated as
one flat sample axis by the pointwise ops; the depthwise convolution
additionally requires the last two axes to be spatial (H, W) and broadcasts
over anything in between, so a training batch is simply (C, B, n, n).

A Tape records executed operations; backward() replays them in exact reverse
execution order, accumulating gradients additively at fan-out. Ops called
with tape=None run forward-only and are safe to evaluate concurrently over
disjoint outputs.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class TapeStateError(RuntimeError):
    """Backward requested in an invalid tape state."""


class Node:
    """A value in the computation graph: an ndarray plus gradient slot."""

    __slots__ = ("data", "grad", "requires", "name")

    def __init__(self, data, requires: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires = requires
        self.name = name

    @property
    def shape(self):
        return self.data.shape


def feature_map(data) -> Node:
    """Wrap an array as a constant (non-differentiated) graph input."""
    return Node(data, requires=False)


def parameter(name: str, data) -> Node:
    """Wrap an array as a named trainable parameter."""
    return Node(data, requires=True, name=name)


def _accumulate(node: Node, g: np.ndarray, own: bool = True):
    if not node.requires:
        return
    if node.grad is None:
        node.grad = g if own else g.copy()
    else:
        node.grad += g


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self._records = []
        self._output_ids = set()
        self._params = {}
        self._consumed = False

    def _record(self, out: Node, backward_fn, inputs):
        self._records.append(backward_fn)
        self._output_ids.add(id(out))
        for node in inputs:
            if node.name is not None and node.requires:
                self._params[node.name] = node

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        if self._consumed:
            raise TapeStateError("tape already consumed by a previous backward pass")
        if not self._records:
            raise TapeStateError("backward requested before any forward operation")
        if loss.data.shape != ():
            raise TapeStateError(f"loss must be scalar, got shape {loss.data.shape}")
        if id(loss) not in self._output_ids:
            raise TapeStateError("loss node was not produced on this tape")
        self._consumed = True
        loss.grad = np.asarray(1.0, dtype=loss.data.dtype)
        for fn in reversed(self._records):
            fn()
        grads = {}
        for name, node in self._params.items():
            grads[name] = node.grad if node.grad is not None else np.zeros_like(node.data)
            node.grad = None
        return grads


def backprop(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter seen by the tape."""
    return tape.backward(loss)


def _bias_view(bias: np.ndarray, ndim: int) -> np.ndarray:
    return bias.reshape(bias.shape + (1,) * (ndim - 1))


def conv1x1(x: Node, weight: Node, bias: Node, tape: Tape | None = None) -> Node:
    """Pointwise convolution: out[o, ...] = bias[o] + sum_i weight[o, i] * x[i, ...]."""
    wd, bd, xd = weight.data, bias.data, x.data
    if wd.ndim != 2:
        raise ShapeError(f"conv1x1 weight must be 2-D (C_out, C_in), got {wd.shape}")
    c_in = xd.shape[0]
    c_out = wd.shape[0]
    if wd.shape[1] != c_in:
        raise ShapeError(
            f"conv1x1 weight expects C_in={wd.shape[1]}, input has C_in={c_in}"
        )
    if bd.shape != (c_out,):
        raise ShapeError(f"conv1x1 bias must have shape ({c_out},), got {bd.shape}")
    rest = xd.shape[1:]
    xm = xd.reshape(c_in, -1)
    ym = wd @ xm
    y = ym.reshape((c_out,) + rest)
    y += _bias_view(bd, y.ndim)
    out = Node(y, requires=x.requires or weight.requires or bias.requires)

    if tape is not None:

        def bwd():
            g = out.grad
            if g is None:
                return
            gm = g.reshape(c_out, -1)
            if weight.requires:
                _accumulate(weight, gm @ xm.T)
            if bias.requires:
                _accumulate(bias, gm.sum(axis=1))
            if x.requires:
                _accumulate(x, (wd.T @ gm).reshape(xd.shape))

        tape._record(out, bwd, (x, weight, bias))
    return out


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    """Replicate-pad the last two axes (hand-rolled; np.pad is slow here)."""
    h, w = x.shape[-2], x.shape[-1]
    out = np.empty(x.shape[:-2] + (h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[..., pad : pad + h, pad : pad + w] = x
    out[..., :pad, pad : pad + w] = x[..., :1, :]
    out[..., pad + h :, pad : pad + w] = x[..., -1:, :]
    out[..., :, :pad] = out[..., :, pad : pad + 1]
    out[..., :, pad + w :] = out[..., :, pad + w - 1 : pad + w]
    return out


def _fold_edges(g: np.ndarray, pad: int) -> np.ndarray:
    """Adjoint of replicate padding: fold padded-border gradient back inside."""
    if pad == 0:
        return g
    g = np.ascontiguousarray(g)
    g[..., pad, :] += g[..., :pad, :].sum(axis=-2)
    g[..., -pad - 1, :] += g[..., -pad:, :].sum(axis=-2)
    core = g[..., pad:-pad, :]
    core[..., :, pad] += core[..., :, :pad].sum(axis=-1)
    core[..., :, -pad - 1] += core[..., :, -pad:].sum(axis=-1)
    return np.ascontiguousarray(core[..., :, pad:-pad])


def dwconv(x: Node, kernel: Node, bias: Node, tape: Tape | None = None) -> Node:
    """Per-channel KxK correlation with replicate (edge-clamp) padding.

    Output spatial size equals input spatial size; K must be odd.
    """
    xd, kd, bd = x.data, kernel.data, bias.data
    if xd.ndim < 3:
        raise ShapeError(f"dwconv input must be (C, ..., H, W), got {xd.shape}")
    c = xd.shape[0]
    if kd.ndim != 3 or kd.shape[0] != c or kd.shape[1] != kd.shape[2]:
        raise ShapeError(
            f"dwconv kernel must have shape ({c}, K, K), got {kd.shape}"
        )
    k = kd.shape[1]
    if k % 2 != 1:
        raise ShapeError(f"dwconv kernel size must be odd, got {k}")
    if bd.shape != (c,):
        raise ShapeError(f"dwconv bias must have shape ({c},), got {bd.shape}")
    pad = k // 2
    h, w = xd.shape[-2], xd.shape[-1]
    xp = _pad_spatial(xd, pad)
    bshape = (c,) + (1,) * (xd.ndim - 1)
    y = np.zeros_like(xd)
    tmp = np.empty_like(xd)
    for ki in range(k):
        for kj in range(k):
            np.multiply(
                xp[..., ki : ki + h, kj : kj + w],
                kd[:, ki, kj].reshape(bshape),
                out=tmp,
            )
            y += tmp
    y += _bias_view(bd, y.ndim)
    out = Node(y, requires=x.requires or kernel.requires or bias.requires)

    if tape is not None:
        flat_spec = "c" + "abdefghij"[: xd.ndim - 1]  # e.g. 'cabd' for 4-D input

        def bwd():
            g = out.grad
            if g is None:
                return
            sum_axes = tuple(range(1, xd.ndim))
            if bias.requires:
                _accumulate(bias, g.sum(axis=sum_axes))
            if kernel.requires:
                dk = np.empty_like(kd)
                for ki in range(k):
                    for kj in range(k):
                        dk[:, ki, kj] = np.einsum(
                            f"{flat_spec},{flat_spec}->c",
                            xp[..., ki : ki + h, kj : kj + w],
                            g,
                        )
                _accumulate(kernel, dk)
            if x.requires:
                dxp = np.zeros_like(xp)
                scaled = np.empty_like(g)
                for ki in range(k):
                    for kj in range(k):
                        np.multiply(g, kd[:, ki, kj].reshape(bshape), out=scaled)
                        dxp[..., ki : ki + h, kj : kj + w] += scaled
                _accumulate(x, _fold_edges(dxp, pad))

        tape._record(out, bwd, (x, kernel, bias))
    return out


def sine_act(x: Node, omega: float, tape: Tape | None = None) -> Node:
    """Elementwise sin(omega * x)."""
    if omega <= 0:
        raise ValueError(f"omega must be positive, got {omega}")
    scaled = x.data * omega
    out = Node(np.sin(scaled), requires=x.requires)

    if tape is not None:

        def bwd():
            if out.grad is None:
                return
            if x.requires:
                dx = np.cos(scaled, out=scaled)  # pre-activation is dead now
                dx *= out.grad
                dx *= omega
                _accumulate(x, dx)

        tape._record(out, bwd, (x,))
    else:
        del scaled
    return out


def relu_act(x: Node, tape: Tape | None = None) -> Node:
    """Elementwise max(x, 0)."""
    out = Node(np.maximum(x.data, 0), requires=x.requires)

    if tape is not None:

        def bwd():
            if out.grad is None:
                return
            if x.requires:
                _accumulate(x, (x.data > 0) * out.grad)

        tape._record(out, bwd, (x,))
    return out


def concat_channels(a: Node, b: Node, tape: Tape | None = None) -> Node:
    """Stack b's channels after a's; spatial shapes must match."""
    if a.data.shape[1:] != b.data.shape[1:]:
        raise ShapeError(
            f"concat_channels spatial mismatch: {a.data.shape[1:]} vs {b.data.shape[1:]}"
        )
    ca = a.data.shape[0]
    out = Node(
        np.concatenate([a.data, b.data], axis=0),
        requires=a.requires or b.requires,
    )

    if tape is not None:

        def bwd():
            g = out.grad
            if g is None:
                return
            _accumulate(a, g[:ca], own=False)
            _accumulate(b, g[ca:], own=False)

        tape._record(out, bwd, (a, b))
    return out


def add(a: Node, b: Node, tape: Tape | None = None) -> Node:
    """Elementwise sum of two equally-shaped maps."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Node(a.data + b.data, requires=a.requires or b.requires)

    if tape is not None:

        def bwd():
            g = out.grad
            if g is None:
                return
            _accumulate(a, g, own=False)
            _accumulate(b, g, own=False)

        tape._record(out, bwd, (a, b))
    return out


def l1_loss(pred: Node, target: Node, tape: Tape | None = None) -> Node:
    """Mean absolute difference; subgradient uses sign(0) = 0."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"l1_loss shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    out = Node(np.abs(diff).mean(), requires=pred.requires or target.requires)

    if tape is not None:
        n = diff.size

        def bwd():
            g = out.grad
            if g is None:
                return
            sgn = np.sign(diff)
            sgn *= g / n
            if pred.requires:
                _accumulate(pred, sgn, own=not target.requires)
            if target.requires:
                _accumulate(target, -sgn)

        tape._record(out, bwd, (pred, target))
    return out
