"""A small array-level reverse-mode tape.

Every differentiable op computes its forward value with numpy, then records a
node holding its inputs, the arrays it keeps for the backward pass, and a
closure mapping the output gradient to input gradients. ``Tape.backward``
walks the nodes once, in reverse recording order.

Besides gradients, the tape keeps storage counters: every array passed as
``saved`` to :meth:`Tape.record` is added to ``saved_scalars``, and ops may
add explicit forward/backward flop counts.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Var:
    """An array value that may receive a gradient."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Var
    backward: Callable
    saved: tuple = ()


@dataclass
class Tape:
    enabled: bool = True
    nodes: list = field(default_factory=list)
    saved_scalars: int = 0
    flop_forward: int = 0
    flop_backward: int = 0
    warnings: Counter = field(default_factory=Counter)

    def record(self, op: str, inputs: Sequence, value, backward: Callable,
               saved: Sequence[np.ndarray] = ()) -> Var:
        out = Var(value)
        if self.enabled:
            self.nodes.append(Node(op, tuple(inputs), out, backward, tuple(saved)))
            self.saved_scalars += sum(int(np.size(a)) for a in saved)
        return out

    def count(self, scalars: int = 0, flop_forward: int = 0, flop_backward: int = 0):
        if self.enabled:
            self.saved_scalars += scalars
            self.flop_forward += flop_forward
            self.flop_backward += flop_backward

    def backward(self, output: Var, grad=None):
        if not self.enabled:
            raise RuntimeError("tape was not recording")
        output.grad = np.ones_like(output.value) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if isinstance(inp, Var) and gi is not None:
                    inp.grad = gi if inp.grad is None else inp.grad + gi


def _grad_or_none(x, g):
    return g if isinstance(x, Var) else None


def linear(tape: Tape, x, weight, bias=None) -> Var:
    """``x @ W.T + b`` over the last axis; ``W`` is ``(out, in)``."""
    xv, W = value_of(x), value_of(weight)
    if xv.shape[-1] != W.shape[1]:
        raise ValueError(f"linear: input width {xv.shape[-1]} != weight in-dim {W.shape[1]}")
    y = xv @ W.T
    if bias is not None:
        y = y + value_of(bias)

    def backward(g):
        g2 = g.reshape(-1, W.shape[0])
        gx = g @ W if isinstance(x, Var) else None
        gW = g2.T @ xv.reshape(-1, W.shape[1]) if isinstance(weight, Var) else None
        gb = g2.sum(axis=0) if isinstance(bias, Var) else None
        return gx, gW, gb

    return tape.record("linear", (x, weight, bias), y, backward, saved=(xv,))


def gelu(tape: Tape, x) -> Var:
    """Exact GELU, ``x * Phi(x)``."""
    xv = value_of(x)
    cdf = 0.5 * (1.0 + erf(xv / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xv * xv)
        return (g * (cdf + xv * pdf),)

    return tape.record("gelu", (x,), xv * cdf, backward, saved=(xv,))


def add(tape: Tape, a, b) -> Var:
    def backward(g):
        return _grad_or_none(a, g), _grad_or_none(b, g)

    return tape.record("add", (a, b), value_of(a) + value_of(b), backward)


def concat(tape: Tape, parts: Sequence, axis: int = -1) -> Var:
    vals = [value_of(p) for p in parts]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        return [_grad_or_none(p, gi) for p, gi in zip(parts, np.split(g, sizes, axis=axis))]

    return tape.record("concat", tuple(parts), np.concatenate(vals, axis=axis), backward)


def gather_rows(tape: Tape, x, idx, mask=None) -> Var:
    """``x[idx]`` with rows where ``mask`` is false zeroed (``idx`` may hold -1 there)."""
    xv = value_of(x)
    idx = np.asarray(idx, dtype=np.intp)
    if mask is None:
        safe, m = idx, None
    else:
        m = np.asarray(mask, dtype=bool)
        safe = np.where(m, idx, 0)
    y = xv[safe]
    if m is not None:
        y = y * m[..., None]

    def backward(g):
        if not isinstance(x, Var):
            return (None,)
        gm = g if m is None else g * m[..., None]
        gx = np.zeros_like(xv)
        np.add.at(gx, safe.reshape(-1), gm.reshape(-1, xv.shape[-1]))
        return (gx,)

    return tape.record("gather", (x,), y, backward)


def scatter_rows(tape: Tape, x, positions, n_rows: int) -> Var:
    """Place the rows of ``x`` at ``positions`` of a zero ``(n_rows, C)`` array."""
    xv = value_of(x)
    positions = np.asarray(positions, dtype=np.intp)
    y = np.zeros((n_rows, xv.shape[-1]))
    y[positions] = xv

    def backward(g):
        return (_grad_or_none(x, g[positions]),)

    return tape.record("scatter", (x,), y, backward)


def reshape(tape: Tape, x, shape) -> Var:
    xv = value_of(x)

    def backward(g):
        return (_grad_or_none(x, g.reshape(xv.shape)),)

    return tape.record("reshape", (x,), xv.reshape(shape), backward)


def group_mean(tape: Tape, x, groups: int) -> Var:
    """Mean over equal-size consecutive row groups: ``(G*M, C) -> (G, C)``."""
    xv = value_of(x)
    size = xv.shape[0] // groups
    y = xv.reshape(groups, size, -1).mean(axis=1)

    def backward(g):
        return (_grad_or_none(x, np.repeat(g / size, size, axis=0)),)

    return tape.record("group_mean", (x,), y, backward)


def weighted_rows(tape: Tape, x, idx, weights) -> Var:
    """``y[i] = sum_k weights[i, k] * x[idx[i, k]]`` with constant weights."""
    xv = value_of(x)
    idx = np.asarray(idx, dtype=np.intp)
    w = np.asarray(weights, dtype=np.float64)
    y = np.einsum("ik,ikc->ic", w, xv[idx])

    def backward(g):
        if not isinstance(x, Var):
            return (None,)
        gx = np.zeros_like(xv)
        np.add.at(gx, idx.reshape(-1), (w[..., None] * g[:, None, :]).reshape(-1, xv.shape[-1]))
        return (gx,)

    return tape.record("weighted_rows", (x,), y, backward, saved=(w,))


@dataclass
class BatchNormState:
    """Running statistics used in evaluation mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.9) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels), momentum)


def batchnorm(tape: Tape, x, gamma, beta, state: BatchNormState | None = None,
              training: bool = True, eps: float = 1e-10) -> Var:
    """Per-channel normalization over all leading (point) axes, then affine.

    In training mode batch statistics are used and, when a ``state`` is
    given, folded into its running averages (``running = m * running +
    (1 - m) * batch``). A single-row batch passes through unchanged and is
    counted in ``tape.warnings``.
    """
    xv = value_of(x)
    C = xv.shape[-1]
    x2 = xv.reshape(-1, C)
    gam, bet = value_of(gamma), value_of(beta)

    if training and len(x2) < 2:
        tape.warnings["batchnorm_single_point"] += 1
        return tape.record("batchnorm_passthrough", (x,), xv.copy(), lambda g: (_grad_or_none(x, g),))

    if training:
        mu = x2.mean(axis=0)
        centered = x2 - mu
        # second pass: a constant channel must center to ~0, not to rounding noise
        shift = centered.mean(axis=0)
        mu = mu + shift
        centered -= shift
        var = np.mean(centered * centered, axis=0)
        if state is not None:
            state.mean[:] = state.momentum * state.mean + (1 - state.momentum) * mu
            state.var[:] = state.momentum * state.var + (1 - state.momentum) * var
    else:
        if state is None:
            raise ValueError("evaluation-mode batchnorm needs running statistics")
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (centered if training else x2 - mu) * inv
    y = (xhat * gam + bet).reshape(xv.shape)

    def backward(g):
        g2 = g.reshape(-1, C)
        ggam = (g2 * xhat).sum(axis=0) if isinstance(gamma, Var) else None
        gbet = g2.sum(axis=0) if isinstance(beta, Var) else None
        gx = None
        if isinstance(x, Var):
            gxhat = g2 * gam
            if training:
                gx = inv * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
            else:
                gx = gxhat * inv
            gx = gx.reshape(xv.shape)
        return gx, ggam, gbet

    return tape.record("batchnorm", (x, gamma, beta), y, backward, saved=(xhat, inv))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def smoothing_targets(labels, num_classes: int, epsilon: float) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    t = np.full((len(labels), num_classes), epsilon / num_classes)
    t[np.arange(len(labels)), labels] += 1.0 - epsilon
    return t


def smoothed_cross_entropy(tape: Tape, logits, labels, epsilon: float = 0.2) -> Var:
    """Label-smoothed cross entropy, averaged over the batch.

    Targets are ``(1 - eps) * onehot + eps / C``. ``logits`` is ``(B, C)`` or
    a single ``(C,)`` vector.
    """
    z = value_of(logits)
    single = z.ndim == 1
    z2 = z[None] if single else z
    t = smoothing_targets(labels, z2.shape[1], epsilon)
    if len(t) != len(z2):
        raise ValueError("one label per row of logits")
    lsm = log_softmax(z2)
    loss = -(t * lsm).sum() / len(z2)

    def backward(g):
        gz = (np.exp(lsm) - t) * (g / len(z2))
        return (_grad_or_none(logits, gz[0] if single else gz),)

    return tape.record("smoothed_ce", (logits,), np.asarray(loss), backward, saved=(lsm,))
