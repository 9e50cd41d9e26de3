"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything runs at 64-bit precision; the op set is the minimum needed to
express a small residual CNN, position-wise self-attention, pooling, an
affine head and an L1 loss. Recording happens only inside an active
``GradTape`` context; a tape is single-use.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "add",
    "concat_cols",
    "conv2d",
    "global_avg_pool",
    "l1_loss",
    "linear",
    "matmul",
    "relu",
    "reshape",
    "scale",
    "softmax_rows",
    "sum_all",
    "transpose2",
]


class Tensor:
    """Dense n-d array of float64, optionally participating in a grad tape.

    ``data`` is a C-contiguous (row-major) float64 ndarray; ``grad``, when
    populated by :func:`backward`, matches ``data``'s shape. Tensors are
    treated as immutable once they enter a forward pass; parameter updates
    happen in place only between tapes.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class _TapeNode:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_TAPE_STACK: list["GradTape"] = []


class GradTape:
    """Ordered record of one forward pass; inputs of a node always precede it.

    Single use: after :func:`backward` consumes the tape, further recording
    or a second backward raises.
    """

    def __init__(self):
        self.nodes: list[_TapeNode] = []
        self.consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise RuntimeError("grad tape stack corrupted")
        return False

    def _record(self, inputs, output, backward_fn):
        if self.consumed:
            raise RuntimeError("tape already consumed by backward()")
        node = _TapeNode(tuple(inputs), output, backward_fn)
        self.nodes.append(node)
        output.node = node
        output.tape = self


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(inputs, out_data, backward_fn):
    """Wrap an op result, recording it when a tape is active and needed."""
    tape = _active_tape()
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad and tape is not None)
    if tape is not None and needs_grad:
        tape._record(inputs, out, backward_fn)
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires_grad leaf.

    ``loss`` must be a scalar produced under a still-unconsumed tape; the
    tape is consumed by this call. Gradients add into leaves, so repeated
    passes (each on a fresh tape) accumulate until ``zero_grad``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise ValueError("backward() on a tensor that was not recorded on any tape")
    if tape.consumed:
        raise RuntimeError("tape already consumed by backward()")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if t.node is None:  # leaf
                t.grad = g.copy() if t.grad is None else t.grad + g
            else:
                prev = grads.get(id(t))
                grads[id(t)] = g if prev is None else prev + g


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values in input")


# ---------------------------------------------------------------------------
# ops


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of x[N,C,H,W] with kernel[F,C,kh,kw].

    Output spatial dims follow floor((H + 2*padding - kh)/stride) + 1.
    Direct (window-gather) evaluation; gradients flow to both operands.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(
            f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}"
        )
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if c != ck:
        raise ValueError(
            f"conv2d channel mismatch: input has C={c}, kernel expects C={ck} "
            f"(input {x.shape}, kernel {kernel.shape})"
        )
    if not (isinstance(stride, (int, np.integer)) and stride >= 1):
        raise ValueError(f"conv2d stride must be a positive int, got {stride!r}")
    if not (isinstance(padding, (int, np.integer)) and padding >= 0):
        raise ValueError(f"conv2d padding must be a nonnegative int, got {padding!r}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"conv2d kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )

    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    out = np.einsum("nchwuv,fcuv->nfhw", windows, kernel.data, optimize=True)
    h_out, w_out = out.shape[2], out.shape[3]

    def backward_fn(g):
        gk = np.einsum("nchwuv,nfhw->fcuv", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, u : u + s * (h_out - 1) + 1 : s,
                    v : v + s * (w_out - 1) + 1 : s] += np.einsum(
                    "nfhw,fc->nchw", g, kernel.data[:, :, u, v], optimize=True
                )
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        return gx, gk

    return _emit((x, kernel), out, backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a[M,K] and b[K,N]."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner-dimension mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _emit((a, b), out, backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, max-subtracted for stability."""
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows expects a 2-d tensor, got {x.shape}")
    _check_finite("softmax_rows", x.data)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        dot = np.sum(g * y, axis=1, keepdims=True)
        return (y * (g - dot),)

    return _emit((x,), y, backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial positions of x[N,C,H,W] -> [N,C]."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avg_pool expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward_fn(g):
        gx = np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy()
        return (gx,)

    return _emit((x,), out, backward_fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x[N,Din] @ weight[Din,Dout] + bias[Dout]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ValueError(
            f"linear expects x[N,Din], weight[Din,Dout], bias[Dout]; got "
            f"{x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ValueError(
            f"linear dimension mismatch: x {x.shape}, weight {weight.shape}, "
            f"bias {bias.shape}"
        )
    out = x.data @ weight.data + bias.data

    def backward_fn(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _emit((x, weight, bias), out, backward_fn)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; the subgradient at zero is fixed to 0."""
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    if pred.data.size == 0:
        raise ValueError("l1_loss on empty tensors")
    diff = pred.data - target.data
    out = np.abs(diff).mean()

    def backward_fn(g):
        # np.sign(0.0) == 0.0, which pins the subgradient at zero
        base = g * np.sign(diff) / diff.size
        return base, -base

    return _emit((pred, target), out, backward_fn)


def relu(x: Tensor) -> Tensor:
    # np.where keeps exact +0.0 for the clipped branch
    out = np.where(x.data > 0, x.data, 0.0)

    def backward_fn(g):
        return (g * (x.data > 0),)

    return _emit((x,), out, backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of same-shape tensors."""
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward_fn(g):
        return g, g

    return _emit((a, b), out, backward_fn)


def scale(gate: Tensor, x: Tensor) -> Tensor:
    """Multiply x by a single-element gate tensor (the gate is trainable)."""
    if gate.data.size != 1:
        raise ValueError(f"scale gate must have a single element, got {gate.shape}")
    out = gate.data.reshape(-1)[0] * x.data

    def backward_fn(g):
        g_gate = np.array([np.sum(g * x.data)]).reshape(gate.shape)
        return g_gate, g * gate.data.reshape(-1)[0]

    return _emit((gate, x), out, backward_fn)


def transpose2(x: Tensor) -> Tensor:
    """Transpose of a 2-d tensor."""
    if x.data.ndim != 2:
        raise ValueError(f"transpose2 expects a 2-d tensor, got {x.shape}")

    def backward_fn(g):
        return (g.T,)

    return _emit((x,), x.data.T, backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    """View with a new shape; the element count must be preserved."""
    out = x.data.reshape(shape)

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _emit((x,), out, backward_fn)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two 2-d tensors with equal row counts along columns."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols needs matching row counts: {a.shape}, {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward_fn(g):
        return g[:, :ca], g[:, ca:]

    return _emit((a, b), out, backward_fn)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = np.asarray(x.data.sum())

    def backward_fn(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit((x,), out, backward_fn)
