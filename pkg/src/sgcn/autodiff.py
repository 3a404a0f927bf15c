"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation records its inputs and a vector-Jacobian product (vjp)
closure on the output tensor; ``backward`` replays those records in
reverse execution order and accumulates gradients into the leaves.
The primitive set is exactly what the trajectory model needs: batched
matmul, zero-padded 2-d convolution, masked softmax, and a handful of
pointwise functions.  Outputs are checked for NaN/Inf after every
primitive so numerical failures surface at their source.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import NumericsError, ShapeError

logger = logging.getLogger(__name__)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NumericsError(f"non-finite values produced by '{op}'")


class Tensor:
    """Dense n-d float64 array participating in reverse-mode differentiation.

    Leaves are created directly from data; every primitive returns a new
    Tensor that remembers its parent tensors and the vjp closure needed to
    push gradients back to them.  ``grad`` is populated on requires_grad
    leaves by :func:`backward` and accumulates across calls until
    :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    # Keep numpy from absorbing Tensor operands elementwise; mixed
    # expressions must dispatch to the reflected operators below.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, _op="tensor"):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, _op)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions do the real work.
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(value) -> Tensor:
    """Wrap plain data in a constant (non-differentiable) Tensor."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp, _op="add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp, _op="sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp, _op="mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp, _op="div")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if (x.data <= 0.0).any():
        raise NumericsError("log of non-positive value")
    out = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="log")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="sigmoid")


def _sigmoid(data: np.ndarray) -> np.ndarray:
    # Split by sign to avoid exp overflow on large negative inputs.
    out = np.empty_like(data)
    pos = data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-data[pos]))
    e = np.exp(data[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def prelu(x, slope) -> Tensor:
    """Parametric ReLU: identity for x >= 0, slope * x otherwise."""
    x, slope = as_tensor(x), as_tensor(slope)
    neg = x.data < 0
    out = np.where(neg, slope.data * x.data, x.data)

    def vjp(g):
        gx = np.where(neg, slope.data, 1.0) * g
        gs = _unbroadcast(np.where(neg, x.data, 0.0) * g, slope.shape)
        return gx, gs

    return Tensor(out, _parents=(x, slope), _vjp=vjp, _op="prelu")


def clamp(x, lo=None, hi=None) -> Tensor:
    """Clip values to [lo, hi]; gradient is zero outside the interval."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = np.ones_like(x.data, dtype=bool)
    if lo is not None:
        inside &= x.data >= lo
    if hi is not None:
        inside &= x.data <= hi

    def vjp(g):
        return (np.where(inside, g, 0.0),)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="clamp")


# ---------------------------------------------------------------------------
# shape and reduction primitives


def take(x, key) -> Tensor:
    """Basic indexing/slicing; backward scatters the gradient back."""
    x = as_tensor(x)
    out = x.data[key]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[key] += g
        return (gx,)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="take")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="reshape")


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="permute")


def swap_last2(x) -> Tensor:
    """Transpose the trailing two axes (matrix transpose per batch slice)."""
    x = as_tensor(x)
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return permute(x, axes)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="sum")


# ---------------------------------------------------------------------------
# linear-algebra primitives


def matmul(a, b) -> Tensor:
    """Batched matrix product a[.., m, k] @ b[.., k, n]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >= 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as err:
        raise ShapeError(f"matmul batch extents incompatible: {a.shape} @ {b.shape}") from err

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor(out, _parents=(a, b), _vjp=vjp, _op="matmul")


def conv2d_zero_pad(x, kernels, bias=None) -> Tensor:
    """Zero-padded cross-correlation preserving spatial extents.

    ``x`` is [C_in, H, W] or [B, C_in, H, W]; ``kernels`` is
    [C_out, C_in, kh, kw] with odd kh, kw so symmetric padding keeps H
    and W unchanged.  Covers 1x1 channel fusion, the (1xS)/(Sx1)
    asymmetric pairs, and the prediction head's temporal convolutions.
    """
    from .errors import ConfigError

    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be 4-d, got {kernels.shape}")
    c_out, c_in, kh, kw = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"kernel extents must be odd, got {kh}x{kw}")

    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv input must be 3-d or 4-d, got {x.shape}")
    xd = x.data if batched else x.data[None]
    if xd.shape[1] != c_in:
        raise ShapeError(f"conv input channels {xd.shape[1]} != kernel C_in {c_in}")
    n_b, _, height, width = xd.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))

    out = np.zeros((n_b, c_out, height, width))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum(
                "oc,bchw->bohw", kernels.data[:, :, i, j], xp[:, :, i : i + height, j : j + width]
            )
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
        out += bias.data[:, None, None]

    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def vjp(g):
        if not batched:
            g = g[None]
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kernels.data)
        for i in range(kh):
            for j in range(kw):
                window = xp[:, :, i : i + height, j : j + width]
                gxp[:, :, i : i + height, j : j + width] += np.einsum(
                    "oc,bohw->bchw", kernels.data[:, :, i, j], g
                )
                gk[:, :, i, j] = np.einsum("bohw,bchw->oc", g, window)
        gx = gxp[:, :, ph : ph + height, pw : pw + width]
        if not batched:
            gx = gx[0]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return Tensor(out if batched else out[0], _parents=parents, _vjp=vjp, _op="conv2d")


def softmax_lastdim(x, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax over the last axis.

    ``mask`` is a constant boolean array broadcastable to x's shape;
    False positions get probability exactly 0 and the remaining entries
    of each row renormalize.  A fully masked row yields an all-zero row
    (logged, not raised) so composite pipelines stay total.
    """
    x = as_tensor(x)
    if mask is None:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        masked = np.where(mask, x.data, -np.inf)
        peak = masked.max(axis=-1, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, 0.0)
        e = np.where(mask, np.exp(x.data - peak), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    dead = denom == 0.0
    if dead.any():
        logger.warning("softmax: %d fully masked row(s) produced zero rows", int(dead.sum()))
    out = np.divide(e, denom, out=np.zeros_like(e), where=~dead)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return Tensor(out, _parents=(x,), _vjp=vjp, _op="softmax")


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor) -> list:
    """Tensors reachable from root, parents before children."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf.

    Repeated calls without zero_grad accumulate, which is what gradient
    accumulation over a batch of scenes relies on.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# finite-difference self-check


def finite_diff_check(f, x: Tensor, h: float = 1e-4) -> float:
    """Compare analytic gradients of scalar-valued ``f`` against central differences.

    Returns max over elements of |analytic - central| / (|central| + 1e-8).
    ``x.data`` is perturbed in place and restored.
    """
    x.zero_grad()
    x.requires_grad = True
    backward(f(x))
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()

    central = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x).item()
        flat[i] = orig - h
        lo = f(x).item()
        flat[i] = orig
        central.reshape(-1)[i] = (hi - lo) / (2.0 * h)

    rel = np.abs(analytic - central) / (np.abs(central) + 1e-8)
    return float(rel.max())


def finite_diff_check_params(loss_fn, params, h: float = 1e-4) -> dict:
    """Run a central-difference check of ``loss_fn()`` against each parameter.

    ``params`` maps name -> leaf Tensor; every element of every parameter
    is perturbed.  Returns name -> max relative error.
    """
    for p in params.values():
        p.zero_grad()
    backward(loss_fn())
    errors = {}
    for name, p in params.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        central = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_fn().item()
            flat[i] = orig - h
            lo = loss_fn().item()
            flat[i] = orig
            central.reshape(-1)[i] = (hi - lo) / (2.0 * h)
        rel = np.abs(analytic - central) / (np.abs(central) + 1e-8)
        errors[name] = float(rel.max()) if rel.size else 0.0
    return errors
