"""Dense tensors with a reverse-mode gradient tape.

Only the primitives the model needs are provided. Every op accepts optional
leading batch axes, so a ``C x H x W`` op also runs on ``B x C x H x W``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class Tolerances:
    fd_eps: float = 1e-4
    fd_rtol: float = 1e-3
    # step divisor for coordinates whose stencil straddles a kink
    fd_kink_shrink: float = 100.0
    # gradients below this magnitude are compared absolutely (FD roundoff is ~1e-11)
    fd_floor: float = 1e-7
    softmax_atol: float = 1e-6
    oracle_atol: float = 1e-9
    metric_atol: float = 1e-12


TOL = Tolerances()


class Tensor:
    """An array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a python scalar")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _make(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, True, tuple(parents), backward_fn)


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data * b.data

    def back(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(out, (a, b), back)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # exp of a non-positive argument only; never overflows
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    pos = x.data >= 0
    out = np.where(pos, x.data, slope * x.data)
    return _make(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) in the overflow-free form max(x, 0) + log1p(exp(-|x|))."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data)))

    def back(g):
        e = np.exp(-np.abs(x.data))
        sig = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * sig,)

    return _make(out, (x,), back)


def activation(x: Tensor, kind: str, slope: float = 0.01) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    raise ContractError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return _make(out, (x,), lambda g: (g.transpose(inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def broadcast_to(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out = np.broadcast_to(x.data, shape).copy()
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, xs, back)


def index(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    out = x.data[idx]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True), (x,), back)


# ---------------------------------------------------------------- reductions

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / float(n))


def max_(x: Tensor, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first maximiser."""
    x = as_tensor(x)
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis)
        return (full,)

    return _make(out, (x,), back)


def topk_mean(x: Tensor, k: int, axis: int) -> Tensor:
    """Mean of the k largest entries along ``axis``."""
    x = as_tensor(x)
    n = x.shape[axis]
    if not 1 <= k <= n:
        raise DimensionError(f"k={k} out of range for axis of length {n}")
    if k == 1:
        return max_(x, axis)
    if k == n:
        return mean(x, axis)
    # stable sort so tied values resolve deterministically
    order = np.argsort(-x.data, axis=axis, kind="stable")
    sel = np.take(order, np.arange(k), axis=axis)
    vals = np.take_along_axis(x.data, sel, axis)
    out = vals.mean(axis=axis)

    def back(g):
        full = np.zeros_like(x.data)
        share = np.broadcast_to(np.expand_dims(g / k, axis), sel.shape)
        np.put_along_axis(full, sel, share, axis)
        return (full,)

    return _make(out, (x,), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b applied to the last axis of x."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            n = x.shape[-1]
            gx = inv / n * (n * gh - gh.sum(-1, keepdims=True)
                            - xhat * (gh * xhat).sum(-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape))

    return _make(out, (x, gamma, beta), back)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of ``[..., C, H, W]`` with kernels ``[O, C, k, k]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim < 3 or w.ndim != 4 or x.shape[-3] != w.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    lead = x.shape[:-3]
    c, h, wd = x.shape[-3:]
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d output empty for input {x.shape}")
    xd = x.data.reshape((-1, c, h, wd))
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    # cols: [N, C, kh, kw, ho, wo]
    cols = np.empty((xd.shape[0], c, kh, kw, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xd[:, :, i:i + span_h:stride, j:j + span_w:stride]
    n = xd.shape[0]
    cmat = cols.reshape(n, c * kh * kw, ho * wo)
    wmat = w.data.reshape(o, c * kh * kw)
    out = np.matmul(wmat, cmat).reshape(n, o, ho, wo)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None, None]
    out = out.reshape(lead + (o, ho, wo))
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.reshape(n, o, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.einsum("nok,nck->oc", g2, cmat).reshape(w.shape)
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros_like(xd)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + span_h:stride, j:j + span_w:stride] += gcols[:, :, i, j]
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            gx = gxp.reshape(x.shape)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return (gx, gw) if b is None else (gx, gw, gb)

    return _make(out, parents, back)


# ---------------------------------------------------------------- pooling / resampling

def topk_count(ratio: float, n: int) -> int:
    if not 0.0 < ratio <= 1.0:
        raise ContractError(f"top-k ratio must lie in (0, 1], got {ratio}")
    return max(1, int(np.floor(ratio * n)))


def pool(x: Tensor, kind: str, ratio: float = 1.0) -> Tensor:
    """Squeeze the two trailing spatial axes: ``[..., C, H, W] -> [..., C]``.

    ``topk_max`` averages the ``max(1, floor(ratio*H*W))`` largest values.
    """
    x = as_tensor(x)
    if x.ndim < 3 or x.shape[-1] * x.shape[-2] == 0:
        raise DimensionError(f"pool needs a non-empty C x H x W input, got {x.shape}")
    flat = reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))
    if kind == "global_max":
        return max_(flat, -1)
    if kind == "global_avg":
        return mean(flat, -1)
    if kind == "topk_max":
        return topk_mean(flat, topk_count(ratio, flat.shape[-1]), -1)
    raise ContractError(f"unknown pool kind {kind!r}")


def _bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    # half-pixel centres; borders extrapolate from the two nearest samples so
    # linear ramps survive an up/down round trip exactly
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    i0 = np.clip(np.floor(src).astype(int), 0, n_in - 2)
    frac = src - i0
    m[np.arange(n_out), i0] = 1.0 - frac
    m[np.arange(n_out), i0 + 1] += frac
    return m


def _average_matrix(n_out: int, n_in: int) -> np.ndarray:
    # adaptive windows [floor(i*n/m), ceil((i+1)*n/m))
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def resample(x: Tensor, target: tuple[int, int], mode: str) -> Tensor:
    """Resize the two trailing axes with separable bilinear or box filters."""
    x = as_tensor(x)
    th, tw = target
    if th < 1 or tw < 1:
        raise DimensionError(f"resample target must be positive, got {target}")
    h, w = x.shape[-2:]
    if mode == "up_bilinear":
        if th < h or tw < w:
            raise DimensionError(f"up_bilinear cannot shrink {h}x{w} to {th}x{tw}")
        mh, mw = _bilinear_matrix(th, h), _bilinear_matrix(tw, w)
    elif mode == "down_avg":
        if th > h or tw > w:
            raise DimensionError(f"down_avg cannot grow {h}x{w} to {th}x{tw}")
        mh, mw = _average_matrix(th, h), _average_matrix(tw, w)
    else:
        raise ContractError(f"unknown resample mode {mode!r}")
    return separable(x, mh.astype(x.dtype), mw.astype(x.dtype))


def separable(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """``mh @ x @ mw.T`` on the trailing two axes with constant matrices."""
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return _make(out, (x,), lambda g: (np.matmul(np.matmul(mh.T, g), mw),))


# ---------------------------------------------------------------- tape

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: "ParameterStore | None" = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf on the tape.

    When ``params`` is given, each of its tensors gets a gradient, zero for
    the ones that did not take part in computing ``loss``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- parameters

class ParameterStore:
    """Named learnable tensors, iterated in sorted name order."""

    def __init__(self):
        self._items: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._items:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value))
        t.requires_grad = True
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return sorted(self._items)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(k, self._items[k]) for k in self.names()]

    def values(self) -> list[Tensor]:
        return [self._items[k] for k in self.names()]

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def size(self) -> int:
        return int(sum(t.data.size for t in self._items.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._items) ^ set(state)
        if missing:
            raise ContractError(f"parameter names differ: {sorted(missing)}")
        for k, t in self._items.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise DimensionError(f"parameter {k}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)


def make_rng(*keys: int) -> np.random.Generator:
    """Counter-based Philox stream keyed on one or more integers; identical on every platform."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype=np.float64, gain: float = 1.0) -> np.ndarray:
    """Uniform on ``(-a, a)`` with ``a = gain * sqrt(6 / (fan_in + fan_out))``."""
    a = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


# ---------------------------------------------------------------- gradient checking

@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int
    kink_retries: int = 0

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= TOL.fd_rtol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float | None = None) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps exact zeros from dividing by zero."""
    floor = TOL.fd_floor if floor is None else floor
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _central(fn, flat, i, eps):
    orig = flat[i]
    flat[i] = orig + eps
    up = float(fn().data)
    flat[i] = orig - eps
    down = float(fn().data)
    flat[i] = orig
    return up, down


def gradcheck(fn: Callable[[], Tensor], params: ParameterStore,
              names: Iterable[str] | None = None, eps: float | None = None,
              max_coords: int | None = None, rng: np.random.Generator | None = None,
              ) -> list[GradCheckResult]:
    """Compare tape gradients with central differences on each coordinate.

    ``fn`` recomputes the scalar loss from the current parameter values.
    ``max_coords`` limits the coordinates checked per parameter (random subset).

    Piecewise-linear ops (leaky ReLU, max and top-k pooling) make the loss
    non-differentiable on a measure-zero set. When a coordinate fails and its
    two one-sided slopes disagree by more than the tolerance, the stencil
    straddles such a kink; that coordinate is re-measured with a step
    ``TOL.fd_kink_shrink`` times smaller. A wrong analytic gradient still
    fails the re-measurement.
    """
    eps = TOL.fd_eps if eps is None else eps
    params.zero_grad()
    loss = fn()
    backward(loss, params)
    f0 = float(loss.data)
    results = []
    for name in names if names is not None else params.names():
        p = params[name]
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort((rng or make_rng(0)).choice(flat.size, max_coords, replace=False))
        a = analytic.reshape(-1)[coords]
        numeric = np.empty(coords.size)
        retries = 0
        for j, i in enumerate(coords):
            up, down = _central(fn, flat, i, eps)
            numeric[j] = (up - down) / (2 * eps)
            if relative_error(a[j], numeric[j]) <= TOL.fd_rtol:
                continue
            right, left = (up - f0) / eps, (f0 - down) / eps
            if relative_error(right, left) > TOL.fd_rtol:
                small = eps / TOL.fd_kink_shrink
                up, down = _central(fn, flat, i, small)
                numeric[j] = (up - down) / (2 * small)
                retries += 1
        err = relative_error(a, numeric)
        w = int(np.argmax(err)) if err.size else 0
        results.append(GradCheckResult(
            name, float(err[w]) if err.size else 0.0,
            np.unravel_index(coords[w], p.shape) if err.size else (),
            float(a[w]) if err.size else 0.0, float(numeric[w]) if err.size else 0.0,
            int(coords.size), retries))
    return results


# ---------------------------------------------------------------- serialization

MAGIC = b"TDRG"


def write_tensor(f: BinaryIO, x) -> None:
    """Little-endian: magic, u32 rank, u32 dims, float32 payload."""
    arr = np.asarray(x.data if isinstance(x, Tensor) else x)
    f.write(MAGIC)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    magic = f.read(4)
    if magic != MAGIC:
        raise ContractError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", f.read(4))
    dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
    n = int(np.prod(dims)) if rank else 1
    payload = f.read(4 * n)
    if len(payload) != 4 * n:
        raise ContractError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def save_tensor(path, x) -> None:
    with open(path, "wb") as f:
        write_tensor(f, x)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)
