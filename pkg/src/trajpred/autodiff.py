"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every op builds a node holding its parents and a vector-Jacobian product.
Nodes are only recorded when some input requires a gradient, so a frozen
sub-network costs a plain numpy forward pass.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEBUG = False


def set_debug(enabled: bool) -> None:
    """When enabled, every op checks its output for NaN/Inf."""
    global _DEBUG
    _DEBUG = bool(enabled)


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), vjp=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._vjp = vjp
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def backward(self):
        return backward(self)


class Parameter(Tensor):
    """A named leaf tensor; ``trainable=False`` freezes it."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, value: bool) -> None:
        self.requires_grad = bool(value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple, vjp, op: str) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced a non-finite value")
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, vjp, op)
    return Tensor(data, op=op)


def _shape_error(op: str, *tensors) -> ShapeError:
    shapes = ", ".join(str(t.shape) for t in tensors)
    return ShapeError(f"{op}: incompatible shapes {shapes}")


# --- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    """Sum of equal shapes, or ``a`` (..., F) plus a bias ``b`` (F,)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        f = b.shape[0]
        return _node(a.data + b.data, (a, b), lambda g: (g, g.reshape(-1, f).sum(axis=0)), "add_bias")
    raise _shape_error("add", a, b)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def elementwise_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("elementwise_mul", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# --- shape ------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), vjp, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a) -> Tensor:
    """(N, ...) -> (N, prod(...))."""
    a = as_tensor(a)
    return reshape(a, (a.shape[0], -1))


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise _shape_error("concat", *ts) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def vjp(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(out, tuple(ts), vjp, "concat")


def take(a, index) -> Tensor:
    """Basic indexing/slicing of ``a``."""
    a = as_tensor(a)
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (a,), vjp, "take")


def tensor_sum(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _node(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean")


# --- convolution ------------------------------------------------------------


def conv2d(x, w, b=None) -> Tensor:
    """Stride-1, valid-padding cross-correlation.

    x: (N, C, H, W), w: (O, C, kh, kw), b: (O,) or None -> (N, O, H-kh+1, W-kw+1)
    """
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or (b is not None and b.shape != (w.shape[0],)):
        raise _shape_error("conv2d", *[t for t in (x, w, b) if t is not None])
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    if ho < 1 or wo < 1:
        raise _shape_error("conv2d", x, w)
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))  # (N, C, Ho, Wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def vjp(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gm.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = gm.sum(axis=0) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, c, kh, kw)
            gx = np.zeros(x.shape)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _node(np.ascontiguousarray(out), parents, vjp, "conv2d")


def maxpool2x2(x) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"maxpool2x2: need (N, C, H>=2, W>=2), got {x.shape}")
    n, c, h, wd = x.shape
    ho, wo = h // 2, wd // 2
    blocks = (
        x.data[:, :, : 2 * ho, : 2 * wo]
        .reshape(n, c, ho, 2, wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, 4)
    )
    idx = np.argmax(blocks, axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        gx = np.zeros(x.shape)
        gx[:, :, : 2 * ho, : 2 * wo] = (
            gb.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        )
        return (gx,)

    return _node(out, (x,), vjp, "maxpool2x2")


# --- losses -----------------------------------------------------------------


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(z, dtype=np.float64)))


def softmax_cross_entropy(logits, target) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[target]``.

    ``logits`` is (K,) with an integer target, or (N, K) with N targets.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    if z.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be (K,) or (N, K), got {logits.shape}")
    t = np.asarray(target, dtype=np.int64).reshape(-1)
    if t.shape[0] != z.shape[0] or np.any(t < 0) or np.any(t >= z.shape[1]):
        raise ShapeError(f"softmax_cross_entropy: bad targets {t} for logits {logits.shape}")
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, t].mean()

    def vjp(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        p *= float(g) / z.shape[0]
        return (p[0] if single else p,)

    return _node(np.array(loss), (logits,), vjp, "softmax_cross_entropy")


def mse_loss(pred, target, mask=None) -> Tensor:
    """Mean squared error; with a 0/1 ``mask`` the mean runs over the selected entries only."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: incompatible shapes {pred.shape}, {target.shape}")
    diff = pred.data - target
    if mask is None:
        weight = np.ones_like(diff)
    else:
        weight = np.asarray(mask, dtype=np.float64)
        if weight.shape != diff.shape:
            raise ShapeError(f"mse_loss: mask shape {weight.shape} != {diff.shape}")
    count = weight.sum()
    if count == 0:
        raise ValueError("mse_loss: empty selection")
    loss = float((weight * diff * diff).sum() / count)
    return _node(np.array(loss), (pred,), lambda g: (2.0 * float(g) * weight * diff / count,), "mse_loss")


# --- backward ---------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss: Tensor, params: Iterable[Parameter] | None = None) -> list[np.ndarray] | None:
    """Reverse-mode sweep from a scalar ``loss``.

    Leaf gradients land in ``.grad``. When ``params`` is given, returns their
    gradients in order, zeros for frozen or unreached parameters.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = None if params is None else list(params)
    for p in params or ():
        p.grad = None
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topological(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    if params is None:
        return None
    out = []
    for p in params:
        if p.trainable and p.grad is not None:
            out.append(p.grad)
        else:
            out.append(np.zeros_like(p.data))
    return out


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


# --- optimisers -------------------------------------------------------------


def sgd_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], lr: float) -> None:
    """In-place ``p <- p - lr * g`` for trainable parameters."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for p, g in zip(params, grads):
        if p.trainable:
            p.data = p.data - lr * g


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if not p.trainable:
                continue
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# --- finite differences -----------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_gradient(fn: Callable[[], float], param: Tensor, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. the listed flat entries of ``param``."""
    flat = param.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn())
        flat[i] = orig - h
        down = float(fn())
        flat[i] = orig
        out.append((up - down) / (2.0 * h))
    return np.array(out)


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between backprop and central differences over ``params``.

    ``max_entries`` caps how many coordinates per tensor are probed (chosen
    with a seeded generator); ``None`` probes all of them.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        size = p.data.size
        if max_entries is None or size <= max_entries:
            idx = np.arange(size)
        else:
            idx = np.sort(rng.choice(size, size=max_entries, replace=False))
        numeric = numeric_gradient(lambda: loss_fn().data, p, h, idx)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
    return worst


# --- checkpoints ------------------------------------------------------------

MAGIC = b"TPCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(named: Mapping[str, np.ndarray]) -> bytes:
    """Flat little-endian encoding: header, then (name, shape, float64 data) per parameter."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(named)))
    for name, arr in named.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def parse_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos : pos + nlen]).decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise CheckpointError(f"truncated data for {name!r}")
            arr = np.frombuffer(view[pos : pos + 8 * size], dtype="<f8")
            pos += 8 * size
            out[name] = arr.astype(np.float64).reshape(shape)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(data):
        raise CheckpointError("trailing bytes after last parameter")
    return out


def save_checkpoint(named: Mapping[str, np.ndarray], path) -> None:
    Path(path).write_bytes(checkpoint_bytes(named))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return parse_checkpoint(Path(path).read_bytes())
