"""Minimal dense tensor engine with tape-based reverse-mode differentiation.

Covers exactly the op vocabulary the rest of the package needs: conv2d,
group/layer norm, linear, softmax variants, bilinear sampling, and a handful
of elementwise / shape ops. No general broadcasting -- every op has explicit
shape rules and raises on mismatch.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy import sparse

LOG_EPS = 1e-12  # global clamp for log arguments


class DimensionError(ValueError):
    """Shape mismatch between operands, names the offending axis."""


class ConfigurationError(ValueError):
    """Invalid structural parameter (group count, threshold range, ...)."""


class ContractError(ValueError):
    """An operation precondition was violated by the caller."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-d array with optional gradient tracking.

    data is row-major float32 or float64; grad (same shape) is populated by
    backward() and accumulates across calls until zero_grad().
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backfn")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backfn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience operators, all delegating to module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        if np.shape(g) != t.data.shape:
            raise DimensionError(
                f"gradient shape {np.shape(g)} != value shape {t.data.shape}")
        g = g.astype(t.data.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g


def _result(data, parents, backfn):
    """Wrap op output; attach tape node only when tracking is active."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backfn = backfn
    return out


def backward(loss: Tensor):
    """Reverse-mode accumulation from a scalar loss over its tape."""
    if loss.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(topo):
        if node._backfn is not None:
            node._backfn(node.grad)


def _check_same_shape(a, b, opname):
    if a.shape != b.shape:
        for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
            if da != db:
                raise DimensionError(
                    f"{opname}: axis {axis} mismatch ({da} vs {db})")
        raise DimensionError(f"{opname}: rank mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def backfn(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), backfn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def backfn(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), backfn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def backfn(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backfn)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")

    def backfn(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _result(a.data / b.data, (a, b), backfn)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backfn(g):
        _accumulate(a, g * s)

    return _result(a.data * s, (a,), backfn)


def scalar_add(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backfn(g):
        _accumulate(a, g)

    return _result(a.data + s, (a,), backfn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backfn(g):
        _accumulate(a, g * mask)

    return _result(np.where(mask, a.data, 0.0), (a,), backfn)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))

    def backfn(g):
        _accumulate(a, g * y * (1.0 - y))

    return _result(y, (a,), backfn)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backfn(g):
        _accumulate(a, g * y)

    return _result(y, (a,), backfn)


def log(a: Tensor) -> Tensor:
    """Natural log with the argument clamped to >= LOG_EPS."""
    clamped = np.maximum(a.data, LOG_EPS)

    def backfn(g):
        _accumulate(a, g / clamped)

    return _result(np.log(clamped), (a,), backfn)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    y = np.power(a.data, p)

    def backfn(g):
        _accumulate(a, g * p * np.power(a.data, p - 1.0))

    return _result(y, (a,), backfn)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def backfn(g):
        _accumulate(a, g * sign)

    return _result(np.abs(a.data), (a,), backfn)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "minimum")
    take_a = a.data <= b.data

    def backfn(g):
        _accumulate(a, g * take_a)
        _accumulate(b, g * ~take_a)

    return _result(np.where(take_a, a.data, b.data), (a, b), backfn)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "maximum")
    take_a = a.data >= b.data

    def backfn(g):
        _accumulate(a, g * take_a)
        _accumulate(b, g * ~take_a)

    return _result(np.where(take_a, a.data, b.data), (a, b), backfn)


# ---------------------------------------------------------------------------
# reductions and shape ops

def sum_all(a: Tensor) -> Tensor:
    def backfn(g):
        _accumulate(a, np.full(a.shape, g, dtype=a.dtype))

    return _result(a.data.sum(), (a,), backfn)


def sum_over_axis(a: Tensor, axis: int) -> Tensor:
    def backfn(g):
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _result(a.data.sum(axis=axis), (a,), backfn)


def mean_over_axis(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]

    def backfn(g):
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape) / n)

    return _result(a.data.mean(axis=axis), (a,), backfn)


def mean_all(a: Tensor) -> Tensor:
    n = a.size

    def backfn(g):
        _accumulate(a, np.full(a.shape, g / n, dtype=a.dtype))

    return _result(a.data.mean(), (a,), backfn)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backfn(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backfn)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backfn(g):
        _accumulate(a, g.transpose(inv))

    return _result(a.data.transpose(axes), (a,), backfn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backfn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis),
                   tensors, backfn)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def backfn(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _result(np.stack([t.data for t in tensors], axis=axis),
                   tensors, backfn)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)

    def backfn(g):
        if a.requires_grad:
            da = np.zeros(a.shape, dtype=a.dtype)
            np.add.at(da, idx, g)
            _accumulate(a, da)

    return _result(a.data[idx], (a,), backfn)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d or batched 3-d matrix product (no implicit broadcasting)."""
    if a.data.ndim not in (2, 3) or a.data.ndim != b.data.ndim:
        raise DimensionError(
            f"matmul: rank mismatch {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner axis mismatch ({a.shape[-1]} vs {b.shape[-2]})")

    def backfn(g):
        _accumulate(a, np.matmul(g, b.data.swapaxes(-1, -2)))
        _accumulate(b, np.matmul(a.data.swapaxes(-1, -2), g))

    return _result(np.matmul(a.data, b.data), (a, b), backfn)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map [n, d_in] x [d_out, d_in] + [d_out] -> [n, d_out]."""
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear: inner axis mismatch (input axis 1 is {x.shape[1]}, "
            f"weight axis 1 is {weight.shape[1]})")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(
            f"linear: bias axis 0 is {bias.shape}, expected ({weight.shape[0]},)")

    def backfn(g):
        _accumulate(x, g @ weight.data)
        _accumulate(weight, g.T @ x.data)
        _accumulate(bias, g.sum(axis=0))

    return _result(x.data @ weight.data.T + bias.data, (x, weight, bias), backfn)


# ---------------------------------------------------------------------------
# conv / norm

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None,
           padding: int = 0, stride: int = 1) -> Tensor:
    """Cross-correlation; x is [c,h,w] or batched [n,c,h,w]."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d: input rank must be 3 or 4, got {x.shape}")
    n, c, h, w = xd.shape
    co, ci, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel must be odd, got {kh}x{kw}")
    if ci != c:
        raise DimensionError(
            f"conv2d: channel axis mismatch (input has {c}, kernel expects {ci})")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(
            f"conv2d: bias axis 0 is {bias.shape}, expected ({co},)")

    # channels-last im2col: one cheap layout change, then kh*kw contiguous
    # slab copies; both forward and kernel grad are then plain matmuls
    xl = np.ascontiguousarray(xd.transpose(0, 2, 3, 1))
    xp = np.pad(xl, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols6 = np.empty((n, ho, wo, kh, kw, c), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols6[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride,
                                         j:j + stride * wo:stride, :]
    cols = cols6.reshape(n * ho * wo, kh * kw * c)
    k2 = np.ascontiguousarray(kernel.data.transpose(0, 2, 3, 1)) \
        .reshape(co, kh * kw * c)
    out = cols @ k2.T
    if bias is not None:
        out = out + bias.data[None, :]
    out = out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)

    def backfn(g):
        g4 = g[None] if squeeze else g
        g2 = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)) \
            .reshape(n * ho * wo, co)
        if kernel.requires_grad:
            dk = (g2.T @ cols).reshape(co, kh, kw, c).transpose(0, 3, 1, 2)
            _accumulate(kernel, dk)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            # scatter in channels-last layout: contiguous writes per slice
            dwin = (g2 @ k2).reshape(n, ho, wo, kh, kw, c)
            dxl = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxl[:, i:i + stride * ho:stride,
                        j:j + stride * wo:stride, :] += dwin[:, :, :, i, j, :]
            dx = dxl[:, padding:padding + h,
                     padding:padding + w, :].transpose(0, 3, 1, 2)
            _accumulate(x, dx[0] if squeeze else dx)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out[0] if squeeze else out, parents, backfn)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Per-group normalization over (channel-slice, h, w), then affine."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    if c % groups != 0:
        raise ConfigurationError(
            f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError("group_norm: gamma/beta must have shape (c,)")

    xg = xd.reshape(n, groups, c // groups, h, w)
    mean = xg.mean(axis=(2, 3, 4), keepdims=True)
    var = xg.var(axis=(2, 3, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(n, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backfn(g):
        g4 = g[None] if squeeze else g
        if gamma.requires_grad:
            _accumulate(gamma, (g4 * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g4.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            m = (c // groups) * h * w
            dxhat = (g4 * gamma.data[None, :, None, None]).reshape(
                n, groups, c // groups, h, w)
            xhg = xhat.reshape(n, groups, c // groups, h, w)
            s1 = dxhat.sum(axis=(2, 3, 4), keepdims=True)
            s2 = (dxhat * xhg).sum(axis=(2, 3, 4), keepdims=True)
            dxg = inv / m * (m * dxhat - s1 - xhg * s2)
            dx = dxg.reshape(n, c, h, w)
            _accumulate(x, dx[0] if squeeze else dx)

    return _result(out[0] if squeeze else out, (x, gamma, beta), backfn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("layer_norm: gamma/beta must match last axis")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = xhat * gamma.data + beta.data

    def backfn(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            s1 = dxhat.sum(axis=-1, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
            _accumulate(x, inv / d * (d * dxhat - s1 - xhat * s2))

    return _result(out, (x, gamma, beta), backfn)


# ---------------------------------------------------------------------------
# softmax variants

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backfn(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), backfn)


def spatial_softmax(logits: Tensor, tau: float) -> Tensor:
    """Per-map softmax of tau * logits over the flattened spatial positions.

    logits is [q,h,w] (or [n,q,h,w]); each map sums to 1.
    """
    if tau <= 0:
        raise ConfigurationError(f"spatial_softmax: tau must be > 0, got {tau}")
    shape = logits.shape
    flat = logits.data.reshape(shape[:-2] + (-1,)) * tau
    shifted = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backfn(g):
        gf = g.reshape(shape[:-2] + (-1,))
        dx = tau * y * (gf - (gf * y).sum(axis=-1, keepdims=True))
        _accumulate(logits, dx.reshape(shape))

    return _result(y.reshape(shape), (logits,), backfn)


# ---------------------------------------------------------------------------
# sampling

def _bilinear_weights(h, w, xs, ys):
    """Clamped 4-neighbor indices and weights for continuous coords."""
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    return (y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)


def bilinear_sample_many(x: Tensor, xs: np.ndarray, ys: np.ndarray) -> Tensor:
    """Sample [c,h,w] at flat coordinate arrays -> Tensor[c, len(xs)].

    Coordinates are treated as constants: gradients flow through feature
    values only.
    """
    c, h, w = x.shape
    corners = _bilinear_weights(h, w, np.asarray(xs, dtype=np.float64),
                                np.asarray(ys, dtype=np.float64))
    n_pts = len(np.ravel(xs))
    # constant (n_pts, h*w) gather matrix; forward and backward are matmuls
    rows = np.concatenate([np.arange(n_pts)] * 4)
    flat = np.concatenate([yi * w + xi for yi, xi, _ in corners])
    data = np.concatenate([wt for _, _, wt in corners]).astype(x.dtype)
    gather = sparse.csr_matrix((data, (rows, flat)), shape=(n_pts, h * w))
    out = gather.dot(x.data.reshape(c, h * w).T).T

    def backfn(g):
        if x.requires_grad:
            dx = gather.T.dot(g.T).T.reshape(c, h, w)
            _accumulate(x, np.ascontiguousarray(dx))

    return _result(np.ascontiguousarray(out), (x,), backfn)


def bilinear_sample(x: Tensor, px: float, py: float) -> Tensor:
    """Single-point 4-neighbor bilinear interpolation -> Tensor[c]."""
    out = bilinear_sample_many(x, np.array([px]), np.array([py]))
    return reshape(out, (x.shape[0],))


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    n_coords: int
    worst_coord: int

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} "
                f"over {self.n_coords} coords (worst at {self.worst_coord})")


def check_gradients(f, x: Tensor, eps: float = 1e-5, tol: float = 1e-4,
                    max_coords: int | None = None, rng=None) -> GradCheckReport:
    """Central-difference check of d f(x) / dx against the tape.

    f maps a Tensor to a scalar Tensor. Relative error per coordinate is
    |analytic - numeric| / max(|analytic| + |numeric|, 1e-8); the report
    passes iff the max is <= tol. max_coords subsamples coordinates for
    large inputs.
    """
    x.zero_grad()
    out = f(x)
    backward(out)
    analytic = x.grad.ravel().copy() if x.grad is not None else np.zeros(x.size)

    coords = np.arange(x.size)
    if max_coords is not None and x.size > max_coords:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(x.size, size=max_coords, replace=False)

    flat = x.data.ravel()
    max_err, worst = 0.0, -1
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            err = abs(analytic[i] - numeric) / max(abs(analytic[i]) + abs(numeric), 1e-8)
            if err > max_err:
                max_err, worst = err, int(i)
    return GradCheckReport(max_rel_error=max_err, passed=max_err <= tol,
                           n_coords=len(coords), worst_coord=worst)


# ---------------------------------------------------------------------------
# serialization: magic "SQT1", u32 rank, u64 dims, little-endian f32 payload

MAGIC = b"SQT1"


def save_tensor(path, t: Tensor):
    arr = np.ascontiguousarray(t.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(arr.tobytes())


def load_tensor(path, dtype=np.float32, requires_grad=False) -> Tensor:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise IOError(f"{path}: bad magic {magic!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise IOError(f"{path}: truncated payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return Tensor(arr.astype(dtype), requires_grad=requires_grad)
