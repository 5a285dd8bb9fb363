"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: 64-bit (or 32-bit) numpy storage, a
linear tape of recorded primitives, and exactly the operations the
generator/discriminator stack needs. There is no broadcasting beyond
per-channel bias and scale; anything else must be reshaped explicitly.

Gradients are accumulated in reverse tape order, which makes backward
passes deterministic regardless of graph sharing: replaying the tape
visits operations in the exact reverse of recording order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ShapeMismatch

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array plus an optional gradient buffer.

    ``grad`` stays ``None`` unless the tensor participates in a backward
    pass with ``requires_grad`` set. Data is treated as immutable once
    the tensor is wired into a graph; only the optimizer replaces it.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic (scalar operands are python floats/ints, kept at array dtype)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def mean(self):
        return mean(self)

    def sum(self):
        return tsum(self)

    def abs(self):
        return absval(self)


class Tape:
    """Ordered record of primitive operations for one backward pass."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Populate grads of every requires_grad tensor reachable from loss."""
        if loss.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._entries):
            if out.grad is not None:
                fn(out.grad)


_ACTIVE: list[Tape] = []


class suspend_tape:
    """Context manager that disables recording (used on inverse/inference paths)."""

    def __enter__(self):
        self._saved = _ACTIVE[:]
        _ACTIVE.clear()
        return self

    def __exit__(self, *exc):
        _ACTIVE.extend(self._saved)
        return False


def _recording(*tensors: Tensor) -> bool:
    return bool(_ACTIVE) and any(t.requires_grad for t in tensors)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap op output; record on the active tape when gradients are needed."""
    if _recording(*inputs):
        out = Tensor(data, requires_grad=True)
        _ACTIVE[-1]._entries.append((out, backward_fn(out)))
        return out
    return Tensor(data)


def _as_scalar(x, dtype) -> np.ndarray:
    return np.asarray(x, dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise / reduction primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ShapeMismatch(f"add: shapes {a.data.shape} vs {b.data.shape}")
        data = a.data + b.data

        def bwd(out):
            def fn(g):
                _accum(a, g)
                _accum(b, g)
            return fn

        return _make(data, (a, b), bwd)
    data = a.data + _as_scalar(b, a.dtype)

    def bwd(out):
        def fn(g):
            _accum(a, g)
        return fn

    return _make(data, (a,), bwd)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ShapeMismatch(f"sub: shapes {a.data.shape} vs {b.data.shape}")
        data = a.data - b.data

        def bwd(out):
            def fn(g):
                _accum(a, g)
                _accum(b, -g)
            return fn

        return _make(data, (a, b), bwd)
    data = a.data - _as_scalar(b, a.dtype)

    def bwd(out):
        def fn(g):
            _accum(a, g)
        return fn

    return _make(data, (a,), bwd)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ShapeMismatch(f"mul: shapes {a.data.shape} vs {b.data.shape}")
        ad, bd = a.data, b.data
        data = ad * bd

        def bwd(out):
            def fn(g):
                _accum(a, g * bd)
                _accum(b, g * ad)
            return fn

        return _make(data, (a, b), bwd)
    s = _as_scalar(b, a.dtype)
    data = a.data * s

    def bwd(out):
        def fn(g):
            _accum(a, g * s)
        return fn

    return _make(data, (a,), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(out):
        def fn(g):
            _accum(a, -g)
        return fn

    return _make(-a.data, (a,), bwd)


def absval(a: Tensor) -> Tensor:
    ad = a.data

    def bwd(out):
        sgn = np.sign(ad)

        def fn(g):
            _accum(a, g * sgn)
        return fn

    return _make(np.abs(ad), (a,), bwd)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(out):
        def fn(g):
            _accum(a, np.full_like(a.data, g.reshape(-1)[0] / n))
        return fn

    return _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,), bwd)


def tsum(a: Tensor) -> Tensor:
    def bwd(out):
        def fn(g):
            _accum(a, np.full_like(a.data, g.reshape(-1)[0]))
        return fn

    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bwd)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    """Elementwise x if x >= 0 else slope*x (subgradient 1 at zero)."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0,1), got {slope}")
    ad = a.data
    data = np.where(ad >= 0, ad, ad * np.asarray(slope, ad.dtype))

    def bwd(out):
        deriv = np.where(ad >= 0, np.asarray(1.0, ad.dtype), np.asarray(slope, ad.dtype))

        def fn(g):
            _accum(a, g * deriv)
        return fn

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIKK weights, optional per-channel bias."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"conv2d input must be 4-D, got {x.data.shape}")
    if w.data.ndim != 4:
        raise ShapeMismatch(f"conv2d weight must be 4-D, got {w.data.shape}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    n, c, h, wd = x.data.shape
    o, ci, kh, kw = w.data.shape
    if ci != c:
        raise ShapeMismatch(f"conv2d: input has {c} channels but weight expects {ci}")
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ShapeMismatch(
            f"conv2d: padded input {h + 2 * pad}x{wd + 2 * pad} smaller than kernel {kh}x{kw}")
    if b is not None and b.data.shape != (o,):
        raise ShapeMismatch(f"conv2d: bias shape {b.data.shape} != ({o},)")

    data = backend.conv2d_forward(np.ascontiguousarray(x.data), np.ascontiguousarray(w.data),
                                  stride, pad)
    if b is not None:
        data = data + b.data[None, :, None, None]

    xd, wdta = x.data, w.data
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(out):
        def fn(g):
            g = np.ascontiguousarray(g)
            if x.requires_grad:
                _accum(x, backend.conv2d_grad_input(g, np.ascontiguousarray(wdta),
                                                    stride, pad, h, wd))
            if w.requires_grad:
                _accum(w, backend.conv2d_grad_weight(np.ascontiguousarray(xd), g,
                                                     stride, pad, kh, kw))
            if b is not None and b.requires_grad:
                _accum(b, g.sum(axis=(0, 2, 3)))
        return fn

    return _make(data, inputs, bwd)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Per-channel learnable scale/shift plus running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @staticmethod
    def create(channels: int, dtype=np.float64) -> "BatchNormState":
        return BatchNormState(
            gamma=Tensor(np.ones(channels, dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )


def batch_norm(x: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Per-channel normalization; train mode uses batch statistics and
    updates the running buffers, eval mode uses the running buffers."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"batch_norm input must be 4-D, got {x.data.shape}")
    c = x.data.shape[1]
    if state.gamma.data.shape != (c,):
        raise ShapeMismatch(f"batch_norm: input has {c} channels, state has "
                            f"{state.gamma.data.shape[0]}")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be train|eval, got {mode!r}")

    gamma, beta = state.gamma, state.beta
    eps = np.asarray(state.eps, x.dtype)
    axes = (0, 2, 3)
    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # biased, matches normalization below
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(out):
        def fn(g):
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=axes))
            if x.requires_grad:
                gs = gamma.data[None, :, None, None] * inv_std[None, :, None, None]
                if mode == "eval":
                    _accum(x, g * gs)
                else:
                    n_red = g.shape[0] * g.shape[2] * g.shape[3]
                    g_mean = g.mean(axis=axes)[None, :, None, None]
                    gx_mean = (g * xhat).sum(axis=axes)[None, :, None, None] / n_red
                    _accum(x, gs * (g - g_mean - xhat * gx_mean))
        return fn

    return _make(data, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# channel rearrangement primitives
# ---------------------------------------------------------------------------

def space_to_depth(x: Tensor) -> Tensor:
    """(N,1,H,W) -> (N,4,H/2,W/2); 2x2 cells become channels in
    top-left, top-right, bottom-left, bottom-right order."""
    n, c, h, w = x.data.shape
    if c != 1:
        raise ShapeMismatch(f"space_to_depth expects 1 channel, got {c}")
    if h % 2 or w % 2:
        raise ShapeMismatch(f"space_to_depth needs even spatial dims, got {h}x{w}")
    xd = x.data
    data = np.concatenate(
        [xd[:, :, 0::2, 0::2], xd[:, :, 0::2, 1::2],
         xd[:, :, 1::2, 0::2], xd[:, :, 1::2, 1::2]], axis=1)

    def bwd(out):
        def fn(g):
            gx = np.empty_like(xd)
            gx[:, :, 0::2, 0::2] = g[:, 0:1]
            gx[:, :, 0::2, 1::2] = g[:, 1:2]
            gx[:, :, 1::2, 0::2] = g[:, 2:3]
            gx[:, :, 1::2, 1::2] = g[:, 3:4]
            _accum(x, gx)
        return fn

    return _make(data, (x,), bwd)


def depth_to_space(x: Tensor) -> Tensor:
    """Exact inverse of space_to_depth: (N,4,h,w) -> (N,1,2h,2w)."""
    n, c, h, w = x.data.shape
    if c != 4:
        raise ShapeMismatch(f"depth_to_space expects 4 channels, got {c}")
    xd = x.data
    data = np.empty((n, 1, 2 * h, 2 * w), xd.dtype)
    data[:, :, 0::2, 0::2] = xd[:, 0:1]
    data[:, :, 0::2, 1::2] = xd[:, 1:2]
    data[:, :, 1::2, 0::2] = xd[:, 2:3]
    data[:, :, 1::2, 1::2] = xd[:, 3:4]

    def bwd(out):
        def fn(g):
            _accum(x, np.concatenate(
                [g[:, :, 0::2, 0::2], g[:, :, 0::2, 1::2],
                 g[:, :, 1::2, 0::2], g[:, :, 1::2, 1::2]], axis=1))
        return fn

    return _make(data, (x,), bwd)


def channel_slice(x: Tensor, lo: int, hi: int) -> Tensor:
    """Select channels [lo, hi) of an NCHW tensor."""
    c = x.data.shape[1]
    if not 0 <= lo < hi <= c:
        raise ShapeMismatch(f"channel_slice [{lo},{hi}) out of range for {c} channels")
    data = x.data[:, lo:hi].copy()

    def bwd(out):
        def fn(g):
            gx = np.zeros_like(x.data)
            gx[:, lo:hi] = g
            _accum(x, gx)
        return fn

    return _make(data, (x,), bwd)


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    base = parts[0].data.shape
    for p in parts[1:]:
        s = p.data.shape
        if (s[0], s[2], s[3]) != (base[0], base[2], base[3]):
            raise ShapeMismatch(f"concat_channels: {s} incompatible with {base}")
    data = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def bwd(out):
        def fn(g):
            lo = 0
            for p, wdt in zip(parts, widths):
                _accum(p, g[:, lo:lo + wdt])
                lo += wdt
        return fn

    return _make(data, tuple(parts), bwd)


def channel_mix(x: Tensor, w: Tensor) -> Tensor:
    """Right-multiply each pixel's channel vector by a CxC matrix:
    out[n,d,h,w] = sum_c x[n,c,h,w] * W[c,d]."""
    c = x.data.shape[1]
    if w.data.shape != (c, c):
        raise ShapeMismatch(f"channel_mix: weight {w.data.shape} != ({c},{c})")
    xd, wd = x.data, w.data
    data = np.einsum("nchw,cd->ndhw", xd, wd, optimize=True)

    def bwd(out):
        def fn(g):
            if x.requires_grad:
                _accum(x, np.einsum("ndhw,cd->nchw", g, wd, optimize=True))
            if w.requires_grad:
                _accum(w, np.einsum("nchw,ndhw->cd", xd, g, optimize=True))
        return fn

    return _make(data, (x, w), bwd)


def sn_scale(w: Tensor, u: np.ndarray, v: np.ndarray) -> Tensor:
    """Divide a weight by its power-iteration singular value estimate
    sigma = u^T W_mat v, with u and v held fixed. The backward pass uses
    d(sigma)/dW = u v^T, which is exact when v is aligned (v = W^T u / |W^T u|)."""
    mat = w.data.reshape(w.data.shape[0], -1)
    sigma = float(u @ mat @ v)
    if sigma <= 0:
        raise ValueError(f"sn_scale: nonpositive singular value estimate {sigma}")
    data = w.data / np.asarray(sigma, w.dtype)
    uv = np.outer(u, v).reshape(w.data.shape).astype(w.dtype)
    wd = w.data

    def bwd(out):
        def fn(g):
            coeff = float((g * wd).sum()) / (sigma * sigma)
            _accum(w, g / sigma - coeff * uv)
        return fn

    return _make(data, (w,), bwd)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected ADAM moments, kept in parameter order."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @staticmethod
    def create(params: list[Tensor]) -> "AdamState":
        return AdamState(m=[np.zeros_like(p.data) for p in params],
                         v=[np.zeros_like(p.data) for p in params])


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One ADAM update; a None grad is treated as zero (moments still decay)."""
    if len(params) != len(state.m):
        raise ShapeMismatch(f"adam_step: {len(params)} params vs state of {len(state.m)}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"adam_step: grad {g.shape} vs param {p.data.shape}")
        m, v = state.m[i], state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        # p.data is replaced, not mutated: live graphs and rollback snapshots
        # hold references to the old array
        p.data = p.data - (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# binary tensor format ("NTSR")
# ---------------------------------------------------------------------------

_MAGIC = b"NTSR"
_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array (ndim <= 4) as magic, version, dtype code,
    4 little-endian u64 dims, raw little-endian payload."""
    arr = np.asarray(arr)
    if arr.ndim > 4:
        raise ShapeMismatch(f"tensor format holds at most 4 dims, got {arr.ndim}")
    if arr.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    dims = (1,) * (4 - arr.ndim) + arr.shape
    head = _MAGIC + struct.pack("<II", _VERSION, _DTYPE_CODES[arr.dtype])
    head += struct.pack("<4Q", *dims)
    payload = arr.reshape(dims).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return head + payload


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one serialized tensor; returns (4-D array, next offset)."""
    if buf[offset:offset + 4] != _MAGIC:
        raise ValueError("bad tensor magic")
    version, code = struct.unpack_from("<II", buf, offset + 4)
    if version != _VERSION:
        raise ValueError(f"unsupported tensor format version {version}")
    dims = struct.unpack_from("<4Q", buf, offset + 12)
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims))
    start = offset + 12 + 32
    end = start + count * dtype.itemsize
    arr = np.frombuffer(buf[start:end], dtype=dtype).reshape(dims)
    return np.ascontiguousarray(arr).astype(dtype.newbyteorder("=")), end


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        arr, _ = tensor_from_bytes(f.read())
    return arr
