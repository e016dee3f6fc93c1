"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything runs in 64-bit and is bit-deterministic: repeating a forward and
backward pass with the same inputs reproduces every byte. Ops record onto the
currently active :class:`Tape`; entries are appended in execution order, which
is topological by construction, and the backward pass replays them once in
reverse. Subgradient conventions are pinned: ``abs'(0) = 0`` and
``relu'(0) = 0``, and ``log`` always clamps its argument to ``[eps, 1 - eps]``.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, ParameterError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "abs_val",
    "add",
    "adaptive_avg_pool",
    "assert_finite",
    "avg_pool_window",
    "bilinear_resize",
    "conv2d",
    "log",
    "max_channels",
    "mul",
    "record_op",
    "relu",
    "reshape",
    "scalar_add",
    "scalar_mul",
    "sigmoid",
    "slice_channels",
    "softmax_channel",
    "sub",
]

LOG_EPS = 1e-7

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A dense multi-dimensional array, optionally tracked for gradients.

    `data` is always a float64 ndarray. `grad` is lazily allocated the first
    time a backward pass touches this tensor and has the same shape as `data`.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detached(self) -> "Tensor":
        """A copy that shares no tape history (fresh constant)."""
        return Tensor(self.data.copy())

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return scalar_add(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return scalar_add(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __abs__(self):
        return abs_val(self)

    def sum(self) -> "Tensor":
        """Full reduction to a scalar tensor."""
        out = _make_out(np.asarray(np.sum(self.data)), (self,))

        def backward(g):
            self.accumulate_grad(np.full_like(self.data, float(g)))

        record_op(out, backward)
        return out

    def mean(self) -> "Tensor":
        out = _make_out(np.asarray(np.mean(self.data)), (self,))
        n = self.data.size

        def backward(g):
            self.accumulate_grad(np.full_like(self.data, float(g) / n))

        record_op(out, backward)
        return out

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Tape:
    """Ordered record of executed ops during one forward pass.

    Entries are `(output tensor, backward closure)` pairs appended as ops run;
    producers therefore always precede consumers. `backward(loss)` seeds the
    scalar loss gradient with 1 and replays every entry exactly once in
    reverse order, so gradient accumulation order is fixed and reruns are
    bit-identical. One tape is active at a time per process; the backward pass
    is single-threaded by contract.
    """

    def __init__(self):
        self.ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.shape != ():
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        for out, fn in reversed(self.ops):
            if out.grad is not None:
                fn(out.grad)


def recording() -> bool:
    return _ACTIVE_TAPE is not None


def record_op(out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
    """Append a backward closure for `out` to the active tape, if any.

    Composite ops outside this module (e.g. fused losses) use this to plug
    custom gradients into the same tape.
    """
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE.ops.append((out, backward))


def _make_out(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    return Tensor(data, requires_grad=any(p.requires_grad for p in parents))


def assert_finite(t: Tensor, name: str = "tensor") -> None:
    """Contract check: NaN or Inf anywhere is a data error."""
    if not np.all(np.isfinite(t.data)):
        bad = np.argwhere(~np.isfinite(t.data))[0]
        raise DataError(f"{name} contains a non-finite value at index {tuple(int(i) for i in bad)}")


# ---------------------------------------------------------------------------
# elementwise and broadcast ops
# ---------------------------------------------------------------------------


def _broadcast_kind(a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    # channel vector against (..., C, H, W)
    if b.ndim == 1 and a.ndim >= 3 and a.shape[-3] == b.shape[0]:
        return "channel"
    raise ShapeError(f"cannot broadcast {b.shape} against {a.shape}; only equal shapes or a per-channel vector are supported")


def _channel_view(b: np.ndarray) -> np.ndarray:
    return b.reshape(-1, 1, 1)


def add(a: Tensor, b: Tensor) -> Tensor:
    kind = _broadcast_kind(a, b)
    bd = b.data if kind == "same" else _channel_view(b.data)
    out = _make_out(a.data + bd, (a, b))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            if kind == "same":
                b.accumulate_grad(g)
            else:
                axes = tuple(i for i in range(g.ndim) if i != g.ndim - 3)
                b.accumulate_grad(g.sum(axis=axes))

    record_op(out, backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    kind = _broadcast_kind(a, b)
    bd = b.data if kind == "same" else _channel_view(b.data)
    out = _make_out(a.data - bd, (a, b))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            if kind == "same":
                b.accumulate_grad(-g)
            else:
                axes = tuple(i for i in range(g.ndim) if i != g.ndim - 3)
                b.accumulate_grad(-g.sum(axis=axes))

    record_op(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    kind = _broadcast_kind(a, b)
    bd = b.data if kind == "same" else _channel_view(b.data)
    out = _make_out(a.data * bd, (a, b))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * bd)
        if b.requires_grad:
            gb = g * a.data
            if kind == "same":
                b.accumulate_grad(gb)
            else:
                axes = tuple(i for i in range(g.ndim) if i != g.ndim - 3)
                b.accumulate_grad(gb.sum(axis=axes))

    record_op(out, backward)
    return out


def scalar_mul(x: Tensor, c: float) -> Tensor:
    out = _make_out(x.data * c, (x,))

    def backward(g):
        x.accumulate_grad(g * c)

    record_op(out, backward)
    return out


def scalar_add(x: Tensor, c: float) -> Tensor:
    out = _make_out(x.data + c, (x,))

    def backward(g):
        x.accumulate_grad(g)

    record_op(out, backward)
    return out


def abs_val(x: Tensor) -> Tensor:
    """|x| with the subgradient convention abs'(0) = 0."""
    out = _make_out(np.abs(x.data), (x,))
    sign = np.sign(x.data)  # 0 at exactly 0

    def backward(g):
        x.accumulate_grad(g * sign)

    record_op(out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = _make_out(np.maximum(x.data, 0.0), (x,))
    mask = x.data > 0.0  # relu'(0) = 0

    def backward(g):
        x.accumulate_grad(g * mask)

    record_op(out, backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = _make_out(s, (x,))

    def backward(g):
        x.accumulate_grad(g * s * (1.0 - s))

    record_op(out, backward)
    return out


def log(x: Tensor, eps: float = LOG_EPS) -> Tensor:
    """Natural log of x clamped into [eps, 1 - eps].

    The clamp keeps cross-entropy terms finite when probabilities saturate;
    gradient is zero where the clamp is active.
    """
    if not 0.0 < eps < 0.5:
        raise ParameterError(f"log eps must lie in (0, 0.5), got {eps}")
    clamped = np.clip(x.data, eps, 1.0 - eps)
    out = _make_out(np.log(clamped), (x,))
    inside = (x.data > eps) & (x.data < 1.0 - eps)

    def backward(g):
        x.accumulate_grad(g * inside / clamped)

    record_op(out, backward)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    out = _make_out(x.data.reshape(shape), (x,))

    def backward(g):
        x.accumulate_grad(g.reshape(x.data.shape))

    record_op(out, backward)
    return out


# ---------------------------------------------------------------------------
# channel-axis ops (axis -3 of a (..., C, H, W) tensor)
# ---------------------------------------------------------------------------


def _need_channel_axis(x: Tensor, op: str) -> None:
    if x.ndim < 3:
        raise ShapeError(f"{op} needs a (..., C, H, W) tensor, got shape {x.shape}")


def softmax_channel(x: Tensor) -> Tensor:
    """Per-pixel distribution over the channel axis, max-subtracted for stability."""
    _need_channel_axis(x, "softmax_channel")
    ax = x.ndim - 3
    m = np.max(x.data, axis=ax, keepdims=True)
    e = np.exp(x.data - m)
    s = e / np.sum(e, axis=ax, keepdims=True)
    out = _make_out(s, (x,))

    def backward(g):
        inner = np.sum(g * s, axis=ax, keepdims=True)
        x.accumulate_grad(s * (g - inner))

    record_op(out, backward)
    return out


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _need_channel_axis(x, "slice_channels")
    c = x.shape[-3]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for C={c}")
    out = _make_out(x.data[..., start:stop, :, :].copy(), (x,))

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[..., start:stop, :, :] += g

    record_op(out, backward)
    return out


def max_channels(x: Tensor) -> Tensor:
    """Per-pixel max over channels, keeping a singleton channel axis.

    Ties route the gradient to the lowest channel index.
    """
    _need_channel_axis(x, "max_channels")
    ax = x.ndim - 3
    idx = np.argmax(x.data, axis=ax)
    out_data = np.take_along_axis(x.data, np.expand_dims(idx, ax), axis=ax)
    out = _make_out(out_data, (x,))

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, ax), g, axis=ax)
        x.accumulate_grad(gx)

    record_op(out, backward)
    return out


# ---------------------------------------------------------------------------
# spatial ops (last two axes are H, W)
# ---------------------------------------------------------------------------


def _neighbor_deviation_sum(x: np.ndarray, r: int) -> np.ndarray:
    """sum_{q in clipped window} (x[q] - x[p]) for every p, via shifted slices.

    Computed from differences so a window of equal values yields exactly 0.0,
    which keeps constant regions free of fabricated spatial gradient.
    """
    dev = np.zeros_like(x)
    h, w = x.shape[-2:]
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if di == 0 and dj == 0:
                continue
            src_i = slice(max(di, 0), h + min(di, 0))
            dst_i = slice(max(-di, 0), h + min(-di, 0))
            src_j = slice(max(dj, 0), w + min(dj, 0))
            dst_j = slice(max(-dj, 0), w + min(-dj, 0))
            dev[..., dst_i, dst_j] += x[..., src_i, src_j] - x[..., dst_i, dst_j]
    return dev


def _shift_sum(y: np.ndarray, r: int) -> np.ndarray:
    """sum of y over the clipped (2r+1)^2 neighborhood of every position."""
    out = np.zeros_like(y)
    h, w = y.shape[-2:]
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            src_i = slice(max(di, 0), h + min(di, 0))
            dst_i = slice(max(-di, 0), h + min(-di, 0))
            src_j = slice(max(dj, 0), w + min(dj, 0))
            dst_j = slice(max(-dj, 0), w + min(-dj, 0))
            out[..., dst_i, dst_j] += y[..., src_i, src_j]
    return out


def _window_counts(h: int, w: int, r: int) -> np.ndarray:
    rows = np.minimum(np.arange(h) + r, h - 1) - np.maximum(np.arange(h) - r, 0) + 1
    cols = np.minimum(np.arange(w) + r, w - 1) - np.maximum(np.arange(w) - r, 0) + 1
    return rows[:, None].astype(np.float64) * cols[None, :]


def avg_pool_window(x: Tensor, window: int) -> Tensor:
    """Same-shape mean over the border-clipped window x window neighborhood.

    Border cells average only the cells that exist; no zero padding, so a
    constant map pools to itself exactly, borders included.
    """
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 1, got {window}")
    if x.ndim < 2:
        raise ShapeError(f"avg_pool_window needs at least 2 dims, got shape {x.shape}")
    r = window // 2
    if r == 0:
        return scalar_mul(x, 1.0)  # window 1 is the identity
    h, w = x.shape[-2:]
    counts = _window_counts(h, w, r)
    out = _make_out(x.data + _neighbor_deviation_sum(x.data, r) / counts, (x,))

    def backward(g):
        x.accumulate_grad(_shift_sum(g / counts, r))

    record_op(out, backward)
    return out


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Mean over the standard adaptive grid cells (floor/ceil boundaries)."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"adaptive pool output must be >= 1, got {out_h}x{out_w}")
    if x.ndim < 2:
        raise ShapeError(f"adaptive_avg_pool needs at least 2 dims, got shape {x.shape}")
    h, w = x.shape[-2:]
    rb = [(i * h // out_h, -(-(i + 1) * h // out_h)) for i in range(out_h)]
    cb = [(j * w // out_w, -(-(j + 1) * w // out_w)) for j in range(out_w)]
    data = np.empty(x.shape[:-2] + (out_h, out_w), dtype=np.float64)
    for i, (r0, r1) in enumerate(rb):
        for j, (c0, c1) in enumerate(cb):
            data[..., i, j] = x.data[..., r0:r1, c0:c1].mean(axis=(-2, -1))
    out = _make_out(data, (x,))

    def backward(g):
        gx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rb):
            for j, (c0, c1) in enumerate(cb):
                gx[..., r0:r1, c0:c1] += g[..., i : i + 1, j : j + 1] / ((r1 - r0) * (c1 - c0))
        x.accumulate_grad(gx)

    record_op(out, backward)
    return out


def _bilinear_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """align_corners=False source indices and interpolation weights."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    i0f = np.floor(src)
    t = src - i0f
    i0 = np.clip(i0f.astype(np.int64), 0, n_in - 1)
    i1 = np.clip(i0f.astype(np.int64) + 1, 0, n_in - 1)
    return i0, i1, t


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """align_corners=False bilinear interpolation over the last two axes."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"resize target must be >= 1, got {out_h}x{out_w}")
    if x.ndim < 2:
        raise ShapeError(f"bilinear_resize needs at least 2 dims, got shape {x.shape}")
    h, w = x.shape[-2:]
    if (out_h, out_w) == (h, w):
        return scalar_mul(x, 1.0)
    data, scatter = _bilinear_forward(x.data, out_h, out_w)
    out = _make_out(data, (x,))

    def backward(g):
        x.accumulate_grad(scatter(g))

    record_op(out, backward)
    return out


def _bilinear_forward(x: np.ndarray, out_h: int, out_w: int):
    h, w = x.shape[-2:]
    r0, r1, ty = _bilinear_coords(h, out_h)
    c0, c1, tx = _bilinear_coords(w, out_w)
    wy0, wy1 = (1.0 - ty)[:, None], ty[:, None]
    wx0, wx1 = (1.0 - tx)[None, :], tx[None, :]
    top = x[..., r0, :]
    bot = x[..., r1, :]
    out = (
        top[..., :, c0] * (wy0 * wx0)
        + top[..., :, c1] * (wy0 * wx1)
        + bot[..., :, c0] * (wy1 * wx0)
        + bot[..., :, c1] * (wy1 * wx1)
    )

    def scatter(g: np.ndarray) -> np.ndarray:
        gx = np.zeros(g.shape[:-2] + (h, w), dtype=np.float64)
        flat = gx.reshape(-1, h, w)
        gflat = g.reshape(-1, out_h, out_w)
        rows = [(r0, wy0), (r1, wy1)]
        cols = [(c0, wx0), (c1, wx1)]
        for rr, wy in rows:
            for cc, wx in cols:
                contrib = gflat * (wy * wx)
                ri = np.broadcast_to(rr[:, None], (out_h, out_w)).ravel()
                ci = np.broadcast_to(cc[None, :], (out_h, out_w)).ravel()
                np.add.at(flat, (slice(None), ri, ci), contrib.reshape(flat.shape[0], -1))
        return gx

    return out, scatter


def resize_array_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain-ndarray counterpart of :func:`bilinear_resize` (no tape)."""
    if x.shape[-2:] == (out_h, out_w):
        return x.copy()
    out, _ = _bilinear_forward(np.asarray(x, dtype=np.float64), out_h, out_w)
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with OIkk weights plus per-channel bias."""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be OIkk, got shape {weight.shape}")
    n, ci, h, w = x.shape
    co, ci_w, kh, kw = weight.shape
    if ci != ci_w:
        raise ShapeError(f"input has {ci} channels but weight expects {ci_w}")
    if bias.shape != (co,):
        raise ShapeError(f"bias must have shape ({co},), got {bias.shape}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"kernel {kh}x{kw} does not fit {h}x{w} input with padding {padding}"
        )
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, Ci, oh, ow, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, ci * kh * kw)
    wmat = weight.data.reshape(co, ci * kh * kw)
    out_mat = cols @ wmat.T + bias.data[None, :]
    out = _make_out(out_mat.reshape(n, oh, ow, co).transpose(0, 3, 1, 2), (x, weight, bias))

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, co)
        if bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=0))
        if weight.requires_grad:
            weight.accumulate_grad((gmat.T @ cols).reshape(weight.data.shape))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, oh, ow, ci, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            if padding:
                gxp = gxp[:, :, padding : padding + h, padding : padding + w]
            x.accumulate_grad(gxp)

    record_op(out, backward)
    return out
