"""Differentiable ops over Tensor.

The op set is deliberately small: elementwise arithmetic, dense/conv layers,
bilinear up/down sampling, channel softmax, reductions, and the structural
ops (concat/narrow/gather/segment_sum) needed to assemble pairwise object
features. Everything else in the project is composed from these.

Convolution runs channels-last internally so the inner loops are plain BLAS
matmuls; the public layout is [B, C, H, W].
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import (
    ContractError,
    DomainError,
    ShapeError,
    Tensor,
    UnsupportedOpError,
)


def _wrap(data, parents, backward) -> Tensor:
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _scalar(x) -> float | None:
    """Return x as a python float if it is scalar-like, else None."""
    if isinstance(x, (int, float)):
        return float(x)
    if isinstance(x, Tensor) and x.data.size == 1 and x.data.ndim == 0:
        return None  # scalar Tensor handled separately to keep it differentiable
    return None


# ---- elementwise arithmetic ---------------------------------------------------


def _binary(a, b, fwd, bwd_a, bwd_b):
    """Elementwise binary op; shapes must match unless one side is scalar."""
    a_t = a if isinstance(a, Tensor) else Tensor(a)
    b_t = b if isinstance(b, Tensor) else Tensor(b)
    if a_t.shape != b_t.shape and a_t.size != 1 and b_t.size != 1:
        raise ShapeError(f"shape mismatch {a_t.shape} vs {b_t.shape}")
    out_data = fwd(a_t.data, b_t.data)

    def backward(g):
        if a_t.requires_grad:
            ga = bwd_a(g, a_t.data, b_t.data)
            if ga.shape != a_t.data.shape:
                ga = ga.sum().reshape(a_t.data.shape)
            a_t._accumulate(ga)
        if b_t.requires_grad:
            gb = bwd_b(g, a_t.data, b_t.data)
            if gb.shape != b_t.data.shape:
                gb = gb.sum().reshape(b_t.data.shape)
            b_t._accumulate(gb)

    return _wrap(out_data, (a_t, b_t), backward)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def backward(g):
        x._accumulate(g * e, own=True)

    return _wrap(e, (x,), backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive input")
    out = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data, own=True)

    return _wrap(out, (x,), backward)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g):
        x._accumulate(2.0 * g * x.data, own=True)

    return _wrap(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g):
        x._accumulate(g * (x.data > 0.0), own=True)

    return _wrap(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        x._accumulate(g * out * (1.0 - out), own=True)

    return _wrap(out, (x,), backward)


# ---- reductions ----------------------------------------------------------------


def reduce_sum(x: Tensor) -> Tensor:
    out = np.array(x.data.sum())

    def backward(g):
        x._accumulate(np.broadcast_to(g, x.data.shape).copy(), own=True)

    return _wrap(out, (x,), backward)


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.array(x.data.sum() / n)

    def backward(g):
        x._accumulate(np.broadcast_to(g / n, x.data.shape).copy(), own=True)

    return _wrap(out, (x,), backward)


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(gg, x.data.shape).copy(), own=True)

    return _wrap(out, (x,), backward)


def softmax_over_channel(x: Tensor, axis: int = 1) -> Tensor:
    """Softmax along `axis`; output sums to 1 along that axis at every site."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        x._accumulate(s * (g - dot), own=True)

    return _wrap(s, (x,), backward)


# ---- dense / conv layers -------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b with x:[B,I], w:[I,O], b:[O]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("linear expects x:[B,I], w:[I,O], b:[O]")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"linear dims disagree: x{x.shape} w{w.shape} b{b.shape}")
    out = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _wrap(out, (x, w, b), backward)


def conv2d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Same-padded cross-correlation; kernels restricted to 1x1 and 3x3."""
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError("conv2d expects x:[B,C,H,W], k:[F,C,kh,kw]")
    B, C, H, W = x.shape
    F, Ck, kh, kw = k.shape
    if Ck != C or b.shape != (F,):
        raise ShapeError(f"conv2d channel mismatch: x{x.shape} k{k.shape} b{b.shape}")
    if kh != kw or kh not in (1, 3):
        raise UnsupportedOpError(f"conv2d supports 1x1 and 3x3 kernels, got {kh}x{kw}")

    xt = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))  # [B,H,W,C]
    slices: list[np.ndarray] = []
    if kh == 1:
        wmat = k.data[:, :, 0, 0].T  # [C,F]
        yt = (xt.reshape(-1, C) @ wmat).reshape(B, H, W, F)
    else:
        xp = np.zeros((B, H + 2, W + 2, C))
        xp[:, 1 : H + 1, 1 : W + 1, :] = xt
        yt = np.zeros((B, H, W, F))
        flat = yt.reshape(-1, F)
        for di in range(3):
            for dj in range(3):
                sl = np.ascontiguousarray(
                    xp[:, di : di + H, dj : dj + W, :]).reshape(-1, C)
                slices.append(sl)
                flat += sl @ k.data[:, :, di, dj].T
    yt += b.data
    out = yt.transpose(0, 3, 1, 2)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))  # [B,H,W,F]
        gflat = gt.reshape(-1, F)
        if b.requires_grad:
            b._accumulate(gflat.sum(axis=0))
        if kh == 1:
            if k.requires_grad:
                dk = (xt.reshape(-1, C).T @ gflat).T  # [F,C]
                k._accumulate(dk.reshape(F, C, 1, 1))
            if x.requires_grad:
                dxt = (gflat @ k.data[:, :, 0, 0]).reshape(B, H, W, C)
                x._accumulate(np.ascontiguousarray(dxt.transpose(0, 3, 1, 2)), own=True)
        else:
            if k.requires_grad:
                dk = np.empty_like(k.data)
                for idx in range(9):
                    dk[:, :, idx // 3, idx % 3] = gflat.T @ slices[idx]
                k._accumulate(dk)
            if x.requires_grad:
                dxp = np.zeros((B, H + 2, W + 2, C))
                for di in range(3):
                    for dj in range(3):
                        dxp[:, di : di + H, dj : dj + W, :] += (
                            gflat @ k.data[:, :, di, dj]
                        ).reshape(B, H, W, C)
                dxt = dxp[:, 1 : H + 1, 1 : W + 1, :]
                x._accumulate(np.ascontiguousarray(dxt.transpose(0, 3, 1, 2)), own=True)

    return _wrap(out, (x, k, b), backward)


@lru_cache(maxsize=32)
def _upsample_taps(n: int):
    """Gather indices/weights for aligned-corners bilinear 2x along one axis.

    Forward: out[o] = (1-w[o]) * x[i0[o]] + w[o] * x[i1[o]].
    Backward: dx[i] = sum_k back_w[i,k] * g[back_idx[i,k]] (transposed taps).
    """
    m = 2 * n
    if n == 1:
        i0 = np.zeros(m, dtype=np.intp)
        w = np.zeros(m)
    else:
        src = np.arange(m) * (n - 1) / (m - 1)
        i0 = np.minimum(np.floor(src).astype(np.intp), n - 2)
        w = src - i0
    i1 = np.minimum(i0 + 1, n - 1)
    dense = np.zeros((m, n))
    dense[np.arange(m), i0] += 1.0 - w
    dense[np.arange(m), i1] += w
    k_max = int((dense.T != 0).sum(axis=1).max())
    back_idx = np.zeros((n, k_max), dtype=np.intp)
    back_w = np.zeros((n, k_max))
    for i in range(n):
        nz = np.nonzero(dense[:, i])[0]
        back_idx[i, : len(nz)] = nz
        back_w[i, : len(nz)] = dense[nz, i]
    return i0, i1, w, back_idx, back_w


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling of [B,C,H,W], corners aligned to input corners."""
    if x.data.ndim != 4:
        raise ShapeError("upsample2x expects [B,C,H,W]")
    _, _, H, W = x.shape
    hi0, hi1, hw, hbi, hbw = _upsample_taps(H)
    wi0, wi1, ww, wbi, wbw = _upsample_taps(W)
    rows = x.data[:, :, hi0, :] * (1.0 - hw)[None, None, :, None] \
        + x.data[:, :, hi1, :] * hw[None, None, :, None]
    out = rows[:, :, :, wi0] * (1.0 - ww) + rows[:, :, :, wi1] * ww

    def backward(g):
        gh = np.zeros(rows.shape)
        for k in range(wbi.shape[1]):
            gh += g[:, :, :, wbi[:, k]] * wbw[:, k]
        dx = np.zeros(x.data.shape)
        for k in range(hbi.shape[1]):
            dx += gh[:, :, hbi[:, k], :] * hbw[:, k][None, None, :, None]
        x._accumulate(dx, own=True)

    return _wrap(out, (x,), backward)


def avgpool2x(x: Tensor) -> Tensor:
    """2x2 average pooling of [B,C,H,W]; H and W must be even."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avgpool2x needs even spatial dims, got {H}x{W}")
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def backward(g):
        gg = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        x._accumulate(gg, own=True)

    return _wrap(out, (x,), backward)


# ---- structural ops ------------------------------------------------------------


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of empty list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _wrap(out, tuple(tensors), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow [{start}, {start + length}) out of range on axis {axis}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = x.data[idx].copy()

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[idx] = g
        x._accumulate(buf)

    return _wrap(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.data.shape).copy(), own=True)

    return _wrap(out, (x,), backward)


def broadcast_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Tile [B,L] features to [B,L,h,w]; gradients sum over the grid."""
    if x.data.ndim != 2:
        raise ShapeError("broadcast_spatial expects [B,L]")
    out = np.broadcast_to(x.data[:, :, None, None], (*x.shape, h, w)).copy()

    def backward(g):
        x._accumulate(g.sum(axis=(2, 3)), own=True)

    return _wrap(out, (x,), backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a [N, ...] tensor; repeated indices allowed."""
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def backward(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, index, g)
        x._accumulate(buf)

    return _wrap(out, (x,), backward)


def segment_sum(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of [N, C] into [num_segments, C] buckets."""
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, segment_ids, x.data)

    def backward(g):
        x._accumulate(g[segment_ids])

    return _wrap(out, (x,), backward)
