"""Forward ops and their exact reverse-mode gradients.

Everything is float32; loss reductions accumulate in float64 before
casting back. Convolutions keep one graph contract but dispatch their
inner kernels: a cache-blocked torch CPU kernel when torch is importable
(this box is memory-bandwidth starved and materialized im2col cannot keep
BLAS fed), or a batched im2col + BLAS matmul fallback in pure numpy. Both
paths share the padding semantics and are cross-checked in the test suite.
Set ZDCFAST_CONV_BACKEND=numpy|torch to force one.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ShapeError, ValidationError
from .tensor import Tensor, make_node

BCE_EPS = 1e-7
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

_CONV_BACKEND: str | None = None


def conv_backend() -> str:
    """Resolve the convolution kernel backend once per process."""
    global _CONV_BACKEND
    if _CONV_BACKEND is None:
        choice = os.environ.get("ZDCFAST_CONV_BACKEND", "auto")
        if choice == "numpy":
            _CONV_BACKEND = "numpy"
        elif choice in ("auto", "torch"):
            try:
                import torch  # noqa: F401
                _CONV_BACKEND = "torch"
            except ImportError:
                if choice == "torch":
                    raise ValidationError("ZDCFAST_CONV_BACKEND=torch but torch is not importable")
                _CONV_BACKEND = "numpy"
        else:
            raise ValidationError(f"unknown conv backend {choice!r}")
    return _CONV_BACKEND


def set_conv_backend(name: str | None):
    """Override the backend (tests); None re-resolves from the environment."""
    global _CONV_BACKEND
    if name not in (None, "numpy", "torch"):
        raise ValidationError(f"unknown conv backend {name!r}")
    _CONV_BACKEND = name


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x:[B,I], w:[I,O], b:[O]."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"dense: expected 2D x, 2D w, 1D b, got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"dense: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0, dtype=np.float64).astype(np.float32))

    return make_node(x.data @ w.data + b.data, (x, w, b), backward)


def _conv_out_size(n: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-n // stride)
    return (n - k) // stride + 1


def _same_pad(n: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    lo = total // 2
    return lo, total - lo


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patches of padded input as a (B, C*kh*kw, ho*wo) float32 array.

    Filled offset by offset so every copy moves contiguous W-runs instead
    of a scattered 6D gather.
    """
    bsz, c = xp.shape[0], xp.shape[1]
    cols = np.empty((bsz, c, kh, kw, ho, wo), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(bsz, c * kh * kw, ho * wo)


def conv2d(x: Tensor, k: Tensor, b: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """2D cross-correlation: x:[B,C,H,W], k:[F,C,kh,kw], b:[F] -> [B,F,H',W'].

    "same" pads with zeros to H' = ceil(H/stride), extra pixel on the
    bottom/right when the deficit is odd; "valid" uses no padding.
    """
    if x.ndim != 4 or k.ndim != 4 or b.ndim != 1:
        raise ShapeError(f"conv2d: expected 4D x, 4D k, 1D b, got {x.shape}, {k.shape}, {b.shape}")
    bsz, c, h, w = x.shape
    f, ck, kh, kw = k.shape
    if ck != c or b.shape[0] != f:
        raise ShapeError(f"conv2d: channel mismatch x{x.shape} k{k.shape} b{b.shape}")
    if padding not in ("same", "valid"):
        raise ShapeError(f"conv2d: unknown padding {padding!r}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")

    if padding == "same":
        pt, _pb = _same_pad(h, kh, stride)
        pl, _pr = _same_pad(w, kw, stride)
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, _pb), (pl, _pr)))
    else:
        pt = pl = 0
        xp = x.data
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0 or kh > xp.shape[2] or kw > xp.shape[3]:
        raise ShapeError(f"conv2d: empty output for input {x.shape}, kernel {k.shape}, stride {stride}")

    if conv_backend() == "torch":
        out_data, backward = _conv2d_torch(x, k, b, xp, stride, (pt, pl, h, w))
    else:
        out_data, backward = _conv2d_numpy(x, k, b, xp, stride, (pt, pl, h, w), ho, wo)
    return make_node(out_data, (x, k, b), backward)


def _conv2d_numpy(x, k, b, xp, stride, crop, ho, wo):
    bsz, c = xp.shape[0], xp.shape[1]
    f, _, kh, kw = k.shape
    pt, pl, h, w = crop
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    kmat = k.data.reshape(f, -1)
    out_data = (np.matmul(kmat, cols) + b.data[None, :, None]).reshape(bsz, f, ho, wo)

    def backward(g):
        g3 = g.reshape(bsz, f, ho * wo)
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32))
        if k.requires_grad:
            gk = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0, dtype=np.float64)
            k._accumulate(gk.astype(np.float32).reshape(k.shape))
        if x.requires_grad:
            gcols = np.matmul(kmat.T, g3).reshape(bsz, c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=np.float32)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            x._accumulate(gxp[:, :, pt:pt + h, pl:pl + w])

    return out_data, backward


def _conv2d_torch(x, k, b, xp, stride, crop):
    import torch

    pt, pl, h, w = crop
    with torch.no_grad():
        out = torch.nn.functional.conv2d(torch.from_numpy(xp), torch.from_numpy(k.data),
                                         torch.from_numpy(b.data), stride=stride)
    out_data = out.numpy()

    def backward(g):
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32))
        need_x, need_k = x.requires_grad, k.requires_grad
        if not (need_x or need_k):
            return
        tg = torch.from_numpy(np.ascontiguousarray(g))
        with torch.no_grad():
            # One fused kernel for both input and weight gradients.
            gx_t, gk_t, _ = torch.ops.aten.convolution_backward(
                tg, torch.from_numpy(xp), torch.from_numpy(k.data), None,
                [stride, stride], [0, 0], [1, 1], False, [0, 0], 1,
                [need_x, need_k, False])
        if need_k:
            k._accumulate(gk_t.numpy())
        if need_x:
            x._accumulate(gx_t.numpy()[:, :, pt:pt + h, pl:pl + w])

    return out_data, backward


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate each pixel into a 2x2 block: [B,C,H,W] -> [B,C,2H,2W]."""
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest2x: expected 4D input, got {x.shape}")
    bsz, c, h, w = x.shape
    out_data = np.empty((bsz, c, 2 * h, 2 * w), dtype=np.float32)
    for a in (0, 1):
        for bb in (0, 1):
            out_data[:, :, a::2, bb::2] = x.data

    def backward(g):
        x._accumulate(g.reshape(bsz, c, h, 2, w, 2).sum(axis=(3, 5)))

    return make_node(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.where(x.data >= 0, g, np.float32(0.0)))

    return make_node(np.maximum(x.data, 0), (x,), backward)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    a32 = np.float32(alpha)
    # For 0 < alpha < 1, max(x, alpha*x) is exactly the leaky ramp.
    out_data = np.maximum(x.data, x.data * a32)

    def backward(g):
        x._accumulate(np.where(x.data >= 0, g, g * a32))

    return make_node(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(np.float32)

    def backward(g):
        x._accumulate(g * out_data * (1.0 - out_data))

    return make_node(out_data, (x,), backward)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: np.ndarray, running_var: np.ndarray,
              train: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization on [B,C,H,W].

    Train mode normalizes by batch statistics and updates the running
    arrays in place; infer mode normalizes by the running statistics.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm: expected 4D input, got {x.shape}")
    bsz, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({c},)")
    n = bsz * h * w

    if train:
        if n < 2:
            raise ShapeError(f"batchnorm: need at least 2 values per channel, got {n}")
        mean = x.data.sum(axis=(0, 2, 3), dtype=np.float64) / n
        centered = x.data - mean.astype(np.float32)[None, :, None, None]
        var = np.einsum("bchw,bchw->c", centered, centered,
                        dtype=np.float64, casting="same_kind") / n
        running_mean *= momentum
        running_mean += ((1.0 - momentum) * mean).astype(np.float32)
        running_var *= momentum
        running_var += ((1.0 - momentum) * var).astype(np.float32)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
        centered = x.data - mean.astype(np.float32)[None, :, None, None]

    inv = (1.0 / np.sqrt(var + eps)).astype(np.float32)[None, :, None, None]
    xhat = centered
    xhat *= inv
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32))
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if train:
                s1 = gxhat.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
                gx = (inv / n) * (n * gxhat - s1[None, :, None, None]
                                  - xhat * s2[None, :, None, None])
                x._accumulate(gx)
            else:
                x._accumulate(gxhat * inv)

    return make_node(out_data, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element with probability p and rescale survivors (train only)."""
    if not (0.0 <= p < 1.0):
        raise ValidationError(f"dropout: p must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValidationError("dropout: train mode requires a random generator")
    mask = (rng.random(x.shape, dtype=np.float32) >= p).astype(np.float32)
    mask *= np.float32(1.0 / (1.0 - p))

    def backward(g):
        x._accumulate(g * mask)

    return make_node(x.data * mask, (x,), backward)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate [B,N] and [B,M] along features."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat: need matching batch dims, got {a.shape} and {b.shape}")
    n = a.shape[1]

    def backward(g):
        a._accumulate(g[:, :n])
        b._accumulate(g[:, n:])

    return make_node(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return make_node(x.data.reshape(shape), (x,), backward)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], int(x.size // x.shape[0])))


def _as_const_array(t, like_shape, op: str) -> np.ndarray:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float32)
    if arr.shape != like_shape:
        raise ShapeError(f"{op}: target shape {arr.shape} does not match {like_shape}")
    return arr


def bce(pred: Tensor, target) -> Tensor:
    """Binary cross-entropy, mean over elements; pred clamped to [1e-7, 1-1e-7]."""
    t = _as_const_array(target, pred.shape, "bce")
    if not np.all(np.isfinite(pred.data)):
        raise ValidationError("bce: non-finite predictions")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = -np.mean(t * np.log(p, dtype=np.float64) + (1.0 - t) * np.log1p(-p.astype(np.float64)))
    in_range = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)

    def backward(g):
        gp = -(t / p - (1.0 - t) / (1.0 - p)) / n
        pred._accumulate((g * gp * in_range).astype(np.float32))

    return make_node(np.float32(loss), (pred,), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements; target may be a constant array."""
    t = _as_const_array(target, pred.shape, "mse")
    if not np.all(np.isfinite(pred.data)):
        raise ValidationError("mse: non-finite predictions")
    diff = pred.data - t
    n = diff.size
    loss = np.mean(diff.astype(np.float64) ** 2)

    def backward(g):
        pred._accumulate(g * (2.0 / n) * diff)

    return make_node(np.float32(loss), (pred,), backward)


def kl_diag_gauss(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag exp(logvar)) || N(0, I)), summed over dims, mean over batch."""
    if mu.shape != logvar.shape or mu.ndim != 2:
        raise ShapeError(f"kl_diag_gauss: expected matching [B,D], got {mu.shape}, {logvar.shape}")
    if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(logvar.data))):
        raise ValidationError("kl_diag_gauss: non-finite inputs")
    bsz = mu.shape[0]
    ev = np.exp(logvar.data.astype(np.float64))
    loss = 0.5 * np.sum(ev + mu.data.astype(np.float64) ** 2 - 1.0 - logvar.data) / bsz

    def backward(g):
        mu._accumulate(g * mu.data / bsz)
        logvar._accumulate(g * 0.5 * (ev.astype(np.float32) - 1.0) / bsz)

    return make_node(np.float32(loss), (mu, logvar), backward)
