"""Forward/backward kernels.

Activations are numpy arrays laid out (batch N, channels F, length d).
Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
consumes the cache and an upstream gradient.
"""

from __future__ import annotations

import numpy as np

from bwex.errors import DomainError, ShapeError, UsageError

BN_EPS = 1e-5


def _check_rank3(x: np.ndarray, what: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{what} must be (batch, channels, length), got shape {x.shape}")


# --- convolution -------------------------------------------------------------

def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """Cross-correlation with (k-1)/2 zeros of padding on each side.

    Output length is ``ceil(d / stride)``. The batch is folded into the
    length axis so each kernel tap is a single GEMM; for stride 2 the padded
    input is split into its two polyphase components first.
    """
    _check_rank3(x, "conv1d input")
    n, c_in, d = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv1d channel axis mismatch: input has {c_in}, weights expect {c_in_w}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv1d bias axis mismatch: expected ({c_out},), got {b.shape}")
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel length must be odd, got {k}")
    if stride not in (1, 2):
        raise DomainError(f"conv1d stride must be 1 or 2, got {stride}")

    pad = (k - 1) // 2
    total = d + 2 * pad
    extra = (-total) % stride
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad + extra)))
    lp = (total + extra) // stride
    l_out = -(-d // stride)
    span = (n - 1) * lp + l_out
    phases = [
        np.ascontiguousarray(xp[:, :, p::stride].transpose(1, 0, 2)).reshape(c_in, n * lp)
        for p in range(stride)
    ]
    taps = np.ascontiguousarray(w.transpose(2, 0, 1))
    acc = np.zeros((c_out, n * lp), dtype=np.result_type(x, w))
    if c_in * k <= 256:
        # few input channels: one GEMM over stacked taps beats k rank-c_in products
        cols = np.stack([phases[j % stride][:, j // stride:j // stride + span] for j in range(k)])
        acc[:, :span] = taps.transpose(1, 0, 2).reshape(c_out, k * c_in) @ cols.reshape(k * c_in, span)
    else:
        for j in range(k):
            off = j // stride
            acc[:, :span] += taps[j] @ phases[j % stride][:, off:off + span]
    out = acc.reshape(c_out, n, lp)[:, :, :l_out].transpose(1, 0, 2) + b[None, :, None]
    geom = (n, c_in, d, pad, stride, lp, l_out, span)
    return np.ascontiguousarray(out), (phases, w, geom)


def conv1d_backward(grad_out: np.ndarray, cache):
    """Returns ``(dx, dw, db)``."""
    if cache is None:
        raise UsageError("conv1d_backward called without a forward cache")
    phases, w, (n, c_in, d, pad, stride, lp, l_out, span) = cache
    c_out, _, k = w.shape
    if grad_out.shape != (n, c_out, l_out):
        raise ShapeError(f"conv1d upstream gradient shape {grad_out.shape} != output shape {(n, c_out, l_out)}")

    db = grad_out.sum(axis=(0, 2))
    gfull = np.zeros((c_out, n, lp), dtype=grad_out.dtype)
    gfull[:, :, :l_out] = grad_out.transpose(1, 0, 2)
    g = gfull.reshape(c_out, n * lp)[:, :span]
    taps_t = np.ascontiguousarray(w.transpose(2, 1, 0))
    dw = np.empty((k, c_out, c_in), dtype=w.dtype)
    dphases = [np.zeros_like(p) for p in phases]
    for j in range(k):
        p = j % stride
        off = j // stride
        dw[j] = g @ phases[p][:, off:off + span].T
        dphases[p][:, off:off + span] += taps_t[j] @ g

    dxp = np.empty((n, c_in, lp, stride), dtype=dphases[0].dtype)
    for p in range(stride):
        dxp[:, :, :, p] = dphases[p].reshape(c_in, n, lp).transpose(1, 0, 2)
    dx = dxp.reshape(n, c_in, lp * stride)[:, :, pad:pad + d]
    return np.ascontiguousarray(dx), dw.transpose(1, 2, 0).copy(), db


# --- batch normalization -----------------------------------------------------

def batchnorm_forward(x, gamma, beta, mode: str = "train", running_mean=None, running_var=None, eps=BN_EPS):
    """Per-channel normalization over batch and length.

    ``mode='train'`` uses batch statistics (also returned via the cache so
    callers can update running averages); ``'infer'`` uses the given running
    statistics.
    """
    _check_rank3(x, "batchnorm input")
    if mode == "train":
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
    elif mode == "infer":
        if running_mean is None or running_var is None:
            raise UsageError("batchnorm inference requires running statistics; run a training step first")
        mean, var = running_mean, running_var
    else:
        raise DomainError(f"batchnorm mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, (mode, xhat, inv_std, gamma, mean, var)


def batchnorm_backward(grad_out, cache):
    """Returns ``(dx, dgamma, dbeta)``; exact in both modes."""
    if cache is None:
        raise UsageError("batchnorm_backward called without a forward cache")
    mode, xhat, inv_std, gamma, _, _ = cache
    dgamma = (grad_out * xhat).sum(axis=(0, 2))
    dbeta = grad_out.sum(axis=(0, 2))
    dxhat = grad_out * gamma[None, :, None]
    if mode == "infer":
        return dxhat * inv_std[None, :, None], dgamma, dbeta
    m = grad_out.shape[0] * grad_out.shape[2]
    s1 = dxhat.sum(axis=(0, 2))[None, :, None]
    s2 = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
    dx = (inv_std[None, :, None] / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


# --- pointwise / structural --------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(grad_out, mask):
    # subgradient at exactly 0 is 0
    return np.where(mask, grad_out, 0).astype(grad_out.dtype, copy=False)


def subpixel_shuffle_1d(x: np.ndarray) -> np.ndarray:
    """(N, F, d) -> (N, F/2, 2d) with ``out[n, c, 2t + j] = x[n, 2c + j, t]``."""
    _check_rank3(x, "subpixel input")
    n, f, d = x.shape
    if f % 2:
        raise ShapeError(f"subpixel shuffle needs an even channel count, got {f}")
    return x.reshape(n, f // 2, 2, d).transpose(0, 1, 3, 2).reshape(n, f // 2, 2 * d)


def subpixel_unshuffle_1d(y: np.ndarray) -> np.ndarray:
    """Inverse permutation of :func:`subpixel_shuffle_1d` (and its backward pass)."""
    _check_rank3(y, "subpixel output")
    n, f, d2 = y.shape
    if d2 % 2:
        raise ShapeError(f"subpixel unshuffle needs an even length, got {d2}")
    return y.reshape(n, f, d2 // 2, 2).transpose(0, 1, 3, 2).reshape(n, 2 * f, d2 // 2)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_rank3(a, "concat operand")
    _check_rank3(b, "concat operand")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat batch axis mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[2] != b.shape[2]:
        raise ShapeError(f"concat length axis mismatch: {a.shape[2]} vs {b.shape[2]}")
    return np.concatenate([a, b], axis=1)


def split_channels(g: np.ndarray, channels_a: int) -> tuple[np.ndarray, np.ndarray]:
    return g[:, :channels_a], g[:, channels_a:]


# --- dense -------------------------------------------------------------------

def linear_forward(x, w, b):
    """``x @ w + b`` for x of shape (N, in) and w of shape (in, out)."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear feature axis mismatch: input {x.shape}, weights {w.shape}")
    return x @ w + b, (x, w)


def linear_backward(grad_out, cache):
    if cache is None:
        raise UsageError("linear_backward called without a forward cache")
    x, w = cache
    return grad_out @ w.T, x.T @ grad_out, grad_out.sum(axis=0)


# --- loss --------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray, mode: str = "mean_sq"):
    """Returns ``(loss, dloss/dpred)``.

    ``mean_sq`` is the elementwise mean of squared residuals (training loss).
    ``paper_eq1`` is ``(1/n) * sqrt(sum_i ||y_i - f(x_i)||^2)`` with ``n`` the
    batch size, kept for reporting.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    if mode == "mean_sq":
        loss = float(np.mean(diff.astype(np.float64) ** 2))
        return loss, (2.0 / diff.size) * diff
    if mode == "paper_eq1":
        n = pred.shape[0]
        total = float(np.sum(diff.astype(np.float64) ** 2))
        root = np.sqrt(total)
        grad = diff / (n * root) if root > 0 else np.zeros_like(diff)
        return root / n, grad
    raise DomainError(f"unknown loss mode {mode!r}")
