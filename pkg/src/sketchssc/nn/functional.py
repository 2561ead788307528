"""Differentiable convolution, normalization and loss kernels.

Convolutions are written once for any number of spatial dimensions and
exposed as :func:`conv2d`, :func:`conv3d` and :func:`deconv3d`. Tensors are
channel-first: ``(N, C, *spatial)``. Weights follow the usual layouts,
``(C_out, C_in, *kernel)`` for convolution and ``(C_in, C_out, *kernel)`` for
transposed convolution.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, as_tensor, make_result, unbroadcast

IGNORE_INDEX = 255


def _ntuple(value, n):
    if isinstance(value, (tuple, list)):
        if len(value) != n:
            raise ValueError(f"expected {n} values, got {value!r}")
        return tuple(int(v) for v in value)
    return (int(value),) * n


def _windows(xp, ksize, stride, dilation):
    """Strided view ``(N, C, *out, *ksize)`` of a padded input."""
    spatial = xp.shape[2:]
    out = tuple((s - d * (k - 1) - 1) // st + 1
                for s, k, st, d in zip(spatial, ksize, stride, dilation))
    if min(out) <= 0:
        raise ValueError(f"convolution output would be empty: input {spatial}, kernel {ksize}")
    st = xp.strides
    shape = xp.shape[:2] + out + tuple(ksize)
    strides = (st[:2]
               + tuple(st[2 + i] * stride[i] for i in range(len(out)))
               + tuple(st[2 + i] * dilation[i] for i in range(len(out))))
    return as_strided(xp, shape, strides, writeable=False), out


def _im2col(xp, ksize, stride, dilation):
    """Contiguous columns ``(N, C * prod(ksize), prod(out))`` and the output dims."""
    win, out = _windows(xp, ksize, stride, dilation)
    nd = len(ksize)
    order = (0, 1) + tuple(range(2 + nd, 2 + 2 * nd)) + tuple(range(2, 2 + nd))
    cols = np.ascontiguousarray(win.transpose(order))
    return cols.reshape(xp.shape[0], -1, int(np.prod(out))), out


def _correlate(xp, w, stride, dilation, cols=None):
    """Cross-correlation of a padded input; returns ``(y, cols)``."""
    if cols is None:
        cols, out = _im2col(xp, w.shape[2:], stride, dilation)
    else:
        cols, out = cols
    y = np.matmul(w.reshape(w.shape[0], -1), cols)
    return y.reshape((xp.shape[0], w.shape[0]) + out), (cols, out)


def _weight_grad(gy, cols, w_shape):
    g = gy.reshape(gy.shape[0], gy.shape[1], -1)
    return np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w_shape)


def _scatter(gy, w, out_shape, stride, dilation):
    """Adjoint of :func:`_correlate` with respect to its input.

    ``w`` has the contracted channel on axis 0 and the produced channel on
    axis 1.
    """
    nd = w.ndim - 2
    ksize = w.shape[2:]
    o = gy.shape[2:]
    n = gy.shape[0]
    cols = np.matmul(w.reshape(w.shape[0], -1).T, gy.reshape(n, gy.shape[1], -1))
    cols = cols.reshape((n, w.shape[1]) + ksize + o)
    gx = np.zeros(out_shape)
    for idx in np.ndindex(*ksize):
        sl = tuple(slice(i * d, i * d + st * (m - 1) + 1, st)
                   for i, d, st, m in zip(idx, dilation, stride, o))
        gx[(slice(None), slice(None)) + sl] += cols[(slice(None), slice(None)) + idx]
    return gx


def _check_input(x, w, channel_axis):
    if x.ndim != w.ndim:
        raise ValueError(f"input rank {x.ndim} does not match weight rank {w.ndim}")
    if x.shape[1] != w.shape[channel_axis]:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {w.shape[channel_axis]}")


def conv(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """N-d cross-correlation with zero padding."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_input(x, weight, 1)
    nd = weight.ndim - 2
    stride, padding, dilation = (_ntuple(v, nd) for v in (stride, padding, dilation))
    pad = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pad) if any(padding) else x.data
    y, cols = _correlate(xp, weight.data, stride, dilation)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data.reshape((1, -1) + (1,) * nd)
        parents.append(bias)

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gxp = _scatter(g, weight.data, xp.shape, stride, dilation)
            crop = (slice(None), slice(None)) + tuple(
                slice(p, p + s) for p, s in zip(padding, x.shape[2:]))
            gx = gxp[crop]
        if weight.requires_grad:
            gw = _weight_grad(g, cols[0], weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, 2 + nd))))
        return grads

    return make_result(y, parents, backward)


def conv3d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    if as_tensor(weight).ndim != 5:
        raise ValueError("conv3d expects a 5-d weight (C_out, C_in, kd, kh, kw)")
    return conv(x, weight, bias, stride, padding, dilation)


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    if as_tensor(weight).ndim != 4:
        raise ValueError("conv2d expects a 4-d weight (C_out, C_in, kh, kw)")
    return conv(x, weight, bias, stride, padding, dilation)


def deconv_geometry(kernel, rate):
    """Padding and output padding making a transposed conv scale dims by ``rate``."""
    if kernel < rate:
        raise ValueError(f"kernel {kernel} smaller than upsample rate {rate}")
    padding = (kernel - rate + 1) // 2
    return padding, rate - kernel + 2 * padding


def deconv(x, weight, bias=None, stride=1, padding=0, output_padding=0, dilation=1):
    """N-d transposed convolution, the adjoint of :func:`conv` in ``x``."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_input(x, weight, 0)
    nd = weight.ndim - 2
    stride, padding, output_padding, dilation = (
        _ntuple(v, nd) for v in (stride, padding, output_padding, dilation))
    ksize = weight.shape[2:]
    in_sp = x.shape[2:]
    full = tuple((s - 1) * st + d * (k - 1) + 1
                 for s, st, d, k in zip(in_sp, stride, dilation, ksize))
    target = tuple(f - 2 * p + op for f, p, op in zip(full, padding, output_padding))
    if min(target) <= 0:
        raise ValueError(f"transposed convolution output would be empty: {target}")
    buf_sp = tuple(max(f, p + t) for f, p, t in zip(full, padding, target))
    n, cout = x.shape[0], weight.shape[1]
    buf = _scatter(x.data, weight.data, (n, cout) + buf_sp, stride, dilation)
    crop = (slice(None), slice(None)) + tuple(slice(p, p + t) for p, t in zip(padding, target))
    y = buf[crop]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data.reshape((1, -1) + (1,) * nd)
        parents.append(bias)

    def backward(g):
        gbuf = np.zeros((n, cout) + buf_sp)
        gbuf[crop] = g
        gbuf = gbuf[(slice(None), slice(None)) + tuple(slice(0, f) for f in full)]
        gx = gw = None
        cols = _im2col(gbuf, ksize, stride, dilation)
        if x.requires_grad:
            gx, _ = _correlate(gbuf, weight.data, stride, dilation, cols)
        if weight.requires_grad:
            gw = _weight_grad(x.data, cols[0], weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, 2 + nd))))
        return grads

    return make_result(y, parents, backward)


def deconv3d(x, weight, bias=None, kernel=None, upsample_rate=2):
    """Transposed 3D convolution multiplying every spatial dim by ``upsample_rate``."""
    weight = as_tensor(weight)
    if weight.ndim != 5:
        raise ValueError("deconv3d expects a 5-d weight (C_in, C_out, kd, kh, kw)")
    k = weight.shape[2] if kernel is None else int(kernel)
    if weight.shape[2:] != (k, k, k):
        raise ValueError(f"weight kernel {weight.shape[2:]} does not match kernel={k}")
    padding, output_padding = deconv_geometry(k, upsample_rate)
    return deconv(x, weight, bias, upsample_rate, padding, output_padding)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with weight of shape ``(out, in)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight width {weight.shape[1]}")
    wt = make_result(weight.data.T, (weight,), lambda g: (g.T,))
    y = x @ wt
    return y if bias is None else y + bias


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    In training mode the batch statistics normalize ``x`` and the running
    buffers (numpy arrays, updated in place) move by ``momentum``. In eval
    mode the running statistics are used, making this an affine map.
    """
    x = as_tensor(x)
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        mu = x.mean(axis=axes, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        count = x.size // x.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(-1)
        unbiased = var.data.reshape(-1) * count / max(count - 1, 1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        xhat = xc * (var + eps) ** -0.5
    else:
        xhat = (x - running_mean.reshape(shape)) * (1.0 / np.sqrt(running_var + eps)).reshape(shape)
    return xhat * gamma.reshape(shape) + beta.reshape(shape)


def log_softmax(logits, axis=1):
    logits = as_tensor(logits)
    z = logits.data
    m = z.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return make_result(out, (logits,),
                       lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax_cross_entropy(logits, targets, ignore_label=IGNORE_INDEX, class_weights=None):
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``.

    ``logits`` is ``(N, K, *spatial)`` and ``targets`` is ``(N, *spatial)``.
    Positions equal to ``ignore_label`` contribute nothing; if every position
    is ignored the loss is 0 with a zero gradient. Optional per-class weights
    turn the mean into a weighted mean.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    k = logits.shape[1]
    if targets.shape != logits.shape[:1] + logits.shape[2:]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    valid = targets != ignore_label
    bad = valid & ((targets < 0) | (targets >= k))
    if bad.any():
        raise ValueError(f"target label {int(targets[bad][0])} outside [0, {k})")
    t = np.where(valid, targets, 0).astype(np.intp)

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(s)
    nll = -np.take_along_axis(logp, t[:, None], axis=1)[:, 0]
    w = valid.astype(np.float64)
    if class_weights is not None:
        w = w * np.asarray(class_weights, dtype=np.float64)[t]
    denom = w.sum()
    loss = float((nll * w).sum() / denom) if denom > 0 else 0.0

    def backward(g):
        if denom <= 0:
            return (np.zeros_like(z),)
        grad = e / s
        np.put_along_axis(grad, t[:, None],
                          np.take_along_axis(grad, t[:, None], axis=1) - 1.0, axis=1)
        return (grad * (g * w / denom)[:, None],)

    return make_result(np.array(loss), (logits,), backward)


def global_avg_pool(x):
    """Mean over all spatial axes: ``(N, C, *spatial) -> (N, C)``."""
    x = as_tensor(x)
    return x.mean(axis=tuple(range(2, x.ndim)))


__all__ = [
    "IGNORE_INDEX", "Tensor", "batch_norm", "conv", "conv2d", "conv3d", "deconv",
    "deconv3d", "deconv_geometry", "global_avg_pool", "linear", "log_softmax",
    "softmax_cross_entropy", "unbroadcast",
]
