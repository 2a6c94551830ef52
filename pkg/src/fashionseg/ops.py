"""Differentiable primitive operations on N x C x H x W tensors.

Convolution uses the cross-correlation convention (no kernel flip) with
zero padding; pooling records argmax indices for SegNet-style unpooling.
All kernels are plain numpy and run identically in float32 and float64.
"""

import numpy as np

from .errors import ShapeError, ValueRangeError
from .tensor import Tensor


# ---------------------------------------------------------------------------
# im2col machinery shared by conv2d and conv_transpose2d


def _im2col(x, k, stride, pad, h_out, w_out):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, h_out, w_out), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
    return cols.reshape(n, c * k * k, h_out * w_out)


def _col2im(cols, x_shape, k, stride, pad, h_out, w_out):
    n, c, h, w = x_shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, k, k, h_out, w_out)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += cols6[:, :, i, j]
    if pad:
        return xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def _conv_out_extent(extent, k, stride, pad):
    out = (extent + 2 * pad - k) // stride + 1
    if out < 1:
        raise ShapeError(
            "conv output extent %d <= 0 (extent=%d k=%d stride=%d pad=%d)"
            % (out, extent, k, stride, pad))
    return out


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2-D cross-correlation with zero padding.

    x: N x C_in x H x W, weight: C_out x C_in x k x k, bias: C_out or None
    (convolutions followed by batchnorm omit the bias; BN's shift makes it
    inert).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weight, got %s / %s"
                         % (x.shape, weight.shape))
    n, c_in, h, w = x.shape
    c_out, wc_in, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError("conv2d kernels must be square, got %dx%d" % (kh, kw))
    k = kh
    if wc_in != c_in:
        raise ShapeError("conv2d channel mismatch: input has %d, weight expects %d"
                         % (c_in, wc_in))
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError("conv2d bias shape %s != (%d,)" % (bias.shape, c_out))
    if stride < 1:
        raise ValueRangeError("conv2d stride must be positive, got %d" % stride)
    if pad < 0:
        raise ValueRangeError("conv2d pad must be non-negative, got %d" % pad)
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ShapeError("conv2d kernel %d exceeds padded input %dx%d"
                         % (k, h + 2 * pad, w + 2 * pad))
    h_out = _conv_out_extent(h, k, stride, pad)
    w_out = _conv_out_extent(w, k, stride, pad)

    cols = _im2col(x.data, k, stride, pad, h_out, w_out)          # (N, Ckk, L)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    out_flat = np.matmul(w2[None], cols)                          # (N, C_out, L)
    if bias is not None:
        out_flat += bias.data[None, :, None]
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_flat.reshape(n, c_out, h_out, w_out), parents=parents)
    out.requires_grad = any(p.in_graph() for p in parents)

    def _bw(g):
        gf = g.reshape(n, c_out, h_out * w_out)
        if bias is not None and bias.in_graph():
            bias.accumulate_grad(gf.sum(axis=(0, 2)))
        if weight.in_graph():
            dw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0)
            weight.accumulate_grad(dw.reshape(weight.shape))
        if x.in_graph():
            dcols = np.matmul(w2.T[None], gf)                     # (N, Ckk, L)
            x.accumulate_grad(_col2im(dcols, x.shape, k, stride, pad, h_out, w_out))

    out._backward = _bw
    return out


def conv_transpose2d(x, weight, stride=1, pad=0):
    """Transposed convolution (adjoint of conv2d's data path), no bias.

    x: N x C_in x H x W, weight: C_in x C_out x k x k.
    Output extent: (H - 1) * stride - 2 * pad + k.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv_transpose2d expects 4-d input and weight")
    n, c_in, h, w = x.shape
    wc_in, c_out, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError("conv_transpose2d kernels must be square, got %dx%d" % (kh, kw))
    k = kh
    if wc_in != c_in:
        raise ShapeError("conv_transpose2d channel mismatch: input has %d, weight expects %d"
                         % (c_in, wc_in))
    h_out = (h - 1) * stride - 2 * pad + k
    w_out = (w - 1) * stride - 2 * pad + k
    if h_out < 1 or w_out < 1:
        raise ShapeError("conv_transpose2d output extent %dx%d <= 0" % (h_out, w_out))

    x_flat = x.data.reshape(n, c_in, h * w)
    w2 = weight.data.reshape(c_in, c_out * k * k)
    cols = np.matmul(w2.T[None], x_flat)                          # (N, Cokk, H*W)
    out_data = _col2im(cols, (n, c_out, h_out, w_out), k, stride, pad, h, w)
    out = Tensor(out_data, parents=(x, weight))
    out.requires_grad = x.in_graph() or weight.in_graph()

    def _bw(g):
        gcols = _im2col(g, k, stride, pad, h, w)                  # (N, Cokk, H*W)
        if weight.in_graph():
            dw2 = np.matmul(x_flat, gcols.transpose(0, 2, 1)).sum(axis=0)
            weight.accumulate_grad(dw2.reshape(weight.shape))
        if x.in_graph():
            dx = np.matmul(w2[None], gcols)                       # (N, C_in, H*W)
            x.accumulate_grad(dx.reshape(x.shape))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# Pooling


def _pool_extent(extent, k, stride, ceil_mode):
    if ceil_mode:
        out = -((extent - k) // -stride) + 1
    else:
        out = (extent - k) // stride + 1
    out = max(out, 1)
    # drop windows whose start lies beyond the input
    while out > 1 and (out - 1) * stride >= extent:
        out -= 1
    return out


def maxpool2d(x, k, stride, ceil_mode=False):
    """Max pooling with recorded argmax indices; ties go to the lowest flat index.

    Trailing windows may be clipped at the input boundary; a window smaller
    than the input survives clipping so small presets stay well-formed.
    Returns (values Tensor, indices int64 array N x C x Ho x Wo of flat
    coordinates into H * W).
    """
    if k < 1 or stride < 1:
        raise ValueRangeError("maxpool2d kernel/stride must be positive, got k=%d stride=%d"
                              % (k, stride))
    n, c, h, w = x.shape
    h_out = _pool_extent(h, k, stride, ceil_mode)
    w_out = _pool_extent(w, k, stride, ceil_mode)

    neg = np.array(-np.inf, dtype=x.dtype)
    cand = np.empty((n, c, h_out, w_out, k * k), dtype=x.dtype)
    cand_idx = np.empty((h_out, w_out, k * k), dtype=np.int64)
    si = np.arange(h_out) * stride
    sj = np.arange(w_out) * stride
    for di in range(k):
        ri = si + di
        ok_r = ri < h
        rc = np.minimum(ri, h - 1)
        for dj in range(k):
            cj = sj + dj
            ok = ok_r[:, None] & (cj < w)[None, :]
            cc = np.minimum(cj, w - 1)
            o = di * k + dj
            gathered = x.data[:, :, rc[:, None], cc[None, :]]
            cand[..., o] = np.where(ok, gathered, neg)
            cand_idx[..., o] = np.where(ok, rc[:, None] * w + cc[None, :], 0)

    # offsets are enumerated in increasing flat-index order inside each
    # window, so argmax's first-max rule is the lowest-flat-index tie-break
    sel = np.argmax(cand, axis=-1)
    values = np.take_along_axis(cand, sel[..., None], axis=-1)[..., 0]
    idx_b = np.broadcast_to(cand_idx, (n, c) + cand_idx.shape)
    indices = np.take_along_axis(idx_b, sel[..., None], axis=-1)[..., 0].copy()

    out = Tensor(values, parents=(x,))
    out.requires_grad = x.in_graph()

    def _bw(g):
        if x.in_graph():
            dx = np.zeros((n * c, h * w), dtype=x.dtype)
            rows = np.arange(n * c)[:, None]
            np.add.at(dx, (rows, indices.reshape(n * c, -1)), g.reshape(n * c, -1))
            x.accumulate_grad(dx.reshape(x.shape))

    out._backward = _bw
    return out, indices


def max_unpool2d(values, indices, out_hw):
    """Scatter pooled values back to their recorded argmax positions.

    Positions hit by several windows accumulate, so total mass is preserved.
    """
    n, c, h_out, w_out = values.shape
    h, w = out_hw
    if indices.shape != values.shape:
        raise ShapeError("unpool indices shape %s != values shape %s"
                         % (indices.shape, values.shape))
    if indices.min() < 0 or indices.max() >= h * w:
        raise ValueRangeError("unpool index outside target extent %dx%d" % (h, w))
    flat_idx = indices.reshape(n * c, -1)
    rows = np.arange(n * c)[:, None]
    out_data = np.zeros((n * c, h * w), dtype=values.dtype)
    np.add.at(out_data, (rows, flat_idx), values.data.reshape(n * c, -1))
    out = Tensor(out_data.reshape(n, c, h, w), parents=(values,))
    out.requires_grad = values.in_graph()

    def _bw(g):
        if values.in_graph():
            gv = np.take_along_axis(g.reshape(n * c, -1), flat_idx, axis=1)
            values.accumulate_grad(gv.reshape(values.shape))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# Normalization and activations


def batchnorm2d(x, gamma, beta, running_mean, running_var, mode="train",
                eps=1e-5, momentum=0.9):
    """Per-channel batch normalization over N x H x W.

    Train mode normalizes with batch statistics and updates the running
    buffers in place: running = momentum * running + (1 - momentum) * batch.
    Infer mode normalizes with the running buffers.
    """
    n, c, h, w = x.shape
    for t, nm in ((gamma, "gamma"), (beta, "beta"),
                  (running_mean, "running_mean"), (running_var, "running_var")):
        if t.shape != (c,):
            raise ShapeError("batchnorm %s shape %s != (%d,)" % (nm, t.shape, c))
    if eps <= 0:
        raise ValueRangeError("batchnorm eps must be positive")
    m = n * h * w

    if mode == "train":
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean.data[...] = momentum * running_mean.data + (1.0 - momentum) * mean
        running_var.data[...] = momentum * running_var.data + (1.0 - momentum) * var
    elif mode == "infer":
        mean = running_mean.data
        var = running_var.data
    else:
        raise ValueRangeError("batchnorm mode must be 'train' or 'infer', got %r" % (mode,))

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor(out_data.astype(x.dtype, copy=False), parents=(x, gamma, beta))
    out.requires_grad = x.in_graph() or gamma.in_graph() or beta.in_graph()

    def _bw(g):
        if beta.in_graph():
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if gamma.in_graph():
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if x.in_graph():
            gxh = g * gamma.data[None, :, None, None]
            if mode == "train":
                s1 = gxh.sum(axis=(0, 2, 3))[None, :, None, None]
                s2 = (gxh * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                dx = (inv_std[None, :, None, None] / m) * (m * gxh - s1 - xhat * s2)
            else:
                dx = gxh * inv_std[None, :, None, None]
            x.accumulate_grad(dx.astype(x.dtype, copy=False))

    out._backward = _bw
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0), parents=(x,))
    out.requires_grad = x.in_graph()

    def _bw(g):
        if x.in_graph():
            x.accumulate_grad(g * (x.data > 0))

    out._backward = _bw
    return out


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    s = _sigmoid(x.data)
    out = Tensor(s, parents=(x,))
    out.requires_grad = x.in_graph()

    def _bw(g):
        if x.in_graph():
            x.accumulate_grad(g * s * (1.0 - s))

    out._backward = _bw
    return out


def softmax(x):
    """Row-wise softmax of an N x K logit matrix with max-subtraction."""
    if x.ndim != 2:
        raise ShapeError("softmax expects a 2-d batch x classes tensor, got %s" % (x.shape,))
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, parents=(x,))
    out.requires_grad = x.in_graph()

    def _bw(g):
        if x.in_graph():
            dot = (g * p).sum(axis=1, keepdims=True)
            x.accumulate_grad(p * (g - dot))

    out._backward = _bw
    return out


def concat_channels(inputs):
    """Concatenate along the channel axis; backward splits at the same cuts."""
    if not inputs:
        raise ValueRangeError("concat_channels needs at least one input")
    n, _, h, w = inputs[0].shape
    for i, t in enumerate(inputs):
        if t.ndim != 4 or t.shape[0] != n or t.shape[2] != h or t.shape[3] != w:
            raise ShapeError(
                "concat_channels input %d has shape %s, expected N=%d H=%d W=%d"
                % (i, t.shape, n, h, w))
    out = Tensor(np.concatenate([t.data for t in inputs], axis=1), parents=tuple(inputs))
    out.requires_grad = any(t.in_graph() for t in inputs)
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def _bw(g):
        for i, t in enumerate(inputs):
            if t.in_graph():
                t.accumulate_grad(g[:, bounds[i]:bounds[i + 1]])

    out._backward = _bw
    return out


def inner_product(x, weight, bias):
    """Fully connected layer: out[n,u] = sum_d x[n,d] w[u,d] + b[u]."""
    if x.ndim != 2:
        raise ShapeError("inner_product expects 2-d input, got %s" % (x.shape,))
    n, d = x.shape
    u, wd = weight.shape
    if wd != d:
        raise ShapeError("inner_product feature length %d does not match weight %d" % (d, wd))
    if bias.shape != (u,):
        raise ShapeError("inner_product bias shape %s != (%d,)" % (bias.shape, u))
    out = Tensor(x.data @ weight.data.T + bias.data, parents=(x, weight, bias))
    out.requires_grad = x.in_graph() or weight.in_graph() or bias.in_graph()

    def _bw(g):
        if bias.in_graph():
            bias.accumulate_grad(g.sum(axis=0))
        if weight.in_graph():
            weight.accumulate_grad(g.T @ x.data)
        if x.in_graph():
            x.accumulate_grad(g @ weight.data)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# Losses


def sigmoid_bce_loss(f, y):
    """Summed per-pixel binary cross-entropy of sigmoid(f) against y in {0,1}.

    Uses the fused stable form max(f,0) - f*y + log1p(exp(-|f|)); the sum
    runs over all pixels and batch items (no averaging).
    """
    if f.shape != y.shape:
        raise ShapeError("bce score shape %s != label shape %s" % (f.shape, y.shape))
    yd = y.data
    if not np.all((yd == 0) | (yd == 1)):
        raise ValueRangeError("bce labels must be binary {0,1}")
    per = np.maximum(f.data, 0) - f.data * yd + np.log1p(np.exp(-np.abs(f.data)))
    out = Tensor(np.asarray(per.sum(), dtype=f.dtype), parents=(f,))
    out.requires_grad = f.in_graph()

    def _bw(g):
        if f.in_graph():
            f.accumulate_grad(g * (_sigmoid(f.data) - yd))

    out._backward = _bw
    return out


def softmax_ce_loss(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.ndim != 2:
        raise ShapeError("softmax_ce_loss expects 2-d logits, got %s" % (logits.shape,))
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError("labels shape %s != (%d,)" % (labels.shape, n))
    if labels.min() < 0 or labels.max() >= k:
        raise ValueRangeError("label outside [0, %d)" % k)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(n), labels]
    out = Tensor(np.asarray(nll.mean(), dtype=logits.dtype), parents=(logits,))
    out.requires_grad = logits.in_graph()

    def _bw(g):
        if logits.in_graph():
            p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
            p[np.arange(n), labels] -= 1.0
            logits.accumulate_grad(g * p / n)

    out._backward = _bw
    return out
