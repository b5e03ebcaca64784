"""Layer kernels: forward/backward passes over channels-last batches ``(N, H, W, C)``."""

from dataclasses import dataclass, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

KINDS = ("conv", "maxpool", "lrn", "relu", "fully_connected", "dropout", "softmax")


@dataclass
class LayerSpec:
    """Geometry and hyper-parameters of one layer.

    Only the fields relevant to ``kind`` are used: ``filters``/``size``/``stride``
    for conv, ``units`` for fully_connected, ``pool`` for maxpool, ``p`` for
    dropout, ``lrn_n``/``kappa``/``alpha``/``beta``/``enabled`` for lrn.
    A disabled lrn layer is the identity; it keeps layer lists of different
    curriculum stages positionally aligned.
    """

    kind: str
    name: str = ""
    filters: int = 0
    size: int = 1
    stride: int = 1
    units: int = 0
    pool: int = 2
    p: float = 0.0
    lrn_n: int = 5
    kappa: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75
    enabled: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError("unknown layer kind %r" % self.kind)
        if self.stride < 1 or self.size < 1 or self.pool < 1:
            raise ShapeError("%s: strides and sizes must be >= 1" % (self.name or self.kind))
        if not 0.0 <= self.p < 1.0:
            raise ShapeError("%s: dropout rate must lie in [0, 1)" % (self.name or self.kind))

    @property
    def has_params(self):
        return self.kind in ("conv", "fully_connected")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# shape propagation


def output_shape(spec, in_shape):
    """Output shape (without batch axis) of ``spec`` applied to ``in_shape``."""
    k = spec.kind
    if k == "conv":
        if len(in_shape) != 3:
            raise ShapeError("%s expects an (H, W, C) input, got %s" % (spec.name, in_shape))
        H, W, _ = in_shape
        if spec.size > H or spec.size > W:
            raise ShapeError("%s: %dx%d filter does not fit %s input" % (spec.name, spec.size, spec.size, in_shape))
        if spec.filters < 1:
            raise ShapeError("%s: needs at least one filter" % spec.name)
        return ((H - spec.size) // spec.stride + 1, (W - spec.size) // spec.stride + 1, spec.filters)
    if k == "maxpool":
        if len(in_shape) != 3:
            raise ShapeError("%s expects an (H, W, C) input" % spec.name)
        H, W, C = in_shape
        if H < spec.pool or W < spec.pool:
            raise ShapeError("%s: pool %d larger than input %s" % (spec.name, spec.pool, in_shape))
        return (H // spec.pool, W // spec.pool, C)
    if k == "fully_connected":
        if spec.units < 1:
            raise ShapeError("%s: needs at least one unit" % spec.name)
        return (spec.units,)
    if k == "lrn" and len(in_shape) != 3:
        raise ShapeError("%s expects an (H, W, C) input" % spec.name)
    return tuple(in_shape)


def fan_in(spec, in_shape):
    if spec.kind == "conv":
        return spec.size * spec.size * in_shape[2]
    return int(np.prod(in_shape))


def param_shapes(spec, in_shape):
    if spec.kind == "conv":
        return {"W": (spec.size, spec.size, in_shape[2], spec.filters), "b": (spec.filters,)}
    if spec.kind == "fully_connected":
        return {"W": (int(np.prod(in_shape)), spec.units), "b": (spec.units,)}
    return {}


# ---------------------------------------------------------------------------
# convolution (valid cross-correlation)


def _im2col(x, k, s):
    N, H, W, C = x.shape
    Ho, Wo = (H - k) // s + 1, (W - k) // s + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, : (Ho - 1) * s + 1 : s, : (Wo - 1) * s + 1 : s]
    # (N, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C) to match W.reshape(-1, F)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(N * Ho * Wo, k * k * C)
    return cols, Ho, Wo


def _use_output_side(W, stride):
    # few filters relative to input channels: cheaper to expand on the F side
    return stride == 1 and W.shape[3] < W.shape[2]


def conv_forward(x, W, b, stride):
    k, C, F = W.shape[0], W.shape[2], W.shape[3]
    N, H, Wd, _ = x.shape
    if _use_output_side(W, stride):
        Ho, Wo = H - k + 1, Wd - k + 1
        z = (x.reshape(-1, C) @ W.transpose(2, 0, 1, 3).reshape(C, k * k * F)).reshape(N, H, Wd, k, k, F)
        y = np.empty((N, Ho, Wo, F), dtype=z.dtype)
        y[:] = b
        for i in range(k):
            for j in range(k):
                y += z[:, i : i + Ho, j : j + Wo, i, j, :]
        return y, ("out", x)
    cols, Ho, Wo = _im2col(x, k, stride)
    y = cols @ W.reshape(-1, F)
    y += b
    return y.reshape(N, Ho, Wo, F), ("in", cols, x.shape)


def _dy_cols(dy, k, H, W):
    """Rows ``(n, h, w)`` of flipped ``k x k`` neighbourhoods of ``dy`` padded to input size."""
    N, Ho, Wo, F = dy.shape
    pad = np.zeros((N, Ho + 2 * (k - 1), Wo + 2 * (k - 1), F), dtype=dy.dtype)
    pad[:, k - 1 : k - 1 + Ho, k - 1 : k - 1 + Wo] = dy
    win = sliding_window_view(pad, (k, k), axis=(1, 2))[:, :H, :W, :, ::-1, ::-1]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(N * H * W, k * k * F)


def conv_backward(dy, cache, W, stride, need_dx=True):
    k, C, F = W.shape[0], W.shape[2], W.shape[3]
    N, Ho, Wo, _ = dy.shape
    dy2 = dy.reshape(-1, F)
    if cache[0] == "out":
        x = cache[1]
        H, Wd = x.shape[1], x.shape[2]
        cols = _dy_cols(dy, k, H, Wd)
        dW = (x.reshape(-1, C).T @ cols).reshape(C, k, k, F).transpose(1, 2, 0, 3)
        grads = {"W": np.ascontiguousarray(dW), "b": dy2.sum(axis=0)}
        if not need_dx:
            return None, grads
        dx = (cols @ W.transpose(0, 1, 3, 2).reshape(k * k * F, C)).reshape(x.shape)
        return dx, grads
    _, cols, xshape = cache
    grads = {"W": (cols.T @ dy2).reshape(W.shape), "b": dy2.sum(axis=0)}
    if not need_dx:
        return None, grads
    dcols = (dy2 @ W.reshape(-1, F).T).reshape(N, Ho, Wo, k, k, C)
    dx = np.zeros(xshape, dtype=dy.dtype)
    s = stride
    for i in range(k):
        for j in range(k):
            dx[:, i : i + (Ho - 1) * s + 1 : s, j : j + (Wo - 1) * s + 1 : s, :] += dcols[:, :, :, i, j, :]
    return dx, grads


# ---------------------------------------------------------------------------
# max pooling (non-overlapping)


def maxpool_forward(x, p):
    N, H, W, C = x.shape
    Ho, Wo = H // p, W // p
    blocks = x[:, : Ho * p, : Wo * p].reshape(N, Ho, p, Wo, p, C).transpose(0, 1, 3, 5, 2, 4).reshape(N, Ho, Wo, C, p * p)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape)


def maxpool_backward(dy, cache, p):
    arg, xshape = cache
    N, H, W, C = xshape
    Ho, Wo = dy.shape[1], dy.shape[2]
    blocks = np.zeros((N, Ho, Wo, C, p * p), dtype=dy.dtype)
    np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[:, : Ho * p, : Wo * p] = blocks.reshape(N, Ho, Wo, C, p, p).transpose(0, 1, 4, 2, 5, 3).reshape(N, Ho * p, Wo * p, C)
    return dx


# ---------------------------------------------------------------------------
# local response normalization across channels


def _channel_window_sum(a, n):
    """Sum over channels ``c - n//2 .. c + n//2`` (clipped at the ends)."""
    half = n // 2
    C = a.shape[-1]
    cs = np.concatenate([np.zeros(a.shape[:-1] + (1,), dtype=a.dtype), np.cumsum(a, axis=-1)], axis=-1)
    hi = np.minimum(np.arange(C) + half + 1, C)
    lo = np.maximum(np.arange(C) - half, 0)
    return cs[..., hi] - cs[..., lo]


def lrn_forward(x, n, kappa, alpha, beta):
    s = kappa + (alpha / n) * _channel_window_sum(x * x, n)
    d = s ** (-beta)
    return x * d, (x, s, d)


def lrn_backward(dy, cache, n, kappa, alpha, beta):
    x, s, d = cache
    t = dy * x * d / s  # dy_c x_c s_c^(-beta-1)
    return dy * d - (2.0 * alpha * beta / n) * x * _channel_window_sum(t, n)


# ---------------------------------------------------------------------------
# softmax


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy, y):
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, label):
    """Loss ``-log softmax(logits)[label]`` and its gradient for one sample or a batch.

    With a batch (``logits`` of shape ``(N, K)``, ``label`` of length ``N``)
    the loss is summed; divide by ``N`` for a mean.
    """
    logits = np.asarray(logits)
    label = np.asarray(label)
    K = logits.shape[-1]
    if np.any(label < 0) or np.any(label >= K):
        raise ValueError("label out of range for %d classes" % K)
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    onehot = np.zeros_like(logits)
    if logits.ndim == 1:
        onehot[label] = 1.0
        loss = -logp[label]
    else:
        onehot[np.arange(len(label)), label] = 1.0
        loss = -logp[np.arange(len(label)), label].sum()
    grad = np.exp(logp) - onehot
    return float(loss), grad
