"""Dense optical flow by Farneback polynomial expansion, plus flow mirroring.

Each pixel neighbourhood is approximated by a quadratic polynomial
``f(x) ~ x^T A x + b^T x + c`` fitted with Gaussian applicability. For a
pure translation ``d`` the coefficients of consecutive frames satisfy
``b2 = b1 - 2 A d``, so ``d`` follows from a small linear system that is
accumulated over a Gaussian window and refined coarse-to-fine.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _binio
from .errors import DataError

# intensities are scaled to 8-bit range internally so that the determinant
# regularizer below has the magnitude it has in 8-bit implementations
_INTENSITY_SCALE = 255.0
_DET_EPS = 1e-3


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window: int = 9
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def __post_init__(self):
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError("pyramid_scale must lie in (0, 1)")
        for name in ("window", "poly_n"):
            val = getattr(self, name)
            if val < 3 or val % 2 == 0:
                raise ValueError("%s must be odd and >= 3, got %r" % (name, val))
        if self.pyramid_levels < 1 or self.iterations < 1:
            raise ValueError("pyramid_levels and iterations must be >= 1")


@dataclass(frozen=True)
class OpticalFlowMap:
    """Horizontal (``u``) and vertical (``v``) displacement in px/frame, each ``(H, W)``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise DataError("u and v must be 2-D arrays of identical shape")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise DataError("non-finite flow values")

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    def stack(self):
        """``(H, W, 2)`` array with channels (u, v)."""
        return np.stack([self.u, self.v], axis=-1)


# ---------------------------------------------------------------------------
# polynomial expansion


def _poly_kernels(poly_n, sigma):
    r = poly_n // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    # normal-equation matrix for basis (1, x, y, x^2, y^2, xy) under g(x) g(y)
    X, Y = np.meshgrid(x, x, indexing="xy")
    W = np.outer(g, g)
    basis = np.stack([np.ones_like(X), X, Y, X ** 2, Y ** 2, X * Y]).reshape(6, -1)
    G = (basis * W.ravel()) @ basis.T
    return g, x, np.linalg.inv(G)


def poly_expansion(img, poly_n=5, sigma=1.1):
    """Quadratic expansion coefficients of every pixel.

    Returns ``(A, b)`` with ``A`` of shape ``(H, W, 3)`` holding
    ``(a_xx, a_yy, a_xy)`` of the symmetric matrix and ``b`` of shape
    ``(H, W, 2)``.
    """
    g, x, Ginv = _poly_kernels(poly_n, sigma)
    img = np.asarray(img, dtype=np.float64)
    # correlate along rows (y, axis 0) with g*y^q, then along columns with g*x^p
    rows = [ndimage.correlate1d(img, g * x ** q, axis=0, mode="nearest") for q in range(3)]

    def cols(arr, p):
        return ndimage.correlate1d(arr, g * x ** p, axis=1, mode="nearest")

    moments = np.stack([
        cols(rows[0], 0),  # 1
        cols(rows[0], 1),  # x
        cols(rows[1], 0),  # y
        cols(rows[0], 2),  # x^2
        cols(rows[2], 0),  # y^2
        cols(rows[1], 1),  # xy
    ], axis=-1)
    r = moments @ Ginv.T
    A = np.stack([r[..., 3], r[..., 4], 0.5 * r[..., 5]], axis=-1)
    b = r[..., 1:3].copy()
    return A, b


# ---------------------------------------------------------------------------
# pyramid helpers


def _resample(img, shape):
    """Bilinear resample with half-pixel centres (edge replicate)."""
    h, w = img.shape
    H, W = shape
    ys = (np.arange(H) + 0.5) * (h / H) - 0.5
    xs = (np.arange(W) + 0.5) * (w / W) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(img, [yy, xx], order=1, mode="nearest")


def _pyramid_shapes(shape, levels, scale):
    h, w = shape
    shapes = []
    for k in range(levels):
        s = scale ** k
        shapes.append((max(1, int(round(h * s))), max(1, int(round(w * s)))))
    return shapes


def _downscale(img, shape):
    if shape == img.shape:
        return img
    factor = img.shape[1] / shape[1]
    smoothed = ndimage.gaussian_filter(img, sigma=(factor - 1.0) * 0.5, mode="nearest")
    return _resample(smoothed, shape)


# ---------------------------------------------------------------------------
# displacement estimation


def _window_sigma(window):
    return 0.3 * (window // 2) + 0.5


def _update_flow(A1, b1, A2, b2, flow, window):
    H, W = flow.shape[:2]
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    coords = [yy + flow[..., 1], xx + flow[..., 0]]
    if np.any(flow):
        A2w = np.stack([ndimage.map_coordinates(A2[..., i], coords, order=1, mode="nearest") for i in range(3)], -1)
        b2w = np.stack([ndimage.map_coordinates(b2[..., i], coords, order=1, mode="nearest") for i in range(2)], -1)
    else:
        A2w, b2w = A2, b2

    a = 0.5 * (A1 + A2w)
    axx, ayy, axy = a[..., 0], a[..., 1], a[..., 2]
    db = -0.5 * (b2w - b1)
    dbx = db[..., 0] + axx * flow[..., 0] + axy * flow[..., 1]
    dby = db[..., 1] + axy * flow[..., 0] + ayy * flow[..., 1]

    # A^T A and A^T db, A symmetric
    g11 = axx * axx + axy * axy
    g12 = axy * (axx + ayy)
    g22 = axy * axy + ayy * ayy
    h1 = axx * dbx + axy * dby
    h2 = axy * dbx + ayy * dby
    sig = _window_sigma(window)
    trunc = (window // 2) / sig
    terms = np.stack([g11, g12, g22, h1, h2])
    terms = ndimage.gaussian_filter(terms, sigma=(0, sig, sig), mode="nearest", truncate=trunc)
    g11, g12, g22, h1, h2 = terms

    idet = 1.0 / (g11 * g22 - g12 * g12 + _DET_EPS)
    out = np.empty_like(flow)
    out[..., 0] = (g22 * h1 - g12 * h2) * idet
    out[..., 1] = (g11 * h2 - g12 * h1) * idet
    return out


def dense_flow(prev, next, params=None):
    """Flow field mapping ``prev`` onto ``next``: ``next(x + d(x)) ~ prev(x)``."""
    params = params or FlowParams()
    prev = np.asarray(prev, dtype=np.float64)
    next = np.asarray(next, dtype=np.float64)
    if prev.shape != next.shape or prev.ndim != 2:
        raise DataError("frames must be 2-D and of equal size, got %s and %s" % (prev.shape, next.shape))
    if min(prev.shape) < params.poly_n:
        raise DataError("frame %s smaller than poly_n=%d" % (prev.shape, params.poly_n))

    prev = prev * _INTENSITY_SCALE
    next = next * _INTENSITY_SCALE
    shapes = _pyramid_shapes(prev.shape, params.pyramid_levels, params.pyramid_scale)
    # drop levels too small for the expansion
    shapes = [s for s in shapes if min(s) >= params.poly_n] or [prev.shape]

    flow = None
    for shape in reversed(shapes):
        if flow is None:
            flow = np.zeros(shape + (2,))
        else:
            fy = shape[0] / flow.shape[0]
            fx = shape[1] / flow.shape[1]
            flow = np.stack([_resample(flow[..., 0], shape) * fx, _resample(flow[..., 1], shape) * fy], -1)
        I0 = _downscale(prev, shape)
        I1 = _downscale(next, shape)
        A1, b1 = poly_expansion(I0, params.poly_n, params.poly_sigma)
        A2, b2 = poly_expansion(I1, params.poly_n, params.poly_sigma)
        for _ in range(params.iterations):
            flow = _update_flow(A1, b1, A2, b2, flow, params.window)

    if not np.all(np.isfinite(flow)):
        raise DataError("non-finite flow estimate")
    return OpticalFlowMap(flow[..., 0].astype(np.float32), flow[..., 1].astype(np.float32))


def flow_sequence(seq, params=None):
    """Flow between every pair of consecutive frames (``len(seq) - 1`` maps)."""
    frames = seq.frames if hasattr(seq, "frames") else np.asarray(seq)
    if len(frames) < 2:
        raise DataError("flow_sequence needs at least 2 frames, got %d" % len(frames))
    return [dense_flow(frames[t], frames[t + 1], params) for t in range(len(frames) - 1)]


def mirror_flow(f):
    """Horizontal flip of a flow map; the horizontal component changes sign."""
    return OpticalFlowMap(-f.u[:, ::-1].copy(), f.v[:, ::-1].copy())


# ---------------------------------------------------------------------------
# GFOF serialization


def save_flows(path, flows):
    flows = list(flows)
    if not flows:
        raise DataError("nothing to save")
    h, w = flows[0].height, flows[0].width
    with open(path, "wb") as fh:
        _binio.write_header(fh, b"GFOF", w, h, len(flows))
        for f in flows:
            if (f.height, f.width) != (h, w):
                raise DataError("flow maps of mixed size")
            _binio.write_array(fh, f.u, "f4")
            _binio.write_array(fh, f.v, "f4")


def load_flows(path):
    with open(path, "rb") as fh:
        w, h, count = _binio.read_header(fh, b"GFOF", 3)
        out = []
        for _ in range(count):
            u = _binio.read_array(fh, "f4", w * h).reshape(h, w)
            v = _binio.read_array(fh, "f4", w * h).reshape(h, w)
            out.append(OpticalFlowMap(u, v))
    return out
