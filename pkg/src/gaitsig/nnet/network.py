"""Sequential network: parameter storage, shape validation, forward and backward."""

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, ShapeError
from . import layers as L
from .layers import LayerSpec


@dataclass
class Trace:
    """Everything a forward pass leaves behind for :meth:`Network.backward`."""

    outputs: list
    caches: list
    masks: dict
    batched: bool
    version: int
    net_id: int = 0
    consumed: bool = field(default=False)

    @property
    def output(self):
        return self.outputs[-1]


class Network:
    """Ordered layers plus per-layer ``{"W", "b"}`` parameter dicts.

    Shapes are propagated at construction; an incompatible stack raises
    :class:`~gaitsig.errors.ShapeError`.
    """

    def __init__(self, layers, input_shape, params=None, dtype=np.float32, seed=0,
                 init_std=0.01, init_bias=0.1, debug=False, init="gaussian"):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in layers]
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.mode = "train"
        self.debug = debug
        self.shapes = self._propagate()
        self._version = 0
        if init not in ("gaussian", "he"):
            raise ValueError("init must be 'gaussian' or 'he'")
        self.init = init
        if params is None:
            rng = np.random.default_rng(seed)
            params = [self.init_layer(i, rng, init_std, init_bias) for i in range(len(self.layers))]
        self.params = [{k: np.asarray(v, dtype=self.dtype) for k, v in p.items()} for p in params]
        for i, p in enumerate(self.params):
            want = L.param_shapes(self.layers[i], self.in_shape(i))
            got = {k: v.shape for k, v in p.items()}
            if got != {k: tuple(s) for k, s in want.items()}:
                raise ShapeError("layer %d (%s): parameter shapes %s, expected %s" % (i, self.layers[i].name, got, want))

    # -- geometry ---------------------------------------------------------

    def _propagate(self):
        shapes = []
        cur = self.input_shape
        for spec in self.layers:
            cur = L.output_shape(spec, cur)
            shapes.append(cur)
        return shapes

    def in_shape(self, i):
        return self.input_shape if i == 0 else self.shapes[i - 1]

    def index(self, name):
        for i, spec in enumerate(self.layers):
            if spec.name == name:
                return i
        raise KeyError(name)

    def init_layer(self, i, rng, std=0.01, bias=0.1):
        """Fresh parameters for layer ``i``.

        ``init="gaussian"`` draws ``N(0, std)`` weights and constant ``bias``;
        ``init="he"`` uses ``std = sqrt(2 / fan_in)`` with the same constant bias.
        """
        out = {}
        if self.init == "he":
            std = np.sqrt(2.0 / L.fan_in(self.layers[i], self.in_shape(i)))
        for k, shape in L.param_shapes(self.layers[i], self.in_shape(i)).items():
            if k == "W":
                # float32 draws directly: the full-width stage-4 net has ~40M weights
                w = rng.standard_normal(size=shape, dtype=self.dtype) if self.dtype == np.float32 \
                    else rng.standard_normal(size=shape)
                w *= self.dtype.type(std)
                out[k] = w.astype(self.dtype, copy=False)
            else:
                out[k] = np.full(shape, bias, dtype=self.dtype)
        return out

    @property
    def n_params(self):
        return sum(v.size for p in self.params for v in p.values())

    def summary(self):
        rows = []
        for spec, shape, p in zip(self.layers, self.shapes, self.params):
            rows.append("%-8s %-16s %-18s %d" % (spec.name, spec.kind, "x".join(map(str, shape)),
                                                  sum(v.size for v in p.values())))
        return "\n".join(rows)

    # -- modes / copies ---------------------------------------------------

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def clone(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        net = Network(self.layers, self.input_shape, self.params, dtype=dtype, debug=self.debug, init=self.init)
        net.mode = self.mode
        return net

    def touch(self):
        """Mark parameters as modified (invalidates outstanding traces)."""
        self._version += 1

    # -- passes -------------------------------------------------------------

    def forward(self, x, rng=None, masks=None, upto=None):
        """Run the layer stack on one sample ``(H, W, C)`` or a batch ``(N, H, W, C)``.

        ``upto`` stops after the layer with that index or name. Dropout layers
        in train mode draw masks from ``rng`` unless ``masks`` (layer index ->
        mask) supplies them; the masks used are stored on the trace.
        """
        x = np.asarray(x, dtype=self.dtype)
        batched = x.ndim == len(self.input_shape) + 1
        if not batched:
            x = x[None]
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError("input shape %s does not match network input %s" % (x.shape[1:], self.input_shape))
        stop = len(self.layers) - 1 if upto is None else (upto if isinstance(upto, int) else self.index(upto))
        masks = dict(masks or {})
        outputs, caches = [], []
        for i in range(stop + 1):
            spec, p = self.layers[i], self.params[i]
            k = spec.kind
            cache = None
            if k == "conv":
                x, cache = L.conv_forward(x, p["W"], p["b"], spec.stride)
            elif k == "maxpool":
                x, cache = L.maxpool_forward(x, spec.pool)
            elif k == "lrn":
                if spec.enabled:
                    x, cache = L.lrn_forward(x, spec.lrn_n, spec.kappa, spec.alpha, spec.beta)
            elif k == "relu":
                cache = x > 0
                x = x * cache
            elif k == "fully_connected":
                flat = x.reshape(x.shape[0], -1)
                cache = flat
                x = flat @ p["W"] + p["b"]
            elif k == "dropout":
                if self.mode == "train" and spec.p > 0.0:
                    if i not in masks:
                        if rng is None:
                            raise ValueError("train-mode dropout needs an rng or frozen masks")
                        keep = rng.random(x.shape) >= spec.p
                        masks[i] = (keep / (1.0 - spec.p)).astype(self.dtype)
                    cache = masks[i]
                    if cache.shape != x.shape:
                        raise ShapeError("frozen dropout mask for layer %d has shape %s, expected %s"
                                         % (i, cache.shape, x.shape))
                    x = x * cache
            elif k == "softmax":
                x = L.softmax(x)
                cache = x
            if self.debug and not np.all(np.isfinite(x)):
                raise NumericalError("non-finite activation after layer %d (%s)" % (i, spec.name or k))
            outputs.append(x)
            caches.append(cache)
        if not batched:
            outputs = [o[0] for o in outputs]
        return Trace(outputs, caches, masks, batched, self._version, id(self))

    def backward(self, trace, grad_out, need_input_grad=True):
        """Reverse-mode gradients for the layers the trace covers.

        Returns ``(grads, dx)`` where ``grads`` mirrors :attr:`params`
        (empty dicts for layers not reached by the trace).
        """
        if trace is None or trace.net_id != id(self) or trace.version != self._version or trace.consumed:
            raise ValueError("stale or missing forward trace")
        dy = np.asarray(grad_out, dtype=self.dtype)
        if not trace.batched:
            dy = dy[None]
        n = len(trace.caches)
        grads = [{} for _ in self.layers]
        for i in range(n - 1, -1, -1):
            spec, p, cache = self.layers[i], self.params[i], trace.caches[i]
            k = spec.kind
            need_dx = need_input_grad or i > 0
            if k == "conv":
                dy, grads[i] = L.conv_backward(dy, cache, p["W"], spec.stride, need_dx)
            elif k == "maxpool":
                dy = L.maxpool_backward(dy, cache, spec.pool)
            elif k == "lrn":
                if cache is not None:
                    dy = L.lrn_backward(dy, cache, spec.lrn_n, spec.kappa, spec.alpha, spec.beta)
            elif k == "relu":
                dy = dy * cache
            elif k == "fully_connected":
                grads[i] = {"W": cache.T @ dy, "b": dy.sum(axis=0)}
                if need_dx:
                    dy = (dy @ p["W"].T).reshape((dy.shape[0],) + tuple(self.in_shape(i)))
            elif k == "dropout":
                if cache is not None:
                    dy = dy * cache
            elif k == "softmax":
                dy = L.softmax_backward(dy, cache)
            if dy is None:
                break
        trace.consumed = True
        dx = None
        if need_input_grad and dy is not None:
            dx = dy if trace.batched else dy[0]
        return grads, dx
