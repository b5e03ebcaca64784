"""SGD with momentum and L2 weight decay."""

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass
class OptimizerState:
    velocity: list
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4

    @classmethod
    def for_network(cls, net, lr=1e-2, momentum=0.9, weight_decay=5e-4):
        vel = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
        return cls(vel, lr, momentum, weight_decay)


def sgd_step(net, grads, opt, frozen=()):
    """One in-place update of ``net`` and ``opt``.

    ``v <- momentum * v - lr * (g + weight_decay * w)`` then ``w <- w + v``.
    Layers whose index is in ``frozen`` are left untouched.
    """
    if len(grads) != len(net.params) or len(opt.velocity) != len(net.params):
        raise ShapeError("gradient / velocity lists do not match the network")
    for i, (p, g, v) in enumerate(zip(net.params, grads, opt.velocity)):
        if i in frozen or not p:
            continue
        for k, w in p.items():
            gk = g.get(k)
            if gk is None:
                continue
            if gk.shape != w.shape or v[k].shape != w.shape:
                raise ShapeError("layer %d %s: gradient %s / velocity %s vs parameter %s"
                                 % (i, k, gk.shape, v[k].shape, w.shape))
            step = gk + opt.weight_decay * w if opt.weight_decay else gk
            v[k] *= opt.momentum
            v[k] -= opt.lr * step
            w += v[k]
    net.touch()
    return net, opt
