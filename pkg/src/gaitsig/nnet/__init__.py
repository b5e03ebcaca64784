"""Minimal numpy CNN engine: layers, backprop, SGD and gradient checking."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, grad_check, gradcheck_suite, random_small_network
from .layers import LayerSpec, softmax, softmax_cross_entropy
from .network import Network, Trace
from .optim import OptimizerState, sgd_step


def forward(net, x, rng=None, **kw):
    return net.forward(x, rng=rng, **kw)


def backward(net, trace, loss_grad, need_input_grad=True):
    return net.backward(trace, loss_grad, need_input_grad)


__all__ = [
    "LayerSpec", "Network", "Trace", "OptimizerState", "GradCheckResult",
    "forward", "backward", "softmax", "softmax_cross_entropy", "sgd_step", "grad_check",
    "random_small_network", "gradcheck_suite", "save_checkpoint", "load_checkpoint",
]
