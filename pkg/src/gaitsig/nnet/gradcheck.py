"""Finite-difference verification of :meth:`Network.backward`."""

from dataclasses import dataclass

import numpy as np

from .network import Network

# denominator floor: below ~1e-6 central differences at eps=1e-5 are dominated by
# float64 round-off (~1e-16 * |loss| / eps), not by gradient error
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    valid: bool = True
    reason: str = ""


def relative_error(a, b, floor=REL_FLOOR):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _has_live_dropout(net):
    return net.mode == "train" and any(s.kind == "dropout" and s.p > 0 for s in net.layers)


def grad_check(net, x, eps=1e-5, masks=None, max_params=2000, seed=0, check_input=True):
    """Compare backprop against central differences of a random linear loss.

    The loss is ``sum(r * output)`` for a fixed random ``r``, which exercises
    every output (softmax included). Up to ``max_params`` parameter entries
    are sampled uniformly. Train-mode dropout requires ``masks``; without
    them the result comes back with ``valid=False``.
    """
    if net.dtype != np.float64:
        return GradCheckResult(float("nan"), 0, False, "network must be float64")
    if _has_live_dropout(net):
        needed = {i for i, s in enumerate(net.layers) if s.kind == "dropout" and s.p > 0}
        if masks is None or not needed.issubset(masks):
            return GradCheckResult(float("nan"), 0, False, "unfrozen dropout mask")

    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    trace = net.forward(x, masks=masks)
    r = rng.standard_normal(trace.output.shape)
    grads, dx = net.backward(trace, r, need_input_grad=check_input)

    def loss(inp):
        return float(np.sum(r * net.forward(inp, masks=masks).output))

    slots = [(i, k) for i, p in enumerate(net.params) for k in p]
    sizes = np.array([net.params[i][k].size for i, k in slots])
    total = int(sizes.sum())
    picks = np.arange(total) if total <= max_params else np.sort(rng.choice(total, max_params, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        s = int(np.searchsorted(offsets, flat, side="right") - 1)
        i, k = slots[s]
        w = net.params[i][k].reshape(-1)
        j = flat - offsets[s]
        orig = w[j]
        w[j] = orig + eps
        lp = loss(x)
        w[j] = orig - eps
        lm = loss(x)
        w[j] = orig
        num = (lp - lm) / (2 * eps)
        worst = max(worst, float(relative_error(grads[i][k].reshape(-1)[j], num)))
    n = len(picks)
    if check_input:
        xf = x.reshape(-1)
        idx = np.arange(xf.size) if xf.size <= max_params else rng.choice(xf.size, max_params, replace=False)
        for j in idx:
            orig = xf[j]
            xf[j] = orig + eps
            lp = loss(x)
            xf[j] = orig - eps
            lm = loss(x)
            xf[j] = orig
            worst = max(worst, float(relative_error(dx.reshape(-1)[j], (lp - lm) / (2 * eps))))
        n += len(idx)
    net.touch()
    return GradCheckResult(worst, n)


def random_small_network(seed, max_params=1000):
    """A random float64 stack covering every layer kind with at most ``max_params`` parameters."""
    from .layers import LayerSpec

    rng = np.random.default_rng(seed)
    while True:
        H = int(rng.integers(8, 13))
        C = int(rng.integers(1, 4))
        k1 = int(rng.choice([2, 3]))
        s1 = int(rng.choice([1, 2]))
        f1 = int(rng.integers(2, 6))
        f2 = int(rng.integers(2, 5))
        units = int(rng.integers(3, 9))
        classes = int(rng.integers(2, 5))
        layers = [
            LayerSpec("conv", "conv1", filters=f1, size=k1, stride=s1),
            LayerSpec("relu", "relu1"),
            LayerSpec("lrn", "norm1", lrn_n=int(rng.choice([3, 5])), kappa=float(rng.uniform(1, 2)),
                      alpha=float(rng.uniform(0.1, 1.0)), beta=0.75),
            LayerSpec("maxpool", "pool1", pool=2),
            LayerSpec("conv", "conv2", filters=f2, size=2, stride=1),
            LayerSpec("relu", "relu2"),
            LayerSpec("fully_connected", "full3", units=units),
            LayerSpec("relu", "relu3"),
            LayerSpec("dropout", "drop3", p=float(rng.uniform(0.1, 0.5))),
            LayerSpec("fully_connected", "full4", units=classes),
            LayerSpec("softmax", "prob"),
        ]
        try:
            net = Network(layers, (H, H, C), dtype=np.float64, seed=seed, init_std=0.5, init_bias=0.05)
        except Exception:
            continue
        if net.n_params <= max_params:
            return net


def gradcheck_suite(n_networks=100, eps=1e-5, seed=0, batch=2):
    """Run :func:`grad_check` on ``n_networks`` seeded random networks.

    Each network gets a random input batch and dropout masks drawn once
    and then frozen. Returns the list of results.
    """
    out = []
    for k in range(n_networks):
        s = seed + k
        net = random_small_network(s)
        rng = np.random.default_rng(10_000 + s)
        x = rng.normal(size=(batch,) + net.input_shape)
        masks = net.forward(x, rng=rng).masks
        out.append(grad_check(net, x, eps=eps, masks=masks, seed=s))
    return out
