"""Gait-signature CNN: architecture, incremental curriculum, training and extraction.

The network maps a ``60 x 60 x 50`` flow cuboid through four valid
convolutions and two fully connected layers to a softmax over identities.
Training proceeds through four increasingly large versions, each
initialized from the weights of the previous one.
"""

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cuboid import CROP, SUBSEQ_LEN
from .errors import DataError, NumericalError, ShapeError
from .nnet import LayerSpec, Network, OptimizerState, sgd_step, softmax_cross_entropy

log = logging.getLogger(__name__)

INPUT_SHAPE = (CROP, CROP, 2 * SUBSEQ_LEN)
SIGNATURE_LAYER = "relu6"
SCORE_LAYER = "score"
MIN_LR = 1e-5


@dataclass(frozen=True)
class CurriculumStage:
    stage_index: int
    conv4: int
    full5: int
    full6: int
    lrn_enabled: bool
    dropout_p: float
    momentum: float
    conv1: int = 96
    conv2: int = 192
    conv3: int = 512


STAGES = {
    1: CurriculumStage(1, 512, 512, 256, False, 0.0, 0.9),
    2: CurriculumStage(2, 512, 512, 256, True, 0.1, 0.9),
    3: CurriculumStage(3, 2048, 2048, 1024, True, 0.1, 0.9),
    4: CurriculumStage(4, 4096, 4096, 2048, True, 0.4, 0.95),
}


@dataclass
class TrainSchedule:
    batch_size: int = 150
    lr0: float = 1e-2
    lr_drop: float = 10.0
    plateau_patience: int = 3
    weight_decay: float = 5e-4
    max_epochs: int = 20
    seed: int = 0
    scenario_balancing: bool = True
    micro_batch: int = 16
    target_train_accuracy: float = None  # stop once eval-mode training accuracy reaches this

    def __post_init__(self):
        for name in ("batch_size", "lr0", "lr_drop", "plateau_patience", "max_epochs", "micro_batch"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass(frozen=True)
class GaitSignature:
    vector: np.ndarray
    subject: str = ""
    scenario: str = ""


@dataclass
class History:
    epochs: list = field(default_factory=list)

    def append(self, **row):
        self.epochs.append(row)

    def column(self, key):
        return [row[key] for row in self.epochs]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "lr", "train_loss", "val_error"])
            for row in self.epochs:
                w.writerow([row["epoch"], repr(row["lr"]), repr(row["train_loss"]),
                            "" if row["val_error"] is None else repr(row["val_error"])])


# ---------------------------------------------------------------------------
# architecture


def _scaled(n, scale):
    return max(1, int(round(n * scale)))


def architecture(stage, num_classes, width_scale=1.0):
    """Layer list of one curriculum stage; ``width_scale`` shrinks every hidden width."""
    s = width_scale
    lrn_kw = dict(lrn_n=5, kappa=2.0, alpha=1e-4, beta=0.75)
    return [
        LayerSpec("conv", "conv1", filters=_scaled(stage.conv1, s), size=7, stride=1),
        LayerSpec("relu", "relu1"),
        LayerSpec("lrn", "norm1", enabled=stage.lrn_enabled, **lrn_kw),
        LayerSpec("maxpool", "pool1", pool=2),
        LayerSpec("conv", "conv2", filters=_scaled(stage.conv2, s), size=5, stride=2),
        LayerSpec("relu", "relu2"),
        LayerSpec("maxpool", "pool2", pool=2),
        LayerSpec("conv", "conv3", filters=_scaled(stage.conv3, s), size=3, stride=1),
        LayerSpec("relu", "relu3"),
        LayerSpec("maxpool", "pool3", pool=2),
        LayerSpec("conv", "conv4", filters=_scaled(stage.conv4, s), size=2, stride=1),
        LayerSpec("relu", "relu4"),
        LayerSpec("fully_connected", "full5", units=_scaled(stage.full5, s)),
        LayerSpec("relu", "relu5"),
        LayerSpec("dropout", "drop5", p=stage.dropout_p),
        LayerSpec("fully_connected", "full6", units=_scaled(stage.full6, s)),
        LayerSpec("relu", SIGNATURE_LAYER),
        LayerSpec("dropout", "drop6", p=stage.dropout_p),
        LayerSpec("fully_connected", SCORE_LAYER, units=num_classes),
        LayerSpec("softmax", "prob"),
    ]


def build_stage(stage, num_classes, width_scale=1.0, seed=0, input_shape=INPUT_SHAPE, dtype=np.float32,
                init="he"):
    """Freshly initialized network of one curriculum stage.

    Biases start at 0.1. Weights are ``N(0, sqrt(2 / fan_in))`` with
    ``init="he"`` (the default) or ``N(0, 0.01)`` with ``init="gaussian"``.
    """
    if isinstance(stage, int):
        stage = STAGES[stage]
    if num_classes < 2:
        raise ShapeError("need at least 2 classes, got %d" % num_classes)
    net = Network(architecture(stage, num_classes, width_scale), input_shape, dtype=dtype, seed=seed,
                  init=init)
    if net.shapes[net.index("conv4")][:2] != (1, 1):
        raise ShapeError("conv4 must reduce the input to 1x1, got %s" % (net.shapes[net.index("conv4")],))
    return net


def transfer_weights(src, dst):
    """Copy ``src`` parameters into ``dst`` wherever they overlap.

    Layers are matched by position and must agree in kind. Wider target
    layers keep their fresh initialization outside the copied slice; the
    score layer is never copied.
    """
    if len(src.layers) != len(dst.layers):
        raise ShapeError("layer counts differ: %d vs %d" % (len(src.layers), len(dst.layers)))
    out = dst.clone()
    for i, (a, b) in enumerate(zip(src.layers, dst.layers)):
        if a.kind != b.kind:
            raise ShapeError("layer %d kind mismatch: %s vs %s" % (i, a.kind, b.kind))
        if b.name == SCORE_LAYER or not b.has_params:
            continue
        for k, w_src in src.params[i].items():
            w_dst = out.params[i][k]
            if w_src.ndim != w_dst.ndim:
                raise ShapeError("layer %d %s rank mismatch" % (i, k))
            sl = tuple(slice(0, min(p, q)) for p, q in zip(w_src.shape, w_dst.shape))
            w_dst[sl] = w_src[sl]
    out.touch()
    return out


# ---------------------------------------------------------------------------
# batching


class BalancedSampler:
    """Mini-batch index stream with optional equal per-scenario quotas.

    With balancing, every batch splits ``batch_size`` as evenly as possible
    among the scenarios present, each scenario drawing from its own
    reshuffled cycle. An epoch lasts until the largest scenario has been
    cycled through once, so every sample is seen at least once per epoch.
    """

    def __init__(self, scenarios, batch_size, balance=True, seed=0):
        self.scenarios = np.asarray(scenarios)
        self.batch_size = batch_size
        self.balance = balance
        self.rng = np.random.default_rng(seed)
        self.groups = {s: np.flatnonzero(self.scenarios == s) for s in sorted(set(self.scenarios.tolist()))}
        self._queues = {s: [] for s in self.groups}
        self._turn = 0

    def _draw(self, s, n):
        out = []
        while len(out) < n:
            if not self._queues[s]:
                self._queues[s] = list(self.rng.permutation(self.groups[s]))
            take = min(n - len(out), len(self._queues[s]))
            out.extend(self._queues[s][:take])
            del self._queues[s][:take]
        return out

    def epoch(self):
        n = len(self.scenarios)
        if n == 0:
            raise DataError("empty dataset")
        if not self.balance or len(self.groups) == 1:
            perm = self.rng.permutation(n)
            return [perm[i:i + self.batch_size] for i in range(0, n, self.batch_size)]
        names = list(self.groups)
        G = len(names)
        largest = max(len(v) for v in self.groups.values())
        n_batches = int(np.ceil(largest * G / self.batch_size))
        batches = []
        for _ in range(n_batches):
            base, extra = divmod(self.batch_size, G)
            quota = {s: base + (1 if (j - self._turn) % G < extra else 0) for j, s in enumerate(names)}
            self._turn = (self._turn + extra) % G
            idx = []
            for s in names:
                idx.extend(self._draw(s, quota[s]))
            batches.append(np.array(idx))
        return batches


# ---------------------------------------------------------------------------
# evaluation helpers


def _chunks(n, size):
    for i in range(0, n, size):
        yield np.arange(i, min(i + size, n))


def predict_scores(net, dataset, chunk=32, layer=None):
    """Eval-mode outputs (softmax probabilities by default) for every sample."""
    mode = net.mode
    net.eval()
    outs = []
    try:
        for idx in _chunks(len(dataset), chunk):
            outs.append(net.forward(dataset.batch(idx), upto=layer).output)
    finally:
        net.mode = mode
    return np.concatenate(outs)


def accuracy(net, dataset, chunk=32):
    pred = predict_scores(net, dataset, chunk).argmax(axis=1)
    return float(np.mean(pred == dataset.sample_labels()))


# ---------------------------------------------------------------------------
# training


def train(net, dataset, sched, val=None, momentum=0.9, frozen=(), log_every=0):
    """Mini-batch SGD with plateau learning-rate decay.

    ``dataset`` and ``val`` provide ``len()``, ``sample_labels()``,
    ``sample_scenarios()`` and ``batch(indices)`` (mean-subtracted inputs).
    Returns ``(net, history)``; ``net`` is updated in place.
    """
    if len(dataset) == 0:
        raise DataError("empty training set")
    labels = dataset.sample_labels()
    n_classes = net.shapes[net.index(SCORE_LAYER)][0]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DataError("labels span [%d, %d] but the softmax has %d units" % (labels.min(), labels.max(), n_classes))
    batch_size = min(sched.batch_size, len(dataset))
    sampler = BalancedSampler(dataset.sample_scenarios(), batch_size, sched.scenario_balancing, sched.seed)
    rng = np.random.default_rng(sched.seed + 7919)
    opt = OptimizerState.for_network(net, sched.lr0, momentum, sched.weight_decay)
    score = net.index(SCORE_LAYER)
    seen = np.zeros(len(dataset), dtype=int)
    history = History()
    best = np.inf
    stale = 0
    for epoch in range(1, sched.max_epochs + 1):
        net.train()
        losses = []
        for batch in sampler.epoch():
            seen[batch] += 1
            grads = None
            loss_sum = 0.0
            for lo in range(0, len(batch), sched.micro_batch):
                idx = batch[lo:lo + sched.micro_batch]
                trace = net.forward(dataset.batch(idx), rng=rng, upto=score)
                loss, g = softmax_cross_entropy(trace.output.astype(np.float64), labels[idx])
                if not np.isfinite(loss):
                    raise NumericalError("non-finite training loss at epoch %d" % epoch)
                loss_sum += loss
                gr, _ = net.backward(trace, g / len(batch), need_input_grad=False)
                if grads is None:
                    grads = gr
                else:
                    for acc, new in zip(grads, gr):
                        for k in acc:
                            acc[k] += new[k]
            sgd_step(net, grads, opt, frozen=frozen)
            losses.append(loss_sum / len(batch))
        val_error = None
        if val is not None and len(val):
            val_error = 1.0 - accuracy(net, val)
        row = dict(epoch=epoch, lr=opt.lr, train_loss=float(np.mean(losses)), val_error=val_error)
        if sched.target_train_accuracy is not None:
            row["train_accuracy"] = accuracy(net, dataset)
        history.append(**row)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d lr %.1e loss %.4f val_err %s", epoch, opt.lr, row["train_loss"], val_error)
        if sched.target_train_accuracy is not None and row["train_accuracy"] >= sched.target_train_accuracy:
            break
        # plateau rule on validation error (training loss when no validation set)
        metric = val_error if val_error is not None else row["train_loss"]
        if metric < best:
            best = metric
            stale = 0
        else:
            stale += 1
            if stale >= sched.plateau_patience:
                opt.lr /= sched.lr_drop
                stale = 0
        if opt.lr < MIN_LR * (1 - 1e-9):
            break
    history.min_passes = int(seen.min())
    if history.min_passes < 2:
        log.debug("some training samples were seen fewer than twice (min %d)", history.min_passes)
    net.eval()
    return net, history


def run_curriculum(dataset, val, schedules, num_classes, width_scale=1.0, seed=0, stages=None, log_every=0,
                   init="he"):
    """Train stages 1-4 in turn, each initialized from its predecessor.

    ``stages`` overrides the four stage definitions (ablations); it must
    have four entries, as must ``schedules``.
    """
    stages = list(stages) if stages is not None else [STAGES[i] for i in (1, 2, 3, 4)]
    schedules = list(schedules)
    if len(stages) != 4 or len(schedules) != 4:
        raise ValueError("the curriculum has exactly four stages (got %d stages, %d schedules)"
                         % (len(stages), len(schedules)))
    net = None
    histories = []
    for k, (stage, sched) in enumerate(zip(stages, schedules)):
        fresh = build_stage(stage, num_classes, width_scale, seed=seed + 101 * k, init=init)
        net = fresh if net is None else transfer_weights(net, fresh)
        net, hist = train(net, dataset, sched, val, momentum=stage.momentum, log_every=log_every)
        histories.append(hist)
    return net, histories


# ---------------------------------------------------------------------------
# signatures and fine-tuning


class FeatureSet:
    """Precomputed feature vectors exposing the dataset protocol used by :func:`train`."""

    def __init__(self, features, labels, scenarios):
        self.features = np.asarray(features)
        self.labels = np.asarray(labels, dtype=int)
        self.scenarios = list(scenarios)

    def __len__(self):
        return len(self.labels)

    def sample_labels(self):
        return self.labels

    def sample_scenarios(self):
        return self.scenarios

    def batch(self, idx):
        return self.features[np.asarray(idx)]


def signatures(net, dataset, chunk=32, normalize=True):
    """``(N, D)`` signature matrix (L2-normalized full6 activations) for a dataset."""
    feats = predict_scores(net, dataset, chunk, layer=SIGNATURE_LAYER).astype(np.float64)
    if not normalize:
        return feats
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericalError("%d samples have an all-zero full6 activation" % int(np.sum(norms == 0)))
    return feats / norms


def extract_signature(net, c):
    """Signature of one mean-subtracted :class:`~gaitsig.cuboid.FlowCuboid`."""
    if c.mean_subtracted is None:
        raise DataError("cuboid has not been mean-normalized")
    mode = net.mode
    net.eval()
    try:
        act = net.forward(c.data, upto=SIGNATURE_LAYER).output.astype(np.float64)
    finally:
        net.mode = mode
    norm = np.linalg.norm(act)
    if norm == 0:
        raise NumericalError("all-zero full6 activation")
    return GaitSignature(act / norm, c.subject, c.scenario)


def finetune_softmax(net, dataset, sched, num_classes):
    """New network whose score layer is re-sized to ``num_classes`` and trained alone.

    Layers conv1..full6 are copied unchanged. Because they are frozen their
    eval-mode output is computed once and the score layer is fitted on those
    cached features.
    """
    if len(dataset) == 0:
        raise DataError("empty fine-tuning set")
    feats = predict_scores(net, dataset, layer=SIGNATURE_LAYER)
    width = feats.shape[1]
    head = Network([LayerSpec("fully_connected", SCORE_LAYER, units=num_classes), LayerSpec("softmax", "prob")],
                   (width,), dtype=net.dtype, seed=sched.seed + 31)
    fs = FeatureSet(feats, dataset.sample_labels(), dataset.sample_scenarios())
    head, hist = train(head, fs, replace(sched, micro_batch=max(sched.micro_batch, sched.batch_size)), None,
                       momentum=0.9)
    layers = [l for l in net.layers]
    score = net.index(SCORE_LAYER)
    layers[score] = replace(layers[score], units=num_classes)
    params = [{k: v.copy() for k, v in p.items()} for p in net.params]
    params[score] = {k: v.copy() for k, v in head.params[0].items()}
    out = Network(layers, net.input_shape, params=params, dtype=net.dtype)
    out.eval()
    return out, hist
