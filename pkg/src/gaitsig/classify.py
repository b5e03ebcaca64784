"""Identity decisions from gait signatures.

One-vs-all linear SVMs, PCA compression with a nearest-neighbour gallery,
and majority voting over the subsequences of a video. Every ranking uses
the same total order: score descending, then class label ascending.
"""

import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import _binio
from .errors import DataError, ShapeError


@dataclass(frozen=True)
class RankedPrediction:
    labels: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        if len(self.labels) != len(self.scores):
            raise ValueError("labels and scores differ in length")
        if len(set(np.asarray(self.labels).tolist())) != len(self.labels):
            raise ValueError("duplicate identities in ranking")
        if np.any(np.diff(self.scores) > 0):
            raise ValueError("scores must be non-increasing")

    @property
    def top(self):
        return self.labels[0]

    @property
    def top_score(self):
        return float(self.scores[0])

    def score_of(self, label):
        hit = np.flatnonzero(self.labels == label)
        return float(self.scores[hit[0]]) if len(hit) else None


def rank_scores(classes, scores):
    """Sort ``classes`` by ``scores`` descending, ties by ascending label."""
    classes = np.asarray(classes)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((classes, -scores))
    return RankedPrediction(classes[order], scores[order])


def _as_matrix(sigs):
    rows = [s.vector if hasattr(s, "vector") else s for s in sigs] if not isinstance(sigs, np.ndarray) else sigs
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("expected a 2-D signature matrix")
    return X


def l2_normalize(X):
    X = np.asarray(X, dtype=np.float64)
    n = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / np.where(n == 0, 1.0, n)


# ---------------------------------------------------------------------------
# linear SVMs


@dataclass
class SvmEnsemble:
    weights: np.ndarray  # (C, dim)
    bias: np.ndarray  # (C,)
    classes: np.ndarray  # (C,)
    lam: float

    def __post_init__(self):
        if self.weights.shape[0] != len(self.bias) or len(self.bias) != len(self.classes):
            raise ShapeError("ensemble member count mismatch")

    @property
    def dim(self):
        return self.weights.shape[1]

    def decision(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ShapeError("signature dimension %d, ensemble expects %d" % (X.shape[1], self.dim))
        return X @ self.weights.T + self.bias


def _hinge_sgd(X, Y, lam, epochs, seed, batch=32, eta0=1.0):
    """Averaged mini-batch sub-gradient descent on ``lam/2 |w|^2 + mean hinge``, all columns of ``Y`` at once.

    ``Y`` is ``(n, C)`` with entries in {-1, +1}; the bias is unregularized.
    Iterates of the second half of the run are averaged.

    The descent runs on mean-centred inputs and the bias is shifted back
    afterwards. With an unregularized bias this leaves the objective
    unchanged but removes the shared component of non-negative signatures,
    which otherwise stalls the bias and slows convergence.
    """
    mu = X.mean(axis=0)
    X = X - mu
    n, d = X.shape
    C = Y.shape[1]
    rng = np.random.default_rng(seed)
    W = np.zeros((C, d))
    b = np.zeros(C)
    W_avg = np.zeros_like(W)
    b_avg = np.zeros_like(b)
    n_avg = 0
    t = 0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = perm[lo:lo + batch]
            t += 1
            eta = eta0 / np.sqrt(t)
            Xb, Yb = X[idx], Y[idx]
            active = (Yb * (Xb @ W.T + b)) < 1.0
            coef = np.where(active, Yb, 0.0)
            gW = lam * W - coef.T @ Xb / len(idx)
            gb = -coef.sum(axis=0) / len(idx)
            W -= eta * gW
            b -= eta * gb
            if epoch >= epochs // 2:
                n_avg += 1
                W_avg += (W - W_avg) / n_avg
                b_avg += (b - b_avg) / n_avg
    return W_avg, b_avg - W_avg @ mu


def train_ovr_svm(sigs, labels, lam=1e-4, epochs=60, seed=0):
    """One linear SVM per class, each separating that class from all others."""
    X = _as_matrix(sigs)
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise DataError("signature / label count mismatch")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataError("need at least two classes, got %d" % len(classes))
    Y = np.where(labels[:, None] == classes[None, :], 1.0, -1.0)
    W, b = _hinge_sgd(X, Y, lam, epochs, seed)
    return SvmEnsemble(W, b, classes, lam)


def svm_rank(ens, sig):
    x = sig.vector if hasattr(sig, "vector") else sig
    return rank_scores(ens.classes, ens.decision(x)[0])


def train_gender_svm(sigs, labels, lam=1e-4, epochs=60, seed=0):
    """Binary SVM returned as a two-member ensemble of mirrored classifiers.

    Member 1 scores ``w.x + b`` for ``classes[1]``; member 0 is its negation,
    so the ranking's top label is decided by the sign of the binary score.
    """
    X = _as_matrix(sigs)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) != 2:
        raise DataError("gender SVM needs exactly two classes present, got %s" % (classes.tolist(),))
    y = np.where(labels == classes[1], 1.0, -1.0)[:, None]
    W, b = _hinge_sgd(X, y, lam, epochs, seed)
    return SvmEnsemble(np.vstack([-W, W]), np.array([-b[0], b[0]]), classes, lam)


# ---------------------------------------------------------------------------
# PCA and nearest neighbour


@dataclass
class PcaModel:
    mean: np.ndarray  # (dim,)
    basis: np.ndarray  # (dim, k), orthonormal columns
    explained_variance: np.ndarray  # (k,)
    total_variance: float

    @property
    def k(self):
        return self.basis.shape[1]

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def explained_ratio(self):
        return float(self.explained_variance.sum() / self.total_variance) if self.total_variance > 0 else 1.0


def _fix_signs(basis):
    pivot = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivot, np.arange(basis.shape[1])])
    return basis * np.where(signs == 0, 1.0, signs)


def fit_pca(sigs, k):
    """Top-``k`` principal directions of L2-normalized, mean-centred signatures.

    Each basis vector's largest-magnitude entry is made positive.
    """
    X = _as_matrix(sigs)
    n, d = X.shape
    if k > d:
        raise DataError("k=%d exceeds the signature dimension %d" % (k, d))
    if k >= n:
        raise DataError("k=%d requires more than %d samples" % (k, n))
    Xn = l2_normalize(X)
    mean = Xn.mean(axis=0)
    Xc = Xn - mean
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    var = S ** 2 / max(n - 1, 1)
    return PcaModel(mean, _fix_signs(Vt[:k].T.copy()), var[:k], float(var.sum()))


def pca_project(m, sig, normalize=True):
    """Compact code ``basis^T (x - mean)``; ``x`` is L2-normalized first unless ``normalize=False``."""
    x = np.asarray(sig.vector if hasattr(sig, "vector") else sig, dtype=np.float64)
    if x.shape[-1] != m.dim:
        raise ShapeError("signature dimension %d, PCA expects %d" % (x.shape[-1], m.dim))
    if normalize:
        x = l2_normalize(x)
    return (x - m.mean) @ m.basis


def pca_backproject(m, z):
    return np.asarray(z) @ m.basis.T + m.mean


@dataclass
class GallerySet:
    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.labels = np.asarray(self.labels)
        if len(self.vectors) == 0 or len(self.vectors) != len(self.labels):
            raise DataError("gallery must be non-empty with one label per vector")

    def add(self, vectors, labels):
        """Enrol more samples (new identities need no retraining)."""
        return GallerySet(np.vstack([self.vectors, vectors]), np.concatenate([self.labels, labels]))


def nn_rank(g, q):
    """Rank every gallery identity by its closest sample (score = -distance)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != g.vectors.shape[1]:
        raise ShapeError("query dimension %d, gallery has %d" % (q.shape[-1], g.vectors.shape[1]))
    dist = np.sqrt(np.sum((g.vectors - q) ** 2, axis=1))
    classes = np.unique(g.labels)
    best = np.array([dist[g.labels == c].min() for c in classes])
    return rank_scores(classes, -best)


# ---------------------------------------------------------------------------
# voting


def majority_vote(preds):
    """Most frequent top-1 identity; ties go to the higher mean top-1 score, then the lower label."""
    preds = list(preds)
    if not preds:
        raise DataError("cannot vote over an empty prediction list")
    votes = Counter()
    score_sum = Counter()
    for p in preds:
        votes[p.top] += 1
        score_sum[p.top] += p.top_score
    return min(votes, key=lambda c: (-votes[c], -score_sum[c] / votes[c], c))


def video_ranking(preds):
    """Identity ranking for a whole video built from its subsequence predictions.

    Order: top-1 vote count, then mean top-1 score among the voting
    subsequences, then mean score over all subsequences, then label. The
    first entry always equals :func:`majority_vote`.
    """
    preds = list(preds)
    if not preds:
        raise DataError("empty prediction list")
    votes = Counter(p.top for p in preds)
    top_sum = Counter()
    for p in preds:
        top_sum[p.top] += p.top_score
    classes = sorted(set(np.concatenate([p.labels for p in preds]).tolist()))
    mean_all = {}
    for c in classes:
        vals = [p.score_of(c) for p in preds]
        vals = [v for v in vals if v is not None]
        mean_all[c] = float(np.mean(vals)) if vals else -np.inf
    key = {c: (-votes.get(c, 0), -(top_sum[c] / votes[c]) if votes.get(c) else np.inf, -mean_all[c], c)
           for c in classes}
    ordered = sorted(classes, key=lambda c: key[c])
    # monotone pseudo-score so the result is a valid RankedPrediction
    return RankedPrediction(np.array(ordered), -np.arange(len(ordered), dtype=np.float64))


# ---------------------------------------------------------------------------
# model files


def save_svm(path, ens):
    C, d = ens.weights.shape
    with open(path, "wb") as fh:
        _binio.write_header(fh, b"GFSV", C, d)
        for c in range(C):
            _binio.write_array(fh, np.append(ens.weights[c], ens.bias[c]), "f4")
        fh.write(struct.pack("<d", ens.lam))


def load_svm(path, classes=None):
    with open(path, "rb") as fh:
        C, d = _binio.read_header(fh, b"GFSV", 2)
        rows = np.stack([_binio.read_array(fh, "f4", d + 1) for _ in range(C)]).astype(np.float64)
        (lam,) = struct.unpack("<d", _binio.read_exact(fh, 8))
    classes = np.arange(C) if classes is None else np.asarray(classes)
    return SvmEnsemble(rows[:, :d], rows[:, d], classes, lam)


def save_pca(path, m):
    with open(path, "wb") as fh:
        _binio.write_header(fh, b"GFPC", m.dim, m.k)
        _binio.write_array(fh, m.mean, "f4")
        _binio.write_array(fh, m.basis, "f4")


def load_pca(path):
    with open(path, "rb") as fh:
        d, k = _binio.read_header(fh, b"GFPC", 2)
        mean = _binio.read_array(fh, "f4", d).astype(np.float64)
        basis = _binio.read_array(fh, "f4", d * k).reshape(d, k).astype(np.float64)
    return PcaModel(mean, basis, np.full(k, np.nan), float("nan"))


def save_gallery(path, g):
    n, d = g.vectors.shape
    with open(path, "wb") as fh:
        _binio.write_header(fh, b"GFGL", n, d)
        for lab, vec in zip(g.labels, g.vectors):
            fh.write(struct.pack("<I", int(lab)))
            _binio.write_array(fh, vec, "f4")


def load_gallery(path):
    with open(path, "rb") as fh:
        n, d = _binio.read_header(fh, b"GFGL", 2)
        labels, vecs = [], []
        for _ in range(n):
            (lab,) = struct.unpack("<I", _binio.read_exact(fh, 4))
            labels.append(lab)
            vecs.append(_binio.read_array(fh, "f4", d))
    return GallerySet(np.array(vecs, dtype=np.float64), np.array(labels))
