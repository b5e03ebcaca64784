import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitsig import classify
from gaitsig.classify import (
    GallerySet,
    RankedPrediction,
    fit_pca,
    majority_vote,
    nn_rank,
    pca_backproject,
    pca_project,
    rank_scores,
    svm_rank,
    train_gender_svm,
    train_ovr_svm,
)
from gaitsig.errors import DataError, ShapeError


def unit_blobs(rng, n_classes, per_class, dim, noise=0.05, centers=None):
    if centers is None:
        centers = classify.l2_normalize(rng.normal(size=(n_classes, dim)))
    X = np.repeat(centers, per_class, axis=0) + noise * rng.normal(size=(n_classes * per_class, dim))
    return classify.l2_normalize(X), np.repeat(np.arange(n_classes), per_class), centers


# -- ranking primitives ------------------------------------------------------


def test_rank_scores_orders_descending():
    r = rank_scores([0, 1, 2], [0.9, 0.1, -0.3])
    assert r.labels.tolist() == [0, 1, 2]


def test_rank_scores_tie_goes_to_lower_label():
    r = rank_scores([2, 1, 0], [0.5, 0.5, 0.1])
    assert r.labels.tolist() == [1, 2, 0]


def test_ranked_prediction_rejects_bad_input():
    with pytest.raises(ValueError):
        RankedPrediction(np.array([0, 0]), np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        RankedPrediction(np.array([0, 1]), np.array([0.1, 0.5]))


# -- SVM ---------------------------------------------------------------------


def test_svm_orthogonal_classes_separable():
    X = np.vstack([np.tile(np.eye(4)[0], (10, 1)), np.tile(np.eye(4)[1], (10, 1))])
    y = np.repeat([0, 1], 10)
    ens = train_ovr_svm(X, y)
    assert ens.weights.shape == (2, 4)
    assert all(svm_rank(ens, x).top == t for x, t in zip(X, y))


def test_svm_five_blobs_held_out():
    rng = np.random.default_rng(3)
    X, y, centers = unit_blobs(rng, 5, 40, 32)
    Xt, yt, _ = unit_blobs(rng, 5, 100, 32, centers=centers)
    ens = train_ovr_svm(X, y, lam=1e-4, seed=0)
    pred = np.array([svm_rank(ens, x).top for x in Xt])
    assert np.mean(pred == yt) >= 0.99


def test_svm_single_class_rejected():
    with pytest.raises(DataError):
        train_ovr_svm(np.eye(3), [1, 1, 1])


def test_svm_dimension_mismatch():
    ens = train_ovr_svm(np.eye(4), [0, 1, 0, 1])
    with pytest.raises(ShapeError):
        svm_rank(ens, np.ones(5))


def test_svm_training_is_deterministic():
    rng = np.random.default_rng(0)
    X, y, _ = unit_blobs(rng, 3, 10, 8)
    a = train_ovr_svm(X, y, seed=5)
    b = train_ovr_svm(X, y, seed=5)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_svm_rank_matches_sort_oracle():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        C, d = rng.integers(2, 12), rng.integers(1, 10)
        W = rng.normal(size=(C, d))
        b = rng.normal(size=C)
        classes = rng.permutation(100)[:C]
        ens = classify.SvmEnsemble(W, b, classes, 1e-4)
        x = rng.normal(size=d)
        scores = W @ x + b
        oracle = sorted(range(C), key=lambda c: (-scores[c], classes[c]))
        got = svm_rank(ens, x)
        assert got.labels.tolist() == [classes[c] for c in oracle]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_svm_top1_invariant_to_positive_rescaling(seed, scale):
    rng = np.random.default_rng(seed)
    W, b = rng.normal(size=(6, 5)), rng.normal(size=6)
    x = rng.normal(size=5)
    a = svm_rank(classify.SvmEnsemble(W, b, np.arange(6), 1e-4), x)
    s = svm_rank(classify.SvmEnsemble(W * scale, b * scale, np.arange(6), 1e-4), x)
    assert a.top == s.top


# -- gender SVM ----------------------------------------------------------------


def test_gender_svm_separable_blobs():
    rng = np.random.default_rng(1)
    X, y, _ = unit_blobs(rng, 2, 30, 16)
    labels = np.array(["F", "M"])[y]
    ens = train_gender_svm(X, labels)
    assert [svm_rank(ens, x).top for x in X] == labels.tolist()


def test_gender_svm_imbalanced_recall():
    rng = np.random.default_rng(2)
    centers = classify.l2_normalize(rng.normal(size=(2, 16)))
    Xm, _, _ = unit_blobs(rng, 1, 63, 16, centers=centers[:1])
    Xf, _, _ = unit_blobs(rng, 1, 37, 16, centers=centers[1:])
    X = np.vstack([Xm, Xf])
    labels = np.array(["M"] * 63 + ["F"] * 37)
    ens = train_gender_svm(X, labels)
    Tm, _, _ = unit_blobs(rng, 1, 200, 16, centers=centers[:1])
    Tf, _, _ = unit_blobs(rng, 1, 200, 16, centers=centers[1:])
    assert np.mean([svm_rank(ens, x).top == "M" for x in Tm]) >= 0.95
    assert np.mean([svm_rank(ens, x).top == "F" for x in Tf]) >= 0.95


def test_gender_svm_needs_both_classes():
    with pytest.raises(DataError):
        train_gender_svm(np.eye(4), ["M"] * 4)


def test_gender_svm_is_mirrored_pair():
    rng = np.random.default_rng(4)
    X, y, _ = unit_blobs(rng, 2, 20, 8, noise=0.4)
    ens = train_gender_svm(X, y)
    assert np.array_equal(ens.weights[0], -ens.weights[1])
    for x in X:
        score = ens.weights[1] @ x + ens.bias[1]
        want = 1 if score > 0 else 0
        if score != 0:
            assert svm_rank(ens, x).top == want


# -- PCA -------------------------------------------------------------------------


def test_pca_basis_orthonormal_and_projection_centred():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 40))
    m = fit_pca(X, 16)
    assert np.allclose(m.basis.T @ m.basis, np.eye(16), atol=1e-6)
    Z = pca_project(m, X)
    assert np.allclose(Z.mean(axis=0), 0.0, atol=1e-6)


def test_pca_sign_convention():
    rng = np.random.default_rng(1)
    m = fit_pca(rng.normal(size=(60, 10)), 5)
    pivot = np.argmax(np.abs(m.basis), axis=0)
    assert np.all(m.basis[pivot, np.arange(5)] > 0)


def test_pca_exact_subspace_reconstruction():
    rng = np.random.default_rng(2)
    basis = np.linalg.qr(rng.normal(size=(64, 8)))[0]
    X = rng.normal(size=(100, 8)) @ basis.T + 0.5 * basis[:, 0]
    m = fit_pca(X, 8)
    Xn = classify.l2_normalize(X)
    rec = pca_backproject(m, pca_project(m, X))
    assert np.max(np.abs(rec - Xn)) < 1e-6


def test_pca_full_rank_explains_everything():
    rng = np.random.default_rng(3)
    m = fit_pca(rng.normal(size=(500, 12)), 12)
    assert m.explained_ratio == pytest.approx(1.0, abs=1e-9)


def test_pca_matches_eigh_oracle():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 2048))
    m = fit_pca(X, 8)
    Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
    Xc = Xn - Xn.mean(axis=0)
    # independent route: eigen-decomposition of the 50x50 Gram matrix
    vals, vecs = scipy.linalg.eigh(Xc @ Xc.T)
    top = np.argsort(vals)[::-1][:8]
    ref = Xc.T @ vecs[:, top] / np.sqrt(vals[top])
    ref *= np.sign(ref[np.argmax(np.abs(ref), axis=0), np.arange(8)])
    assert np.max(np.abs(m.basis - ref)) < 1e-5
    assert np.max(np.abs(pca_project(m, X) - Xc @ ref)) < 1e-5


def test_pca_errors():
    X = np.random.default_rng(0).normal(size=(10, 5))
    with pytest.raises(DataError):
        fit_pca(X, 10)
    with pytest.raises(DataError):
        fit_pca(np.random.default_rng(0).normal(size=(50, 5)), 6)
    m = fit_pca(X, 3)
    with pytest.raises(ShapeError):
        pca_project(m, np.ones(6))


def test_pca_project_mean_and_basis_vectors():
    rng = np.random.default_rng(5)
    m = fit_pca(rng.normal(size=(40, 10)), 4)
    assert np.allclose(pca_project(m, m.mean, normalize=False), 0.0)
    for i in range(4):
        e = pca_project(m, m.mean + m.basis[:, i], normalize=False)
        assert np.allclose(e, np.eye(4)[i], atol=1e-12)


# -- nearest neighbour --------------------------------------------------------


def test_nn_query_equal_to_gallery_vector():
    g = GallerySet(np.array([[0.0, 0.0], [3.0, 4.0]]), [7, 9])
    r = nn_rank(g, np.array([3.0, 4.0]))
    assert r.top == 9 and r.top_score == 0.0


def test_nn_nearer_identity_first():
    g = GallerySet(np.array([[1.0, 0.0], [2.0, 0.0]]), [0, 1])
    r = nn_rank(g, np.zeros(2))
    assert r.labels.tolist() == [0, 1]
    assert r.scores.tolist() == [-1.0, -2.0]


def test_nn_dimension_mismatch():
    g = GallerySet(np.ones((2, 3)), [0, 1])
    with pytest.raises(ShapeError):
        nn_rank(g, np.ones(4))


def test_gallery_rejects_empty():
    with pytest.raises(DataError):
        GallerySet(np.zeros((0, 3)), [])


def test_nn_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n_id = rng.integers(2, 21)
        per = rng.integers(1, 4, size=n_id)
        d = rng.integers(1, 6)
        vecs = rng.normal(size=(per.sum(), d))
        labels = np.repeat(rng.permutation(50)[:n_id], per)
        q = rng.normal(size=d)
        best = {}
        for v, lab in zip(vecs, labels):
            dist = np.sqrt(((v - q) ** 2).sum())
            best[lab] = min(best.get(lab, np.inf), dist)
        oracle = sorted(best, key=lambda c: (best[c], c))
        assert nn_rank(GallerySet(vecs, labels), q).labels.tolist() == oracle


def test_gallery_add_new_identity():
    g = GallerySet(np.zeros((1, 2)), [0]).add(np.ones((1, 2)), [1])
    assert nn_rank(g, np.ones(2)).top == 1


# -- voting ----------------------------------------------------------------------


def pred(top, score=1.0, others=(9,)):
    labels = [top] + [o for o in others if o != top]
    return RankedPrediction(np.array(labels), np.array([score] + [score - 1.0] * (len(labels) - 1)))


def test_majority_vote_simple():
    assert majority_vote([pred(0), pred(0), pred(1)]) == 0


def test_majority_vote_tie_by_mean_score():
    assert majority_vote([pred(0, 0.9), pred(1, 0.5)]) == 0
    assert majority_vote([pred(0, 0.5), pred(1, 0.9)]) == 1


def test_majority_vote_full_tie_lower_label():
    assert majority_vote([pred(3, 0.5), pred(1, 0.5)]) == 1


def test_majority_vote_empty():
    with pytest.raises(DataError):
        majority_vote([])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 30), st.integers(1, 40))
def test_majority_vote_unanimous(label, n):
    assert majority_vote([pred(label, 0.1 * i) for i in range(n)]) == label


def test_majority_vote_matches_tally_oracle():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = rng.integers(1, 15)
        tops = rng.integers(0, 4, size=n)
        scores = np.round(rng.random(n), 1)
        preds = [pred(int(t), float(s)) for t, s in zip(tops, scores)]
        tally = {}
        for t, s in zip(tops, scores):
            c, tot = tally.get(t, (0, 0.0))
            tally[t] = (c + 1, tot + s)
        oracle = min(tally, key=lambda t: (-tally[t][0], -tally[t][1] / tally[t][0], t))
        assert majority_vote(preds) == oracle


def test_video_ranking_head_equals_vote():
    rng = np.random.default_rng(9)
    for _ in range(200):
        preds = []
        for _ in range(rng.integers(1, 8)):
            preds.append(rank_scores(np.arange(6), rng.normal(size=6)))
        vr = classify.video_ranking(preds)
        assert vr.top == majority_vote(preds)
        assert sorted(vr.labels.tolist()) == list(range(6))


# -- model files ------------------------------------------------------------------


def test_svm_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    ens = classify.SvmEnsemble(rng.normal(size=(3, 5)).astype(np.float32).astype(float),
                               rng.normal(size=3).astype(np.float32).astype(float), np.arange(3), 1e-4)
    classify.save_svm(tmp_path / "m.gfsv", ens)
    back = classify.load_svm(tmp_path / "m.gfsv")
    assert np.array_equal(back.weights, ens.weights) and np.array_equal(back.bias, ens.bias)
    assert back.lam == 1e-4
    assert (tmp_path / "m.gfsv").read_bytes()[:4] == b"GFSV"


def test_pca_file_roundtrip(tmp_path):
    m = fit_pca(np.random.default_rng(0).normal(size=(30, 6)), 3)
    classify.save_pca(tmp_path / "p.gfpc", m)
    back = classify.load_pca(tmp_path / "p.gfpc")
    assert np.allclose(back.basis, m.basis, atol=1e-7) and np.allclose(back.mean, m.mean, atol=1e-7)


def test_gallery_file_roundtrip(tmp_path):
    g = GallerySet(np.arange(12, dtype=float).reshape(4, 3), [5, 5, 6, 7])
    classify.save_gallery(tmp_path / "g.gfgl", g)
    back = classify.load_gallery(tmp_path / "g.gfgl")
    assert np.array_equal(back.vectors, g.vectors) and back.labels.tolist() == [5, 5, 6, 7]


def test_truncated_model_file(tmp_path):
    classify.save_pca(tmp_path / "p.gfpc", fit_pca(np.random.default_rng(0).normal(size=(30, 6)), 3))
    data = (tmp_path / "p.gfpc").read_bytes()
    (tmp_path / "p.gfpc").write_bytes(data[:-5])
    with pytest.raises(DataError):
        classify.load_pca(tmp_path / "p.gfpc")
