import numpy as np
import pytest

from invariant_cae.alignment import frame_distances
from invariant_cae.basis import magnitude_features, phase_difference
from invariant_cae.classify import (
    ClassifierSpec,
    balanced_sample,
    cross_validate,
    knn_classify,
    logreg_objective,
    logreg_train,
    pca_2d,
)
from invariant_cae.errors import ValidationError
from invariant_cae.model import relative_error
from invariant_cae.transforms import rotate_images


def blobs(rng, n=50, sep=6.0, dim=2):
    X = np.vstack([rng.normal(size=(n, dim)), rng.normal(size=(n, dim)) + sep])
    return X, np.repeat([0, 1], n)


# ---- logistic regression


def test_logreg_separable_blobs(rng):
    X, y = blobs(rng)
    clf = logreg_train(X, y)
    assert np.mean(clf.predict(X) == y) == 1.0
    assert np.all(np.isfinite(clf.weights)) and clf.weights.shape == (2, 2)


def test_logreg_l2_shrinks_weights(rng):
    X, y = blobs(rng, sep=3.0)
    norms = [np.linalg.norm(logreg_train(X, y, l2=l2, epochs=2000).weights) for l2 in (0.01, 0.1, 1.0)]
    assert norms[0] > norms[1] > norms[2]


def test_logreg_one_sample_per_class():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, -1.0]])
    y = np.array([4, 7, 9])
    clf = logreg_train(X, y, epochs=3000, lr=0.5)
    assert clf.predict(X).tolist() == [4, 7, 9]


def test_logreg_errors():
    with pytest.raises(ValidationError, match="two classes"):
        logreg_train(np.ones((4, 2)), np.zeros(4))


def test_logreg_gradient_finite_differences(rng):
    X = rng.normal(size=(6, 4))
    Y = np.eye(3)[rng.integers(0, 3, 6)]
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    _, gW, gb = logreg_objective(W, b, X, Y, 0.3)
    h = 1e-6
    for P, G in ((W, gW), (b, gb)):
        num = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + h
            up = logreg_objective(W, b, X, Y, 0.3)[0]
            P[idx] = old - h
            down = logreg_objective(W, b, X, Y, 0.3)[0]
            P[idx] = old
            num[idx] = (up - down) / (2 * h)
        assert relative_error(G, num) <= 1e-5


# ---- k-NN


def test_knn_query_on_training_point(rng):
    X = rng.normal(size=(20, 3))
    y = rng.integers(0, 4, 20)
    assert np.array_equal(knn_classify(X, y, X, k=1), y)


def test_knn_blobs(rng):
    X, y = blobs(rng)
    Q, qy = blobs(rng, n=20)
    assert np.array_equal(knn_classify(X, y, Q, k=5), qy)


def test_knn_tie_breaks():
    X = np.array([[0.0], [1.0], [3.0], [4.0]])
    y = np.array([1, 1, 0, 0])
    # two votes each; class 1 has the smaller summed distance from the query at 1.5
    assert knn_classify(X, y, [[1.5]], k=4).tolist() == [1]
    # equal counts and equal summed distance: the smaller label wins
    assert knn_classify(X, y, [[2.0]], k=4).tolist() == [0]


def test_knn_errors():
    with pytest.raises(ValidationError):
        knn_classify(np.ones((3, 2)), np.zeros(3), np.ones((1, 2)), k=4)
    with pytest.raises(ValidationError):
        knn_classify(np.ones((3, 2)), np.zeros(3), np.ones((1, 2)), k=0)


# ---- cross-validation


class ConstantSpec(ClassifierSpec):
    def fit_predict(self, train_X, train_y, test_X, rng):
        return np.zeros(len(test_X), dtype=int)


def test_cv_constant_classifier_is_at_chance():
    labels = np.repeat(np.arange(10), 300)
    feats = np.zeros((labels.size, 1))
    rep = cross_validate(feats, labels, 100, 20, 1000, ConstantSpec(), np.random.default_rng(0))
    assert len(rep.per_fold_error) == 20
    assert rep.mean_error == pytest.approx(0.9, abs=0.02)


def test_cv_single_fold_and_determinism(rng):
    X, y = blobs(rng)
    spec = ClassifierSpec("knn", k=3)
    one = cross_validate(X, y, 20, 1, 30, spec, np.random.default_rng(4))
    assert len(one.per_fold_error) == 1 and one.std_error == 0.0
    again = cross_validate(X, y, 20, 1, 30, spec, np.random.default_rng(4))
    assert one.to_dict() == again.to_dict()


def test_cv_errors(rng):
    X, y = blobs(rng, n=10)
    with pytest.raises(ValidationError):
        cross_validate(X, y, 15, 2, 10, ClassifierSpec(), rng)
    with pytest.raises(ValidationError):
        cross_validate(X, y, 4, 1, 5, ClassifierSpec(), rng, X[:3], y[:3])


def test_balanced_sample(rng):
    labels = np.repeat(np.arange(3), 10)
    idx = balanced_sample(labels, 7, rng)
    assert np.bincount(labels[idx]).tolist() == [3, 2, 2]
    with pytest.raises(ValidationError):
        balanced_sample(labels, 40, rng)


# ---- PCA


def test_pca_matches_dense_eigensolver(rng):
    X = rng.normal(size=(50, 8)) * np.linspace(3, 0.5, 8)
    res = pca_2d(X)
    Xc = X - X.mean(axis=0)
    evals = np.linalg.eigh(Xc.T @ Xc / 49)[0][::-1]
    np.testing.assert_allclose(res.explained_variance, evals[:2], rtol=1e-8)
    for comp in res.components:
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_is_isometry_on_2d(rng):
    X = rng.normal(size=(30, 2)) * [2.0, 0.7]
    X -= X.mean(axis=0)
    s = pca_2d(X).scores
    def pairwise(Z):
        return np.linalg.norm(Z[:, None] - Z[None, :], axis=-1)

    np.testing.assert_allclose(pairwise(s), pairwise(X), atol=1e-8)


def test_pca_line(rng):
    t = rng.normal(size=40)
    X = np.outer(t, rng.normal(size=6))
    assert pca_2d(X).explained_variance[1] <= 1e-10


def test_pca_errors():
    with pytest.raises(ValidationError):
        pca_2d(np.ones((2, 3)))
    with pytest.raises(ValidationError):
        pca_2d(np.ones((5, 3)))


# ---- properties of the trained rotation basis


def test_magnitudes_cluster_by_class(mnist, mnist_run):
    rng = np.random.default_rng(21)
    idx = np.random.default_rng(0).permutation(len(mnist.labels))[3000:4000]
    rot = rotate_images(mnist.images[idx], rng.uniform(0, 2 * np.pi, idx.size))
    feats = magnitude_features(mnist_run.basis, ((rot - mnist_run.mean) / mnist_run.std).reshape(idx.size, -1))
    D = frame_distances(feats, feats, "euclidean")
    y = mnist.labels[idx]
    same = y[:, None] == y[None, :]
    off = ~np.eye(idx.size, dtype=bool)
    assert D[same & off].mean() / D[~same].mean() <= 0.9


def test_phase_differences_encode_rotation_angle(mnist, mnist_run):
    rng = np.random.default_rng(22)
    perm = np.random.default_rng(0).permutation(len(mnist.labels))

    def pairs(ids):
        t1, t2 = rng.uniform(0, 2 * np.pi, (2, ids.size))
        a, b = (((rotate_images(mnist.images[ids], t) - mnist_run.mean) / mnist_run.std).reshape(ids.size, -1) for t in (t1, t2))
        dphi = phase_difference(mnist_run.basis, a, b)
        return np.hstack([np.cos(dphi), np.sin(dphi)]), np.angle(np.exp(1j * (t2 - t1)))

    train_X, train_t = pairs(perm[:2000])
    test_X, test_t = pairs(perm[3000:3500])
    nearest = np.argmin(frame_distances(test_X, train_X, "euclidean"), axis=1)

    def angular_error(pred):
        return np.mean(np.abs(np.angle(np.exp(1j * (pred - test_t)))))

    err = angular_error(train_t[nearest])
    baseline = angular_error(rng.permutation(train_t)[nearest])
    assert baseline >= 2 * err
