"""Classifiers, resampled cross-validation and 2-D PCA for invariance evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from invariant_cae.errors import ValidationError


@dataclass
class LinearClassifier:
    weights: np.ndarray
    bias: np.ndarray
    classes: np.ndarray

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights.T + self.bias

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.decision(X), axis=1)]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logreg_objective(W, b, X, Y, l2):
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradients; ``Y`` is one-hot."""
    P = _softmax(X @ W.T + b)
    n = X.shape[0]
    value = -np.sum(Y * np.log(np.maximum(P, 1e-300))) / n + 0.5 * l2 * np.sum(W * W)
    G = (P - Y) / n
    return value, G.T @ X + l2 * W, G.sum(axis=0)


def logreg_train(X, y, l2: float = 1e-4, epochs: int = 500, lr: float = 0.1, rng=None) -> LinearClassifier:
    """Multinomial logistic regression by full-batch gradient descent."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValidationError("logistic regression needs at least two classes")
    if X.shape[0] < classes.size:
        raise ValidationError(f"{X.shape[0]} samples for {classes.size} classes")
    rng = np.random.default_rng(0) if rng is None else rng
    Y = (y[:, None] == classes[None, :]).astype(np.float64)
    W = rng.normal(scale=1e-3, size=(classes.size, X.shape[1]))
    b = np.zeros(classes.size)
    for _ in range(epochs):
        _, gW, gb = logreg_objective(W, b, X, Y, l2)
        W -= lr * gW
        b -= lr * gb
    return LinearClassifier(W, b, classes)


def knn_classify(train_X, train_y, query_X, k: int = 5) -> np.ndarray:
    """Euclidean k-NN majority vote.

    Ties between classes go to the smaller summed neighbour distance, then
    to the smaller label.
    """
    train_X = np.asarray(train_X, dtype=np.float64)
    query_X = np.atleast_2d(np.asarray(query_X, dtype=np.float64))
    train_y = np.asarray(train_y)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > train_X.shape[0]:
        raise ValidationError(f"k={k} exceeds training size {train_X.shape[0]}")
    sq = np.sum(query_X**2, 1)[:, None] + np.sum(train_X**2, 1)[None, :] - 2.0 * query_X @ train_X.T
    dist = np.sqrt(np.maximum(sq, 0.0))
    # stable sort keeps ties in training order, so results do not depend on the partition algorithm
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    out = np.empty(query_X.shape[0], dtype=train_y.dtype)
    for q in range(query_X.shape[0]):
        labels = train_y[nearest[q]]
        d = dist[q, nearest[q]]
        best = None
        for lab in np.unique(labels):
            sel = labels == lab
            key = (-int(sel.sum()), float(d[sel].sum()), lab)
            if best is None or key < best:
                best = key
        out[q] = best[2]
    return out


@dataclass
class ClassifierSpec:
    kind: str = "logreg"
    k: int = 5
    l2: float = 1e-4
    epochs: int = 500
    lr: float = 0.1
    standardize: bool = True

    def fit_predict(self, train_X, train_y, test_X, rng) -> np.ndarray:
        if self.standardize:
            mu = train_X.mean(axis=0)
            sd = np.maximum(train_X.std(axis=0), 1e-8)
            train_X, test_X = (train_X - mu) / sd, (test_X - mu) / sd
        if self.kind == "logreg":
            return logreg_train(train_X, train_y, self.l2, self.epochs, self.lr, rng).predict(test_X)
        if self.kind == "knn":
            return knn_classify(train_X, train_y, test_X, self.k)
        raise ValidationError(f"unknown classifier kind {self.kind!r}")


@dataclass
class CvReport:
    per_fold_error: list = field(default_factory=list)
    mean_error: float = 0.0
    std_error: float = 0.0
    train_size: int = 0
    classifier: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def balanced_sample(labels, size: int, rng, exclude=None) -> np.ndarray:
    """Indices of a class-balanced sample (remainders spread over the first classes)."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    per = np.full(classes.size, size // classes.size)
    per[: size % classes.size] += 1
    available = np.ones(labels.size, dtype=bool)
    if exclude is not None:
        available[exclude] = False
    picked = []
    for c, count in zip(classes, per):
        pool = np.flatnonzero((labels == c) & available)
        if pool.size < count:
            raise ValidationError(f"class {c} has {pool.size} samples, {count} needed")
        picked.append(rng.choice(pool, size=count, replace=False))
    return np.sort(np.concatenate(picked))


def cross_validate(
    features,
    labels,
    train_size: int,
    folds: int,
    test_size: int,
    classifier_spec: ClassifierSpec,
    rng,
    test_features=None,
    test_labels=None,
) -> CvReport:
    """Repeated holdout: each fold draws a balanced train subset and a disjoint test set.

    With ``test_features`` given, test sets are drawn from that separate pool.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    separate = test_features is not None
    if separate:
        test_features = np.asarray(test_features, dtype=np.float64)
        test_labels = np.asarray(test_labels)
        if test_labels.size < test_size:
            raise ValidationError(f"test pool has {test_labels.size} samples, {test_size} needed")
    elif train_size + test_size > labels.size:
        raise ValidationError(f"{labels.size} samples cannot supply {train_size} train + {test_size} test")
    errors = []
    for _ in range(folds):
        tr = balanced_sample(labels, train_size, rng)
        if separate:
            te = rng.choice(test_labels.size, size=test_size, replace=False)
            tX, ty = test_features[te], test_labels[te]
        else:
            rest = np.setdiff1d(np.arange(labels.size), tr)
            te = rng.choice(rest, size=test_size, replace=False)
            tX, ty = features[te], labels[te]
        pred = classifier_spec.fit_predict(features[tr], labels[tr], tX, rng)
        errors.append(float(np.mean(pred != ty)))
    return CvReport(
        per_fold_error=errors,
        mean_error=float(np.mean(errors)),
        std_error=float(np.std(errors)),
        train_size=train_size,
        classifier=asdict(classifier_spec),
    )


def _top_eigvec(C, rng, against=(), tol=1e-10, max_iter=100_000):
    """Power iteration kept orthogonal to the directions in ``against``.

    Stops when the unit iterate moves by at most ``tol`` (up to sign).
    """
    def project_out(x):
        for u in against:
            x = x - (u @ x) * u
        return x

    v = project_out(rng.normal(size=C.shape[0]))
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = project_out(C @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        w /= norm
        step = min(np.linalg.norm(w - v), np.linalg.norm(w + v))
        v = w
        if step <= tol:
            break
    return float(v @ C @ v), v


@dataclass
class PcaResult:
    scores: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    mean: np.ndarray


def pca_2d(X, seed: int = 0) -> PcaResult:
    """Projection onto the top two principal directions via power iteration with deflation.

    Each component's sign makes its largest-magnitude loading positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValidationError("PCA needs at least three rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / (X.shape[0] - 1)
    if np.allclose(C, 0.0, atol=1e-300):
        raise ValidationError("data has rank 0")
    rng = np.random.default_rng(seed)
    comps, variances = [], []
    work = C.copy()
    for _ in range(2):
        lam, v = _top_eigvec(work, rng, comps)
        v = v * np.sign(v[np.argmax(np.abs(v))])
        comps.append(v)
        variances.append(max(lam, 0.0))
        work = work - lam * np.outer(v, v)
    components = np.array(comps)
    return PcaResult(Xc @ components.T, components, np.array(variances), mean)
