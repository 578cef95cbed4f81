"""Swappable downstream classifiers for fused embeddings.

Four from-scratch learners (logistic regression, KNN, decision tree,
linear SVM) plus a standardizer they share. Multiclass is handled
one-vs-rest for the linear models; the tree uses Gini impurity with a
depth cap; KNN is lazy with deterministic tie-breaking (smallest class
id on vote ties, smallest stored index among equidistant neighbors).
The fully-connected option is the trained model head itself and lives in
models.py, not here.
"""

import os
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, load_pft, save_pft

NUM_CLASSES = 4

SHALLOW_KINDS = ("logistic_regression", "knn", "decision_tree", "linear_svm")
ALL_KINDS = SHALLOW_KINDS + ("fully_connected",)


@dataclass
class Standardizer:
    """Per-column mean/std fitted on the training embeddings."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        std = X.std(axis=0)
        std[std == 0] = 1.0
        return cls(mean=X.mean(axis=0), std=std)

    def apply(self, X):
        return (X - self.mean) / self.std


class ClassifierBase:
    kind = None

    def fit(self, X, y, rng=None):
        raise NotImplementedError

    def predict(self, X):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 1:
            X = X[None]
        if X.shape[1] != self.n_features:
            raise ShapeError(
                f"{self.kind}: got width {X.shape[1]}, fitted on {self.n_features}"
            )
        return self._predict(X)

    def _check_fit_inputs(self, X, y):
        if len(X) == 0:
            raise ValueError("cannot fit on an empty set")
        if y.min() < 0 or y.max() >= NUM_CLASSES:
            raise ValueError("labels must be in 0..3")
        self.n_features = X.shape[1]


class LogisticRegression(ClassifierBase):
    """One-vs-rest logistic regression trained by full-batch gradient descent."""

    kind = "logistic_regression"

    def __init__(self, epochs=500, lr=0.01, l2=1e-4):
        self.epochs = epochs
        self.lr = lr
        self.l2 = l2

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        self._check_fit_inputs(X, y)
        n, f = X.shape
        self.weights = np.zeros((NUM_CLASSES, f))
        self.biases = np.zeros(NUM_CLASSES)
        for cls in range(NUM_CLASSES):
            target = (y == cls).astype(np.float64)
            w = np.zeros(f)
            b = 0.0
            for _ in range(self.epochs):
                p = _sigmoid(X @ w + b)
                err = p - target
                w -= self.lr * (X.T @ err / n + self.l2 * w)
                b -= self.lr * float(err.mean())
            self.weights[cls] = w
            self.biases[cls] = b
        return self

    def _predict(self, X):
        scores = X.astype(np.float64) @ self.weights.T + self.biases
        return scores.argmax(axis=1)


class LinearSVM(ClassifierBase):
    """One-vs-rest linear SVM: hinge loss by subgradient descent with
    L2 regularization, predicting from averaged iterates."""

    kind = "linear_svm"

    def __init__(self, epochs=500, lr=0.01, l2=1e-4):
        self.epochs = epochs
        self.lr = lr
        self.l2 = l2

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        self._check_fit_inputs(X, y)
        n, f = X.shape
        self.weights = np.zeros((NUM_CLASSES, f))
        self.biases = np.zeros(NUM_CLASSES)
        for cls in range(NUM_CLASSES):
            sign = np.where(y == cls, 1.0, -1.0)
            w = np.zeros(f)
            b = 0.0
            w_avg = np.zeros(f)
            b_avg = 0.0
            for _ in range(self.epochs):
                margins = sign * (X @ w + b)
                active = margins < 1
                gw = self.l2 * w - (sign[active, None] * X[active]).sum(axis=0) / n
                gb = -sign[active].sum() / n
                w -= self.lr * gw
                b -= self.lr * gb
                w_avg += w
                b_avg += b
            self.weights[cls] = w_avg / self.epochs
            self.biases[cls] = b_avg / self.epochs
        return self

    def objective(self, X, y, cls):
        """Regularized hinge objective of the current averaged iterate."""
        sign = np.where(y == cls, 1.0, -1.0)
        margins = sign * (X @ self.weights[cls] + self.biases[cls])
        hinge = np.maximum(0.0, 1.0 - margins).mean()
        return hinge + 0.5 * self.l2 * float(self.weights[cls] @ self.weights[cls])

    def _predict(self, X):
        scores = X.astype(np.float64) @ self.weights.T + self.biases
        return scores.argmax(axis=1)


class KNN(ClassifierBase):
    """Lazy k-nearest-neighbors by Euclidean distance."""

    kind = "knn"

    def __init__(self, k=5):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y)
        self._check_fit_inputs(X, y)
        if self.k > len(X):
            raise ValueError(f"k={self.k} exceeds training size {len(X)}")
        self.X_train = X.copy()
        self.y_train = y.copy()
        return self

    def _predict(self, X):
        out = np.empty(len(X), dtype=np.int64)
        for i, x in enumerate(X.astype(np.float64)):
            d2 = ((self.X_train.astype(np.float64) - x) ** 2).sum(axis=1)
            # stable sort keeps equidistant neighbors in stored-index order
            nearest = np.argsort(d2, kind="stable")[: self.k]
            votes = np.bincount(self.y_train[nearest], minlength=NUM_CLASSES)
            out[i] = votes.argmax()  # smallest class id wins ties
        return out


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "leaf_class")

    def __init__(self, leaf_class=None, feature=None, threshold=None,
                 left=None, right=None):
        self.leaf_class = leaf_class
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right


class DecisionTree(ClassifierBase):
    """CART-style tree: Gini impurity, depth cap, minimum leaf size."""

    kind = "decision_tree"

    def __init__(self, max_depth=10, min_leaf=2):
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        self._check_fit_inputs(X, y)
        self.root = self._grow(X, y, depth=0)
        return self

    def _grow(self, X, y, depth):
        counts = np.bincount(y, minlength=NUM_CLASSES)
        majority = int(counts.argmax())
        if depth >= self.max_depth or len(y) < 2 * self.min_leaf or counts.max() == len(y):
            return _TreeNode(leaf_class=majority)
        feature, threshold = self._best_split(X, y)
        if feature is None:
            return _TreeNode(leaf_class=majority)
        mask = X[:, feature] <= threshold
        return _TreeNode(
            feature=feature,
            threshold=threshold,
            left=self._grow(X[mask], y[mask], depth + 1),
            right=self._grow(X[~mask], y[~mask], depth + 1),
        )

    def _best_split(self, X, y):
        n = len(y)
        onehot = np.eye(NUM_CLASSES)[y]
        parent = _gini(y)
        # zero-gain splits are allowed (XOR-style data needs them); invalid
        # candidates are marked -inf
        best_gain, best = -np.inf, (None, None)
        for f in range(X.shape[1]):
            order = np.argsort(X[:, f], kind="stable")
            xs = X[order, f]
            # class counts left of each candidate split position i
            left = np.cumsum(onehot[order], axis=0)
            total = left[-1]
            idx = np.arange(self.min_leaf, n - self.min_leaf + 1)
            if len(idx) == 0:
                continue
            valid = xs[idx - 1] != xs[np.minimum(idx, n - 1)]
            valid[idx == n] = True
            lc = left[idx - 1]
            rc = total - lc
            nl = idx.astype(np.float64)
            nr = n - nl
            gini_l = 1.0 - (lc * lc).sum(axis=1) / (nl * nl)
            gini_r = np.where(nr > 0, 1.0 - (rc * rc).sum(axis=1) / np.maximum(nr * nr, 1), 0.0)
            gain = parent - (nl * gini_l + nr * gini_r) / n
            gain[~valid] = -np.inf
            j = int(gain.argmax())
            if gain[j] > best_gain + 1e-12:
                i = int(idx[j])
                hi = xs[i] if i < n else xs[i - 1]
                best_gain, best = float(gain[j]), (f, (xs[i - 1] + hi) / 2.0)
        return best

    def _predict(self, X):
        out = np.empty(len(X), dtype=np.int64)
        for i, x in enumerate(X.astype(np.float64)):
            node = self.root
            while node.leaf_class is None:
                node = node.left if x[node.feature] <= node.threshold else node.right
            out[i] = node.leaf_class
        return out

    def serialize_lines(self):
        """Node list: id, feature, threshold, child ids, leaf class."""
        lines = []

        def visit(node):
            nid = len(lines)
            lines.append(None)
            if node.leaf_class is not None:
                lines[nid] = f"{nid} leaf {node.leaf_class}"
            else:
                left = visit(node.left)
                right = visit(node.right)
                lines[nid] = (
                    f"{nid} split {node.feature} {float(node.threshold)!r} {left} {right}"
                )
            return nid

        visit(self.root)
        return lines


def make_classifier(kind, seed=0):
    if kind == "logistic_regression":
        return LogisticRegression()
    if kind == "knn":
        return KNN()
    if kind == "decision_tree":
        return DecisionTree()
    if kind == "linear_svm":
        return LinearSVM()
    raise ValueError(f"unknown classifier kind {kind!r}")


def save_classifier(clf, out_dir):
    """Persist a fitted classifier: manifest plus weights or tree text."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"kind={clf.kind}", f"n_features={clf.n_features}"]
    if isinstance(clf, (LogisticRegression, LinearSVM)):
        save_pft(os.path.join(out_dir, "weights.pft"), clf.weights)
        save_pft(os.path.join(out_dir, "biases.pft"), clf.biases)
    elif isinstance(clf, KNN):
        lines.append(f"k={clf.k}")
        save_pft(os.path.join(out_dir, "train_x.pft"), clf.X_train)
        save_pft(os.path.join(out_dir, "train_y.pft"), clf.y_train.astype(np.float32))
    elif isinstance(clf, DecisionTree):
        with open(os.path.join(out_dir, "tree.txt"), "w") as fh:
            fh.write("\n".join(clf.serialize_lines()) + "\n")
    with open(os.path.join(out_dir, "classifier.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_classifier(in_dir):
    meta = {}
    with open(os.path.join(in_dir, "classifier.txt")) as fh:
        for line in fh:
            key, _, val = line.strip().partition("=")
            meta[key] = val
    kind = meta["kind"]
    clf = make_classifier(kind)
    clf.n_features = int(meta["n_features"])
    if kind in ("logistic_regression", "linear_svm"):
        clf.weights = load_pft(os.path.join(in_dir, "weights.pft")).astype(np.float64)
        clf.biases = load_pft(os.path.join(in_dir, "biases.pft")).astype(np.float64)
    elif kind == "knn":
        clf.k = int(meta["k"])
        clf.X_train = load_pft(os.path.join(in_dir, "train_x.pft"))
        clf.y_train = load_pft(os.path.join(in_dir, "train_y.pft")).astype(np.int64)
    elif kind == "decision_tree":
        clf.root = _parse_tree(os.path.join(in_dir, "tree.txt"))
    return clf


def _parse_tree(path):
    nodes = {}
    links = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            nid = int(parts[0])
            if parts[1] == "leaf":
                nodes[nid] = _TreeNode(leaf_class=int(parts[2]))
            else:
                nodes[nid] = _TreeNode(feature=int(parts[2]), threshold=float(parts[3]))
                links[nid] = (int(parts[4]), int(parts[5]))
    for nid, (left, right) in links.items():
        nodes[nid].left = nodes[left]
        nodes[nid].right = nodes[right]
    return nodes[0]


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))


def _gini(y):
    if len(y) == 0:
        return 0.0
    p = np.bincount(y, minlength=NUM_CLASSES) / len(y)
    return 1.0 - float((p * p).sum())
