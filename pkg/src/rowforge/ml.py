"""From-scratch supervised models: CART trees, bagged forests, Gaussian NB.

The CART classifier doubles as the pipeline's discriminator; the forest and
NB back the utility evaluation. Everything here is deterministic under a
fixed seed: split ties break by lowest column index then lowest threshold,
vote and posterior ties by lowest class index, and forest randomness flows
from one master seed through numpy SeedSequence.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np


class MLError(Exception):
    pass


class UndefinedScoreError(MLError):
    pass


TASK_CLASSIFY = "classify"
TASK_REGRESS = "regress"

_VAR_FLOOR = 1e-9


@dataclass
class TreeParams:
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: int | None = None  # per-split subsample; None = all


# --------------------------------------------------------------------------
# CART
# --------------------------------------------------------------------------

class DecisionTree:
    """Binary CART stored as parallel node arrays.

    Internal nodes hold (column, threshold); rows with value <= threshold go
    left. Classification leaves hold class-count histograms over the global
    class order, regression leaves hold the partition mean.
    """

    def __init__(self, task, classes=None):
        self.task = task
        self.classes = classes  # sorted label values (classification)
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.leaf_value = []   # histogram (ndarray) or float mean; None inside

    def _add_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_value.append(None)
        return len(self.feature) - 1

    @property
    def n_nodes(self):
        return len(self.feature)

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise MLError("predict expects a 2-D feature matrix")
        if self.task == TASK_CLASSIFY:
            codes = self.predict_codes(X)
            return self.classes[codes]
        out = np.empty(len(X), dtype=np.float64)
        for node, idx in self._partitions(X):
            out[idx] = self.leaf_value[node]
        return out

    def predict_codes(self, X):
        """Class indices into self.classes (classification only)."""
        out = np.empty(len(X), dtype=np.int64)
        for node, idx in self._partitions(X):
            out[idx] = int(np.argmax(self.leaf_value[node]))
        return out

    def _partitions(self, X):
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if len(idx) == 0:
                continue
            if self.left[node] < 0:
                yield node, idx
                continue
            go_left = X[idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))


def _gini_from_counts(counts, n):
    p = counts / n
    return 1.0 - float(np.sum(p * p))


def _best_split_classify(X, codes, n_classes, feat_order, min_leaf):
    """(gain, column, threshold) of the best split, or None.

    Candidates sit at midpoints of consecutive distinct sorted values; ties
    break by lowest column index, then lowest threshold.
    """
    n = len(codes)
    total = np.bincount(codes, minlength=n_classes).astype(np.float64)
    parent = _gini_from_counts(total, n)
    best = None
    for f in feat_order:
        xs_order = np.argsort(X[:, f], kind="stable")
        xs = X[xs_order, f]
        boundary = np.nonzero(xs[:-1] != xs[1:])[0]
        if boundary.size == 0:
            continue
        sizes_left = boundary + 1
        ok = (sizes_left >= min_leaf) & (n - sizes_left >= min_leaf)
        boundary = boundary[ok]
        if boundary.size == 0:
            continue
        onehot = np.zeros((n, n_classes), dtype=np.float64)
        onehot[np.arange(n), codes[xs_order]] = 1.0
        cum = np.cumsum(onehot, axis=0)
        left_counts = cum[boundary]
        right_counts = total - left_counts
        nl = (boundary + 1).astype(np.float64)
        nr = n - nl
        gini_l = 1.0 - np.sum((left_counts / nl[:, None]) ** 2, axis=1)
        gini_r = 1.0 - np.sum((right_counts / nr[:, None]) ** 2, axis=1)
        weighted = (nl * gini_l + nr * gini_r) / n
        gains = parent - weighted
        k = int(np.argmax(gains))  # first max -> lowest threshold
        gain = float(gains[k])
        if best is None or gain > best[0]:
            i = boundary[k]
            best = (gain, f, float((xs[i] + xs[i + 1]) / 2.0))
    return best


def _best_split_regress(X, y, feat_order, min_leaf):
    n = len(y)
    s_total = float(np.sum(y))
    q_total = float(np.sum(y * y))
    parent = max(q_total / n - (s_total / n) ** 2, 0.0)
    best = None
    for f in feat_order:
        xs_order = np.argsort(X[:, f], kind="stable")
        xs = X[xs_order, f]
        boundary = np.nonzero(xs[:-1] != xs[1:])[0]
        if boundary.size == 0:
            continue
        sizes_left = boundary + 1
        ok = (sizes_left >= min_leaf) & (n - sizes_left >= min_leaf)
        boundary = boundary[ok]
        if boundary.size == 0:
            continue
        ys = y[xs_order]
        cs = np.cumsum(ys)
        cq = np.cumsum(ys * ys)
        nl = (boundary + 1).astype(np.float64)
        nr = n - nl
        sl, ql = cs[boundary], cq[boundary]
        sr, qr = s_total - sl, q_total - ql
        var_l = np.maximum(ql / nl - (sl / nl) ** 2, 0.0)
        var_r = np.maximum(qr / nr - (sr / nr) ** 2, 0.0)
        weighted = (nl * var_l + nr * var_r) / n
        gains = parent - weighted
        k = int(np.argmax(gains))
        gain = float(gains[k])
        if best is None or gain > best[0]:
            i = boundary[k]
            best = (gain, f, float((xs[i] + xs[i + 1]) / 2.0))
    return best


def fit_tree(X, y, task=TASK_CLASSIFY, params=None, rng=None):
    """Greedy CART. Splits whenever a valid candidate exists (zero-gain
    splits included, which is what lets depth-2 trees solve XOR layouts)."""
    params = params or TreeParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise MLError("fit_tree needs matching X (2-D) and y")
    if len(y) == 0:
        raise MLError("fit_tree on empty data")
    n_features = X.shape[1]

    if task == TASK_CLASSIFY:
        classes, codes = np.unique(y, return_inverse=True)
        tree = DecisionTree(task, classes)
        target = codes.astype(np.int64)
    elif task == TASK_REGRESS:
        tree = DecisionTree(task)
        target = y.astype(np.float64)
    else:
        raise MLError(f"unknown task {task!r}")

    def feature_order():
        if (params.max_features is None or rng is None
                or params.max_features >= n_features):
            return range(n_features)
        chosen = rng.choice(n_features, params.max_features, replace=False)
        return sorted(int(c) for c in chosen)

    def make_leaf(node, idx):
        if task == TASK_CLASSIFY:
            tree.leaf_value[node] = np.bincount(
                target[idx], minlength=len(tree.classes)).astype(np.float64)
        else:
            tree.leaf_value[node] = float(np.mean(target[idx]))

    def build(idx, depth):
        node = tree._add_node()
        sub_t = target[idx]
        pure = (len(np.unique(sub_t)) == 1)
        capped = params.max_depth is not None and depth >= params.max_depth
        if pure or capped or len(idx) < 2 * params.min_samples_leaf:
            make_leaf(node, idx)
            return node
        sub_X = X[idx]
        if task == TASK_CLASSIFY:
            found = _best_split_classify(sub_X, sub_t, len(tree.classes),
                                         feature_order(), params.min_samples_leaf)
        else:
            found = _best_split_regress(sub_X, sub_t,
                                        feature_order(), params.min_samples_leaf)
        if found is None:
            make_leaf(node, idx)
            return node
        _, f, thr = found
        go_left = sub_X[:, f] <= thr
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = build(idx[go_left], depth + 1)
        tree.right[node] = build(idx[~go_left], depth + 1)
        return node

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10000))
    try:
        build(np.arange(len(y)), 0)
    finally:
        sys.setrecursionlimit(old_limit)
    return tree


# --------------------------------------------------------------------------
# Random forest
# --------------------------------------------------------------------------

class RandomForest:
    def __init__(self, task, trees, classes=None):
        self.task = task
        self.trees = trees
        self.classes = classes

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.task == TASK_REGRESS:
            acc = np.zeros(len(X), dtype=np.float64)
            for t in self.trees:
                acc += t.predict(X)
            return acc / len(self.trees)
        votes = np.zeros((len(X), len(self.classes)), dtype=np.int64)
        for t in self.trees:
            codes = t.predict_codes(X)
            votes[np.arange(len(X)), codes] += 1
        winners = np.argmax(votes, axis=1)  # ties -> lowest class index
        return self.classes[winners]


def _default_max_features(n_features, task):
    if task == TASK_CLASSIFY:
        return max(1, int(np.sqrt(n_features)))
    return max(1, n_features // 3)


def fit_forest(X, y, task=TASK_CLASSIFY, n_trees=100, params=None, seed=0):
    """Bagging: bootstrap resamples of size n, per-split feature subsampling
    (sqrt(d) classification, d/3 regression), majority vote / mean."""
    if n_trees < 1:
        raise MLError("forest needs at least one tree")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    params = params or TreeParams()
    if params.max_features is None:
        params = TreeParams(params.max_depth, params.min_samples_leaf,
                            _default_max_features(X.shape[1], task))
    classes = np.unique(y) if task == TASK_CLASSIFY else None
    n = len(y)
    trees = []
    for child_seed in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child_seed)
        boot = rng.integers(0, n, size=n)
        tree = fit_tree(X[boot], y[boot], task, params, rng)
        if task == TASK_CLASSIFY:
            tree = _align_classes(tree, classes)
        trees.append(tree)
    return RandomForest(task, trees, classes)


def _align_classes(tree, classes):
    """Re-index a bootstrap tree's histograms onto the full class order
    (a bootstrap sample may have missed a class entirely)."""
    if tree.classes.shape == classes.shape and np.all(tree.classes == classes):
        return tree
    positions = np.searchsorted(classes, tree.classes)
    for i, hist in enumerate(tree.leaf_value):
        if hist is None:
            continue
        full = np.zeros(len(classes), dtype=np.float64)
        full[positions] = hist
        tree.leaf_value[i] = full
    tree.classes = classes
    return tree


# --------------------------------------------------------------------------
# Gaussian naive Bayes
# --------------------------------------------------------------------------

class GaussianNB:
    def __init__(self, classes, priors, means, variances):
        self.classes = classes
        self.priors = priors        # sum to 1
        self.means = means          # (k, d)
        self.variances = variances  # (k, d), floored

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        scores = self.log_posteriors(X)
        return self.classes[np.argmax(scores, axis=1)]

    def log_posteriors(self, X):
        """Unnormalized log posteriors, shape (n, k)."""
        out = np.empty((len(X), len(self.classes)), dtype=np.float64)
        for k in range(len(self.classes)):
            mu, var = self.means[k], self.variances[k]
            ll = -0.5 * np.sum(np.log(2.0 * np.pi * var)
                               + (X - mu) ** 2 / var, axis=1)
            out[:, k] = np.log(self.priors[k]) + ll
        return out


def fit_gaussian_nb(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0:
        raise MLError("fit_gaussian_nb on empty data")
    classes = np.unique(y)
    k, d = len(classes), X.shape[1]
    priors = np.empty(k)
    means = np.empty((k, d))
    variances = np.empty((k, d))
    for i, c in enumerate(classes):
        rows = X[y == c]
        priors[i] = len(rows) / len(X)
        means[i] = rows.mean(axis=0)
        variances[i] = np.maximum(rows.var(axis=0), _VAR_FLOOR)
    return GaussianNB(classes, priors, means, variances)


# --------------------------------------------------------------------------
# Scores
# --------------------------------------------------------------------------

def predict(model, X):
    return model.predict(X)


def score(y_true, y_pred, kind):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred) or len(y_true) == 0:
        raise MLError("score needs equal-length, nonempty label sequences")
    if kind == "accuracy":
        return float(np.mean(y_true == y_pred))
    if kind == "r2":
        if len(y_true) < 2:
            raise UndefinedScoreError("r2 needs at least 2 samples")
        y_true = y_true.astype(np.float64)
        y_pred = y_pred.astype(np.float64)
        ss_tot = float(np.sum((y_true - np.mean(y_true)) ** 2))
        if ss_tot == 0.0:
            raise UndefinedScoreError("r2 undefined for constant y_true")
        ss_res = float(np.sum((y_true - y_pred) ** 2))
        return 1.0 - ss_res / ss_tot
    raise MLError(f"unknown score kind {kind!r}")


# --------------------------------------------------------------------------
# Flat-text serialization (pipeline checkpoints)
# --------------------------------------------------------------------------

FORMAT_VERSION = "rowforge-tree v1"


def tree_to_text(tree):
    lines = [FORMAT_VERSION, f"task {tree.task}"]
    if tree.task == TASK_CLASSIFY:
        lines.append("classes " + " ".join(repr(float(c)) for c in tree.classes))
    for i in range(tree.n_nodes):
        if tree.left[i] < 0:
            if tree.task == TASK_CLASSIFY:
                payload = " ".join(repr(float(v)) for v in tree.leaf_value[i])
            else:
                payload = repr(float(tree.leaf_value[i]))
            lines.append(f"node {i} leaf {payload}")
        else:
            lines.append(f"node {i} split {tree.feature[i]} "
                         f"{tree.threshold[i]!r} {tree.left[i]} {tree.right[i]}")
    return "\n".join(lines) + "\n"


def tree_from_text(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != FORMAT_VERSION:
        raise MLError(f"unknown tree format: {lines[:1]}")
    task = lines[1].split(" ", 1)[1]
    body = lines[2:]
    classes = None
    if task == TASK_CLASSIFY:
        classes = np.array([float(v) for v in body[0].split()[1:]])
        body = body[1:]
    tree = DecisionTree(task, classes)
    for ln in body:
        parts = ln.split()
        if parts[0] != "node":
            raise MLError(f"bad checkpoint line: {ln!r}")
        node = tree._add_node()
        assert node == int(parts[1]), "nodes must be listed in order"
        if parts[2] == "split":
            tree.feature[node] = int(parts[3])
            tree.threshold[node] = float(parts[4])
            tree.left[node] = int(parts[5])
            tree.right[node] = int(parts[6])
        elif parts[2] == "leaf":
            if task == TASK_CLASSIFY:
                tree.leaf_value[node] = np.array([float(v) for v in parts[3:]])
            else:
                tree.leaf_value[node] = float(parts[3])
        else:
            raise MLError(f"bad checkpoint line: {ln!r}")
    return tree
