"""Random Forest classifier built from Gini decision trees.

Trees are stored as flat node arrays. Rows are put in a canonical order
before bootstrapping, so the fitted forest depends on the set of training
rows and the seed, not on how the rows happen to be stored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RFConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: int | None = None  # None -> floor(sqrt(d))

    def __post_init__(self):
        if self.n_trees < 1 or self.min_samples_leaf < 1:
            raise ValidationError("n_trees and min_samples_leaf must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValidationError("max_depth must be positive")
        if self.max_features is not None and self.max_features < 1:
            raise ValidationError("max_features must be positive")


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf.

    ``counts[i]`` holds the (bootstrap-weighted) class counts reaching node i.
    Samples go left when ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        rows = np.arange(X.shape[0])
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_index(self, X: np.ndarray) -> np.ndarray:
        # argmax picks the lowest class index on ties.
        return np.argmax(self.counts[self.leaf_index(X)], axis=1)


@dataclass
class RandomForestModel:
    trees: list
    feature_names: list
    classes: list
    seed: int
    config: RFConfig = field(default_factory=RFConfig)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def tree_rng(seed: int, tree: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5EED, int(tree)])))


def _best_split(Xn, yn_onehot, features, k, min_leaf):
    """Scan ``features`` until ``k`` non-constant ones were scored.

    Returns ``(feature, threshold)`` or ``None``.
    """
    n = Xn.shape[0]
    best = None
    best_score = -np.inf
    scored = 0
    lo, hi = min_leaf - 1, n - min_leaf - 1
    for f in features:
        xs = Xn[:, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        if xs[0] == xs[-1]:
            continue
        scored += 1
        if lo <= hi:
            cum = np.cumsum(yn_onehot[order], axis=0)
            left = cum[lo : hi + 1]
            n_left = np.arange(lo + 1, hi + 2, dtype=float)
            right = cum[-1] - left
            n_right = n - n_left
            # Maximising sum c^2/n over both children minimises weighted Gini.
            score = (left * left).sum(axis=1) / n_left + (right * right).sum(axis=1) / n_right
            valid = xs[lo : hi + 1] < xs[lo + 1 : hi + 2]
            if valid.any():
                score = np.where(valid, score, -np.inf)
                i = int(np.argmax(score))
                if score[i] > best_score:
                    best_score = score[i]
                    best = (int(f), float(xs[lo + i]))
        if scored >= k:
            break
    return best


def _grow_tree(X, y, n_classes, cfg: RFConfig, k, rng) -> Tree:
    onehot = np.eye(n_classes)[y]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(onehot[idx].sum(axis=0))
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        if np.count_nonzero(c) <= 1 or idx.size < 2 * cfg.min_samples_leaf:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        split = _best_split(X[idx], onehot[idx], rng.permutation(X.shape[1]), k, cfg.min_samples_leaf)
        if split is None:
            continue
        f, thr = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # Right pushed first so the left subtree is numbered first (pre-order).
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(counts, dtype=float),
    )


def encode_labels(y, classes=None):
    """Map labels to indices into ``classes`` (sorted unique labels by default)."""
    y = np.asarray(y, dtype=object)
    if classes is None:
        from ..dataset import _label_order

        classes = sorted(set(y.tolist()), key=_label_order)
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[v] for v in y], dtype=np.int64), list(classes)
    except KeyError as exc:
        raise ValidationError(f"label {exc.args[0]!r} not among classes {classes}") from None


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order sorted by label, then by each feature column in turn."""
    keys = [X[:, j] for j in range(X.shape[1] - 1, -1, -1)] + [y]
    return np.lexsort(keys)


def train_random_forest(X, y, config: RFConfig | None = None, seed: int = 0,
                        feature_names=None, classes=None) -> RandomForestModel:
    """Bootstrap-aggregated Gini trees with ``floor(sqrt(d))`` candidate features per split."""
    cfg = config or RFConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 10:
        raise ValidationError("need a 2-D feature array with at least 10 rows")
    if np.isnan(X).any():
        raise ValidationError("training features contain missing values; impute first")
    yi, classes = encode_labels(y, classes)
    if yi.size != X.shape[0]:
        raise ValidationError("X and y differ in length")
    if np.unique(yi).size == 1:
        log.warning("single-class training set; forest will always predict %r", classes[yi[0]])
    d = X.shape[1]
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(d)]
    k = cfg.max_features or max(1, int(math.floor(math.sqrt(d))))
    order = canonical_order(X, yi)
    Xc, yc = X[order], yi[order]
    trees = []
    for t in range(cfg.n_trees):
        rng = tree_rng(seed, t)
        boot = rng.integers(0, Xc.shape[0], Xc.shape[0])
        trees.append(_grow_tree(Xc[boot], yc[boot], len(classes), cfg, k, rng))
    return RandomForestModel(trees, names, list(classes), int(seed), cfg)


def _check_schema(model, X, feature_names):
    if feature_names is not None and list(feature_names) != list(model.feature_names):
        raise ContractError(f"feature schema {list(feature_names)} != model schema {model.feature_names}")
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise ContractError(f"expected {len(model.feature_names)} feature columns, got {X.shape[-1]}")


def rf_votes(model: RandomForestModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    votes = np.zeros((X.shape[0], len(model.classes)), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        np.add.at(votes, (rows, tree.predict_index(X)), 1)
    return votes


def rf_predict(model: RandomForestModel, X, feature_names=None):
    """Majority vote. Returns ``(labels, confidences)``; confidence is the vote fraction."""
    X = np.asarray(X, dtype=float)
    _check_schema(model, X, feature_names)
    votes = rf_votes(model, X)
    winner = np.argmax(votes, axis=1)
    conf = votes[np.arange(X.shape[0]), winner] / model.n_trees
    labels = np.array([model.classes[i] for i in winner], dtype=object)
    return labels, conf


def rf_feature_importance(model: RandomForestModel) -> np.ndarray:
    """Mean decrease in Gini impurity per feature, normalised to sum to 1.

    Each tree's impurity decreases are weighted by node sample counts and
    normalised before averaging. A forest made only of leaves has all-zero
    importances.
    """
    d = len(model.feature_names)
    total = np.zeros(d)
    for tree in model.trees:
        imp = np.zeros(d)
        n = tree.counts.sum(axis=1)
        gini = n - (tree.counts ** 2).sum(axis=1) / np.maximum(n, 1e-300)
        for i in np.flatnonzero(tree.feature >= 0):
            imp[tree.feature[i]] += gini[i] - gini[tree.left[i]] - gini[tree.right[i]]
        s = imp.sum()
        if s > 0:
            total += imp / s
    s = total.sum()
    return total / s if s > 0 else total
