"""Variance-reduction regression trees, gradient boosting and a bagged forest."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DimensionMismatch
from .linear import check_xy

LEAF = -1


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 3
    min_samples_leaf: int = 2
    max_features: Optional[int] = None  # None -> all features at every split


@dataclass
class RegressionTree:
    """Array-backed binary tree; ``feature[k] == LEAF`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity_decrease: np.ndarray  # weighted SSE drop at each split node
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] != LEAF
        return node

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return self.value[self.apply(X)]

    def feature_importances(self) -> np.ndarray:
        imp = np.zeros(self.n_features)
        split = self.feature != LEAF
        np.add.at(imp, self.feature[split], self.impurity_decrease[split])
        return imp

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "impurity_decrease": self.impurity_decrease.tolist(),
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.array(d["feature"], dtype=int),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=int),
            np.array(d["right"], dtype=int),
            np.array(d["value"], dtype=float),
            np.array(d["n_samples"], dtype=int),
            np.array(d["impurity_decrease"], dtype=float),
            int(d["n_features"]),
        )


def _best_split(X, y, idx, features, min_leaf):
    """Exact greedy split over ``features``; returns (gain, feature, threshold) or None."""
    yn = y[idx]
    m = yn.shape[0]
    yn = yn - yn.mean()
    sse_node = float(yn @ yn)
    best = None
    best_sse = sse_node
    k = np.arange(1, m)
    valid_size = (k >= min_leaf) & (m - k >= min_leaf)
    if not valid_size.any():
        return None
    for f in features:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        ys = yn[order]
        cs = np.cumsum(ys)[:-1]
        cs2 = np.cumsum(ys * ys)[:-1]
        total, total2 = cs[-1] + ys[-1], cs2[-1] + ys[-1] ** 2
        sse_l = cs2 - cs * cs / k
        sse_r = (total2 - cs2) - (total - cs) ** 2 / (m - k)
        sse = sse_l + sse_r
        ok = valid_size & (xs[1:] > xs[:-1])
        if not ok.any():
            continue
        sse = np.where(ok, sse, np.inf)
        pos = int(np.argmin(sse))
        if sse[pos] < best_sse - 1e-12 * max(1.0, sse_node):
            best_sse = float(sse[pos])
            best = (sse_node - best_sse, int(f), 0.5 * (xs[pos] + xs[pos + 1]))
    return best


def fit_tree(X, y, cfg: TreeConfig = TreeConfig(), rng: Optional[np.random.Generator] = None) -> RegressionTree:
    X, y = check_xy(X, y)
    n, d = X.shape
    feature, threshold, left, right, value, counts, gains = [], [], [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[idx].mean()))
        counts.append(len(idx))
        gains.append(0.0)
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= cfg.max_depth or len(idx) < 2 * cfg.min_samples_leaf:
            continue
        if cfg.max_features is not None and cfg.max_features < d:
            if rng is None:
                raise ValueError("feature subsampling needs an rng")
            feats = np.sort(rng.choice(d, size=cfg.max_features, replace=False))
        else:
            feats = range(d)
        split = _best_split(X, y, idx, feats, cfg.min_samples_leaf)
        if split is None:
            continue
        gain, f, thr = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node], gains[node] = f, thr, gain
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return RegressionTree(
        np.array(feature, dtype=int), np.array(threshold), np.array(left, dtype=int),
        np.array(right, dtype=int), np.array(value), np.array(counts, dtype=int), np.array(gains), d,
    )


# --------------------------------------------------------------------------
# Gradient boosting


@dataclass(frozen=True)
class GbrConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 2
    loss: str = "squared"

    def __post_init__(self):
        if self.loss != "squared":
            raise ValueError("only squared loss is supported")
        if self.n_trees < 0 or not self.learning_rate > 0:
            raise ValueError("n_trees must be >= 0 and learning_rate > 0")


@dataclass
class GbrModel:
    init: float
    learning_rate: float
    trees: list = field(default_factory=list)
    n_features: int = 0
    kind: str = "gbr"

    def predict(self, X, n_trees: Optional[int] = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(X.shape[0], self.init)
        for tree in self.trees[:n_trees]:
            out += self.learning_rate * tree.predict(X)
        return out

    def staged_predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.init)
        yield out.copy()
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
            yield out.copy()

    def feature_importances(self) -> np.ndarray:
        imp = sum((t.feature_importances() for t in self.trees), np.zeros(self.n_features))
        s = imp.sum()
        return imp / s if s > 0 else imp

    def to_dict(self) -> dict:
        return {"kind": "gbr", "init": self.init, "learning_rate": self.learning_rate,
                "n_features": self.n_features, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GbrModel":
        return cls(float(d["init"]), float(d["learning_rate"]),
                   [RegressionTree.from_dict(t) for t in d["trees"]], int(d["n_features"]))


def fit_gbr(X, y, cfg: GbrConfig = GbrConfig()) -> GbrModel:
    """Least-squares boosting: each tree fits the current residuals."""
    X, y = check_xy(X, y)
    tree_cfg = TreeConfig(max_depth=cfg.max_depth, min_samples_leaf=cfg.min_samples_leaf)
    init = float(y.mean())
    F = np.full(len(y), init)
    trees = []
    for _ in range(cfg.n_trees):
        tree = fit_tree(X, y - F, tree_cfg)
        F += cfg.learning_rate * tree.predict(X)
        trees.append(tree)
    return GbrModel(init, cfg.learning_rate, trees, X.shape[1])


# --------------------------------------------------------------------------
# Bagged forest (impurity importance)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 8
    min_samples_leaf: int = 1
    max_features: Optional[str | int] = "sqrt"
    bootstrap: bool = True


@dataclass
class ForestModel:
    trees: list
    n_features: int

    def predict(self, X) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def feature_importances(self) -> np.ndarray:
        """Per-tree normalized impurity decrease, averaged over trees, renormalized."""
        acc = np.zeros(self.n_features)
        for t in self.trees:
            imp = t.feature_importances()
            s = imp.sum()
            if s > 0:
                acc += imp / s
        total = acc.sum()
        return acc / total if total > 0 else acc


def fit_forest(X, y, cfg: ForestConfig = ForestConfig(), seed: int = 0) -> ForestModel:
    X, y = check_xy(X, y)
    n, d = X.shape
    if cfg.max_features == "sqrt":
        k = max(1, int(round(np.sqrt(d))))  # nearest integer: 3 of 7 depth features
    elif cfg.max_features is None:
        k = None
    else:
        k = int(cfg.max_features)
    tree_cfg = TreeConfig(max_depth=cfg.max_depth, min_samples_leaf=cfg.min_samples_leaf, max_features=k)
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        trees.append(fit_tree(X[idx], y[idx], tree_cfg, rng))
    return ForestModel(trees, d)
