"""Feature scaling and recursive feature elimination over a bagged tree ensemble.

The importance signal comes from an in-package random forest so that ranking,
tie handling, and seeding are fully pinned down: bootstrap resampling per
tree, Gini impurity decrease, a random feature subset at every split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyDatasetError, ParameterError, SchemaError
from .flowdata import Dataset


@dataclass(frozen=True)
class ScalerParams:
    feature_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.ascontiguousarray(self.mins, dtype=np.float64)
        maxs = np.ascontiguousarray(self.maxs, dtype=np.float64)
        if mins.shape != (len(self.feature_names),) or maxs.shape != mins.shape:
            raise ParameterError("scaler arrays do not match feature names")
        if np.any(maxs < mins):
            raise ParameterError("scaler has max < min")
        mins.setflags(write=False)
        maxs.setflags(write=False)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)


def fit_minmax(train: Dataset) -> ScalerParams:
    if train.n_rows == 0:
        raise EmptyDatasetError("cannot fit a scaler on an empty dataset")
    return ScalerParams(
        feature_names=train.columns,
        mins=train.matrix.min(axis=0),
        maxs=train.matrix.max(axis=0),
    )


def scale_matrix(matrix: np.ndarray, params: ScalerParams) -> np.ndarray:
    """(x - min) / (max - min), constant columns pinned to 0, clipped to [0, 1]."""
    span = params.maxs - params.mins
    safe = np.where(span > 0, span, 1.0)
    # a denormal span can overflow to inf here; the clip pins that to 0 or 1
    with np.errstate(over="ignore"):
        out = (matrix - params.mins) / safe
    out[:, span == 0] = 0.0
    return np.clip(out, 0.0, 1.0)


def apply_minmax(data: Dataset, params: ScalerParams) -> Dataset:
    if data.columns != params.feature_names:
        raise SchemaError(
            f"columns {list(data.columns)} do not match scaler {list(params.feature_names)}"
        )
    return replace(data, matrix=scale_matrix(data.matrix, params))


# ---------------------------------------------------------------------------
# Random forest


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    histogram: np.ndarray | None = None    # class counts, leaves only

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class ForestModel:
    trees: list[TreeNode]
    importances: np.ndarray
    n_classes: int
    seed: int


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split(X, y_onehot, sample_idx, feature, min_leaf):
    """Best threshold for one feature on the rows in sample_idx.

    Returns (impurity decrease, threshold) or None when no split leaves
    min_leaf rows on both sides.  Candidate thresholds are midpoints between
    consecutive distinct sorted values.
    """
    x = X[sample_idx, feature]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if xs[0] == xs[-1]:
        return None
    counts = y_onehot[sample_idx][order]
    n = len(xs)
    cum = np.cumsum(counts, axis=0)
    total = cum[-1]
    left = cum[:-1]
    right = total - left
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    valid = (xs[1:] != xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    gini_parent = 1.0 - ((total / n) ** 2).sum()
    gini_left = 1.0 - (left * left).sum(axis=1) / (n_left * n_left)
    gini_right = 1.0 - (right * right).sum(axis=1) / (n_right * n_right)
    weighted = (n_left * gini_left + n_right * gini_right) / n
    decrease = np.where(valid, gini_parent - weighted, -np.inf)
    best = int(np.argmax(decrease))
    threshold = (xs[best] + xs[best + 1]) / 2.0
    return float(decrease[best]), threshold


def _grow_tree(X, y_onehot, sample_idx, depth, max_depth, min_leaf, m_features,
               rng, importance, n_root):
    counts = y_onehot[sample_idx].sum(axis=0)
    node_gini = _gini(counts)
    n = len(sample_idx)
    if depth >= max_depth or node_gini == 0.0 or n < 2 * min_leaf:
        return TreeNode(histogram=counts)

    n_features = X.shape[1]
    candidates = np.sort(rng.permutation(n_features)[:m_features])
    best = None
    for f in candidates:
        found = _best_split(X, y_onehot, sample_idx, f, min_leaf)
        if found is None:
            continue
        decrease, threshold = found
        if best is None or decrease > best[0]:
            best = (decrease, int(f), threshold)
    if best is None:
        return TreeNode(histogram=counts)

    decrease, feature, threshold = best
    importance[feature] += (n / n_root) * decrease
    mask = X[sample_idx, feature] <= threshold
    left = _grow_tree(X, y_onehot, sample_idx[mask], depth + 1, max_depth,
                      min_leaf, m_features, rng, importance, n_root)
    right = _grow_tree(X, y_onehot, sample_idx[~mask], depth + 1, max_depth,
                       min_leaf, m_features, rng, importance, n_root)
    return TreeNode(feature=feature, threshold=threshold, left=left, right=right)


def train_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 50,
    max_depth: int = 12,
    min_leaf: int = 2,
    max_features: int | None = None,
    seed: int = 0,
) -> ForestModel:
    """Bagged Gini trees; per-tree randomness derives from (seed, tree index).

    Importances are the support-weighted impurity decreases summed over all
    trees and normalized to 1 (left all-zero when no tree ever split).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(y) != len(X):
        raise ParameterError("X must be 2-D with one label per row")
    n, n_features = X.shape
    if n < 2:
        raise ParameterError("need at least 2 rows to fit a forest")
    if n_features < 1:
        raise ParameterError("need at least 1 feature")
    if n_trees < 1 or max_depth < 1 or min_leaf < 1:
        raise ParameterError("n_trees, max_depth, min_leaf must all be >= 1")
    m = max_features if max_features is not None else math.ceil(math.sqrt(n_features))
    if not 1 <= m <= n_features:
        raise ParameterError(f"max_features {m} outside 1..{n_features}")

    n_classes = int(y.max()) + 1 if len(y) else 0
    y_onehot = np.zeros((n, n_classes), dtype=np.float64)
    y_onehot[np.arange(n), y] = 1.0

    importance = np.zeros(n_features)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        bootstrap = rng.integers(0, n, size=n)
        trees.append(
            _grow_tree(X, y_onehot, bootstrap, 0, max_depth, min_leaf, m, rng,
                       importance, n_root=n)
        )
    total = importance.sum()
    if total > 0:
        importance = importance / total
    return ForestModel(trees=trees, importances=importance, n_classes=n_classes, seed=seed)


def _tree_histogram(node: TreeNode, row: np.ndarray) -> np.ndarray:
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node.histogram


def forest_predict(forest: ForestModel, X: np.ndarray) -> np.ndarray:
    """Majority vote over per-leaf class histograms; ties to the lowest class."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(len(X), dtype=np.int64)
    for i, row in enumerate(X):
        votes = np.zeros(forest.n_classes)
        for tree in forest.trees:
            hist = _tree_histogram(tree, row)
            votes += hist / max(hist.sum(), 1.0)
        out[i] = int(np.argmax(votes))
    return out


# ---------------------------------------------------------------------------
# Recursive feature elimination


@dataclass
class FeatureRanking:
    """Outcome of RFE: survivors with importances, plus the elimination order."""

    selected: list[str]
    selected_importances: np.ndarray
    eliminated: list[str]
    selected_indices: list[int]

    def report(self) -> str:
        """`<rank> <feature-name> <importance>` lines, most important first."""
        order = np.argsort(-self.selected_importances, kind="stable")
        lines = []
        for rank, j in enumerate(order, start=1):
            lines.append(f"{rank} {self.selected[j]} {self.selected_importances[j]:.6f}")
        return "\n".join(lines)


def rfe(
    X: np.ndarray,
    y: np.ndarray,
    target_k: int = 30,
    step: int = 1,
    feature_names: list[str] | None = None,
    **forest_params,
) -> FeatureRanking:
    """Repeatedly drop the `step` least important features, retrain, stop at k.

    Ties on importance break toward the higher original column index, which
    therefore leaves the forest first.  The final round never overshoots: it
    drops only as many features as remain above `target_k`.
    """
    X = np.asarray(X, dtype=np.float64)
    n_features = X.shape[1]
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(n_features)]
    if len(feature_names) != n_features:
        raise ParameterError("feature_names length does not match X")
    if not 1 <= target_k <= n_features:
        raise ParameterError(f"target_k {target_k} outside 1..{n_features}")
    if step < 1:
        raise ParameterError("step must be >= 1")

    remaining = list(range(n_features))
    eliminated: list[int] = []
    while len(remaining) > target_k:
        forest = train_random_forest(X[:, remaining], y, **forest_params)
        n_drop = min(step, len(remaining) - target_k)
        # sort by (importance asc, original index desc)
        order = sorted(
            range(len(remaining)),
            key=lambda j: (forest.importances[j], -remaining[j]),
        )
        drop_local = sorted(order[:n_drop], reverse=True)
        for j in order[:n_drop]:
            eliminated.append(remaining[j])
        for j in drop_local:
            remaining.pop(j)

    final = train_random_forest(X[:, remaining], y, **forest_params)
    return FeatureRanking(
        selected=[feature_names[j] for j in remaining],
        selected_importances=final.importances.copy(),
        eliminated=[feature_names[j] for j in eliminated],
        selected_indices=list(remaining),
    )
