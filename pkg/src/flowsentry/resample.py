"""Class rebalancing: synthetic minority interpolation followed by edited
nearest-neighbour pruning of the majority classes.

Both stages work on already-scaled features with plain Euclidean distance.
Neighbour ties always break toward the lower row index so results are
reproducible across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientSamplesError, ParameterError
from .flowdata import Dataset


@dataclass(frozen=True)
class ResampleConfig:
    smote_k: int = 5
    enn_k: int = 3
    targets: "dict[str, int] | str" = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.smote_k < 1 or self.enn_k < 1:
            raise ParameterError("neighbour counts must be >= 1")


def _pairwise_sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances without materialising the coordinate cube."""
    aa = (A * A).sum(axis=1)[:, None]
    bb = (B * B).sum(axis=1)[None, :]
    d2 = aa + bb - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _knn_indices(X: np.ndarray, k: int) -> np.ndarray:
    """k nearest rows for every row, self excluded, ties to the lower index."""
    n = len(X)
    d2 = _pairwise_sq_dists(X, X)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def smote(
    X: np.ndarray,
    k: int = 5,
    n_synthetic: int = 0,
    seed: int = 0,
    rng=None,
) -> np.ndarray:
    """Synthetic rows on segments between a base row and one of its k nearest
    neighbours: s + lam * (nbr - s) with lam ~ U[0, 1].

    Base rows cycle round-robin through X, so the synthetic count can exceed
    the real count.  Needs at least k+1 rows.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError("X must be 2-D")
    if n_synthetic < 0:
        raise ParameterError("n_synthetic must be >= 0")
    if k < 1:
        raise ParameterError("k must be >= 1")
    n = len(X)
    if n < k + 1:
        raise InsufficientSamplesError(f"need at least {k + 1} rows for k={k}, got {n}")
    out = np.empty((n_synthetic, X.shape[1]), dtype=np.float64)
    if n_synthetic == 0:
        return out
    if rng is None:
        rng = np.random.default_rng(seed)
    neighbours = _knn_indices(X, k)
    for i in range(n_synthetic):
        base = i % n
        nbr = neighbours[base, int(rng.integers(0, k))]
        lam = float(rng.uniform())
        out[i] = X[base] + lam * (X[nbr] - X[base])
    return out


def enn(
    X: np.ndarray,
    y: np.ndarray,
    k: int = 3,
    eligible_classes=None,
) -> np.ndarray:
    """Indices retained after edited-nearest-neighbour pruning.

    A row is removed when it belongs to an eligible class and a strict
    majority of its k nearest neighbours carry a different label.  All
    decisions are taken against the full input, then applied at once.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y):
        raise ParameterError("X and y length mismatch")
    if k < 1:
        raise ParameterError("k must be >= 1")
    n = len(X)
    if k >= n:
        raise ParameterError(f"k={k} must be smaller than the row count {n}")
    neighbours = _knn_indices(X, k)
    disagree = (y[neighbours] != y[:, None]).sum(axis=1)
    doomed = disagree > k / 2.0
    if eligible_classes is not None:
        eligible = np.isin(y, np.asarray(list(eligible_classes), dtype=np.int64))
        doomed &= eligible
    return np.flatnonzero(~doomed)


@dataclass
class ResampleReport:
    """Per-class row counts at each pipeline stage plus a percentage table."""

    class_names: tuple[str, ...]
    before: np.ndarray
    after_smote: np.ndarray
    after: np.ndarray
    majority_classes: list[int] = field(default_factory=list)

    def percentages(self) -> list[tuple[str, float, float]]:
        tb = max(int(self.before.sum()), 1)
        ta = max(int(self.after.sum()), 1)
        return [
            (name, 100.0 * self.before[c] / tb, 100.0 * self.after[c] / ta)
            for c, name in enumerate(self.class_names)
        ]

    def render(self) -> str:
        width = max(len("Class"), *(len(n) for n in self.class_names))
        lines = [f"{'Class':<{width}}  {'Before (%)':>10}  {'After (%)':>10}"]
        for name, pb, pa in self.percentages():
            lines.append(f"{name:<{width}}  {pb:>10.1f}  {pa:>10.1f}")
        return "\n".join(lines)


def _imbalance_ratio(counts: np.ndarray) -> float:
    present = counts[counts > 0]
    if len(present) == 0:
        return 1.0
    return float(present.max() / present.min())


def resample_pipeline(
    train: Dataset, config: ResampleConfig = ResampleConfig()
) -> tuple[Dataset, ResampleReport]:
    """SMOTE each minority class up toward the target, then ENN-prune the
    majority classes.

    Majority means a pre-SMOTE share above 1/C over the classes present.
    Pruning never removes protected rows and is capped so the output imbalance
    ratio cannot exceed the input's.
    """
    counts_before = train.class_counts()
    present = np.flatnonzero(counts_before)
    if len(present) < 2:
        raise ParameterError("resampling needs at least 2 classes present")
    n_total = int(counts_before.sum())
    n_present = len(present)
    majority = [int(c) for c in present if counts_before[c] / n_total > 1.0 / n_present]

    if config.targets == "auto":
        targets = {int(c): int(counts_before[present].max()) for c in present}
    else:
        targets = {
            train.class_names.index(name): int(v) for name, v in config.targets.items()
        }

    X_parts = [train.matrix]
    y_parts = [train.labels]
    for c in present:
        want = targets.get(int(c), int(counts_before[c]))
        deficit = want - int(counts_before[c])
        if deficit <= 0:
            continue
        rows = train.matrix[train.labels == c]
        synthetic = smote(
            rows,
            k=config.smote_k,
            n_synthetic=deficit,
            rng=np.random.default_rng([config.seed, int(c)]),
        )
        X_parts.append(synthetic)
        y_parts.append(np.full(deficit, c, dtype=np.int64))
    X_all = np.vstack(X_parts)
    y_all = np.concatenate(y_parts)
    counts_smote = np.bincount(y_all, minlength=len(train.class_names))

    retained = enn(X_all, y_all, k=config.enn_k, eligible_classes=majority)

    # Cap removals so the imbalance ratio never rises above the input's.
    ratio_in = _imbalance_ratio(counts_before)
    floor = int(math.ceil(counts_smote[counts_smote > 0].max() / ratio_in))
    removed = np.setdiff1d(np.arange(len(y_all)), retained)
    counts_now = counts_smote.astype(np.int64).copy()
    veto = []
    for i in removed:
        c = y_all[i]
        if counts_now[c] - 1 < floor:
            veto.append(i)
        else:
            counts_now[c] -= 1
    if veto:
        retained = np.union1d(retained, np.asarray(veto, dtype=np.int64))

    ds = replace(train, matrix=X_all[retained], labels=y_all[retained])
    counts_after = ds.class_counts()
    report = ResampleReport(
        class_names=train.class_names,
        before=counts_before,
        after_smote=counts_smote,
        after=counts_after,
        majority_classes=majority,
    )
    return ds, report
