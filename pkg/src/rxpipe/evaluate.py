"""Cross-validation, Mann-Whitney AUC, KDE of AUC distributions and summaries."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from .forest import ForestParams, predict_many, train_forest
from .seeds import mix_seed
from .tabulate import FeatureMatrix

GRID_POINTS = 512
SEPARABLE_AUC = 0.9167


class TooFewPairs(ValueError):
    """Cohort cannot fill every fold; the job is skipped rather than failed."""


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: np.ndarray  # pair index -> fold id

    def pairs_in(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.k).tolist()


@dataclass(frozen=True)
class ModelResult:
    generic: int
    window_days: int
    n_pairs: int
    n_features_postfilter: int
    fold_aucs: tuple[float, ...]

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.fold_aucs))

    @property
    def std_auc(self) -> float:
        return float(np.std(self.fold_aucs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fold_aucs"] = list(self.fold_aucs)
        d["mean_auc"] = self.mean_auc
        d["std_auc"] = self.std_auc
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelResult":
        return cls(int(d["generic"]), int(d["window_days"]), int(d["n_pairs"]),
                   int(d["n_features_postfilter"]), tuple(float(a) for a in d["fold_aucs"]))


@dataclass(frozen=True)
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(trapezoid(self.density, self.grid))


def make_folds(n_pairs: int, k: int = 10, seed: int = 0) -> FoldPlan:
    """Shuffle pairs with a seeded generator and deal them round-robin into k folds."""
    if n_pairs < k:
        raise TooFewPairs("cohort too small for k folds")
    order = np.random.default_rng(seed).permutation(n_pairs)
    assignment = np.empty(n_pairs, dtype=np.int64)
    assignment[order] = np.arange(n_pairs) % k
    return FoldPlan(k, assignment)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(case score > control score) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes")
    ranks = rankdata(scores)  # ties get their average rank
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Empirical ROC points (fpr, tpr), one per distinct threshold, from (0,0) to (1,1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order] == 1
    last = np.r_[np.flatnonzero(np.diff(s)), y.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    return np.r_[0.0, fp / fp[-1]], np.r_[0.0, tp / tp[-1]]


def cross_validate(matrix: FeatureMatrix, labels, plan: FoldPlan, params: ForestParams, *,
                   generic: int = 0, window_days: int = 0) -> ModelResult:
    """Train on the rows outside each fold and score the rows inside it.

    Fold f's forest is seeded with mix(params.seed, f); the test rows never
    reach training.
    """
    labels = np.asarray(labels)
    fold_of_row = plan.assignment[matrix.pair_index]
    dense = matrix.dense()
    aucs = []
    for f in range(plan.k):
        test = fold_of_row == f
        if np.unique(labels[test]).size < 2:
            raise ValueError("degenerate fold")
        train_rows = np.flatnonzero(~test)
        train = _subset(matrix, train_rows)
        forest = train_forest(train, labels[train_rows], replace(params, seed=mix_seed(params.seed, f)))
        aucs.append(auc(predict_many(forest, dense[test]), labels[test]))
    return ModelResult(generic, window_days, matrix.n_pairs, matrix.shape[1], tuple(aucs))


def _subset(matrix: FeatureMatrix, rows: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix(
        tuple(matrix.rows[i] for i in rows.tolist()), matrix.columns,
        matrix.values[rows], matrix.labels[rows], matrix.pair_index[rows],
    )


def silverman_bandwidth(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    sigma = float(np.std(values))
    if sigma == 0.0:
        raise ValueError("zero-variance sample")
    q75, q25 = np.percentile(values, [75, 25])
    iqr = q75 - q25
    n = values.size
    if iqr == 0:
        return sigma * n ** -0.2
    return 0.9 * min(sigma, iqr / 1.34) * n ** -0.2


def kde_curve(values, bandwidth: float | None = None) -> KdeCurve:
    """Gaussian KDE on 512 points spanning [min - 3h, max + 3h]."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValueError("kde needs at least two values")
    if np.ptp(values) == 0:
        raise ValueError("zero-variance sample")
    h = silverman_bandwidth(values) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(values.min() - 3 * h, values.max() + 3 * h, GRID_POINTS)
    z = (grid[:, None] - values[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (values.size * h * np.sqrt(2 * np.pi))
    return KdeCurve(grid, density, h)


def window_summary(results: Sequence[ModelResult]) -> tuple[float, float, int]:
    """(mean, population std, count) of model mean AUCs."""
    if not results:
        raise ValueError("no results for window")
    means = np.array([r.mean_auc for r in results])
    return float(means.mean()), float(means.std()), len(results)


def flag_separable(results: Sequence[ModelResult], threshold: float = SEPARABLE_AUC) -> list[int]:
    """Generics whose mean AUC reaches ``threshold``, best first."""
    hits = [r for r in results if r.mean_auc >= threshold]
    hits.sort(key=lambda r: (-r.mean_auc, r.generic))
    return [r.generic for r in hits]
