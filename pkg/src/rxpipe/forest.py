"""Random forest of Gini decision trees over a binary matrix plus numeric columns.

Tree growth runs in a numba kernel. Each tree draws its bootstrap sample and
split candidates from its own SplitMix64 stream seeded with
mix(seed, tree_index), so a forest is reproducible bit-for-bit and does not
depend on how trees are scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np
from numba import types
from numba.extending import intrinsic

from .seeds import mix_seed, sm_below
from .tabulate import AGE, Feature, FeatureMatrix

# a split must lower impurity by more than this to count as positive
MIN_DECREASE = 1e-12


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    mtry_fraction: float = 0.10
    bootstrap: bool = True
    min_samples_split: int = 2
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < self.mtry_fraction <= 1.0:
            raise ValueError("mtry_fraction must lie in (0, 1]")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")

    def mtry(self, n_features: int) -> int:
        return max(1, min(n_features, math.ceil(self.mtry_fraction * n_features)))


@dataclass(frozen=True)
class Leaf:
    positive_fraction: float
    n: int


@dataclass(frozen=True)
class Internal:
    feature: int
    threshold: float
    left: "Leaf | Internal"
    right: "Leaf | Internal"


TreeNode = Leaf | Internal


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat array tree; ``feature[i] == -1`` marks a leaf. Rows with
    ``x[feature] <= threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("feature", "threshold", "left", "right", "value", "n_samples"))

    def __len__(self):
        return len(self.feature)

    def root(self) -> TreeNode:
        def build(i):
            if self.feature[i] < 0:
                return Leaf(float(self.value[i]), int(self.n_samples[i]))
            return Internal(int(self.feature[i]), float(self.threshold[i]),
                            build(self.left[i]), build(self.right[i]))
        return build(0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("feature", "threshold", "left", "right", "value", "n_samples")}


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    catalog: tuple[Feature, ...]
    params: ForestParams = field(default_factory=ForestParams)

    def __eq__(self, other):
        if not isinstance(other, Forest):
            return NotImplemented
        return self.catalog == other.catalog and self.trees == other.trees

    def to_json(self) -> str:
        return json.dumps({
            "catalog": [f.label() for f in self.catalog],
            "trees": [t.to_dict() for t in self.trees],
        })


# --- numba kernels -------------------------------------------------------
# Training works on bitsets over the rows of the training matrix (64 rows per
# uint64 word). Binary column f is the bitset ``bits[f]``; a numeric column
# contributes one bitset per candidate threshold (rows with value <= the
# midpoint between consecutive distinct values). A bootstrap sample is held as
# layers: ``layers[k]`` marks rows drawn more than k times, so a set's weighted
# size is the sum over layers of popcount(set & layer).


@intrinsic
def _popcount(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@numba.njit(cache=True, inline="always")
def _gini(pos, n):
    p = pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


@numba.njit(cache=True, inline="always")
def _masked_count(a, b):
    total = 0
    for k in range(b.shape[0]):
        for j in range(a.shape[0]):
            total += _popcount(a[j] & b[k, j])
    return total


@numba.njit(cache=True)
def _node_layers(node, layers, ybits, nl, nly):
    """Fill nl[k] = node & layers[k] and nly[k] = nl[k] & y; return the number
    of non-empty layers."""
    depth = 0
    for k in range(layers.shape[0]):
        any_set = False
        for j in range(node.shape[0]):
            v = node[j] & layers[k, j]
            nl[k, j] = v
            nly[k, j] = v & ybits[j]
            any_set = any_set or v != 0
        if not any_set:
            break
        depth = k + 1
    return depth


@numba.njit(cache=True)
def _best_split(bits, tbits, tvals, tptr, numeric, nl, nly, n, pos, cand):
    """Best (feature, threshold index, decrease) over ascending ``cand`` for the
    node whose layered membership is ``nl``/``nly`` (weighted size n, positives
    pos). Threshold index is -1 for binary features; feature is -1 when
    nothing beats MIN_DECREASE."""
    parent = _gini(pos, n)
    best_f = -1
    best_d = -1
    best_dec = MIN_DECREASE
    for c in range(cand.size):
        f = cand[c]
        if not numeric[f]:
            n_r = _masked_count(bits[f], nl)
            n_l = n - n_r
            if n_l == 0 or n_r == 0:
                continue
            pos_r = _masked_count(bits[f], nly)
            dec = parent - (n_l * _gini(pos - pos_r, n_l) + n_r * _gini(pos_r, n_r)) / n
            if dec > best_dec:
                best_f, best_d, best_dec = f, -1, dec
        else:
            for d in range(tptr[f], tptr[f + 1]):
                n_l = _masked_count(tbits[d], nl)
                n_r = n - n_l
                if n_l == 0 or n_r == 0:
                    continue
                pos_l = _masked_count(tbits[d], nly)
                dec = parent - (n_l * _gini(pos_l, n_l) + n_r * _gini(pos - pos_l, n_r)) / n
                if dec > best_dec:
                    best_f, best_d, best_dec = f, d, dec
    return best_f, best_d, best_dec


@numba.njit(cache=True)
def _local_midpoint(XT, node, f, cut):
    """Midpoint between the node's largest value <= cut and smallest value > cut."""
    lo = -np.inf
    hi = np.inf
    for r in range(XT.shape[1]):
        if (node[r >> 6] >> np.uint64(r & 63)) & np.uint64(1):
            v = XT[f, r]
            if v <= cut:
                lo = max(lo, v)
            else:
                hi = min(hi, v)
    return (lo + hi) / 2.0


@numba.njit(cache=True)
def _grow(XT, bits, tbits, tvals, tptr, numeric, ybits, seed, bootstrap, mtry,
          min_samples_split, max_depth):
    p, n = XT.shape
    n_words = bits.shape[1]
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    w = np.zeros(n, dtype=np.int64)
    for i in range(n):
        w[sm_below(state, n) if bootstrap else i] += 1
    n_layers = w.max()
    layers = np.zeros((n_layers, n_words), dtype=np.uint64)
    for r in range(n):
        for k in range(w[r]):
            layers[k, r >> 6] |= np.uint64(1) << np.uint64(r & 63)

    cap = 2 * n - 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)
    count = np.zeros(cap, dtype=np.int64)

    perm = np.arange(p)
    cand = np.empty(mtry, dtype=np.int64)
    nl = np.empty((n_layers, n_words), dtype=np.uint64)
    nly = np.empty((n_layers, n_words), dtype=np.uint64)
    st_node = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_bits = np.empty((cap, n_words), dtype=np.uint64)
    st_node[0] = 0
    st_depth[0] = 0
    st_bits[0] = layers[0]
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        depth = st_depth[top]
        members = st_bits[top].copy()
        k = _node_layers(members, layers, ybits, nl, nly)
        m = 0
        pos = 0
        for kk in range(k):
            for j in range(n_words):
                m += _popcount(nl[kk, j])
                pos += _popcount(nly[kk, j])
        value[node] = pos / m
        count[node] = m
        if pos == 0 or pos == m or m < min_samples_split or (max_depth >= 0 and depth >= max_depth):
            continue
        # partial Fisher-Yates on a persistent permutation: uniform mtry-subset
        for kk in range(mtry):
            j = kk + sm_below(state, p - kk)
            tmp = perm[kk]
            perm[kk] = perm[j]
            perm[j] = tmp
            cand[kk] = perm[kk]
        f, d, _ = _best_split(bits, tbits, tvals, tptr, numeric, nl[:k], nly[:k], m, pos,
                              np.sort(cand))
        if f < 0:
            continue
        feature[node] = f
        if d < 0:
            threshold[node] = 0.5
            go_left = ~bits[f]
        else:
            threshold[node] = _local_midpoint(XT, members, f, tvals[d])
            go_left = tbits[d]
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        st_node[top] = right[node]
        st_depth[top] = depth + 1
        st_bits[top] = members & ~go_left
        top += 1
        st_node[top] = left[node]
        st_depth[top] = depth + 1
        st_bits[top] = members & go_left
        top += 1
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes])


@numba.njit(cache=True)
def _predict_tree(X, feature, threshold, left, right, value, out):
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] += value[node]


# --- public API ----------------------------------------------------------


def gini_impurity(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("gini impurity of an empty set")
    p = float(np.mean(labels == 1))
    return 1.0 - p * p - (1.0 - p) ** 2


def _as_arrays(matrix, numeric=None):
    if isinstance(matrix, FeatureMatrix):
        X = matrix.dense()
        catalog = matrix.columns
        if numeric is None:
            numeric = [c == AGE for c in catalog]
    else:
        X = np.asarray(matrix)
        catalog = tuple(Feature("X", j) for j in range(X.shape[1]))
    if numeric is None:
        numeric = np.zeros(X.shape[1], dtype=bool)
    return np.ascontiguousarray(X, dtype=np.float64), np.asarray(numeric, dtype=np.bool_), catalog


class _Packed:
    """Bitset encoding of a training matrix shared by every tree of a forest."""

    def __init__(self, X: np.ndarray, y: np.ndarray, numeric: np.ndarray):
        n, p = X.shape
        self.XT = np.ascontiguousarray(X.T, dtype=np.float64)
        self.numeric = numeric
        self.bits = _pack(X.T > 0.5)
        self.bits[numeric] = 0
        tvals, tmasks, tptr = [], [], [0]
        for f in range(p):
            if numeric[f]:
                v = np.unique(X[:, f])
                mids = (v[:-1] + v[1:]) / 2.0
                tvals.append(mids)
                tmasks.append(X[:, f][None, :] <= mids[:, None])
            tptr.append(tptr[-1] + (len(tvals[-1]) if numeric[f] else 0))
        self.tptr = np.array(tptr, dtype=np.int64)
        self.tvals = np.concatenate(tvals) if tvals else np.zeros(0)
        self.tbits = _pack(np.concatenate(tmasks)) if tmasks else np.zeros((0, self.bits.shape[1]), np.uint64)
        self.ybits = _pack((y == 1)[None, :])[0]


def _pack(mask: np.ndarray) -> np.ndarray:
    """Pack a boolean (k, n) array into (k, ceil(n/64)) uint64 words, row r at
    bit r % 64 of word r // 64."""
    k, n = mask.shape
    words = (n + 63) // 64
    padded = np.zeros((k, words * 64), dtype=bool)
    padded[:, :n] = mask
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64)


def best_split(X, labels, rows, candidate_features, numeric=None):
    """Split maximising the weighted Gini decrease among ``candidate_features``.

    ``rows`` may repeat (bootstrap multiplicity). Returns ``(feature,
    threshold, decrease)`` or None when no split lowers impurity. Binary
    columns split at 0.5; numeric columns at midpoints of consecutive distinct
    values among ``rows``. Ties go to the lower feature, then the lower
    threshold.
    """
    X, numeric, _ = _as_arrays(X, numeric)
    y = np.asarray(labels, dtype=np.int64)
    packed = _Packed(X, y, numeric)
    w = np.bincount(np.asarray(rows, dtype=np.int64), minlength=X.shape[0])
    layers = _pack(np.arange(1, max(w.max(), 1) + 1)[:, None] <= w[None, :])
    members = layers[0]
    nl = layers & members
    nly = nl & packed.ybits
    n, pos = int(w.sum()), int(w[y == 1].sum())
    cand = np.sort(np.asarray(candidate_features, dtype=np.int64))
    f, d, dec = _best_split(packed.bits, packed.tbits, packed.tvals, packed.tptr, numeric,
                            nl, nly, n, pos, cand)
    if f < 0:
        return None
    t = 0.5 if d < 0 else _local_midpoint(packed.XT, members, f, packed.tvals[d])
    return int(f), float(t), float(dec)


def train_tree(packed: _Packed, params: ForestParams, tree_index: int) -> Tree:
    """Grow one tree; its random stream is seeded with mix(params.seed, tree_index)."""
    depth = -1 if params.max_depth is None else params.max_depth
    seed = np.uint64(mix_seed(params.seed, tree_index))
    return Tree(*_grow(packed.XT, packed.bits, packed.tbits, packed.tvals, packed.tptr,
                       packed.numeric, packed.ybits, seed, params.bootstrap,
                       params.mtry(packed.XT.shape[0]), params.min_samples_split, depth))


def train_forest(matrix, labels=None, params: ForestParams = ForestParams(), numeric=None) -> Forest:
    """Fit ``params.n_trees`` trees on bootstrap resamples.

    ``matrix`` is a :class:`FeatureMatrix` (labels default to its own) or a
    2-D array, in which case ``numeric`` flags the non-binary columns.
    """
    if labels is None:
        labels = matrix.labels
    X, numeric, catalog = _as_arrays(matrix, numeric)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != y.size:
        raise ValueError("labels do not match matrix rows")
    if y.size < 2 or np.unique(y).size < 2:
        raise ValueError("degenerate cohort")
    packed = _Packed(X, y, numeric)
    trees = tuple(train_tree(packed, params, t) for t in range(params.n_trees))
    return Forest(trees, tuple(catalog), params)


def _align(forest: Forest, data) -> np.ndarray:
    if isinstance(data, FeatureMatrix):
        if data.columns != forest.catalog:
            pos = {c: j for j, c in enumerate(data.columns)}
            try:
                cols = [pos[c] for c in forest.catalog]
            except KeyError:
                raise ValueError("row/catalog mismatch") from None
            return np.ascontiguousarray(data.dense()[:, cols], dtype=np.float64)
        return np.ascontiguousarray(data.dense(), dtype=np.float64)
    if isinstance(data, Mapping):
        try:
            return np.array([[float(data[c]) for c in forest.catalog]])
        except KeyError:
            raise ValueError("row/catalog mismatch") from None
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if X.shape[1] != len(forest.catalog):
        raise ValueError("row/catalog mismatch")
    return np.ascontiguousarray(X)


def predict_many(forest: Forest, data) -> np.ndarray:
    """Mean leaf positive fraction over trees, for every row of ``data``."""
    X = _align(forest, data)
    out = np.zeros(X.shape[0])
    for t in forest.trees:
        _predict_tree(X, t.feature, t.threshold, t.left, t.right, t.value, out)
    return out / len(forest.trees)


def predict_proba(forest: Forest, row: Sequence[float] | Mapping[Feature, float]) -> float:
    """Probability for a single row (array aligned with the catalog, or a
    Feature -> value mapping)."""
    X = _align(forest, row)
    if X.shape[0] != 1:
        raise ValueError("predict_proba takes a single row")
    return float(predict_many(forest, X)[0])
