"""CART regression trees grown level by level.

Two split finders share one tree layout:

* exact: every midpoint between consecutive distinct feature values in a
  node is a candidate (features presorted once, orders kept per node);
* histogram: features are pre-binned (see :class:`Binning`) and candidate
  thresholds sit between occupied bins, which is what the boosted ensembles
  use for speed.

Splits maximise the reduction of squared error. Ties go to the lower
feature index, then to the smaller threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):  # children always follow their parent
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            inner = f >= 0
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]


@dataclass
class Binning:
    """Per-feature cut points; code ``c`` holds values in ``(cuts[c-1], cuts[c]]``."""

    cuts: list
    max_bins: int

    @classmethod
    def fit(cls, X, max_bins: int = 255) -> Binning:
        X = np.asarray(X, dtype=float)
        cuts = []
        for f in range(X.shape[1]):
            u = np.unique(X[:, f])
            if len(u) <= max_bins:
                cuts.append(u[:-1])
            else:
                pos = np.linspace(0, len(u) - 1, max_bins + 1)[1:-1]
                cuts.append(np.unique(u[np.round(pos).astype(int)]))
        return cls(cuts, max_bins)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        codes = np.empty(X.shape, dtype=np.int32)
        for f, cut in enumerate(self.cuts):
            codes[:, f] = np.searchsorted(cut, X[:, f], side="left")
        return codes

    def bin(self, X) -> BinnedData:
        X = np.asarray(X, dtype=float)
        codes = self.transform(X)
        n_bins = max(len(c) for c in self.cuts) + 1
        d = X.shape[1]
        lower = np.full((d, n_bins), np.inf)
        upper = np.full((d, n_bins), -np.inf)
        for f in range(d):
            np.minimum.at(lower[f], codes[:, f], X[:, f])
            np.maximum.at(upper[f], codes[:, f], X[:, f])
        return BinnedData(codes, lower, upper)


@dataclass
class BinnedData:
    codes: np.ndarray
    lower: np.ndarray  # smallest training value per (feature, bin)
    upper: np.ndarray  # largest training value per (feature, bin)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.codes_t = np.ascontiguousarray(self.codes.T)
        # feature-major codes with per-feature offsets, ready for bincount
        self._keys = self.codes_t + (np.arange(self.n_features) * self.n_bins)[:, None]

    @property
    def n_bins(self) -> int:
        return self.lower.shape[1]

    @property
    def n_features(self) -> int:
        return self.lower.shape[0]

    def histograms(self, rows, y):
        """Per-(feature, bin) sums of ``y`` and counts over ``rows``."""
        keys = self._keys[:, rows].ravel()
        size = self.n_features * self.n_bins
        sums = np.bincount(keys, weights=np.tile(y, self.n_features), minlength=size)
        counts = np.bincount(keys, minlength=size)
        shape = (self.n_features, self.n_bins)
        return sums.reshape(shape), counts.reshape(shape)


class _TreeGrower:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, left_value: float,
              right_value: float) -> tuple[int, int]:
        left = self.add(left_value)
        right = self.add(right_value)
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right
        return left, right

    def finish(self) -> Tree:
        return Tree(np.array(self.feature, dtype=np.int64), np.array(self.threshold, dtype=float),
                    np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
                    np.array(self.value, dtype=float))


def _feature_mask(k, d, max_features, rng):
    if max_features is None or max_features >= d:
        return None
    ranks = np.argsort(rng.random((k, d)), axis=1)
    mask = np.zeros((k, d), dtype=bool)
    np.put_along_axis(mask, ranks[:, :max_features], True, axis=1)
    return mask


def _midpoint(lo, hi):
    mid = (lo + hi) / 2.0
    # adjacent floats: the midpoint may round onto hi
    return np.where(mid < hi, mid, lo)


def _exact_splits(X, y_centered, frontier_of, orders, counts, k, min_leaf, mask):
    """Best exact split per frontier node: (gain, feature, threshold)."""
    d = X.shape[1]
    best_gain = np.full(k, -np.inf)
    best_feat = np.full(k, -1, dtype=np.int64)
    best_thr = np.zeros(k)
    for f in range(d):
        o = orders[f]
        m = o.size
        nd = frontier_of[o]
        xv = X[o, f]
        cs = np.cumsum(y_centered[o])
        starts = np.searchsorted(nd, np.arange(k))
        pos = np.arange(m)
        seg_start = starts[nd]
        prior = np.where(seg_start > 0, cs[seg_start - 1], 0.0)
        sl = cs - prior
        nl = pos - seg_start + 1
        nr = counts[nd] - nl
        valid = np.zeros(m, dtype=bool)
        valid[:-1] = (nd[:-1] == nd[1:]) & (xv[:-1] < xv[1:])
        valid &= (nl >= min_leaf) & (nr >= min_leaf)
        if mask is not None:
            valid &= mask[nd, f]
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(valid, sl * sl * counts[nd] / (nl * nr), -np.inf)
        seg_max = np.maximum.reduceat(gain, starts)
        hit = valid & (gain == seg_max[nd])
        first = np.minimum.reduceat(np.where(hit, pos, m), starts)
        better = (seg_max > best_gain) & (first < m)
        if better.any():
            p = first[better]
            best_gain[better] = seg_max[better]
            best_feat[better] = f
            best_thr[better] = _midpoint(xv[p], xv[p + 1])
    return best_gain, best_feat, best_thr


def build_tree(X, y, max_depth: int | None = None, min_samples_leaf: int = 1,
               max_features: int | None = None, rng=None, binned: BinnedData | None = None):
    """Grow one regression tree.

    Returns the tree and, for every training row, the index of its leaf.
    Passing ``binned`` selects the histogram split finder and ``X`` is
    ignored.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n == 0:
        raise ValueError("cannot grow a tree on zero samples")
    max_depth = np.inf if max_depth is None else max_depth
    min_leaf = max(int(min_samples_leaf), 1)
    if max_features is not None and rng is None:
        rng = np.random.default_rng(0)
    if binned is not None:
        return _grow_histogram(binned, y, max_depth, min_leaf, max_features, rng)
    X = np.asarray(X, dtype=float)
    d = X.shape[1]

    grower = _TreeGrower()
    grower.add(float(y.mean()))
    leaf_of = np.zeros(n, dtype=np.int64)
    frontier_nodes = np.array([0])
    rows = np.arange(n)  # rows still in splittable nodes
    frontier_of_row = np.zeros(n, dtype=np.int64)
    frontier_of = np.full(n, -1, dtype=np.int64)  # indexed by sample id
    frontier_of[rows] = 0
    orders = [np.argsort(X[:, f], kind="stable") for f in range(d)]
    depth = 0
    while frontier_nodes.size:
        k = frontier_nodes.size
        yr = y[rows]
        counts = np.bincount(frontier_of_row, minlength=k)
        sums = np.bincount(frontier_of_row, weights=yr, minlength=k)
        means = sums / counts
        yc = yr - means[frontier_of_row]
        # constant targets give zero gain everywhere, so no impurity test is needed
        can_split = (counts >= 2 * min_leaf) & (depth < max_depth)

        gain = np.full(k, -np.inf)
        if can_split.any():
            mask = _feature_mask(k, d, max_features, rng)
            y_centered = np.zeros(n)
            y_centered[rows] = yc
            gain, feat, thr = _exact_splits(X, y_centered, frontier_of, orders, counts, k,
                                            min_leaf, mask)
        split = can_split & np.isfinite(gain) & (gain > 0)

        goes_left = np.zeros(rows.size, dtype=bool)
        sf = split[frontier_of_row]
        fr = frontier_of_row[sf]
        goes_left[sf] = X[rows[sf], feat[fr]] <= thr[fr]

        # child means from the partition actually used
        left_key = frontier_of_row * 2 + (~goes_left)
        child_cnt = np.bincount(left_key, minlength=2 * k).reshape(k, 2)
        child_sum = np.bincount(left_key, weights=yr, minlength=2 * k).reshape(k, 2)

        new_index = np.full(k, -1, dtype=np.int64)
        next_nodes = []
        for j in np.flatnonzero(split):
            lv = child_sum[j, 0] / child_cnt[j, 0]
            rv = child_sum[j, 1] / child_cnt[j, 1]
            left, right = grower.split(int(frontier_nodes[j]), int(feat[j]), float(thr[j]), lv, rv)
            new_index[j] = len(next_nodes)
            next_nodes += [left, right]
        done = ~split[frontier_of_row]
        leaf_of[rows[done]] = frontier_nodes[frontier_of_row[done]]

        keep = ~done
        child = new_index[frontier_of_row[keep]] + (~goes_left[keep])
        rows = rows[keep]
        frontier_of_row = child
        frontier_nodes = np.array(next_nodes, dtype=np.int64)
        frontier_of[:] = -1
        frontier_of[rows] = frontier_of_row
        if rows.size:
            for f in range(d):
                o = orders[f]
                o = o[frontier_of[o] >= 0]
                orders[f] = o[np.argsort(frontier_of[o], kind="stable")]
        depth += 1
    return grower.finish(), leaf_of


def _best_hist_split(sums, counts, total, n, min_leaf, allowed):
    """Best (gain, feature, bin) for one node from its (d, B) histograms."""
    sl = np.cumsum(sums, axis=1)
    nl = np.cumsum(counts, axis=1)
    nr = n - nl
    valid = (counts > 0) & (nl >= min_leaf) & (nr >= min_leaf)
    if allowed is not None:
        valid &= allowed[:, None]
    if not valid.any():
        return -np.inf, -1, -1
    centered = sl - nl * (total / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(valid, centered * centered * n / (nl * nr), -np.inf)
    best = int(np.argmax(gain))
    f, b = divmod(best, sums.shape[1])
    return float(gain[f, b]), f, b


def _grow_histogram(binned, y, max_depth, min_leaf, max_features, rng):
    n = y.shape[0]
    d = binned.n_features
    codes_t = binned.codes_t
    grower = _TreeGrower()
    leaf_of = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    sums, counts = binned.histograms(rows, y)
    total = float(y.sum())
    # (tree node, rows, histogram sums, histogram counts, sum of y)
    frontier = [(grower.add(total / n), rows, sums, counts, total)]
    depth = 0
    while frontier:
        masks = _feature_mask(len(frontier), d, max_features, rng)
        nxt = []
        for j, (node, rows, sums, counts, total) in enumerate(frontier):
            m = rows.size
            gain = -np.inf
            if m >= 2 * min_leaf and depth < max_depth:
                allowed = None if masks is None else masks[j]
                gain, f, b = _best_hist_split(sums, counts, total, m, min_leaf, allowed)
            if not gain > 0:
                leaf_of[rows] = node
                continue
            occupied = np.flatnonzero(counts[f, b + 1:] > 0)
            hi_bin = b + 1 + occupied[0]
            thr = float(_midpoint(binned.upper[f, b], binned.lower[f, hi_bin]))
            go_left = codes_t[f, rows] <= b
            left_rows = rows[go_left]
            right_rows = rows[~go_left]
            left_total = float(y[left_rows].sum())
            right_total = total - left_total
            left, right = grower.split(node, f, thr, left_total / left_rows.size,
                                       right_total / right_rows.size)
            # build the smaller child's histogram, derive its sibling
            if left_rows.size <= right_rows.size:
                ls, lc = binned.histograms(left_rows, y[left_rows])
                rs, rc = sums - ls, counts - lc
            else:
                rs, rc = binned.histograms(right_rows, y[right_rows])
                ls, lc = sums - rs, counts - rc
            nxt.append((left, left_rows, ls, lc, left_total))
            nxt.append((right, right_rows, rs, rc, right_total))
        frontier = nxt
        depth += 1
    return grower.finish(), leaf_of


@dataclass
class PackedTrees:
    """Many trees flattened into shared arrays for vectorized traversal."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray  # global node indices
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    max_depth: int

    @classmethod
    def pack(cls, trees) -> PackedTrees:
        offsets = np.cumsum([0] + [t.n_nodes for t in trees[:-1]])
        feature = np.concatenate([t.feature for t in trees])
        threshold = np.concatenate([t.threshold for t in trees])
        left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(trees, offsets)])
        right = np.concatenate([np.where(t.right >= 0, t.right + o, -1)
                                for t, o in zip(trees, offsets)])
        value = np.concatenate([t.value for t in trees])
        depth = max(t.depth for t in trees)
        return cls(feature, threshold, left, right, value, offsets.astype(np.int64), depth)

    def leaf_values(self, X) -> np.ndarray:
        """Leaf value of every tree for every row, shape (n_rows, n_trees)."""
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        node = np.broadcast_to(self.roots, (n, self.roots.size)).copy()
        rows = np.arange(n)[:, None]
        for _ in range(self.max_depth):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]

    def get_state(self, prefix: str) -> dict:
        return {
            f"{prefix}feature": self.feature,
            f"{prefix}threshold": self.threshold,
            f"{prefix}left": self.left,
            f"{prefix}right": self.right,
            f"{prefix}value": self.value,
            f"{prefix}roots": self.roots,
            f"{prefix}max_depth": np.array(self.max_depth),
        }

    @classmethod
    def from_state(cls, state: dict, prefix: str) -> PackedTrees:
        return cls(*(np.asarray(state[f"{prefix}{name}"]) for name in
                     ("feature", "threshold", "left", "right", "value", "roots")),
                   int(state[f"{prefix}max_depth"]))
