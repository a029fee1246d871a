"""Array-backed CART trees.

For a 0/1 target, minimizing weighted gini impurity and minimizing squared
error pick the same split: both maximize ``s_L^2/n_L + s_R^2/n_R`` where
``s`` is the target sum on each side. One builder therefore serves the
classification trees and the regression trees inside gradient boosting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray  # int64, LEAF for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``x``."""
        node = np.zeros(len(x), dtype=np.int64)
        active = self.feature[node] != LEAF
        while np.any(active):
            rows = np.nonzero(active)[0]
            nd = node[rows]
            go_left = x[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] != LEAF
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    def arrays(self, prefix: str) -> dict:
        return {
            f"{prefix}feature": self.feature,
            f"{prefix}threshold": self.threshold,
            f"{prefix}left": self.left,
            f"{prefix}right": self.right,
            f"{prefix}value": self.value,
            f"{prefix}n_samples": self.n_samples,
        }

    @classmethod
    def from_arrays(cls, arrs: dict, prefix: str) -> "Tree":
        return cls(*(arrs[f"{prefix}{name}"] for name in
                     ("feature", "threshold", "left", "right", "value", "n_samples")))


def _best_split(x: np.ndarray, y: np.ndarray, features: np.ndarray, min_leaf: int):
    n = len(y)
    total = y.sum()
    parent_score = total * total / n
    best = (0.0, -1, 0.0)
    for j in features:
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        cs = np.cumsum(y[order])[:-1]
        n_left = np.arange(1, n, dtype=np.float64)
        valid = xs[1:] > xs[:-1]
        if min_leaf > 1:
            valid &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not np.any(valid):
            continue
        score = cs * cs / n_left + (total - cs) ** 2 / (n - n_left)
        score = np.where(valid, score, -np.inf)
        pos = int(np.argmax(score))
        gain = score[pos] - parent_score
        if gain > best[0] + 1e-12:
            best = (gain, int(j), 0.5 * (xs[pos] + xs[pos + 1]))
    return best


def build_tree(
    x: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    max_depth: int | None = None,
    max_features: int | None = None,
    min_samples_split: int = 2,
    min_samples_leaf: int = 1,
) -> Tree:
    """Greedy best-first CART; leaf values are target means."""
    y = np.asarray(y, dtype=np.float64)
    k = x.shape[1]
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[idx].mean()))
        count.append(len(idx))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        if (
            len(idx) < min_samples_split
            or (max_depth is not None and depth >= max_depth)
            or np.all(yi == yi[0])
        ):
            continue
        feats = rng.permutation(k)
        if max_features is not None:
            feats = feats[:max_features]
        gain, j, thr = _best_split(x[idx], yi, feats, min_samples_leaf)
        if j < 0:
            continue
        mask = x[idx, j] <= thr
        li, ri = idx[mask], idx[~mask]
        ln, rn = new_node(li), new_node(ri)
        feature[node], threshold[node], left[node], right[node] = j, thr, ln, rn
        stack.append((rn, ri, depth + 1))
        stack.append((ln, li, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
        np.array(count, dtype=np.int64),
    )
