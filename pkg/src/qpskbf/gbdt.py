"""Multiclass gradient-boosted regression trees with exact greedy splits.

Each boosting round fits one depth-bounded regression tree per class to the
softmax gradients.  Split search scans every feature in presorted order and
considers a threshold between every pair of distinct consecutive values
(no histogram binning).  Leaf values are Newton steps
``-G / (H + lambda)`` scaled by the learning rate.

Fitting is deterministic: ties between candidate splits keep the first one
found (lowest feature index, then lowest threshold).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

N_CLASSES = 4
HESSIAN_REG = 1.0
MIN_SPLIT_GAIN = 1e-12


@dataclass(frozen=True)
class Tree:
    """Flat tree; ``feature[i] == -1`` marks a leaf holding ``value[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def to_dict(self) -> dict:
        return {
            "feature": [int(x) for x in self.feature],
            "threshold": [float(x) for x in self.threshold],
            "left": [int(x) for x in self.left],
            "right": [int(x) for x in self.right],
            "value": [float(x) for x in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        t = cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )
        sizes = {len(t.feature), len(t.threshold), len(t.left), len(t.right), len(t.value)}
        if len(sizes) != 1 or len(t.feature) == 0:
            raise ValueError("tree arrays have inconsistent lengths")
        return t

    def predict_one(self, x: np.ndarray) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return float(self.value[i])


@njit(cache=True, nogil=True)
def _grow(x, sorted_vals, sorted_idx, g, h, max_depth, min_leaf, lam, scale):
    """Grow one tree per column of ``g``/``h`` (one per class) level by level.

    All classes share each pass over the presorted feature columns.
    """
    n, n_feat = x.shape
    n_cls = g.shape[1]
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full((n_cls, cap), -1, np.int64)
    threshold = np.zeros((n_cls, cap))
    left = np.full((n_cls, cap), -1, np.int64)
    right = np.full((n_cls, cap), -1, np.int64)
    value = np.zeros((n_cls, cap))
    gsum = np.zeros((n_cls, cap))
    hsum = np.zeros((n_cls, cap))
    count = np.zeros((n_cls, cap), np.int64)
    # slot of each row's current node within its class's frontier, -1 if settled
    row_slot = np.zeros((n, n_cls), np.int64)
    node_of = np.zeros((n, n_cls), np.int64)
    for k in range(n_cls):
        for r in range(n):
            gsum[k, 0] += g[r, k]
            hsum[k, 0] += h[r, k]
        count[k, 0] = n
    n_nodes = np.ones(n_cls, np.int64)
    frontier = np.full((n_cls, 2 ** max_depth), -1, np.int64)
    width = np.ones(n_cls, np.int64)
    frontier[:, 0] = 0
    m_max = 2 ** max_depth
    best_gain = np.empty((n_cls, m_max))
    best_feat = np.empty((n_cls, m_max), np.int64)
    best_thr = np.empty((n_cls, m_max))
    parent_score = np.empty((n_cls, m_max))
    tot_g = np.empty((n_cls, m_max))
    tot_h = np.empty((n_cls, m_max))
    tot_c = np.empty((n_cls, m_max), np.int64)
    gl = np.empty((n_cls, m_max))
    hl = np.empty((n_cls, m_max))
    cl = np.empty((n_cls, m_max), np.int64)
    last = np.empty((n_cls, m_max))
    next_frontier = np.empty(m_max, np.int64)
    for depth in range(max_depth):
        active = 0
        for k in range(n_cls):
            active += width[k]
            for s in range(width[k]):
                nid = frontier[k, s]
                best_gain[k, s] = MIN_SPLIT_GAIN
                best_feat[k, s] = -1
                best_thr[k, s] = 0.0
                tot_g[k, s] = gsum[k, nid]
                tot_h[k, s] = hsum[k, nid]
                tot_c[k, s] = count[k, nid]
                parent_score[k, s] = gsum[k, nid] ** 2 / (hsum[k, nid] + lam)
        if active == 0:
            break
        for f in range(n_feat):
            for k in range(n_cls):
                for s in range(width[k]):
                    gl[k, s] = 0.0
                    hl[k, s] = 0.0
                    cl[k, s] = 0
            for j in range(n):
                r = sorted_idx[f, j]
                v = sorted_vals[f, j]
                for k in range(n_cls):
                    s = row_slot[r, k]
                    if s < 0:
                        continue
                    c = cl[k, s]
                    if c >= min_leaf and v != last[k, s] and tot_c[k, s] - c >= min_leaf:
                        a = gl[k, s]
                        b = hl[k, s]
                        gr = tot_g[k, s] - a
                        hr = tot_h[k, s] - b
                        dl = b + lam
                        dr = hr + lam
                        # gain > best without dividing on every candidate
                        if a * a * dr + gr * gr * dl > (best_gain[k, s] + parent_score[k, s]) * dl * dr:
                            best_gain[k, s] = a * a / dl + gr * gr / dr - parent_score[k, s]
                            best_feat[k, s] = f
                            mid = 0.5 * (last[k, s] + v)
                            if mid >= v:
                                mid = last[k, s]
                            best_thr[k, s] = mid
                    gl[k, s] += g[r, k]
                    hl[k, s] += h[r, k]
                    cl[k, s] = c + 1
                    last[k, s] = v
        for k in range(n_cls):
            new_width = 0
            for s in range(width[k]):
                nid = frontier[k, s]
                if best_feat[k, s] < 0:
                    continue
                feature[k, nid] = best_feat[k, s]
                threshold[k, nid] = best_thr[k, s]
                left[k, nid] = n_nodes[k]
                right[k, nid] = n_nodes[k] + 1
                n_nodes[k] += 2
                new_width += 2
            for r in range(n):
                s = row_slot[r, k]
                if s < 0:
                    continue
                nid = node_of[r, k]
                if best_feat[k, s] < 0:
                    row_slot[r, k] = -1
                    continue
                if x[r, feature[k, nid]] <= threshold[k, nid]:
                    child = left[k, nid]
                else:
                    child = right[k, nid]
                node_of[r, k] = child
                gsum[k, child] += g[r, k]
                hsum[k, child] += h[r, k]
                count[k, child] += 1
            w = 0
            for s in range(width[k]):
                nid = frontier[k, s]
                if best_feat[k, s] >= 0:
                    next_frontier[w] = left[k, nid]
                    next_frontier[w + 1] = right[k, nid]
                    w += 2
            frontier[k, :new_width] = next_frontier[:new_width]
            width[k] = new_width
            # children of a split node occupy consecutive frontier slots
            for r in range(n):
                if row_slot[r, k] < 0:
                    continue
                child = node_of[r, k]
                for s in range(new_width):
                    if frontier[k, s] == child:
                        row_slot[r, k] = s
                        break
    leaf_value = np.empty((n, n_cls))
    for k in range(n_cls):
        for nid in range(n_nodes[k]):
            if feature[k, nid] < 0:
                value[k, nid] = -scale * gsum[k, nid] / (hsum[k, nid] + lam)
        for r in range(n):
            leaf_value[r, k] = value[k, node_of[r, k]]
    return feature, threshold, left, right, value, n_nodes, leaf_value


def presort(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature stable sort order, shapes (F, n)."""
    idx = np.argsort(x, axis=0, kind="stable").T.copy()
    vals = np.take_along_axis(x, idx.T, axis=0).T.copy()
    return vals, idx


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_softmax_boosting(x: np.ndarray, y: np.ndarray, rounds: int, max_depth: int,
                         learning_rate: float, min_leaf: int,
                         presorted: tuple[np.ndarray, np.ndarray] | None = None) -> list[list[Tree]]:
    """Boost ``rounds`` x 4 trees for labels ``y`` in {0..3}."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot fit on an empty dataset")
    vals, idx = presorted if presorted is not None else presort(x)
    onehot = np.zeros((n, N_CLASSES))
    onehot[np.arange(n), y] = 1.0
    scores = np.zeros((n, N_CLASSES))
    out = []
    for _ in range(rounds):
        prob = softmax(scores)
        g = prob - onehot
        h = np.maximum(prob * (1.0 - prob), 1e-16)
        f, t, lft, rgt, v, sizes, leaf = _grow(x, vals, idx, g, h, max_depth, min_leaf,
                                               HESSIAN_REG, learning_rate)
        trees = []
        for k in range(N_CLASSES):
            c = sizes[k]
            trees.append(Tree(f[k, :c].copy(), t[k, :c].copy(), lft[k, :c].copy(),
                              rgt[k, :c].copy(), v[k, :c].copy()))
        scores += leaf
        out.append(trees)
    return out


class DenseForest:
    """All trees of a model padded to complete binary trees of equal depth.

    Every input follows exactly ``depth`` comparisons per tree, so inference
    cost does not depend on the input.  Leaves reached early are pushed down
    the always-left path (threshold +inf).
    """

    def __init__(self, trees: list[Tree], depth: int):
        self.depth = depth
        n_inner = 2 ** depth - 1
        t = len(trees)
        self.feature = np.zeros((t, max(n_inner, 1)), dtype=np.int64)
        self.threshold = np.full((t, max(n_inner, 1)), np.inf)
        self.leaf = np.zeros((t, 2 ** depth))
        for ti, tree in enumerate(trees):
            self._fill(ti, tree, 0, 0, 0)
        self._rows = np.arange(t)

    def _fill(self, ti, tree, src, dst, level):
        if tree.feature[src] < 0:
            # walk the always-left path down to a leaf slot
            while level < self.depth:
                dst = 2 * dst + 1
                level += 1
            self.leaf[ti, dst - (2 ** self.depth - 1)] = tree.value[src]
            return
        if level >= self.depth:
            raise ValueError("tree deeper than the declared depth")
        self.feature[ti, dst] = tree.feature[src]
        self.threshold[ti, dst] = tree.threshold[src]
        self._fill(ti, tree, tree.left[src], 2 * dst + 1, level + 1)
        self._fill(ti, tree, tree.right[src], 2 * dst + 2, level + 1)

    def leaf_values(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(self._rows), dtype=np.int64)
        for _ in range(self.depth):
            go_right = x[self.feature[self._rows, node]] > self.threshold[self._rows, node]
            node = 2 * node + 1 + go_right
        return self.leaf[self._rows, node - (2 ** self.depth - 1)]
