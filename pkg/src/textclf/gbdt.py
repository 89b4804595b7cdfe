"""Second-order gradient-boosted regression trees for binary classification.

The ensemble realizes an additive strong learner

    margin(x) = base_score + learning_rate * sum_t tree_t(x)

where each tree is a weak learner grown by exact greedy search over
(feature, threshold) pairs using the Newton split gain, and the sum runs
over every tree of the ensemble.

Zeros in sparse inputs are real values 0.0; a row goes left when its
feature value is strictly below the node threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, GbdtSingleClassInput
from .features import SparseMatrix


@dataclass(frozen=True)
class GbdtParams:
    """Boosting hyperparameters.

    Defaults: eta 0.3, depth 6, min_child_weight 1, gamma 0.1, subsample 0.9,
    colsample_bytree 0.7, with 100 rounds and lambda 1.
    """

    n_rounds: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    min_child_weight: float = 1.0
    gamma: float = 0.1
    subsample: float = 0.9
    colsample_bytree: float = 0.7
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 1 or self.max_depth < 1:
            raise ValueError("n_rounds and max_depth must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.min_child_weight < 0 or self.gamma < 0 or self.reg_lambda < 0:
            raise ValueError("min_child_weight, gamma and reg_lambda must be non-negative")
        if not (0 < self.subsample <= 1 and 0 < self.colsample_bytree <= 1):
            raise ValueError("sampling rates must lie in (0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class Tree:
    """Flat node arrays in pre-order; leaves have feature == -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Leaf value reached by each row of the dense matrix ``x``."""
        idx = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            f = self.feature[idx]
            active = np.flatnonzero(f >= 0)
            if active.size == 0:
                return self.value[idx]
            node = idx[active]
            go_left = x[active, f[active]] < self.threshold[node]
            idx[active] = np.where(go_left, self.left[node], self.right[node])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=np.float64),
        )


@dataclass
class GbdtEnsemble:
    trees: list[Tree]
    base_score: float
    learning_rate: float
    n_features: int
    loss_trace: list[float] = field(default_factory=list, repr=False)


def split_gain(g_left, h_left, g_right, h_right, params: GbdtParams = GbdtParams()):
    lam = params.reg_lambda
    g = g_left + g_right
    h = h_left + h_right
    return 0.5 * (
        g_left**2 / (h_left + lam) + g_right**2 / (h_right + lam) - g**2 / (h + lam)
    ) - params.gamma


def leaf_weight(g: float, h: float, params: GbdtParams) -> float:
    return -g / (h + params.reg_lambda)


def _dense(x: Union[SparseMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(x, SparseMatrix):
        return x.to_dense()
    return np.asarray(x, dtype=np.float64)


def _as_indices(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.arange(n)
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return np.flatnonzero(mask)
    return np.sort(mask.astype(np.int64))


def _best_split(x, rows, cols, g, h, params):
    """Best (gain, feature, threshold) at a node, or None.

    Ties keep the lowest feature index, then the lowest threshold.
    """
    if len(rows) < 2 or len(cols) == 0:
        return None
    xn = x[np.ix_(rows, cols)]
    order = np.argsort(xn, axis=0, kind="stable")
    sv = np.take_along_axis(xn, order, axis=0)
    gs = g[rows][order]
    hs = h[rows][order]
    g_tot = g[rows].sum()
    h_tot = h[rows].sum()
    gl = np.cumsum(gs, axis=0)[:-1]
    hl = np.cumsum(hs, axis=0)[:-1]
    gr = g_tot - gl
    hr = h_tot - hl
    valid = (
        (sv[1:] > sv[:-1])
        & (hl >= params.min_child_weight)
        & (hr >= params.min_child_weight)
    )
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = split_gain(gl, hl, gr, hr, params)
    gain = np.where(valid, gain, -np.inf).T  # feature-major
    flat = int(np.argmax(gain))
    best = gain.flat[flat]
    if not best > 0:
        return None
    fi, pos = divmod(flat, gain.shape[1])
    lo, hi = sv[pos, fi], sv[pos + 1, fi]
    thr = 0.5 * (lo + hi)
    if not lo < thr <= hi:
        thr = hi
    return float(best), int(cols[fi]), float(thr)


def build_tree(
    x: Union[SparseMatrix, np.ndarray],
    gradients: Sequence[float],
    hessians: Sequence[float],
    row_mask=None,
    col_mask=None,
    params: GbdtParams = GbdtParams(),
) -> Tree:
    """Grow one tree by exact greedy search.

    A node becomes a leaf at ``max_depth``, when no split has gain > 0, or
    when every candidate leaves a child with hessian sum below
    ``min_child_weight``. Leaf weight is -G / (H + lambda).
    """
    x = _dense(x)
    g = np.asarray(gradients, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    if len(g) != x.shape[0] or len(h) != x.shape[0]:
        raise DimensionMismatch("gradients and hessians must match the row count")
    rows = _as_indices(row_mask, x.shape[0])
    cols = _as_indices(col_mask, x.shape[1])

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def grow(node_rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_weight(g[node_rows].sum(), h[node_rows].sum(), params))
        if depth >= params.max_depth:
            return node
        split = _best_split(x, node_rows, cols, g, h, params)
        if split is None:
            return node
        _, f, thr = split
        goes_left = x[node_rows, f] < thr
        feature[node] = f
        threshold[node] = thr
        value[node] = 0.0
        left[node] = grow(node_rows[goes_left], depth + 1)
        right[node] = grow(node_rows[~goes_left], depth + 1)
        return node

    grow(rows, 0)
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )


def logistic_loss(margins: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^m) - y m, written stably
    return float(np.mean(np.logaddexp(0.0, margins) - y * margins))


def train_gbdt(
    x: Union[SparseMatrix, np.ndarray],
    y: Sequence[int],
    params: GbdtParams = GbdtParams(),
) -> GbdtEnsemble:
    dense = _dense(x)
    y = np.asarray(y, dtype=np.float64)
    n, m = dense.shape
    if len(y) != n:
        raise DimensionMismatch(f"{len(y)} labels for {n} rows")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    p = y.mean()
    if p == 0.0 or p == 1.0:
        raise GbdtSingleClassInput("both classes must be present")

    rng = np.random.default_rng(params.seed)
    base = math.log(p / (1.0 - p))
    margins = np.full(n, base)
    trees: list[Tree] = []
    losses = [logistic_loss(margins, y)]
    n_cols = max(1, math.floor(params.colsample_bytree * m))

    for _ in range(params.n_rounds):
        prob = expit(margins)
        grad = prob - y
        hess = prob * (1.0 - prob)
        if params.subsample < 1.0:
            row_mask = rng.random(n) < params.subsample
            if not row_mask.any():
                row_mask[rng.integers(n)] = True
        else:
            row_mask = np.ones(n, dtype=bool)
        if params.colsample_bytree < 1.0:
            cols = np.sort(rng.choice(m, size=n_cols, replace=False))
        else:
            cols = np.arange(m)
        tree = build_tree(dense, grad, hess, row_mask, cols, params)
        trees.append(tree)
        margins = margins + params.learning_rate * tree.evaluate(dense)
        losses.append(logistic_loss(margins, y))

    return GbdtEnsemble(trees, base, params.learning_rate, m, losses)


def _rows_dense(model: GbdtEnsemble, x) -> np.ndarray:
    if isinstance(x, SparseMatrix):
        cols = x.n_cols
    else:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cols = x.shape[1]
    if cols != model.n_features:
        raise DimensionMismatch(f"{cols} features, model trained on {model.n_features}")
    return _dense(x)


def tree_contributions(model: GbdtEnsemble, x) -> np.ndarray:
    """(n_trees, n_rows) learning-rate-scaled per-tree outputs."""
    dense = _rows_dense(model, x)
    if not model.trees:
        return np.zeros((0, dense.shape[0]))
    return np.stack([model.learning_rate * t.evaluate(dense) for t in model.trees])


def predict_margins(model: GbdtEnsemble, x) -> np.ndarray:
    dense = _rows_dense(model, x)
    margins = np.full(dense.shape[0], model.base_score)
    for tree in model.trees:
        margins = margins + model.learning_rate * tree.evaluate(dense)
    return margins


def predict_margin(model: GbdtEnsemble, x) -> float:
    margins = predict_margins(model, x)
    if margins.shape[0] != 1:
        raise DimensionMismatch("predict_margin expects a single row")
    return float(margins[0])


def predict_proba(model: GbdtEnsemble, x) -> np.ndarray:
    return expit(predict_margins(model, x))


def gbdt_predict(model: GbdtEnsemble, x) -> list[int]:
    return [int(p >= 0.5) for p in predict_proba(model, x)]
