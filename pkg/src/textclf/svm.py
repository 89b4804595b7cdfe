"""Kernel support-vector classification trained by sequential minimal optimization.

The dual problem

    min_a  1/2 a^T Q a - e^T a,   Q_ij = y_i y_j K(x_i, x_j)
    s.t.   0 <= a_i <= C,  sum_i y_i a_i = 0

is solved two variables at a time, always picking the maximally violating
pair. Multi-class problems are reduced one-vs-rest; a binary problem is a
single model in which class 0 plays the +1 role.
"""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, EmptyMatrix, SingleClassInput
from .features import SparseMatrix

TAU = 1e-12


class NonConvergenceWarning(RuntimeWarning):
    """SMO hit its iteration cap; the best iterate was kept."""

    code = "svm.NonConvergence"


@dataclass(frozen=True)
class SvmParams:
    c: float = 1.0
    kernel: str = "rbf"
    gamma: Union[str, float] = "scale"
    tolerance: float = 1e-3
    max_passes: int = 1000
    cache_mb: int = 200

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.kernel not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.gamma != "scale" and not float(self.gamma) > 0:
            raise ValueError("gamma must be 'scale' or a positive number")
        if self.max_passes < 1 or self.cache_mb < 1:
            raise ValueError("max_passes and cache_mb must be positive")


@dataclass
class BinarySvm:
    support_vectors: SparseMatrix
    dual_coefficients: np.ndarray  # alpha_i * y_i
    bias: float
    gamma_value: float
    kernel: str
    support_indices: np.ndarray
    converged: bool = True
    n_iterations: int = 0
    objective_trace: list[float] = field(default_factory=list, repr=False)

    def decision_function(self, x: SparseMatrix) -> np.ndarray:
        if x.n_cols != self.support_vectors.n_cols:
            raise DimensionMismatch(
                f"{x.n_cols} features, model trained on {self.support_vectors.n_cols}"
            )
        k = _kernel_matrix(x, self.support_vectors, self.kernel, self.gamma_value)
        return k @ self.dual_coefficients + self.bias


@dataclass
class SvmModel:
    classes: list[int]
    binary_models: list[BinarySvm]
    n_features: int
    params: SvmParams

    @property
    def gamma_value(self) -> float:
        return self.binary_models[0].gamma_value

    def decision_scores(self, x: SparseMatrix) -> np.ndarray:
        """(n_rows, n_classes) one-vs-rest scores."""
        if x.n_cols != self.n_features:
            raise DimensionMismatch(f"{x.n_cols} features, model trained on {self.n_features}")
        if len(self.classes) == 2:
            d = self.binary_models[0].decision_function(x)
            return np.column_stack([d, -d])
        return np.column_stack([m.decision_function(x) for m in self.binary_models])


def _sq_norms(x: SparseMatrix) -> np.ndarray:
    return np.asarray(x.to_scipy().multiply(x.to_scipy()).sum(axis=1)).ravel()


def _kernel_matrix(a: SparseMatrix, b: SparseMatrix, kernel: str, gamma: float) -> np.ndarray:
    dots = np.asarray((a.to_scipy() @ b.to_scipy().T).todense())
    if kernel == "linear":
        return dots
    d2 = _sq_norms(a)[:, None] + _sq_norms(b)[None, :] - 2.0 * dots
    return np.exp(-gamma * np.maximum(d2, 0.0))


def scale_gamma(x: SparseMatrix) -> float:
    """1 / (n_features * variance of all entries, zeros included)."""
    n_entries = x.n_rows * x.n_cols
    if n_entries == 0:
        raise EmptyMatrix("cannot compute gamma of an empty matrix")
    mean = math.fsum(x.data) / n_entries
    dev = x.data - mean
    var = (math.fsum(dev * dev) + (n_entries - x.nnz) * mean * mean) / n_entries
    if var == 0.0:
        return 1.0 / x.n_cols
    return 1.0 / (x.n_cols * var)


def _as_dense_row(v) -> np.ndarray:
    if isinstance(v, SparseMatrix):
        if v.n_rows != 1:
            raise DimensionMismatch("expected a single row")
        return v.to_dense()[0]
    return np.asarray(v, dtype=np.float64).ravel()


def rbf_kernel(x, y, gamma: float) -> float:
    x, y = _as_dense_row(x), _as_dense_row(y)
    if x.shape != y.shape:
        raise DimensionMismatch(f"rows of length {len(x)} and {len(y)}")
    diff = x - y
    return math.exp(-gamma * float(np.dot(diff, diff)))


class KernelCache:
    """LRU cache of kernel rows bounded by a megabyte budget."""

    def __init__(self, x: SparseMatrix, kernel: str, gamma: float, cache_mb: int):
        self._x = x.to_scipy()
        self._kernel = kernel
        self._gamma = gamma
        self._sq = _sq_norms(x)
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.capacity = max(2, (cache_mb * 2**20) // (8 * max(x.n_rows, 1)))
        self.hits = 0
        self.misses = 0

    def row(self, i: int) -> np.ndarray:
        cached = self._rows.get(i)
        if cached is not None:
            self._rows.move_to_end(i)
            self.hits += 1
            return cached
        self.misses += 1
        dots = np.asarray(self._x @ self._x[i].T.toarray()).ravel()
        if self._kernel == "linear":
            k = dots
        else:
            k = np.exp(-self._gamma * np.maximum(self._sq + self._sq[i] - 2.0 * dots, 0.0))
        self._rows[i] = k
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return k

    def __len__(self) -> int:
        return len(self._rows)


def _violation_bounds(alpha, grad, y, c):
    """Max of -y*grad over I_up and min over I_low, with their argmax/argmin."""
    score = -y * grad
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    up_scores = np.where(up, score, -np.inf)
    low_scores = np.where(low, score, np.inf)
    i = int(np.argmax(up_scores))
    j = int(np.argmin(low_scores))
    return up_scores[i], i, low_scores[j], j


def train_binary_svm(
    x: SparseMatrix,
    y: Sequence[int],
    params: SvmParams = SvmParams(),
    *,
    record_objective: bool = False,
) -> BinarySvm:
    y = np.asarray(y, dtype=np.float64)
    n = x.n_rows
    if len(y) != n:
        raise DimensionMismatch(f"{len(y)} labels for {n} rows")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.all(y == y[0]):
        raise SingleClassInput("both classes must be present")

    gamma = scale_gamma(x) if params.gamma == "scale" else float(params.gamma)
    c = params.c
    cache = KernelCache(x, params.kernel, gamma, params.cache_mb)
    diag = _sq_norms(x) if params.kernel == "linear" else np.ones(n)

    alpha = np.zeros(n)
    grad = -np.ones(n)
    trace: list[float] = []
    converged = False
    max_iter = params.max_passes * n
    it = 0
    m_val = big_m = 0.0

    while it < max_iter:
        m_val, i, big_m, j = _violation_bounds(alpha, grad, y, c)
        if m_val - big_m <= params.tolerance:
            converged = True
            break
        it += 1
        ki = cache.row(i)
        kj = cache.row(j)
        old_i, old_j = alpha[i], alpha[j]
        quad = max(diag[i] + diag[j] - 2.0 * ki[j], TAU)

        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = c - diff
            elif alpha[j] > c:
                alpha[j] = c
                alpha[i] = c + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = total - c
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > c:
                if alpha[j] > c:
                    alpha[j] = c
                    alpha[i] = total - c
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total

        d_i = alpha[i] - old_i
        d_j = alpha[j] - old_j
        grad += y * (y[i] * d_i * ki + y[j] * d_j * kj)
        if record_objective:
            trace.append(0.5 * float(np.dot(alpha, 1.0 - grad)))
    else:
        m_val, _, big_m, _ = _violation_bounds(alpha, grad, y, c)

    if not converged:
        warnings.warn(
            f"SMO stopped after {it} iterations with violation {m_val - big_m:.3g}",
            NonConvergenceWarning,
            stacklevel=2,
        )

    bias = 0.5 * (m_val + big_m)
    support = np.flatnonzero(alpha > 0)
    return BinarySvm(
        support_vectors=x.take_rows(support),
        dual_coefficients=alpha[support] * y[support],
        bias=float(bias),
        gamma_value=float(gamma),
        kernel=params.kernel,
        support_indices=support,
        converged=converged,
        n_iterations=it,
        objective_trace=trace,
    )


def dual_alphas(model: BinarySvm, n_rows: int) -> np.ndarray:
    alpha = np.zeros(n_rows)
    alpha[model.support_indices] = np.abs(model.dual_coefficients)
    return alpha


def kkt_violation(model: BinarySvm, x: SparseMatrix, y: Sequence[int], c: float) -> float:
    """Largest amount by which any training point breaks its KKT condition."""
    y = np.asarray(y, dtype=np.float64)
    alpha = dual_alphas(model, x.n_rows)
    margin = y * model.decision_function(x)
    worst = 0.0
    at_zero = alpha == 0
    at_c = alpha >= c
    free = ~at_zero & ~at_c
    if at_zero.any():
        worst = max(worst, float(np.max(1.0 - margin[at_zero])))
    if free.any():
        worst = max(worst, float(np.max(np.abs(margin[free] - 1.0))))
    if at_c.any():
        worst = max(worst, float(np.max(margin[at_c] - 1.0)))
    return worst


def train_svm(x: SparseMatrix, labels: Sequence[int], params: SvmParams = SvmParams()) -> SvmModel:
    labels = np.asarray(labels)
    if len(labels) != x.n_rows:
        raise DimensionMismatch(f"{len(labels)} labels for {x.n_rows} rows")
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise SingleClassInput("both classes must be present")
    if params.gamma == "scale":
        params = SvmParams(params.c, params.kernel, scale_gamma(x), params.tolerance,
                           params.max_passes, params.cache_mb)
        scale = True
    else:
        scale = False
    targets = classes[:1] if len(classes) == 2 else classes
    models = [
        train_binary_svm(x, np.where(labels == k, 1, -1), params)
        for k in targets
    ]
    if scale:
        params = SvmParams(params.c, params.kernel, "scale", params.tolerance,
                           params.max_passes, params.cache_mb)
    return SvmModel(classes, models, x.n_cols, params)


def svm_predict(model: SvmModel, x: SparseMatrix) -> list[int]:
    scores = model.decision_scores(x)
    return [model.classes[k] for k in np.argmax(scores, axis=1)]
