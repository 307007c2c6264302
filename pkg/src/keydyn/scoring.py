"""One-class scorers over enrollment embeddings.

Every scorer is fit on a subject's enrollment embeddings and returns scores
where HIGHER means more likely genuine. Outlier-style statistics (LOF) are
negated to keep that polarity uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigurationError, NumericFailure, ProtocolError
from .metrics import Metric

DIST_FLOOR = 1e-12
SCORER_KINDS = ("avg_distance", "abod", "lof", "ocsvm")
MIN_ENROLLMENT = {"avg_distance": 1, "abod": 3, "lof": 2, "ocsvm": 2}


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "avg_distance"
    metric: Metric = Metric.COSINE  # avg_distance only; the rest are euclidean-based
    lof_k: int = 3
    ocsvm_nu: float = 0.1
    ocsvm_gamma: Union[float, str] = "scale"

    def __post_init__(self) -> None:
        if self.kind not in SCORER_KINDS:
            raise ConfigurationError(f"scorer kind must be one of {SCORER_KINDS}, got {self.kind!r}")
        if self.lof_k < 1:
            raise ConfigurationError("lof_k must be >= 1")
        if not 0.0 < self.ocsvm_nu <= 1.0:
            raise ConfigurationError("ocsvm_nu must be in (0, 1]")
        if self.ocsvm_gamma != "scale" and not (
            isinstance(self.ocsvm_gamma, (int, float)) and self.ocsvm_gamma > 0
        ):
            raise ConfigurationError("ocsvm_gamma must be 'scale' or a positive number")


def _as_matrix(embeddings: np.ndarray) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"enrollment must be a non-empty 2-D array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NumericFailure("enrollment embeddings contain non-finite values")
    return x


def np_distances(q: np.ndarray, x: np.ndarray, metric: Metric) -> np.ndarray:
    """Distances from one query (D,) to each row of x (E, D)."""
    diff = x - q
    if metric == Metric.EUCLIDEAN:
        return np.sqrt((diff**2).sum(axis=1))
    if metric == Metric.MANHATTAN:
        return np.abs(diff).sum(axis=1)
    qn = max(float(np.linalg.norm(q)), DIST_FLOOR)
    xn = np.maximum(np.linalg.norm(x, axis=1), DIST_FLOOR)
    cos = (x @ q) / (xn * qn)
    return (1.0 - cos) / 2.0


class AvgDistanceScorer:
    """score(q) = -mean distance from q to the enrollment embeddings."""

    def __init__(self, enrollment: np.ndarray, metric: Metric):
        self.enrollment = enrollment
        self.metric = metric

    def score(self, q: np.ndarray) -> float:
        return -float(np_distances(np.asarray(q, dtype=np.float64), self.enrollment, self.metric).mean())


class AbodScorer:
    """Angle-based score: variance, over unordered enrollment pairs (a, b), of
    <a-q, b-q> / (|a-q|^2 |b-q|^2). Outliers see their neighbours under a
    narrow range of angles, so low variance means impostor; the variance
    itself is the score."""

    def __init__(self, enrollment: np.ndarray):
        self.enrollment = enrollment
        e = enrollment.shape[0]
        self._iu = np.triu_indices(e, k=1)

    def score(self, q: np.ndarray) -> float:
        diffs = self.enrollment - np.asarray(q, dtype=np.float64)
        sq = np.maximum((diffs**2).sum(axis=1), DIST_FLOOR)
        gram = diffs @ diffs.T
        factors = gram / (sq[:, None] * sq[None, :])
        return float(factors[self._iu].var())


class LofScorer:
    """Negated local outlier factor of the query against the enrollment set.

    k-neighbourhoods are tie-inclusive: every point at exactly the k-distance
    belongs to the neighbourhood. Distances are floored so local reachability
    densities stay finite on duplicate embeddings.
    """

    def __init__(self, enrollment: np.ndarray, k: int):
        self.enrollment = enrollment
        e = enrollment.shape[0]
        self.k = min(k, e - 1)
        d = np.maximum(
            np.sqrt(((enrollment[:, None, :] - enrollment[None, :, :]) ** 2).sum(axis=2)),
            DIST_FLOOR,
        )
        np.fill_diagonal(d, np.inf)  # a point is not its own neighbour
        self._dist = d
        self._kdist = np.sort(d, axis=1)[:, self.k - 1]
        self._lrd = np.array([self._lrd_of_row(d[i], i) for i in range(e)])

    def _neighbours(self, dists: np.ndarray, kdist: float) -> np.ndarray:
        return np.flatnonzero(dists <= kdist)

    def _lrd_of_row(self, dists: np.ndarray, i: int) -> float:
        nbrs = self._neighbours(dists, self._kdist[i])
        reach = np.maximum(self._kdist[nbrs], dists[nbrs])
        return 1.0 / max(reach.mean(), DIST_FLOOR)

    def score(self, q: np.ndarray) -> float:
        dists = np.maximum(np_distances(np.asarray(q, dtype=np.float64), self.enrollment, Metric.EUCLIDEAN), DIST_FLOOR)
        kdist_q = np.sort(dists)[self.k - 1]
        nbrs = self._neighbours(dists, kdist_q)
        reach = np.maximum(self._kdist[nbrs], dists[nbrs])
        lrd_q = 1.0 / max(reach.mean(), DIST_FLOOR)
        return -float(self._lrd[nbrs].mean() / lrd_q)


def rbf_kernel(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    sq = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-gamma * sq)


def solve_ocsvm_dual(q_matrix: np.ndarray, c: float, tol: float = 1e-10, max_iter: int = 200_000) -> np.ndarray:
    """Minimize (1/2) a'Qa subject to sum(a) = 1, 0 <= a_i <= c.

    Pairwise coordinate updates with a second-order working set: the up
    candidate is the feasible index with the smallest gradient, the down
    candidate maximizes the guaranteed objective decrease.
    """
    e = q_matrix.shape[0]
    if c * e < 1.0 - 1e-12:
        raise ConfigurationError(f"infeasible box: {e} coefficients capped at {c:.3g} cannot sum to 1")
    alpha = np.zeros(e)
    n_full = int(1.0 / c)
    alpha[: min(n_full, e)] = c
    if n_full < e:
        alpha[n_full] = 1.0 - n_full * c
    grad = q_matrix @ alpha

    bound_tol = c * 1e-12
    for _ in range(max_iter):
        up = alpha < c - bound_tol
        down = alpha > bound_tol
        if not up.any():  # box fully saturated (nu == 1)
            break
        i = int(np.flatnonzero(up)[np.argmin(grad[up])])
        gap = grad - grad[i]
        cand = down & (gap > tol)
        if not cand.any():
            break
        quad = np.maximum(q_matrix[i, i] + np.diag(q_matrix) - 2.0 * q_matrix[i], DIST_FLOOR)
        gain = np.where(cand, gap**2 / quad, -np.inf)
        j = int(np.argmax(gain))
        delta = min(gap[j] / quad[j], c - alpha[i], alpha[j])
        alpha[i] += delta
        alpha[j] -= delta
        grad += delta * (q_matrix[:, i] - q_matrix[:, j])
    return alpha


class OcsvmScorer:
    """One-class SVM with an RBF kernel, solved in the dual.

    score(q) = sum_i alpha_i K(q, e_i) - rho; rho is the gradient value shared
    by free support vectors (midpoint of the active bounds if none is free).
    Exposes alpha, rho and gamma for inspection.
    """

    def __init__(self, enrollment: np.ndarray, nu: float, gamma: Union[float, str]):
        self.enrollment = enrollment
        e, dim = enrollment.shape
        if gamma == "scale":
            var = max(float(enrollment.var()), DIST_FLOOR)
            gamma = 1.0 / (dim * var)
        self.gamma = float(gamma)
        self.c = 1.0 / (nu * e)
        kernel = rbf_kernel(enrollment, enrollment, self.gamma)
        self.alpha = solve_ocsvm_dual(kernel, self.c)
        grad = kernel @ self.alpha
        free = (self.alpha > self.c * 1e-8) & (self.alpha < self.c * (1.0 - 1e-8))
        if free.any():
            self.rho = float(grad[free].mean())
        else:
            upper = grad[self.alpha < self.c * (1.0 - 1e-8)]
            lower = grad[self.alpha > self.c * 1e-8]
            self.rho = float((upper.min() + lower.max()) / 2.0)

    def score(self, q: np.ndarray) -> float:
        k = rbf_kernel(np.asarray(q, dtype=np.float64)[None, :], self.enrollment, self.gamma)[0]
        return float(k @ self.alpha - self.rho)


Scorer = Union[AvgDistanceScorer, AbodScorer, LofScorer, OcsvmScorer]


def fit_scorer(embeddings: np.ndarray, config: ScorerConfig = ScorerConfig()) -> Scorer:
    """Fit the configured scorer; raises ProtocolError on too few enrollments."""
    x = _as_matrix(embeddings)
    need = MIN_ENROLLMENT[config.kind]
    if x.shape[0] < need:
        raise ProtocolError(
            f"{config.kind} needs at least {need} enrollment embeddings, got {x.shape[0]}"
        )
    if config.kind == "avg_distance":
        return AvgDistanceScorer(x, config.metric)
    if config.kind == "abod":
        return AbodScorer(x)
    if config.kind == "lof":
        return LofScorer(x, config.lof_k)
    return OcsvmScorer(x, config.ocsvm_nu, config.ocsvm_gamma)


def score_batch(scorer: Scorer, queries: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    return np.array([scorer.score(row) for row in q], dtype=np.float64)
