"""
k-means clustering and the O-metric cluster overlap.

The overlap of an unlabeled cluster U with a training cluster T is the
fraction of points u of U whose nearest other point of U is farther away
than the nearest point of T:

    O(u) = min_{u' in U, u' != u} d(u, u') / min_{t in T} d(u, t)
    p_U  = |{u : O(u) > 1}| / |U|

A zero distance to T makes O(u) infinite.
"""

from typing import Optional, Sequence

import numpy as np
from sklearn.metrics import pairwise_distances

from colabel.corroborate.models import ClusterModel, Metric, OverlapReport
from colabel.utils.exceptions import ClusteringError, OverlapError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)

MAX_ITERATIONS = 100
# Distances at or below this count as coincident points.
ZERO_DISTANCE = 1e-7


def distance_matrix(a: np.ndarray, b: np.ndarray, metric: Metric = "cosine") -> np.ndarray:
    """
    Pairwise distances between the rows of ``a`` and ``b``.

    Cosine distance of a zero vector to anything is 1.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    distances = pairwise_distances(a, b, metric=metric)
    if metric == "cosine":
        distances[np.all(a == 0, axis=1), :] = 1.0
        distances[:, np.all(b == 0, axis=1)] = 1.0
    return distances


def _normalize(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    return np.divide(points, norms, out=np.zeros_like(points), where=norms > 0)


def _centroid(points: np.ndarray, metric: Metric) -> np.ndarray:
    if metric == "euclidean":
        return points.mean(axis=0)
    total = _normalize(points).sum(axis=0)
    norm = np.linalg.norm(total)
    return total / norm if norm > 0 else total


def _objective(distances: np.ndarray, labels: np.ndarray, metric: Metric) -> float:
    chosen = distances[np.arange(labels.size), labels]
    return float(np.sum(chosen**2) if metric == "euclidean" else np.sum(chosen))


def _plus_plus(points: np.ndarray, l: int, metric: Metric, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = distance_matrix(points, points[chosen], metric)[:, 0]
    for _ in range(1, l):
        weights = closest**2
        weights[chosen] = 0.0
        if weights.sum() > 0:
            index = int(rng.choice(n, p=weights / weights.sum()))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(rng.choice(remaining))
        chosen.append(index)
        closest = np.minimum(closest, distance_matrix(points, points[[index]], metric)[:, 0])
    centroids = points[chosen].astype(np.float64)
    return _normalize(centroids) if metric == "cosine" else centroids


def kmeans(
    points: np.ndarray,
    l: int,
    metric: Metric = "cosine",
    seed: int = 0,
    ids: Optional[Sequence[str]] = None,
    max_iterations: int = MAX_ITERATIONS,
) -> ClusterModel:
    """
    Partition ``points`` into ``l`` clusters.

    k-means++ seeding, then Lloyd iterations until the assignment stops
    changing or ``max_iterations`` is reached. Euclidean centroids are means;
    cosine centroids are normalized sums of normalized points. A cluster
    that empties is re-seeded at the point farthest from its centroid.

    Raises:
        ClusteringError: If there are fewer points than clusters or l < 1
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ClusteringError("k-means needs an N×D array", context={"shape": points.shape})
    n = points.shape[0]
    if l < 1 or n < l:
        raise ClusteringError("Fewer points than clusters", context={"points": n, "clusters": l})
    ids = list(ids) if ids is not None else [str(index) for index in range(n)]
    rng = np.random.default_rng(seed)

    centroids = _plus_plus(points, l, metric, rng)
    distances = distance_matrix(points, centroids, metric)
    labels = np.argmin(distances, axis=1)
    objective = [_objective(distances, labels, metric)]

    for iteration in range(max_iterations):
        for cluster in range(l):
            members = points[labels == cluster]
            if members.size:
                centroids[cluster] = _centroid(members, metric)
            else:
                farthest = int(np.argmax(distances[np.arange(n), labels]))
                centroids[cluster] = points[farthest] if metric == "euclidean" else _normalize(points[[farthest]])[0]
        distances = distance_matrix(points, centroids, metric)
        objective.append(_objective(distances, labels, metric))
        updated = np.argmin(distances, axis=1)
        if np.array_equal(updated, labels):
            break
        labels = updated
        objective.append(_objective(distances, labels, metric))
    else:
        logger.debug("k-means hit the iteration cap", iterations=max_iterations, clusters=l)

    return ClusterModel(
        l=l,
        centroids=centroids,
        labels=labels,
        points=points,
        ids=ids,
        metric=metric,
        objective=objective,
    )


def _check_overlap_inputs(u_points: np.ndarray, t_points: np.ndarray) -> None:
    if u_points.shape[0] < 2:
        raise OverlapError("Conspecific distance needs at least two points", context={"points": u_points.shape[0]})
    if t_points.shape[0] == 0:
        raise OverlapError("Training cluster is empty")


def _ratios(conspecific: np.ndarray, heterospecific: np.ndarray) -> np.ndarray:
    coincident = heterospecific <= ZERO_DISTANCE
    safe = np.where(coincident, 1.0, heterospecific)
    return np.where(coincident, np.inf, conspecific / safe)


def o_metric_point(
    u: np.ndarray,
    u_points: np.ndarray,
    t_points: np.ndarray,
    metric: Metric = "cosine",
    index: Optional[int] = None,
) -> float:
    """
    O-metric ratio of one point of U.

    ``u`` itself is excluded from U: by ``index`` when given, otherwise the
    first row of U equal to ``u``.

    Raises:
        OverlapError: If U has fewer than two points or T is empty
    """
    u_points = np.atleast_2d(np.asarray(u_points, dtype=np.float64))
    t_points = np.atleast_2d(np.asarray(t_points, dtype=np.float64))
    _check_overlap_inputs(u_points, t_points)
    u = np.asarray(u, dtype=np.float64).reshape(1, -1)
    if index is None:
        matches = np.flatnonzero(np.all(u_points == u, axis=1))
        index = int(matches[0]) if matches.size else None
    others = u_points if index is None else np.delete(u_points, index, axis=0)
    conspecific = distance_matrix(u, others, metric).min(axis=1)
    heterospecific = distance_matrix(u, t_points, metric).min(axis=1)
    return float(_ratios(conspecific, heterospecific)[0])


def cluster_overlap(u_points: np.ndarray, t_points: np.ndarray, metric: Metric = "cosine") -> OverlapReport:
    """
    O-metric of every point of U against T and the overlap fraction p_U.

    Raises:
        OverlapError: If U has fewer than two points or T is empty
    """
    u_points = np.atleast_2d(np.asarray(u_points, dtype=np.float64))
    t_points = np.atleast_2d(np.asarray(t_points, dtype=np.float64))
    _check_overlap_inputs(u_points, t_points)
    within = distance_matrix(u_points, u_points, metric)
    np.fill_diagonal(within, np.inf)
    ratios = _ratios(within.min(axis=1), distance_matrix(u_points, t_points, metric).min(axis=1))
    return OverlapReport(ratios=ratios, p_u=float(np.count_nonzero(ratios > 1.0)) / ratios.size)
