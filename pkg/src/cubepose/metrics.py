"""ADD / ADD-S pose errors and thresholded accuracy."""

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import EmptyInput, EmptyPointSet
from .geometry import apply_pose

# Below this many points the O(m^2) scan beats building a k-d tree.
BRUTE_FORCE_MAX = 64
DEFAULT_K = 0.1


class ChamferDirection(enum.Enum):
    """Which transformed set supplies the outer loop of ADD-S.

    ``GT_TO_PRED`` matches every ground-truth point to its nearest predicted
    point; ``PRED_TO_GT`` does the reverse.
    """

    PRED_TO_GT = "pred_to_gt"
    GT_TO_PRED = "gt_to_pred"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace("-", "_"))


class NnIndex:
    """Exact nearest-neighbour index over a fixed point set."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        self._tree = cKDTree(self.points)

    def query(self, queries):
        """Return ``(distances, indices)`` of the nearest indexed point."""
        dist, idx = self._tree.query(np.asarray(queries, dtype=float), k=1, eps=0.0)
        return np.asarray(dist, dtype=float), np.asarray(idx, dtype=np.intp)


def nearest_brute(queries, points, block=1024):
    """Nearest neighbour by exhaustive search, same return as NnIndex.query."""
    queries = np.asarray(queries, dtype=float)
    points = np.asarray(points, dtype=float)
    dist = np.empty(len(queries))
    idx = np.empty(len(queries), dtype=np.intp)
    for i in range(0, len(queries), block):
        d2 = cdist(queries[i : i + block], points, "sqeuclidean")
        j = np.argmin(d2, axis=1)
        idx[i : i + block] = j
        dist[i : i + block] = np.sqrt(d2[np.arange(len(j)), j])
    return dist, idx


def nearest(queries, points, brute_force_max=BRUTE_FORCE_MAX):
    """Exact nearest neighbour, brute force for small sets and k-d tree otherwise."""
    if len(points) > brute_force_max:
        return NnIndex(points).query(queries)
    return nearest_brute(queries, points)


def _transformed(pred, gt, pts):
    pts = np.asarray(pts, dtype=float)
    if pts.size == 0:
        raise EmptyPointSet("model point set is empty")
    return apply_pose(pred, pts), apply_pose(gt, pts)


def add_error(pred, gt, pts):
    """Mean distance between corresponding model points under the two poses."""
    p, g = _transformed(pred, gt, pts)
    return float(np.mean(np.linalg.norm(g - p, axis=1)))


def chamfer_mean(pred_pts, gt_pts, direction=ChamferDirection.GT_TO_PRED,
                 brute_force_max=BRUTE_FORCE_MAX):
    """Directed chamfer mean between two already-transformed point sets."""
    direction = ChamferDirection.parse(direction)
    if direction is ChamferDirection.GT_TO_PRED:
        outer, inner = gt_pts, pred_pts
    else:
        outer, inner = pred_pts, gt_pts
    dist, _ = nearest(outer, inner, brute_force_max)
    return float(np.mean(dist))


def add_s_error(pred, gt, pts, direction=ChamferDirection.GT_TO_PRED,
                brute_force_max=BRUTE_FORCE_MAX):
    """ADD-S: each outer point is compared to its nearest inner point.

    Set ``brute_force_max`` to a huge value to force the exhaustive path, or
    to -1 to force the k-d tree.
    """
    p, g = _transformed(pred, gt, pts)
    return chamfer_mean(p, g, direction, brute_force_max)


def pose_error(pred, gt, pts, symmetric, direction=ChamferDirection.GT_TO_PRED,
               brute_force_max=BRUTE_FORCE_MAX):
    """ADD-S for symmetric objects, ADD otherwise."""
    if symmetric:
        return add_s_error(pred, gt, pts, direction, brute_force_max)
    return add_error(pred, gt, pts)


@dataclass(frozen=True)
class MetricScore:
    error: float
    diameter: float
    symmetric: bool = False
    k: float = DEFAULT_K

    @property
    def correct(self):
        # strictly below the threshold; equality counts as a miss
        return self.error < self.k * self.diameter


def threshold_accuracy(scores, k=DEFAULT_K):
    """Fraction of scores whose error is strictly below ``k`` diameters."""
    scores = list(scores)
    if not scores:
        raise EmptyInput("no scores to aggregate")
    if not k > 0:
        raise ValueError("k must be positive")
    hits = sum(1 for s in scores if s.error < k * s.diameter)
    return hits / len(scores)
