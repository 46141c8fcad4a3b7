"""Rigid transforms, axis-angle rotations and 8-vertex bounding cubes.

All lengths are millimetres. Point sets are ``(m, 3)`` float arrays and
rotations are ``(3, 3)`` arrays; both are plain numpy so they compose with
the rest of the scientific stack.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidExtents, NonPositiveScale, NotARotation, TooFewPoints

ROTATION_TOL = 1e-6
DEFAULT_OFFSET = 0.2

# Vertex layout shared by every cube in the toolkit: the front face
# (+x) clockwise as seen from in front of the object, then the back face
# (-x) in the same order. Columns give the half-edge multiplier along the
# cube's own x (length), y (width) and z (height) edges.
CUBE_SIGNS = 0.5 * np.array(
    [
        [1, 1, 1],
        [1, -1, 1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, 1],
        [-1, -1, 1],
        [-1, -1, -1],
        [-1, 1, -1],
    ],
    dtype=float,
)
CUBE_SIGNS.setflags(write=False)

# Vertex pairs (a, b) such that v[a] - v[b] is the full x, y or z edge.
_EDGE_PAIRS = {
    0: [(0, 4), (1, 5), (2, 6), (3, 7)],
    1: [(0, 1), (3, 2), (4, 5), (7, 6)],
    2: [(0, 3), (1, 2), (4, 7), (5, 6)],
}

_BRUTE_DIAMETER_MAX = 20_000


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def as_points(pts):
    """Coerce ``pts`` to a finite ``(m, 3)`` float array."""
    a = np.asarray(pts, dtype=float)
    if a.ndim == 1 and a.size == 3:
        a = a.reshape(1, 3)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"expected an (m, 3) point array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("point coordinates must be finite")
    return a


def skew(v):
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def check_rotation(r, tol=ROTATION_TOL):
    """Return ``r`` as a float array, raising NotARotation if it is not in SO(3)."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise NotARotation(f"expected a finite 3x3 matrix, got shape {r.shape}")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise NotARotation("matrix is not orthonormal")
    det = np.linalg.det(r)
    if abs(det - 1.0) > tol:
        raise NotARotation(f"determinant is {det:.9g}, expected +1")
    return r


def axis_angle_to_rotation(aa):
    """Rodrigues' formula. The zero vector maps to the identity."""
    aa = np.asarray(aa, dtype=float)
    theta = float(np.linalg.norm(aa))
    k = skew(aa)
    if theta < 1e-8:
        # Taylor terms of sin(t)/t and (1-cos t)/t^2.
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def rotation_to_axis_angle(r):
    """Inverse of :func:`axis_angle_to_rotation` with angle in ``[0, pi]``.

    Near pi the axis is recovered from the symmetric part of ``r``; either
    sign of the axis is then a valid answer.
    """
    r = check_rotation(r)
    w = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = float(np.linalg.norm(w))  # sin(theta)
    c = 0.5 * (np.trace(r) - 1.0)  # cos(theta)
    theta = float(np.arctan2(s, c))
    if s < 1e-12 and c > 0:
        return np.zeros(3)
    if c > -0.5:
        # sin(theta) is large enough relative to its rounding error here.
        return w * (theta / s)
    # theta close to pi: r + r^T - 2c I == 2 (1 - c) a a^T
    aat = (r + r.T - 2.0 * c * np.eye(3)) / (2.0 * (1.0 - c))
    i = int(np.argmax(np.diag(aat)))
    axis = aat[i] / np.linalg.norm(aat[i])
    if np.dot(axis, w) < 0:
        axis = -axis
    return axis * theta


def right_jacobian(aa):
    """Right Jacobian of SO(3) at ``aa``.

    For a point ``x``, ``d(R x)/d aa == -R @ skew(x) @ right_jacobian(aa)``.
    """
    aa = np.asarray(aa, dtype=float)
    theta = float(np.linalg.norm(aa))
    k = skew(aa)
    if theta < 1e-7:
        a = 0.5 - theta**2 / 24.0
        b = 1.0 / 6.0 - theta**2 / 120.0
    else:
        a = (1.0 - np.cos(theta)) / theta**2
        b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) - a * k + b * (k @ k)


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> R x + t`` from object frame to camera frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(check_rotation(self.rotation)))
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def from_axis_angle(cls, aa, t=(0.0, 0.0, 0.0)):
        return cls(axis_angle_to_rotation(aa), t)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self):
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def compose(p2, p1):
    """Pose that applies ``p1`` then ``p2``."""
    return p2.compose(p1)


def apply_pose(pose, pts):
    """Map each point ``x`` to ``R x + t``."""
    pts = as_points(pts)
    return pts @ pose.rotation.T + pose.translation


@dataclass(frozen=True)
class BoundingCube:
    """Eight vertices in the canonical order given by ``CUBE_SIGNS``.

    The vertices must form a (possibly degenerate) parallelepiped.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.shape == (24,):
            v = v.reshape(8, 3)
        if v.shape != (8, 3):
            raise ValueError(f"a cube needs exactly 8 vertices, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("cube vertices must be finite")
        scale = max(1.0, float(np.max(np.abs(v))))
        for axis, pairs in _EDGE_PAIRS.items():
            edges = np.array([v[a] - v[b] for a, b in pairs])
            if np.max(np.abs(edges - edges[0])) > 1e-6 * scale:
                raise ValueError(
                    f"vertices are not a parallelepiped in canonical order (axis {axis})"
                )
        object.__setattr__(self, "vertices", _frozen(v))

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)

    @property
    def edges(self):
        """Rows are the full x, y and z edge vectors."""
        v = self.vertices
        return np.array([v[0] - v[4], v[0] - v[1], v[0] - v[3]])

    @property
    def extents(self):
        return np.linalg.norm(self.edges, axis=1)

    @classmethod
    def from_center_edges(cls, center, edges):
        edges = np.asarray(edges, dtype=float)
        return cls(np.asarray(center, dtype=float) + CUBE_SIGNS @ edges)

    def __eq__(self, other):
        if not isinstance(other, BoundingCube):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        return hash(self.vertices.tobytes())


def cube_from_aabb(lo, hi):
    """Axis-aligned cube spanning ``lo``..``hi`` in canonical vertex order."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise InvalidExtents(f"min {lo.tolist()} exceeds max {hi.tolist()}")
    center = 0.5 * (lo + hi)
    return BoundingCube(center + CUBE_SIGNS * (hi - lo))


def cube_from_extents(extents, center=(0.0, 0.0, 0.0)):
    half = 0.5 * np.asarray(extents, dtype=float)
    c = np.asarray(center, dtype=float)
    return cube_from_aabb(c - half, c + half)


@dataclass(frozen=True)
class ScaleParam:
    """Unconstrained per-axis scale, mapped through ``exp(raw) + offset``."""

    raw: np.ndarray = field(default_factory=lambda: np.zeros(3))
    offset: float = DEFAULT_OFFSET

    def __post_init__(self):
        if not self.offset >= 0:
            raise ValueError("offset must be non-negative")
        object.__setattr__(self, "raw", _frozen(np.asarray(self.raw, dtype=float).reshape(3)))

    @classmethod
    def unit(cls, offset=DEFAULT_OFFSET):
        """Parameter whose effective scale is exactly (1, 1, 1) when offset < 1."""
        return cls(np.full(3, np.log1p(-offset)), offset)


def effective_scale(s):
    return np.exp(s.raw) + s.offset


def scale_cube(prior, scale):
    """Scale ``prior`` per axis about its centroid, along its own edges."""
    scale = np.asarray(scale, dtype=float)
    if np.any(~(scale > 0)):
        raise NonPositiveScale(f"scale must be positive, got {scale.tolist()}")
    return BoundingCube.from_center_edges(prior.centroid, prior.edges * scale[:, None])


def _max_sq_dist(a, b, block=512):
    best = 0.0
    for i in range(0, len(a), block):
        d = a[i : i + block, None, :] - b[None, :, :]
        best = max(best, float(np.max(np.sum(d * d, axis=-1))))
    return best


def diameter(pts):
    """Largest pairwise distance, exact.

    Up to 20 000 points every pair is checked; above that the search is
    restricted to convex hull vertices, which always contain the farthest pair.
    """
    pts = as_points(pts)
    if len(pts) < 2:
        raise TooFewPoints("diameter needs at least two points")
    if len(pts) > _BRUTE_DIAMETER_MAX:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # flat or degenerate cloud: fall through to the full search
    return float(np.sqrt(_max_sq_dist(pts, pts)))


def volume(cube):
    """|det| of the three edge vectors leaving vertex 0."""
    return float(abs(np.linalg.det(cube.edges)))


def yaw_rotation(angle, axis="z"):
    """Rotation by ``angle`` radians about a coordinate axis."""
    i = "xyz".index(axis)
    aa = np.zeros(3)
    aa[i] = angle
    return axis_angle_to_rotation(aa)
