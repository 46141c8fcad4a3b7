"""Training losses on 8-vertex cubes: cube loss, volume loss and RIoU."""

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DEFAULT_OFFSET,
    Pose,
    ScaleParam,
    apply_pose,
    axis_angle_to_rotation,
    effective_scale,
    rotation_to_axis_angle,
    scale_cube,
    volume,
)
from .metrics import ChamferDirection, chamfer_mean

VOLUME_EPS = 1.0  # mm^3


@dataclass(frozen=True)
class PoseScaleParams:
    """The nine optimised numbers: axis-angle, translation (mm), raw scale."""

    aa: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    raw: np.ndarray = field(default_factory=lambda: np.zeros(3))
    offset: float = DEFAULT_OFFSET

    def __post_init__(self):
        for name in ("aa", "t", "raw"):
            a = np.array(getattr(self, name), dtype=float).reshape(3)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_vector(cls, x, offset=DEFAULT_OFFSET):
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:9], offset)

    @classmethod
    def from_pose(cls, pose, offset=DEFAULT_OFFSET, raw=None):
        """Parameters reproducing ``pose`` with unit effective scale by default."""
        if raw is None:
            raw = ScaleParam.unit(offset).raw
        return cls(rotation_to_axis_angle(pose.rotation), pose.translation, raw, offset)

    def to_vector(self):
        return np.concatenate([self.aa, self.t, self.raw])

    @property
    def rotation(self):
        return axis_angle_to_rotation(self.aa)

    @property
    def pose(self):
        return Pose(self.rotation, self.t)

    @property
    def scale_param(self):
        return ScaleParam(self.raw, self.offset)

    @property
    def scale(self):
        return effective_scale(self.scale_param)


@dataclass(frozen=True)
class LossWeights:
    cube: float = 1.0
    volume: float = 0.1
    riou: float = 0.0

    def __post_init__(self):
        w = (self.cube, self.volume, self.riou)
        if any(not (x >= 0) for x in w) or not any(x > 0 for x in w):
            raise ValueError(f"loss weights must be >= 0 with one > 0, got {w}")


@dataclass(frozen=True)
class BevBox:
    """Bird's-eye-view rectangle: length along its heading, width across it."""

    l: float
    w: float
    r: float = 0.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0):
            raise ValueError(f"box sides must be positive, got l={self.l}, w={self.w}")

    @property
    def area(self):
        return self.l * self.w


def predicted_cube(params, prior):
    """Prior scaled by the learned scale, still in the object frame."""
    return scale_cube(prior, params.scale)


def predicted_points(params, prior):
    return apply_pose(params.pose, predicted_cube(params, prior).vertices)


def cube_loss(params, prior, gt_pose, gt_cube, direction=ChamferDirection.PRED_TO_GT,
              symmetric=False):
    """ADD (or directed ADD-S when ``symmetric``) over the eight cube vertices."""
    p = predicted_points(params, prior)
    g = apply_pose(gt_pose, gt_cube.vertices)
    if symmetric:
        return chamfer_mean(p, g, direction)
    return float(np.mean(np.linalg.norm(p - g, axis=1)))


def volume_loss(pred, gt, eps=VOLUME_EPS):
    """Relative volume mismatch ``|V_pred - V_gt| / max(V_gt, eps)``."""
    vg = volume(gt)
    return abs(volume(pred) - vg) / max(vg, eps)


def bev_box(pose, cube):
    """Footprint of ``cube`` placed by ``pose``, seen down the z axis.

    Length and heading come from the cube's x edge, width from its y edge.
    Sides that project to zero length are clamped to a tiny positive value.
    """
    rot = pose.rotation
    ex, ey, _ = (rot @ cube.edges.T).T
    c = rot @ cube.centroid + pose.translation
    l = float(np.hypot(ex[0], ex[1]))
    w = float(np.hypot(ey[0], ey[1]))
    r = float(np.arctan2(ex[1], ex[0]))
    return BevBox(max(l, 1e-12), max(w, 1e-12), r, float(c[0]), float(c[1]))


def _overlap_1d(d, h_other, h_self):
    """Overlap length of [d-h_other, d+h_other] with [-h_self, h_self].

    Returns the length and its partials with respect to the three inputs.
    """
    hi, hi_from_other = (d + h_other, True) if d + h_other < h_self else (h_self, False)
    lo, lo_from_other = (d - h_other, True) if d - h_other > -h_self else (-h_self, False)
    length = hi - lo
    if length <= 0:
        return 0.0, 0.0, 0.0, 0.0
    dd = (1.0 if hi_from_other else 0.0) - (1.0 if lo_from_other else 0.0)
    dho = (1.0 if hi_from_other else 0.0) + (1.0 if lo_from_other else 0.0)
    dhs = (0.0 if hi_from_other else 1.0) + (0.0 if lo_from_other else 1.0)
    return length, dd, dho, dhs


def riou_with_grad(g, p):
    """Rotation-robust IoU and its gradient w.r.t. ``(l, w, r, cx, cy)`` of ``p``.

    Each intersection term replaces the other box by its axis-aligned bounding
    rectangle in the frame of the reference box, so this is a fast
    approximation of the true rotated IoU rather than exact polygon clipping.
    """
    zero = np.zeros(5)
    delta = p.r - g.r
    cd, sd = np.cos(delta), np.sin(delta)
    acd, asd = abs(cd), abs(sd)
    dacd = np.array([0, 0, -np.sign(cd) * sd, 0, 0])
    dasd = np.array([0, 0, np.sign(sd) * cd, 0, 0])
    e_l = np.array([1.0, 0, 0, 0, 0])
    e_w = np.array([0, 1.0, 0, 0, 0])

    # I1: p's bounding rectangle inside g's frame.
    cg, sg = np.cos(g.r), np.sin(g.r)
    ex, ey = p.cx - g.cx, p.cy - g.cy
    d1 = (cg * ex + sg * ey, -sg * ex + cg * ey)
    dd1 = (np.array([0, 0, 0, cg, sg]), np.array([0, 0, 0, -sg, cg]))
    h1 = (acd * p.l / 2 + asd * p.w / 2, asd * p.l / 2 + acd * p.w / 2)
    dh1 = (
        dacd * p.l / 2 + acd * e_l / 2 + dasd * p.w / 2 + asd * e_w / 2,
        dasd * p.l / 2 + asd * e_l / 2 + dacd * p.w / 2 + acd * e_w / 2,
    )
    gs = (g.l / 2, g.w / 2)
    parts = []
    for k in range(2):
        length, a, b, _ = _overlap_1d(d1[k], h1[k], gs[k])
        parts.append((length, a * dd1[k] + b * dh1[k]))
    i1 = parts[0][0] * parts[1][0]
    di1 = parts[0][1] * parts[1][0] + parts[0][0] * parts[1][1]

    # I2: g's bounding rectangle inside p's frame.
    cp, sp = np.cos(p.r), np.sin(p.r)
    fx, fy = g.cx - p.cx, g.cy - p.cy
    d2x = cp * fx + sp * fy
    d2y = -sp * fx + cp * fy
    d2 = (d2x, d2y)
    dd2 = (np.array([0, 0, d2y, -cp, -sp]), np.array([0, 0, -d2x, sp, -cp]))
    h2 = (acd * g.l / 2 + asd * g.w / 2, asd * g.l / 2 + acd * g.w / 2)
    dh2 = (dacd * g.l / 2 + dasd * g.w / 2, dasd * g.l / 2 + dacd * g.w / 2)
    ps = (p.l / 2, p.w / 2)
    dps = (e_l / 2, e_w / 2)
    parts = []
    for k in range(2):
        length, a, b, c = _overlap_1d(d2[k], h2[k], ps[k])
        parts.append((length, a * dd2[k] + b * dh2[k] + c * dps[k]))
    i2 = parts[0][0] * parts[1][0]
    di2 = parts[0][1] * parts[1][0] + parts[0][0] * parts[1][1]

    m, dm = (i1, di1) if i1 <= i2 else (i2, di2)
    c2 = np.cos(2 * delta)
    rot = abs(c2)
    drot = np.array([0, 0, -2 * np.sign(c2) * np.sin(2 * delta), 0, 0])
    inter = m * rot
    dinter = dm * rot + m * drot

    union_sum = g.area + p.area - inter
    if inter >= union_sum:
        union, dunion = inter, dinter
    else:
        union = union_sum
        dunion = np.array([p.w, p.l, 0, 0, 0]) - dinter
    if union <= 0:
        return 0.0, zero
    value = inter / union
    if value >= 1.0:
        return 1.0, zero
    if value <= 0.0:
        return 0.0, zero
    return value, (dinter * union - inter * dunion) / union**2


def riou(g, p):
    """Rotation-robust IoU of two BEV boxes, in ``[0, 1]``."""
    return riou_with_grad(g, p)[0]


def combined_loss(params, prior, gt_pose, gt_cube, weights=LossWeights(),
                  direction=ChamferDirection.PRED_TO_GT, symmetric=False):
    """Weighted sum of cube loss, volume loss and ``1 - RIoU``."""
    total = 0.0
    if weights.cube:
        total += weights.cube * cube_loss(params, prior, gt_pose, gt_cube, direction, symmetric)
    if weights.volume or weights.riou:
        pred = predicted_cube(params, prior)
    if weights.volume:
        total += weights.volume * volume_loss(pred, gt_cube)
    if weights.riou:
        total += weights.riou * (1.0 - riou(bev_box(gt_pose, gt_cube), bev_box(params.pose, pred)))
    return total


def loss_terms(params, prior, gt_pose, gt_cube, direction=ChamferDirection.PRED_TO_GT,
               symmetric=False):
    """Unweighted terms, handy for reports."""
    pred = predicted_cube(params, prior)
    return {
        "cube": cube_loss(params, prior, gt_pose, gt_cube, direction, symmetric),
        "volume": volume_loss(pred, gt_cube),
        "riou": riou(bev_box(gt_pose, gt_cube), bev_box(params.pose, pred)),
    }

