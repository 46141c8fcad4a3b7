"""Pinhole projection and a visibility audit for ground-truth cubes.

Labels for objects the camera cannot see (behind it, outside the frame, or a
few pixels across) teach a detector to hallucinate. The audit flags them
using the frustum and projected size only; it has no depth data, so
occlusion by other objects is not detected.
"""

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from shapely.geometry import MultiPoint, box

from .errors import BadValue, BehindCamera, MissingFile
from .geometry import apply_pose

DEFAULT_MIN_AREA_PX = 25.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_w: int
    image_h: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.image_w < 1 or self.image_h < 1:
            raise ValueError("image size must be at least 1x1")


def load_intrinsics(path):
    """Read ``fx, fy, cx, cy, width, height`` from a ``key = value`` file."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"intrinsics file not found: {path}")
    values = {}
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = (s.strip() for s in line.partition("="))
        try:
            values[key] = float(value)
        except ValueError:
            raise BadValue(key, f"{key}: {value!r} is not a number") from None
    for key in ("fx", "fy", "cx", "cy", "width", "height"):
        if key not in values:
            raise BadValue(key, f"intrinsics file lacks {key!r}")
    try:
        return CameraIntrinsics(values["fx"], values["fy"], values["cx"], values["cy"],
                                int(values["width"]), int(values["height"]))
    except ValueError as exc:
        raise BadValue("fx", str(exc)) from None


def project_point(k, p):
    """Pixel coordinates of a camera-frame point; the camera looks down +z."""
    x, y, z = (float(c) for c in p)
    if z <= 0:
        raise BehindCamera(f"point has depth {z}")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy


def project_cube(k, pose, cube):
    """Project the 8 vertices; returns ``(uv, valid)`` with NaN rows where z <= 0."""
    pts = apply_pose(pose, cube.vertices)
    valid = pts[:, 2] > 0
    uv = np.full((8, 2), np.nan)
    z = pts[valid, 2]
    uv[valid, 0] = k.fx * pts[valid, 0] / z + k.cx
    uv[valid, 1] = k.fy * pts[valid, 1] / z + k.cy
    return uv, valid


def hull_area(uv):
    """Area of the convex hull of 2D points (0 for fewer than 3 or collinear)."""
    uv = np.asarray(uv, dtype=float)
    if len(uv) < 3:
        return 0.0
    return float(MultiPoint([tuple(p) for p in uv]).convex_hull.area)


class AuditReason(enum.Enum):
    BEHIND_CAMERA = "BehindCamera"
    OUT_OF_FRAME = "OutOfFrame"
    TINY_PROJECTION = "TinyProjection"


@dataclass(frozen=True)
class AuditFlag:
    image_id: str
    class_id: str
    reason: AuditReason


def audit_record(record, k, min_area_px=DEFAULT_MIN_AREA_PX):
    """Reason to distrust one record, or None if it looks visible."""
    uv, valid = project_cube(k, record.pose, record.cube)
    if not valid.any():
        return AuditReason.BEHIND_CAMERA
    pts = uv[valid]
    hull = MultiPoint([tuple(p) for p in pts]).convex_hull
    if not hull.intersects(box(0.0, 0.0, k.image_w, k.image_h)):
        return AuditReason.OUT_OF_FRAME
    if (hull.area if len(pts) >= 3 else 0.0) < min_area_px:
        return AuditReason.TINY_PROJECTION
    return None


def frustum_audit(records, k, min_area_px=DEFAULT_MIN_AREA_PX):
    """Flags for records that are behind the camera, outside the image, or tiny.

    A cube is out of frame when the hull of its projectable vertices misses
    the image rectangle entirely. Output preserves input order.
    """
    flags = []
    for r in records:
        reason = audit_record(r, k, min_area_px)
        if reason is not None:
            flags.append(AuditFlag(r.image_id, r.class_id, reason))
    return flags


def flags_to_csv(flags):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["image_id", "class_id", "reason"])
    for f in flags:
        w.writerow([f.image_id, f.class_id, f.reason.value])
    return out.getvalue()
