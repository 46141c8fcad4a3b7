"""Regenerate the JSONL, intrinsics and PLY fixtures in this directory.

Run from the repository root: ``python3 tests/data/make_fixtures.py``.
The golden CSV is produced separately by ``cubepose evaluate``.
"""

import struct
from pathlib import Path

import numpy as np

from cubepose.geometry import Pose, axis_angle_to_rotation, cube_from_extents
from cubepose.ingest import AnnotationRecord, write_annotations

HERE = Path(__file__).parent
CLASSES = {"ape": (75.0, 78.0, 92.0), "cat": (67.0, 128.0, 117.0), "eggbox": (150.0, 104.0, 74.0),
           "glue": (37.0, 89.0, 176.0)}


# One tetrahedron-ish mesh written twice: the PLY fixtures must parse identically.
PLY_VERTS = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.25, 0.5, 2.0)]
PLY_NORMALS = [(0.0, 0.0, -1.0)] * 4
PLY_FACES = [(0, 1, 2), (0, 1, 3), (1, 2, 3), (0, 2, 3)]


def ply_header(fmt):
    return (f"ply\nformat {fmt} 1.0\ncomment written by make_fixtures.py\n"
            f"element vertex {len(PLY_VERTS)}\nproperty float x\nproperty float y\n"
            "property float z\nproperty float nx\nproperty float ny\nproperty float nz\n"
            f"element face {len(PLY_FACES)}\nproperty list uchar int vertex_indices\n"
            "end_header\n")


def write_ply_fixtures():
    text = ply_header("ascii")
    for v, n in zip(PLY_VERTS, PLY_NORMALS):
        text += " ".join(str(c) for c in (*v, *n)) + "\n"
    for f in PLY_FACES:
        text += f"{len(f)} " + " ".join(map(str, f)) + "\n"
    (HERE / "tetra_ascii.ply").write_text(text)
    body = b"".join(struct.pack("<6f", *v, *n) for v, n in zip(PLY_VERTS, PLY_NORMALS))
    body += b"".join(struct.pack("<B3i", len(f), *f) for f in PLY_FACES)
    (HERE / "tetra_binary.ply").write_bytes(ply_header("binary_little_endian").encode() + body)


def main():
    write_ply_fixtures()
    rng = np.random.default_rng(7)
    gt, pred = [], []
    for i in range(6):
        image = f"{i:04d}"
        for cls, ext in CLASSES.items():
            cube = cube_from_extents(ext)
            aa = rng.normal(size=3)
            pose = Pose(axis_angle_to_rotation(aa), (rng.uniform(-150, 150),
                                                     rng.uniform(-100, 100), 900.0 + 50 * i))
            gt.append(AnnotationRecord(image, cls, pose, cube, False, "gt"))
            if (i + len(cls)) % 5 == 0:
                continue  # missed detection
            shift = rng.normal(size=3)
            shift *= rng.uniform(0.0, 40.0) / np.linalg.norm(shift)
            p = Pose(axis_angle_to_rotation(rng.normal(size=3) * 0.02) @ pose.rotation,
                     pose.translation + shift)
            pred.append(AnnotationRecord(image, cls, p, cube, False, "pred"))
    # an extra prediction for a key that is already matched, and one with no ground truth
    pred.append(AnnotationRecord("0000", "ape", Pose(np.eye(3), (0.0, 0.0, 500.0)),
                                 cube_from_extents(CLASSES["ape"]), False, "pred"))
    pred.append(AnnotationRecord("9999", "cat", Pose(np.eye(3), (0.0, 0.0, 500.0)),
                                 cube_from_extents(CLASSES["cat"]), False, "pred"))
    (HERE / "golden_gt.jsonl").write_text(write_annotations(gt))
    (HERE / "golden_pred.jsonl").write_text(write_annotations(pred))
    (HERE / "intrinsics.txt").write_text(
        "# 640x480 pinhole camera\nfx = 572.4114\nfy = 573.57043\ncx = 325.2611\n"
        "cy = 242.04899\nwidth = 640\nheight = 480\n")


if __name__ == "__main__":
    main()
