"""Readers and writers: PLY meshes, KITTI labels, JSONL annotations, class priors."""

import io
import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    DontCareRecord,
    EmptyInput,
    InvalidRotation,
    MalformedHeader,
    NonNumericField,
    NotARotation,
    ParseError,
    SchemaViolation,
    TruncatedBody,
    UnsupportedFormat,
    WrongFieldCount,
)
from .geometry import (
    BoundingCube,
    Pose,
    check_rotation,
    cube_from_aabb,
    diameter,
    yaw_rotation,
)

# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass(frozen=True)
class MeshModel:
    vertices: np.ndarray
    faces: list = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 1:
            raise ValueError("a mesh needs at least one 3D vertex")
        object.__setattr__(self, "vertices", v)
        if self.faces is not None:
            for f in self.faces:
                if len(f) and (np.min(f) < 0 or np.max(f) >= len(v)):
                    raise ParseError("face index out of range")

    def scaled(self, factor):
        """Copy with vertices multiplied by ``factor`` (e.g. 1000 for metres to mm)."""
        return MeshModel(self.vertices * factor, self.faces)


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, (count_dtype, item_dtype))


def _parse_header(data):
    if not data.startswith(b"ply"):
        raise MalformedHeader("missing 'ply' magic")
    end = re.search(rb"end_header[ \t]*\r?\n", data)
    if end is None:
        raise MalformedHeader("no end_header line")
    lines = data[: end.start()].decode("ascii", errors="replace").splitlines()[1:]
    fmt = None
    elements = []
    for lineno, line in enumerate(lines, 2):
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) != 3:
                raise MalformedHeader("bad format line", lineno)
            fmt = parts[1]
            if fmt == "binary_big_endian":
                raise UnsupportedFormat("big-endian PLY is not supported", lineno)
            if fmt not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormat(f"unknown PLY format {fmt!r}", lineno)
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise MalformedHeader("bad element line", lineno)
            elements.append(_Element(parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element", lineno)
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise MalformedHeader("unknown list property type", lineno)
                kind = (_PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])
                elements[-1].props.append((parts[4], kind))
            elif len(parts) == 3 and parts[1] in _PLY_TYPES:
                elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise MalformedHeader(f"bad property line {line!r}", lineno)
        else:
            raise MalformedHeader(f"unexpected header line {line!r}", lineno)
    if fmt is None:
        raise MalformedHeader("no format line")
    vertex = [e for e in elements if e.name == "vertex"]
    if not vertex:
        raise MalformedHeader("no vertex element")
    kinds = dict(vertex[0].props)
    for axis in "xyz":
        if axis not in kinds:
            raise MalformedHeader(f"vertex element lacks property {axis!r}")
        if kinds[axis] not in ("f4", "f8"):
            raise UnsupportedFormat(f"vertex {axis} must be float or double")
    return fmt, elements, end.end()


def _read_ascii(body, elements):
    tokens = body.split()
    pos = 0
    out = {}
    for el in elements:
        rows = []
        for i in range(el.count):
            row = {}
            for name, kind in el.props:
                try:
                    if isinstance(kind, tuple):
                        n = int(tokens[pos])
                        row[name] = [int(t) for t in tokens[pos + 1 : pos + 1 + n]]
                        if len(row[name]) != n:
                            raise IndexError
                        pos += n + 1
                    else:
                        row[name] = float(tokens[pos])
                        pos += 1
                except IndexError:
                    raise TruncatedBody(
                        f"element {el.name!r}: expected {el.count} entries, data ends in entry {i}"
                    ) from None
                except ValueError:
                    raise NonNumericField(f"element {el.name!r}: non-numeric token") from None
            rows.append(row)
        out[el.name] = rows
    return out


def _read_binary(body, elements):
    pos = 0
    out = {}
    for el in elements:
        if all(not isinstance(k, tuple) for _, k in el.props):
            dtype = np.dtype([(n, "<" + k) for n, k in el.props])
            need = dtype.itemsize * el.count
            if pos + need > len(body):
                raise TruncatedBody(f"element {el.name!r}: body shorter than declared")
            arr = np.frombuffer(body, dtype=dtype, count=el.count, offset=pos)
            out[el.name] = {n: arr[n].astype(float) for n, _ in el.props}
            pos += need
            continue
        rows = []
        for _ in range(el.count):
            row = {}
            for name, kind in el.props:
                if isinstance(kind, tuple):
                    cdt, idt = np.dtype("<" + kind[0]), np.dtype("<" + kind[1])
                    if pos + cdt.itemsize > len(body):
                        raise TruncatedBody(f"element {el.name!r}: body shorter than declared")
                    n = int(np.frombuffer(body, cdt, 1, pos)[0])
                    pos += cdt.itemsize
                    if pos + n * idt.itemsize > len(body):
                        raise TruncatedBody(f"element {el.name!r}: body shorter than declared")
                    row[name] = np.frombuffer(body, idt, n, pos).astype(np.int64).tolist()
                    pos += n * idt.itemsize
                else:
                    dt = np.dtype("<" + kind)
                    if pos + dt.itemsize > len(body):
                        raise TruncatedBody(f"element {el.name!r}: body shorter than declared")
                    row[name] = float(np.frombuffer(body, dt, 1, pos)[0])
                    pos += dt.itemsize
            rows.append(row)
        out[el.name] = rows
    return out


def parse_ply(data):
    """Parse an ASCII or little-endian binary PLY into a :class:`MeshModel`.

    Coordinates are returned in file units. Properties other than ``x, y, z``
    and elements other than ``vertex`` and ``face`` are skipped.
    """
    if isinstance(data, str):
        data = data.encode("ascii")
    fmt, elements, start = _parse_header(data)
    body = data[start:]
    if fmt == "ascii":
        parsed = _read_ascii(body.decode("ascii", errors="replace"), elements)
    else:
        parsed = _read_binary(body, elements)
    vert = parsed["vertex"]
    if isinstance(vert, dict):
        v = np.column_stack([vert["x"], vert["y"], vert["z"]])
    else:
        v = np.array([[r["x"], r["y"], r["z"]] for r in vert], dtype=float).reshape(-1, 3)
    faces = None
    face = parsed.get("face")
    if face is not None and not isinstance(face, dict):
        key = next((n for n, k in elements[[e.name for e in elements].index("face")].props
                    if isinstance(k, tuple)), None)
        if key is not None:
            faces = [np.asarray(r[key], dtype=np.int64) for r in face]
    if len(v) < 1:
        raise MalformedHeader("vertex element is empty")
    return MeshModel(v, faces)


def write_ply(vertices, faces=None, binary=False):
    """Serialise vertices (and triangle/polygon faces) as PLY bytes."""
    v = np.asarray(vertices, dtype=float)
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {len(v)}",
            "property double x", "property double y", "property double z"]
    if faces is not None:
        head += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    out = io.BytesIO()
    out.write(("\n".join(head) + "\n").encode("ascii"))
    if binary:
        out.write(v.astype("<f8").tobytes())
        for f in faces or []:
            out.write(np.uint8(len(f)).tobytes())
            out.write(np.asarray(f, dtype="<i4").tobytes())
    else:
        for p in v:
            out.write((" ".join(repr(float(c)) for c in p) + "\n").encode("ascii"))
        for f in faces or []:
            out.write((" ".join(str(int(i)) for i in [len(f), *f]) + "\n").encode("ascii"))
    return out.getvalue()


def mesh_cube(mesh):
    """Axis-aligned bounding cube of a mesh's vertices."""
    v = mesh.vertices
    return cube_from_aabb(v.min(axis=0), v.max(axis=0))


# ---------------------------------------------------------------- KITTI


@dataclass(frozen=True)
class KittiAnnotation:
    """One object line of a KITTI 3D-detection label file (metres, radians)."""

    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple  # left, top, right, bottom in pixels
    dimensions: tuple  # h, w, l
    location: tuple  # x, y, z of the bottom centre, camera frame
    rotation_y: float
    score: float = None

    @property
    def dont_care(self):
        return self.type == "DontCare"


def parse_kitti_label(line):
    """Parse one whitespace-separated label line (15 fields, or 16 with a score)."""
    fields = line.split()
    if len(fields) not in (15, 16):
        raise WrongFieldCount(f"expected 15 or 16 fields, got {len(fields)}")
    nums = []
    for i, tok in enumerate(fields[1:], 2):
        try:
            value = float(tok)
        except ValueError:
            raise NonNumericField(f"field {i} ({tok!r}) is not a number") from None
        if not math.isfinite(value):
            raise NonNumericField(f"field {i} ({tok!r}) is not finite")
        nums.append(value)
    if not nums[1].is_integer():
        raise NonNumericField(f"occluded flag must be an integer, got {fields[2]!r}")
    return KittiAnnotation(
        type=fields[0],
        truncated=nums[0],
        occluded=int(nums[1]),
        alpha=nums[2],
        bbox=tuple(nums[3:7]),
        dimensions=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
        score=nums[14] if len(nums) == 15 else None,
    )


def format_kitti_label(a):
    """Inverse of :func:`parse_kitti_label`; floats use shortest round-trip form."""
    vals = [a.truncated, a.occluded, a.alpha, *a.bbox, *a.dimensions, *a.location,
            a.rotation_y]
    if a.score is not None:
        vals.append(a.score)
    return " ".join([a.type] + [str(v) if isinstance(v, int) else repr(float(v)) for v in vals])


def read_kitti_labels(text):
    return [parse_kitti_label(line) for line in text.splitlines() if line.strip()]


def kitti_to_record(a, image_id="", symmetric=False, source="gt"):
    """Convert a KITTI object to millimetres in the toolkit's record form.

    The cube has length along object x, height along object y (pointing down,
    as in the camera frame) and width along object z, with the bottom face
    centred on the object origin. The pose is the yaw about the camera y axis
    followed by the location.
    """
    if a.dont_care:
        raise DontCareRecord("DontCare regions carry no 3D box")
    h, w, l = (1000.0 * d for d in a.dimensions)
    cube = cube_from_aabb((-l / 2, -h, -w / 2), (l / 2, 0.0, w / 2))
    pose = Pose(yaw_rotation(a.rotation_y, "y"), np.asarray(a.location) * 1000.0)
    return AnnotationRecord(image_id, a.type, pose, cube, symmetric, source)


# ---------------------------------------------------------------- JSONL records

SOURCES = ("gt", "pred")
_KEYS = ("image_id", "class_id", "rotation", "translation_mm", "cube_mm", "symmetric", "source")


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    class_id: str
    pose: Pose
    cube: BoundingCube
    symmetric: bool = False
    source: str = "gt"

    def to_json(self):
        return {
            "image_id": self.image_id,
            "class_id": self.class_id,
            "rotation": [float(v) for v in self.pose.rotation.reshape(-1)],
            "translation_mm": [float(v) for v in self.pose.translation],
            "cube_mm": [float(v) for v in self.cube.vertices.reshape(-1)],
            "symmetric": bool(self.symmetric),
            "source": self.source,
        }


def _floats(obj, key, n, lineno):
    val = obj[key]
    if (not isinstance(val, list) or len(val) != n
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val)):
        raise SchemaViolation(f"{key!r} must be a list of {n} numbers", lineno)
    arr = np.asarray(val, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise SchemaViolation(f"{key!r} contains non-finite values", lineno)
    return arr


def record_from_json(obj, lineno=None):
    if not isinstance(obj, dict):
        raise SchemaViolation("record must be a JSON object", lineno)
    missing = [k for k in _KEYS if k not in obj]
    if missing:
        raise SchemaViolation(f"missing keys {missing}", lineno)
    extra = sorted(set(obj) - set(_KEYS))
    if extra:
        raise SchemaViolation(f"unknown keys {extra}", lineno)
    for key in ("image_id", "class_id"):
        if not isinstance(obj[key], str):
            raise SchemaViolation(f"{key!r} must be a string", lineno)
    if not isinstance(obj["symmetric"], bool):
        raise SchemaViolation("'symmetric' must be a boolean", lineno)
    if obj["source"] not in SOURCES:
        raise SchemaViolation("'source' must be 'gt' or 'pred'", lineno)
    rot = _floats(obj, "rotation", 9, lineno).reshape(3, 3)
    try:
        check_rotation(rot)
    except NotARotation as exc:
        raise InvalidRotation(str(exc), lineno) from None
    t = _floats(obj, "translation_mm", 3, lineno)
    try:
        cube = BoundingCube(_floats(obj, "cube_mm", 24, lineno).reshape(8, 3))
    except ValueError as exc:
        raise SchemaViolation(f"'cube_mm': {exc}", lineno) from None
    return AnnotationRecord(obj["image_id"], obj["class_id"], Pose(rot, t), cube,
                            obj["symmetric"], obj["source"])


def read_annotations(stream):
    """Parse JSON Lines from a text stream or string; blank lines are ignored."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records = []
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc.msg}", lineno) from None
        records.append(record_from_json(obj, lineno))
    return records


def write_annotations(records, stream=None):
    """Write records as JSON Lines; returns the text when ``stream`` is None."""
    text = "".join(json.dumps(r.to_json()) + "\n" for r in records)
    if stream is None:
        return text
    stream.write(text)
    return text


# ---------------------------------------------------------------- class priors


@dataclass(frozen=True)
class ClassPrior:
    class_id: str
    prior_cube: BoundingCube
    avg_diameter: float

    def to_json(self):
        return {
            "class_id": self.class_id,
            "cube_mm": [float(v) for v in self.prior_cube.vertices.reshape(-1)],
            "extents_mm": [float(v) for v in self.prior_cube.extents],
            "avg_diameter_mm": float(self.avg_diameter),
        }


def class_prior(cubes, class_id="", avg_diameter=None):
    """Average cube of a class.

    Each cube is centred on its own centroid, the per-axis minima and maxima
    are averaged, and the result is the axis-aligned cube between the means.
    ``avg_diameter`` overrides the diameter derived from that cube.
    """
    cubes = list(cubes)
    if not cubes:
        raise EmptyInput(f"class {class_id!r} has no cubes")
    lows, highs = [], []
    for c in cubes:
        local = c.vertices - c.centroid
        lows.append(local.min(axis=0))
        highs.append(local.max(axis=0))
    prior = cube_from_aabb(np.mean(lows, axis=0), np.mean(highs, axis=0))
    if avg_diameter is None:
        avg_diameter = diameter(prior.vertices)
    return ClassPrior(class_id, prior, float(avg_diameter))


def class_priors(records, avg_diameter=None):
    """One prior per class id, in sorted class order."""
    by_class = {}
    for r in records:
        by_class.setdefault(r.class_id, []).append(r.cube)
    return [class_prior(by_class[c], c, avg_diameter) for c in sorted(by_class)]
