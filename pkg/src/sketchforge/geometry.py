"""Mesh and camera primitives: rotations, projection, transforms, merging, voxelization.

Conventions used throughout the package:
  * world up is +Y; azimuth rotates about +Y, elevation about the camera-right axis
  * angles are degrees at API boundaries, radians internally
  * the camera sits at distance ``d`` on the rotated +Z axis looking at the origin,
    so the depth of a point is ``d - (R v)_z``
  * NDC x points right, NDC y points up, both in [-1, 1] inside the frame
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CAMERA_DISTANCE = 2.732
DEFAULT_FOV_DEG = 30.0


class NonPositiveScale(ValueError):
    pass


class DegenerateProjection(ValueError):
    pass


class MalformedObj(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with float64 vertices (V, 3) and int64 face indices (F, 3)."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        v = v.reshape(-1, 3) if v.size else np.zeros((0, 3))
        f = f.reshape(-1, 3) if f.size else np.zeros((0, 3), dtype=np.int64)
        if not np.isfinite(v).all():
            raise ValueError("mesh vertices must be finite")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if (f[:, 0] == f[:, 1]).any() or (f[:, 1] == f[:, 2]).any() or (f[:, 0] == f[:, 2]).any():
                raise ValueError("face references a vertex twice")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            raise ValueError("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def is_empty(self) -> bool:
        return len(self.vertices) == 0


def empty_mesh() -> Mesh:
    return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


@dataclass(frozen=True)
class CameraPose:
    """Orbit viewpoint: elevation/azimuth in degrees, distance to origin. Roll is fixed at 0."""

    elevation: float
    azimuth: float
    distance: float = DEFAULT_CAMERA_DISTANCE

    def __post_init__(self):
        e = float(self.elevation)
        a = float(self.azimuth) % 360.0
        d = float(self.distance)
        if not (math.isfinite(e) and math.isfinite(a) and math.isfinite(d)):
            raise ValueError("pose angles/distance must be finite")
        if not -90.0 <= e <= 90.0:
            raise ValueError(f"elevation {e} outside [-90, 90]")
        if d <= 0:
            raise ValueError("camera distance must be positive")
        object.__setattr__(self, "elevation", e)
        object.__setattr__(self, "azimuth", a)
        object.__setattr__(self, "distance", d)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: image size in pixels and vertical field of view in degrees."""

    width: int = 64
    height: int = 64
    fov_deg: float = DEFAULT_FOV_DEG

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("image dimensions must be >= 8 pixels")
        if not 1.0 < self.fov_deg < 179.0:
            raise ValueError("fov must lie in (1, 179) degrees")

    @property
    def tan_half_fov(self) -> float:
        return math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def aspect(self) -> float:
        return self.width / self.height


def rotation_x(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_to_rotation(pose: CameraPose) -> np.ndarray:
    """Object-to-camera orientation: azimuth about world +Y, then elevation about camera-right."""
    return rotation_x(math.radians(pose.elevation)) @ rotation_y(math.radians(pose.azimuth))


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        return False
    return (
        np.abs(r @ r.T - np.eye(3)).max() <= tol
        and abs(np.linalg.det(r) - 1.0) <= tol
    )


def project_vertices(mesh: Mesh, pose: CameraPose, intr: CameraIntrinsics) -> np.ndarray:
    """Perspective-project mesh vertices; returns (V, 3) rows of (ndc_x, ndc_y, depth).

    Raises DegenerateProjection if any vertex lies at or behind the camera plane.
    """
    if mesh.is_empty():
        raise ValueError("cannot project an empty mesh")
    r = euler_to_rotation(pose)
    cam = mesh.vertices @ r.T
    depth = pose.distance - cam[:, 2]
    if (depth <= 1e-9).any():
        raise DegenerateProjection("vertex at or behind the camera plane")
    t = intr.tan_half_fov
    ndc_x = cam[:, 0] / (depth * t * intr.aspect)
    ndc_y = cam[:, 1] / (depth * t)
    return np.column_stack([ndc_x, ndc_y, depth])


def transform_mesh(mesh: Mesh, r: np.ndarray, t: np.ndarray, s: float) -> Mesh:
    """Map every vertex v to s * R @ v + t; faces unchanged."""
    if s <= 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    return Mesh(s * (mesh.vertices @ r.T) + t, mesh.faces)


def merge_meshes(a: Mesh, b: Mesh) -> Mesh:
    """Concatenate meshes; b's face indices are offset by a's vertex count."""
    if a.is_empty():
        return b
    if b.is_empty():
        return a
    verts = np.vstack([a.vertices, b.vertices])
    faces = np.vstack([a.faces, b.faces + a.num_vertices])
    return Mesh(verts, faces)


@dataclass(frozen=True)
class OccupancyGrid:
    """Cubic boolean occupancy grid over an axis-aligned bounding box."""

    cells: np.ndarray
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    open_mesh: bool = False

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=bool)
        lo = np.asarray(self.bounds_min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.bounds_max, dtype=np.float64).reshape(3)
        if c.ndim != 3:
            raise ValueError("occupancy cells must be a 3D array")
        if (hi <= lo).any():
            raise ValueError("degenerate bounding box")
        c.setflags(write=False)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "cells", c)
        object.__setattr__(self, "bounds_min", lo)
        object.__setattr__(self, "bounds_max", hi)

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.cells.shape


# Ray origins are nudged off cell centers so rays never hit triangle edges exactly.
_RAY_JITTER_Y = 1.0000001e-6
_RAY_JITTER_Z = 2.3000001e-6


def voxelize(mesh: Mesh, resolution: int, bounds: tuple[np.ndarray, np.ndarray] | None = None) -> OccupancyGrid:
    """Occupancy by parity ray-casting along +X: a cell is occupied iff its center is inside.

    ``bounds`` defaults to the mesh bounding box; pass shared bounds when grids
    of two meshes will be compared.
    """
    if not 4 <= resolution <= 128:
        raise ValueError("resolution must lie in [4, 128]")
    if mesh.is_empty() or not mesh.num_faces:
        raise ValueError("cannot voxelize an empty mesh")
    if bounds is None:
        lo, hi = mesh.bounds()
    else:
        lo = np.asarray(bounds[0], dtype=np.float64).reshape(3)
        hi = np.asarray(bounds[1], dtype=np.float64).reshape(3)
    span = hi - lo
    if (span <= 0).any():
        # pad flat boxes so cell sizes stay positive
        pad = max(span.max(), 1.0) * 1e-3
        lo = lo - pad
        hi = hi + pad
        span = hi - lo
    n = resolution
    cell = span / n
    centers = [lo[k] + (np.arange(n) + 0.5) * cell[k] for k in range(3)]

    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    # crossings[iy, iz, k]: surface crossings whose x lies left of k cell centers
    bins = np.zeros((n, n, n + 1), dtype=np.int64)
    ys = centers[1] + _RAY_JITTER_Y * cell[1]
    zs = centers[2] + _RAY_JITTER_Z * cell[2]
    for f in range(len(tri)):
        x1, y1, z1 = tri[f, 0]
        x2, y2, z2 = tri[f, 1]
        x3, y3, z3 = tri[f, 2]
        det = (y2 - y1) * (z3 - z1) - (z2 - z1) * (y3 - y1)
        if abs(det) < 1e-30:
            continue  # edge-on in the YZ plane; neighbors carry the parity
        iy0 = int(np.searchsorted(ys, min(y1, y2, y3)))
        iy1 = int(np.searchsorted(ys, max(y1, y2, y3)))
        iz0 = int(np.searchsorted(zs, min(z1, z2, z3)))
        iz1 = int(np.searchsorted(zs, max(z1, z2, z3)))
        if iy0 == iy1 or iz0 == iz1:
            continue
        py = ys[iy0:iy1][:, None]
        pz = zs[iz0:iz1][None, :]
        l2 = ((py - y1) * (z3 - z1) - (pz - z1) * (y3 - y1)) / det
        l3 = ((y2 - y1) * (pz - z1) - (z2 - z1) * (py - y1)) / det
        l1 = 1.0 - l2 - l3
        inside = (l1 >= 0) & (l2 >= 0) & (l3 >= 0)
        if not inside.any():
            continue
        x_int = l1 * x1 + l2 * x2 + l3 * x3
        k = np.ceil((x_int - lo[0]) / cell[0] - 0.5).astype(np.int64)
        np.clip(k, 0, n, out=k)
        iy, iz = np.nonzero(inside)
        np.add.at(bins, (iy + iy0, iz + iz0, k[inside]), 1)

    total = bins.sum(axis=-1)
    right_of = total[:, :, None] - np.cumsum(bins, axis=-1)[:, :, :n]
    occupied = (right_of % 2 == 1)  # (iy, iz, ix)
    cells = np.transpose(occupied, (2, 0, 1))  # -> (ix, iy, iz)
    open_mesh = bool((total % 2 == 1).any())
    return OccupancyGrid(cells, lo, hi, open_mesh=open_mesh)


def voxel_iou(a: OccupancyGrid, b: OccupancyGrid) -> float:
    """Intersection-over-union of two occupancy grids defined on the same box."""
    if a.cells.shape != b.cells.shape:
        raise ValueError("occupancy grids have different resolutions")
    if not (np.allclose(a.bounds_min, b.bounds_min) and np.allclose(a.bounds_max, b.bounds_max)):
        raise ValueError("occupancy grids have different bounding boxes")
    inter = int(np.count_nonzero(a.cells & b.cells))
    union = int(np.count_nonzero(a.cells | b.cells))
    if union == 0:
        return 1.0
    return inter / union


def icosphere(subdivisions: int = 3, radius: float = 0.5) -> Mesh:
    """Icosphere by repeated midpoint subdivision of an icosahedron."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(verts) * radius, np.array(faces, dtype=np.int64))


def cuboid(center, size) -> Mesh:
    """Axis-aligned box as 8 vertices / 12 triangles."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(size, dtype=np.float64) / 2.0
    signs = np.array([
        [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
        [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
    ], dtype=np.float64)
    verts = c + signs * h
    faces = np.array([
        (0, 2, 1), (0, 3, 2),  # z-
        (4, 5, 6), (4, 6, 7),  # z+
        (0, 1, 5), (0, 5, 4),  # y-
        (2, 3, 7), (2, 7, 6),  # y+
        (1, 2, 6), (1, 6, 5),  # x+
        (0, 4, 7), (0, 7, 3),  # x-
    ], dtype=np.int64)
    return Mesh(verts, faces)


def write_obj(mesh: Mesh) -> str:
    # repr gives the shortest digit string that parses back bit-exactly
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def read_obj(text: str | bytes) -> Mesh:
    """Parse a triangles-only Wavefront OBJ; raises MalformedObj with the offending line."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    face_lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MalformedObj(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise MalformedObj(f"line {lineno}: bad vertex coordinate") from None
        elif tag == "f":
            if len(parts) != 4:
                raise MalformedObj(f"line {lineno}: only triangular faces are supported")
            idx = []
            for p in parts[1:]:
                head = p.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise MalformedObj(f"line {lineno}: bad face index {head!r}") from None
                if i <= 0:
                    raise MalformedObj(f"line {lineno}: face indices must be positive")
                idx.append(i - 1)
            faces.append(tuple(idx))
            face_lines.append(lineno)
        # vn/vt/usemtl/... are ignored
    for (a, b, c), lineno in zip(faces, face_lines):
        if max(a, b, c) >= len(verts):
            raise MalformedObj(f"line {lineno}: face index out of range")
        if a == b or b == c or a == c:
            raise MalformedObj(f"line {lineno}: face repeats a vertex")
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(write_obj(mesh))


def load_obj(path) -> Mesh:
    with open(path) as fh:
        return read_obj(fh.read())
