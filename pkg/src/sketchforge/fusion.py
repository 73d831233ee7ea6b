"""Scene representation: TSDF volume fusion from posed depth maps, classic
marching-cubes mesh extraction, and direct OBJ scene import.

Depth-frame camera convention (OpenCV style, independent of the orbit cameras
used for rendering): +Z forward, +X right, +Y down; a point (x, y, z) in
camera coordinates projects to pixel u = fx*x/z + W/2, v = fy*y/z + H/2 with
fx = fy = (H/2)/tan(fov/2). ``camera_to_world`` is the 4x4 rigid transform
mapping camera coordinates into world coordinates.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .geometry import CameraIntrinsics, MalformedObj, Mesh, merge_meshes, read_obj, transform_mesh
from .images import depth_from_png_bytes, depth_to_png_bytes


class EmptySurface(ValueError):
    pass


@dataclass
class TsdfVolume:
    """Truncated signed distance volume; tsdf is normalized to [-1, 1] by truncation."""

    origin: np.ndarray
    voxel_size: float
    resolution: tuple[int, int, int]
    truncation: float
    tsdf: np.ndarray = None
    weights: np.ndarray = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.resolution = tuple(int(r) for r in self.resolution)
        if self.voxel_size <= 0:
            raise ValueError("voxel size must be positive")
        if self.truncation < 2 * self.voxel_size:
            raise ValueError("truncation must be >= 2 * voxel size")
        if self.tsdf is None:
            self.tsdf = np.ones(self.resolution, dtype=np.float64)
        if self.weights is None:
            self.weights = np.zeros(self.resolution, dtype=np.float64)
        if self.tsdf.shape != self.resolution or self.weights.shape != self.resolution:
            raise ValueError("tsdf/weight arrays must match the resolution")

    @classmethod
    def for_box(cls, lo, hi, voxel_size: float, truncation: float | None = None) -> "TsdfVolume":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        res = tuple(int(np.ceil((hi[k] - lo[k]) / voxel_size)) for k in range(3))
        return cls(lo, voxel_size, res, truncation if truncation is not None else 3 * voxel_size)

    def copy(self) -> "TsdfVolume":
        return TsdfVolume(self.origin.copy(), self.voxel_size, self.resolution,
                          self.truncation, self.tsdf.copy(), self.weights.copy())

    def voxel_centers_world(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = [self.origin[k] + (np.arange(self.resolution[k]) + 0.5) * self.voxel_size
                for k in range(3)]
        return np.meshgrid(*axes, indexing="ij")


@dataclass(frozen=True)
class DepthFrame:
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    camera_to_world: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        m = np.asarray(self.camera_to_world, dtype=np.float64).reshape(4, 4)
        if (d < 0).any():
            raise ValueError("depths must be positive or zero (invalid)")
        r = m[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise ValueError("camera_to_world rotation is not orthonormal")
        d.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "camera_to_world", m)


def integrate_depth(vol: TsdfVolume, frame: DepthFrame) -> TsdfVolume:
    """Weighted running-average TSDF update; voxels deeper than the truncation
    band behind the observed surface are left untouched."""
    out = vol.copy()
    h, w = frame.depth.shape
    intr = frame.intrinsics
    fy = (h / 2.0) / np.tan(np.radians(intr.fov_deg) / 2.0)
    fx = fy
    cx, cy = w / 2.0, h / 2.0
    r = frame.camera_to_world[:3, :3]
    t = frame.camera_to_world[:3, 3]
    gx, gy, gz = vol.voxel_centers_world()
    px, py, pz = gx - t[0], gy - t[1], gz - t[2]
    # camera coords: R^T (p - t)
    x = r[0, 0] * px + r[1, 0] * py + r[2, 0] * pz
    y = r[0, 1] * px + r[1, 1] * py + r[2, 1] * pz
    z = r[0, 2] * px + r[1, 2] * py + r[2, 2] * pz
    valid = z > 1e-9
    zs = np.where(valid, z, 1.0)
    u = np.floor(fx * x / zs + cx).astype(np.int64)
    v = np.floor(fy * y / zs + cy).astype(np.int64)
    valid &= (u >= 0) & (u < w) & (v >= 0) & (v < h)
    d_obs = np.zeros_like(z)
    d_obs[valid] = frame.depth[v[valid], u[valid]]
    valid &= d_obs > 0
    sdf = np.clip((d_obs - z) / vol.truncation, -1.0, 1.0)
    update = valid & (sdf > -1.0)
    w_old = out.weights[update]
    out.tsdf[update] = (w_old * out.tsdf[update] + sdf[update]) / (w_old + 1.0)
    out.weights[update] = w_old + 1.0
    return out


# ---------------------------------------------------------------------------
# marching cubes (classic 256-case table, linear edge interpolation)

# local edge -> (base offset, axis)
_EDGE_BASE = np.zeros((12, 3), dtype=np.int64)
_EDGE_AXIS = np.zeros(12, dtype=np.int64)
for _e in range(12):
    _ca, _cb = EDGE_CORNERS[_e]
    _oa = CORNER_OFFSETS[_ca].astype(np.int64)
    _ob = CORNER_OFFSETS[_cb].astype(np.int64)
    _EDGE_BASE[_e] = np.minimum(_oa, _ob)
    _EDGE_AXIS[_e] = int(np.nonzero(_oa != _ob)[0][0])


def marching_cubes(values: np.ndarray, mask: np.ndarray | None = None,
                   origin=(0.0, 0.0, 0.0), voxel_size: float = 1.0,
                   level: float = 0.0) -> Mesh:
    """Iso-surface at ``level`` of values sampled at voxel centers.

    Only cubes whose 8 corners are all inside ``mask`` contribute. Vertices are
    welded on shared grid edges, so closed isosurfaces come out watertight.
    """
    v = np.asarray(values, dtype=np.float64) - level
    v = np.where(v == 0.0, 1e-12, v)  # treat exact hits as outside
    nx, ny, nz = v.shape
    if min(nx, ny, nz) < 2:
        raise ValueError("volume must be at least 2 voxels per axis")
    inside = v < 0.0
    cases = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    valid = np.ones((nx - 1, ny - 1, nz - 1), dtype=bool)
    for bit in range(8):
        ox, oy, oz = CORNER_OFFSETS[bit]
        sl = (slice(ox, ox + nx - 1), slice(oy, oy + ny - 1), slice(oz, oz + nz - 1))
        cases |= (inside[sl] << bit).astype(np.uint16)
        if mask is not None:
            valid &= np.asarray(mask, dtype=bool)[sl]
    active = valid & (cases != 0) & (cases != 255)
    if not active.any():
        raise EmptySurface("volume contains no masked sign change")
    cx, cy, cz = np.nonzero(active)
    rows = TRI_TABLE[cases[active]].astype(np.int64)  # (M, 16)

    tri_edges = []  # per triangle: (cube_index_in_active, 3 local edges)
    for t in range(5):
        cols = rows[:, 3 * t:3 * t + 3]
        keep = cols[:, 0] >= 0
        if not keep.any():
            break
        which = np.nonzero(keep)[0]
        tri_edges.append((which, cols[keep]))
    cube_idx = np.concatenate([w_ for w_, _ in tri_edges])
    local = np.concatenate([c for _, c in tri_edges])  # (T, 3)

    # global edge key: ((i * ny + j) * nz + k) * 3 + axis
    bi = cx[cube_idx][:, None] + _EDGE_BASE[local][:, :, 0]
    bj = cy[cube_idx][:, None] + _EDGE_BASE[local][:, :, 1]
    bk = cz[cube_idx][:, None] + _EDGE_BASE[local][:, :, 2]
    axis = _EDGE_AXIS[local]
    keys = ((bi * ny + bj) * nz + bk) * 3 + axis  # (T, 3)

    uniq, inverse = np.unique(keys.reshape(-1), return_inverse=True)
    faces = inverse.reshape(-1, 3)

    # interpolate one vertex per unique crossing edge
    ua = uniq // 3
    ax_ = uniq % 3
    kk = ua % nz
    jj = (ua // nz) % ny
    ii = ua // (nz * ny)
    p0 = np.stack([ii, jj, kk], axis=1)
    step = np.zeros_like(p0)
    step[np.arange(len(uniq)), ax_] = 1
    p1 = p0 + step
    v0 = v[p0[:, 0], p0[:, 1], p0[:, 2]]
    v1 = v[p1[:, 0], p1[:, 1], p1[:, 2]]
    tt = v0 / (v0 - v1)
    pts = p0 + tt[:, None] * step
    origin = np.asarray(origin, dtype=np.float64)
    verts = origin + (pts + 0.5) * voxel_size

    # weld exact duplicates (edge crossings that landed on a shared corner)
    verts_u, remap = np.unique(verts, axis=0, return_inverse=True)
    faces = remap[faces]
    a = verts_u[faces[:, 1]] - verts_u[faces[:, 0]]
    b = verts_u[faces[:, 2]] - verts_u[faces[:, 0]]
    area2 = np.linalg.norm(np.cross(a, b), axis=1)
    distinct = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
                & (faces[:, 0] != faces[:, 2]))
    faces = faces[distinct & (area2 > 2e-12)]
    if not len(faces):
        raise EmptySurface("all extracted triangles were degenerate")
    used = np.unique(faces)
    lookup = np.full(len(verts_u), -1, dtype=np.int64)
    lookup[used] = np.arange(len(used))
    return Mesh(verts_u[used], lookup[faces])


def extract_mesh(vol: TsdfVolume) -> Mesh:
    """Marching cubes at iso-level 0 over voxels observed at least once."""
    return marching_cubes(vol.tsdf, mask=vol.weights > 0,
                          origin=vol.origin, voxel_size=vol.voxel_size, level=0.0)


# ---------------------------------------------------------------------------
# scene document

@dataclass
class PlacedObject:
    object_id: str
    mesh: Mesh
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    label: str = ""
    provenance: dict = field(default_factory=dict)

    def world_mesh(self) -> Mesh:
        return transform_mesh(self.mesh, self.rotation, self.translation, self.scale)


@dataclass
class SceneDocument:
    scene_id: str
    scene_mesh: Mesh
    volume: TsdfVolume | None = None
    placed: list[PlacedObject] = field(default_factory=list)

    def merged_mesh(self) -> Mesh:
        out = self.scene_mesh
        for obj in self.placed:
            out = merge_meshes(out, obj.world_mesh())
        return out


def load_scene_mesh(data: bytes | str, scene_id: str | None = None) -> SceneDocument:
    """Build a SceneDocument from OBJ bytes; raises MalformedObj with line info."""
    mesh = read_obj(data)
    return SceneDocument(scene_id or uuid.uuid4().hex[:12], mesh)


# ---------------------------------------------------------------------------
# depth sequence ingest

def load_depth_sequence(directory) -> list[DepthFrame]:
    """Read frames.json plus 16-bit millimeter depth PNGs from a directory."""
    root = Path(directory)
    spec = json.loads((root / "frames.json").read_text())
    frames = []
    for ent in spec:
        depth = depth_from_png_bytes((root / ent["depth_png"]).read_bytes())
        intr = CameraIntrinsics(**ent["intrinsics"])
        frames.append(DepthFrame(depth, intr, np.asarray(ent["camera_to_world"], dtype=np.float64)))
    return frames


def save_depth_sequence(frames: list[DepthFrame], directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    spec = []
    for i, f in enumerate(frames):
        name = f"{i:04d}.png"
        (root / name).write_bytes(depth_to_png_bytes(f.depth))
        spec.append({
            "depth_png": name,
            "intrinsics": {"width": f.intrinsics.width, "height": f.intrinsics.height,
                           "fov_deg": f.intrinsics.fov_deg},
            "camera_to_world": f.camera_to_world.tolist(),
        })
    (root / "frames.json").write_text(json.dumps(spec, indent=1))
