"""Sketch-to-scene placement: sketch preprocessing, ray-based offset/scale
estimation against the scene mesh, viewpoint-difference rotation, and
rest-on-surface object insertion.

The translation estimate casts a ray from the viewing camera through the
sketch bounding box's bottom-center pixel and takes the first scene
intersection; scale makes the object's canonical height subtend the bbox
pixel height at the hit depth. Placement maps the object's bbox bottom-center
onto the hit point (resting placement).
"""

from __future__ import annotations

import json
import math
import uuid
from dataclasses import dataclass

import numpy as np

from .fusion import PlacedObject, SceneDocument
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Mesh,
    euler_to_rotation,
    is_rotation,
    rotation_x,
    rotation_y,
)
from .images import EmptySketch, SketchImage
from scipy import ndimage


class NoIntersection(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel bounds of the sketch strokes in original image coordinates."""

    row0: int
    col0: int
    row1: int
    col1: int

    @property
    def height_px(self) -> int:
        return self.row1 - self.row0 + 1

    @property
    def width_px(self) -> int:
        return self.col1 - self.col0 + 1

    def bottom_center_px(self) -> tuple[float, float]:
        """(x, y) pixel coordinates of the bbox bottom-edge midpoint.

        Edge coordinates (not pixel centers) keep the point's image fraction
        independent of the raster resolution.
        """
        return ((self.col0 + self.col1 + 1) / 2.0, float(self.row1 + 1))


@dataclass(frozen=True)
class PreprocessedSketch:
    sketch: SketchImage
    bbox: BBox
    image_size: tuple[int, int]  # original (height, width)


@dataclass(frozen=True)
class PlacementTransform:
    """Effective object-to-world map: world = scale * R @ v + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.scale <= 0:
            from .geometry import NonPositiveScale
            raise NonPositiveScale(f"scale must be positive, got {self.scale}")
        if not is_rotation(r, tol=1e-6):
            raise ValueError("rotation is not orthonormal")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    def to_json(self) -> str:
        return json.dumps({
            "rotation": [float(x) for x in self.rotation.reshape(-1)],  # row-major
            "translation": [float(x) for x in self.translation],
            "scale": self.scale,
        })

    @classmethod
    def from_json(cls, text: str) -> "PlacementTransform":
        d = json.loads(text)
        return cls(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                   np.asarray(d["translation"], dtype=np.float64), float(d["scale"]))


def preprocess_sketch(raw: np.ndarray, out_size: int = 64,
                      margin_frac: float = 0.10) -> PreprocessedSketch:
    """Binarize (threshold 128, dark = stroke), crop to the stroke bbox expanded
    by a margin, square by centered padding, nearest-resize to ``out_size``."""
    img = np.asarray(raw, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("raw sketch must be a non-empty 2D grayscale array")
    stroke = img < 128.0
    if not stroke.any():
        raise EmptySketch("no stroke pixel after binarization")
    rows = np.nonzero(stroke.any(axis=1))[0]
    cols = np.nonzero(stroke.any(axis=0))[0]
    bbox = BBox(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))
    margin = max(1, round(margin_frac * max(bbox.height_px, bbox.width_px)))
    r0, r1 = bbox.row0 - margin, bbox.row1 + margin + 1
    c0, c1 = bbox.col0 - margin, bbox.col1 + margin + 1
    side = max(r1 - r0, c1 - c0)
    r0 -= (side - (r1 - r0)) // 2
    c0 -= (side - (c1 - c0)) // 2
    # thicken strokes that nearest-neighbor subsampling could step over
    k = side // out_size
    if k >= 2:
        stroke = ndimage.binary_dilation(stroke, structure=np.ones((k, k), dtype=bool))
    padded = np.zeros((side, side), dtype=bool)
    src_r = slice(max(r0, 0), min(r0 + side, img.shape[0]))
    src_c = slice(max(c0, 0), min(c0 + side, img.shape[1]))
    padded[src_r.start - r0:src_r.stop - r0, src_c.start - c0:src_c.stop - c0] = \
        stroke[src_r, src_c]
    idx = np.minimum((np.floor((np.arange(out_size) + 0.5) * side / out_size)).astype(int), side - 1)
    resized = padded[np.ix_(idx, idx)]
    if not resized.any():
        raise EmptySketch("stroke vanished during resampling")
    return PreprocessedSketch(SketchImage(1.0 - resized.astype(np.float64)), bbox,
                              (img.shape[0], img.shape[1]))


def ray_mesh_intersect(origin: np.ndarray, direction: np.ndarray, mesh: Mesh,
                       eps: float = 1e-9) -> tuple[float, np.ndarray] | None:
    """Nearest ray-triangle intersection (Moller-Trumbore over all faces)."""
    if mesh.num_faces == 0:
        return None
    tri = mesh.vertices[mesh.faces]
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    svec = origin - v0
    u = np.einsum("ij,ij->i", svec, pvec) * inv
    qvec = np.cross(svec, e1)
    v = np.einsum("j,ij->i", direction, qvec) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
    if not hit.any():
        return None
    tbest = t[hit].min()
    return float(tbest), origin + tbest * direction


def estimate_offset(view_pose: CameraPose, scene: SceneDocument, bbox: BBox,
                    intr: CameraIntrinsics, canonical_height: float) -> tuple[float, float, float, float]:
    """(dx, dy, dz, scale): first scene hit of the ray through the bbox
    bottom-center pixel, and the scale matching the bbox height at that depth."""
    if scene.scene_mesh.is_empty():
        raise NoIntersection("scene mesh is empty")
    if canonical_height <= 0:
        raise ValueError("canonical height must be positive")
    px, py = bbox.bottom_center_px()
    ndc_x = 2.0 * px / intr.width - 1.0
    ndc_y = 1.0 - 2.0 * py / intr.height
    r = euler_to_rotation(view_pose)
    cam_pos = r.T @ np.array([0.0, 0.0, view_pose.distance])
    th = intr.tan_half_fov
    dir_cam = np.array([ndc_x * th * intr.aspect, ndc_y * th, -1.0])
    dir_world = r.T @ dir_cam
    hit = ray_mesh_intersect(cam_pos, dir_world, scene.scene_mesh)
    if hit is None:
        raise NoIntersection("view ray does not intersect the scene mesh")
    depth, point = hit  # dir_cam has z = -1, so the ray parameter equals camera depth
    scale = (bbox.height_px / intr.height) * 2.0 * depth * th / canonical_height
    return float(point[0]), float(point[1]), float(point[2]), float(scale)


def compute_rotation(xi_pred: CameraPose, xi_t: CameraPose, upright: bool = True) -> np.ndarray:
    """Yaw = azimuth(xi_t) - azimuth(xi_pred) about world-up; the elevation
    difference is applied additionally when upright is False."""
    yaw = math.radians(xi_t.azimuth - xi_pred.azimuth)
    r = rotation_y(yaw)
    if not upright:
        pitch = math.radians(xi_t.elevation - xi_pred.elevation)
        r = r @ rotation_x(pitch)
    return r


def canonical_height_of(mesh: Mesh) -> float:
    lo, hi = mesh.bounds()
    return float(hi[1] - lo[1])


def place_object(obj: Mesh, scene: SceneDocument, tf: PlacementTransform,
                 label: str = "", provenance: dict | None = None) -> tuple[SceneDocument, PlacedObject]:
    """Rest the object on tf.translation: its bbox bottom-center maps onto that
    point after rotation and scaling. Appends to the scene's placed list."""
    rotated = tf.scale * (obj.vertices @ tf.rotation.T)
    lo = rotated.min(axis=0)
    hi = rotated.max(axis=0)
    bottom_center = np.array([(lo[0] + hi[0]) / 2.0, lo[1], (lo[2] + hi[2]) / 2.0])
    t_eff = tf.translation - bottom_center
    placed = PlacedObject(
        object_id=uuid.uuid4().hex[:12],
        mesh=obj,
        rotation=tf.rotation,
        translation=t_eff,
        scale=tf.scale,
        label=label,
        provenance=provenance or {},
    )
    scene.placed.append(placed)
    return scene, placed
