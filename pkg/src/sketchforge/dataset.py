"""Procedural box-furniture dataset: parameterized table/chair/lamp meshes,
orbit poses drawn from the training pose distribution, and synthetic sketches
(the one-pixel outer contour of the hard-rendered silhouette).

RNG consumption order per sample (fixed for reproducibility): family pick,
shape parameters, then pose via ``sample_pose`` (elevation first, azimuth
second). All randomness flows from the single generator passed in.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Mesh,
    cuboid,
    load_obj,
    merge_meshes,
    save_obj,
)
from .images import SketchImage, fill_sketch, grayscale_from_png_bytes, sketch_to_png_bytes
from .render import render_hard_silhouette


class UnknownFamily(ValueError):
    pass


@dataclass(frozen=True)
class PoseDistribution:
    """Uniform orbit-pose distribution; azimuth optionally snaps to a regular grid."""

    elevation_range: tuple[float, float] = (-20.0, 40.0)
    azimuth_range: tuple[float, float] = (0.0, 360.0)
    distance: float = 2.732
    azimuth_bins: int | None = None

    def __post_init__(self):
        if not self.elevation_range[0] <= self.elevation_range[1]:
            raise ValueError("empty elevation range")
        if not -90.0 <= self.elevation_range[0] <= self.elevation_range[1] <= 90.0:
            raise ValueError("elevation range outside pose validity bounds")
        if self.azimuth_bins is not None and self.azimuth_bins < 1:
            raise ValueError("azimuth_bins must be >= 1")


def sample_pose(dist: PoseDistribution, rng: np.random.Generator) -> CameraPose:
    """Draw elevation then azimuth (one grid pick when binned); distance is fixed."""
    e0, e1 = dist.elevation_range
    elev = float(rng.uniform(e0, e1)) if e1 > e0 else e0
    a0, a1 = dist.azimuth_range
    if dist.azimuth_bins is not None:
        k = int(rng.integers(dist.azimuth_bins))
        azim = a0 + (a1 - a0) * k / dist.azimuth_bins
    else:
        azim = float(rng.uniform(a0, a1)) if a1 > a0 else a0
    return CameraPose(elev, azim, dist.distance)


# ---------------------------------------------------------------------------
# procedural shape families

def _normalize(mesh: Mesh, target_radius: float) -> Mesh:
    lo, hi = mesh.bounds()
    centered = mesh.vertices - (lo + hi) / 2.0
    scale = target_radius / np.linalg.norm(centered, axis=1).max()
    return Mesh(centered * scale, mesh.faces)


def _legs(rng, width: float, depth: float, height: float) -> Mesh:
    s = rng.uniform(0.06, 0.14)
    inset_x = width / 2 - s / 2
    inset_z = depth / 2 - s / 2
    mesh = None
    for sx in (-1, 1):
        for sz in (-1, 1):
            leg = cuboid([sx * inset_x, height / 2, sz * inset_z], [s, height, s])
            mesh = leg if mesh is None else merge_meshes(mesh, leg)
    return mesh


def make_table(rng: np.random.Generator) -> Mesh:
    width = rng.uniform(0.9, 1.5)
    depth = rng.uniform(0.6, 1.1)
    top_t = rng.uniform(0.06, 0.14)
    height = rng.uniform(0.5, 0.9)
    top = cuboid([0.0, height + top_t / 2, 0.0], [width, top_t, depth])
    return merge_meshes(_legs(rng, width * 0.92, depth * 0.92, height), top)


def make_chair(rng: np.random.Generator) -> Mesh:
    width = rng.uniform(0.45, 0.7)
    depth = rng.uniform(0.45, 0.65)
    seat_t = rng.uniform(0.06, 0.12)
    seat_h = rng.uniform(0.4, 0.6)
    back_h = rng.uniform(0.45, 0.8)
    back_t = rng.uniform(0.05, 0.1)
    seat = cuboid([0.0, seat_h + seat_t / 2, 0.0], [width, seat_t, depth])
    back = cuboid([0.0, seat_h + seat_t + back_h / 2, -(depth - back_t) / 2],
                  [width, back_h, back_t])
    mesh = merge_meshes(_legs(rng, width * 0.9, depth * 0.9, seat_h), seat)
    return merge_meshes(mesh, back)


def make_lamp(rng: np.random.Generator) -> Mesh:
    base_r = rng.uniform(0.3, 0.5)
    base_t = rng.uniform(0.05, 0.1)
    pole_h = rng.uniform(0.8, 1.3)
    pole_s = rng.uniform(0.05, 0.09)
    shade_r = rng.uniform(0.25, 0.45)
    shade_h = rng.uniform(0.2, 0.4)
    base = cuboid([0.0, base_t / 2, 0.0], [base_r * 2, base_t, base_r * 2])
    pole = cuboid([0.0, base_t + pole_h / 2, 0.0], [pole_s, pole_h, pole_s])
    shade = cuboid([0.0, base_t + pole_h + shade_h / 2, 0.0],
                   [shade_r * 2, shade_h, shade_r * 2])
    return merge_meshes(merge_meshes(base, pole), shade)


_FAMILIES = {"table": make_table, "chair": make_chair, "lamp": make_lamp}


def make_shape(family: str, rng: np.random.Generator, target_radius: float = 0.6) -> Mesh:
    if family not in _FAMILIES:
        raise UnknownFamily(f"unknown shape family {family!r}; known: {sorted(_FAMILIES)}")
    return _normalize(_FAMILIES[family](rng), target_radius)


# ---------------------------------------------------------------------------
# sketch synthesis

_CROSS = ndimage.generate_binary_structure(2, 1)


def sketch_from_silhouette(mask: np.ndarray) -> SketchImage:
    """One-pixel outer contour of a binary silhouette, stroke value 0."""
    mask = mask.astype(bool)
    boundary = mask & ~ndimage.binary_erosion(mask, structure=_CROSS)
    return SketchImage(1.0 - boundary.astype(np.float64))


def sketch_from_mesh(mesh: Mesh, pose: CameraPose, intr: CameraIntrinsics) -> SketchImage:
    sil = render_hard_silhouette(mesh, pose, intr)
    return sketch_from_silhouette(sil.values == 1.0)


# ---------------------------------------------------------------------------
# dataset assembly

@dataclass(frozen=True)
class DatasetSpec:
    count: int = 200
    families: tuple[str, ...] = ("chair",)
    image_size: int = 64
    fov_deg: float = 30.0
    pose: PoseDistribution = field(default_factory=lambda: PoseDistribution(azimuth_bins=24))
    target_radius: float = 0.6

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.image_size, self.image_size, self.fov_deg)


@dataclass(frozen=True)
class SketchSample:
    sketch: SketchImage
    gt_pose: CameraPose
    gt_mesh: Mesh
    label: str
    index: int


def generate_toy_dataset(spec: DatasetSpec, seed: int) -> list[SketchSample]:
    for fam in spec.families:
        if fam not in _FAMILIES:
            raise UnknownFamily(f"unknown shape family {fam!r}; known: {sorted(_FAMILIES)}")
    rng = np.random.default_rng(seed)
    intr = spec.intrinsics()
    samples = []
    for i in range(spec.count):
        label = spec.families[int(rng.integers(len(spec.families)))]
        mesh = make_shape(label, rng, spec.target_radius)
        pose = sample_pose(spec.pose, rng)
        sketch = sketch_from_mesh(mesh, pose, intr)
        samples.append(SketchSample(sketch, pose, mesh, label, i))
    return samples


def filled_silhouette(sample: SketchSample) -> np.ndarray:
    """Supervision target: filled interior of the sample's sketch strokes."""
    return fill_sketch(sample.sketch)


def save_dataset(samples: list[SketchSample], spec: DatasetSpec, out_dir) -> None:
    out = Path(out_dir)
    (out / "obj").mkdir(parents=True, exist_ok=True)
    (out / "sketch").mkdir(parents=True, exist_ok=True)
    manifest = {"spec": _spec_to_dict(spec), "samples": []}
    for s in samples:
        mesh_rel = f"obj/{s.index:05d}.obj"
        png_rel = f"sketch/{s.index:05d}.png"
        save_obj(s.gt_mesh, out / mesh_rel)
        (out / png_rel).write_bytes(sketch_to_png_bytes(s.sketch))
        manifest["samples"].append({
            "index": s.index,
            "label": s.label,
            "pose": {"elevation": s.gt_pose.elevation, "azimuth": s.gt_pose.azimuth,
                     "distance": s.gt_pose.distance},
            "mesh": mesh_rel,
            "sketch": png_rel,
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_dataset(in_dir) -> tuple[list[SketchSample], DatasetSpec]:
    root = Path(in_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    spec = _spec_from_dict(manifest["spec"])
    samples = []
    for ent in manifest["samples"]:
        mesh = load_obj(root / ent["mesh"])
        gray = grayscale_from_png_bytes((root / ent["sketch"]).read_bytes())
        sketch = SketchImage((gray >= 128).astype(np.float64))
        pose = CameraPose(**ent["pose"])
        samples.append(SketchSample(sketch, pose, mesh, ent["label"], ent["index"]))
    return samples, spec


def _spec_to_dict(spec: DatasetSpec) -> dict:
    d = asdict(spec)
    d["families"] = list(spec.families)
    d["pose"] = asdict(spec.pose)
    return d


def _spec_from_dict(d: dict) -> DatasetSpec:
    pose_d = dict(d["pose"])
    for key in ("elevation_range", "azimuth_range"):
        pose_d[key] = tuple(pose_d[key])
    return DatasetSpec(count=d["count"], families=tuple(d["families"]),
                       image_size=d["image_size"], fov_deg=d["fov_deg"],
                       pose=PoseDistribution(**pose_d), target_radius=d["target_radius"])
