"""Evaluation: voxel IoU of decoded meshes against ground truth (view code from
the ground-truth pose and from the predicted pose) plus viewpoint MAE in degrees."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dataset import SketchSample
from .geometry import Mesh, voxel_iou, voxelize
from .networks import ModelWeights, decode_mesh, encode, predict_view, template_mesh, view_code


@dataclass
class ClassMetrics:
    label: str
    count: int = 0
    iou_gt_pose: float = 0.0
    iou_pred_pose: float = 0.0
    elevation_mae: float = 0.0
    azimuth_mae: float = 0.0


@dataclass
class EvalReport:
    per_class: list[ClassMetrics] = field(default_factory=list)

    def mean(self) -> ClassMetrics:
        n = len(self.per_class)
        if n == 0:
            return ClassMetrics("mean")
        return ClassMetrics(
            label="mean",
            count=sum(c.count for c in self.per_class),
            iou_gt_pose=sum(c.iou_gt_pose for c in self.per_class) / n,
            iou_pred_pose=sum(c.iou_pred_pose for c in self.per_class) / n,
            elevation_mae=sum(c.elevation_mae for c in self.per_class) / n,
            azimuth_mae=sum(c.azimuth_mae for c in self.per_class) / n,
        )

    def format_table(self) -> str:
        header = f"{'class':<10} {'n':>4} {'IoU (GT Pos)':>13} {'IoU (Pred Pos)':>15} {'elev MAE':>9} {'azim MAE':>9}"
        lines = [header, "-" * len(header)]
        for c in [*self.per_class, self.mean()]:
            lines.append(f"{c.label:<10} {c.count:>4} {c.iou_gt_pose:>13.4f} "
                         f"{c.iou_pred_pose:>15.4f} {c.elevation_mae:>9.3f} {c.azimuth_mae:>9.3f}")
        return "\n".join(lines)


def _pair_bounds(a: Mesh, b: Mesh) -> tuple[np.ndarray, np.ndarray]:
    lo = np.minimum(a.bounds()[0], b.bounds()[0])
    hi = np.maximum(a.bounds()[1], b.bounds()[1])
    center = (lo + hi) / 2
    half = float((hi - lo).max()) / 2 + 1e-6
    return center - half, center + half


def pair_voxel_iou(a: Mesh, b: Mesh, resolution: int = 32) -> float:
    lo, hi = _pair_bounds(a, b)
    return voxel_iou(voxelize(a, resolution, bounds=(lo, hi)),
                     voxelize(b, resolution, bounds=(lo, hi)))


def azimuth_abs_error_deg(pred: float, gt: float) -> float:
    d = abs(pred - gt) % 360.0
    return min(d, 360.0 - d)


def evaluate(w: ModelWeights, samples: list[SketchSample], resolution: int = 32) -> EvalReport:
    tpl = template_mesh(w.config)
    buckets: dict[str, list[tuple[float, float, float, float]]] = {}
    with ad.no_grad():
        for s in samples:
            z_s, z_l = encode(s.sketch, w)
            pred = predict_view(z_l, w)
            mesh_gt_pos = decode_mesh(z_s, view_code(s.gt_pose, w), w, tpl)
            mesh_pred_pos = decode_mesh(z_s, view_code(pred, w), w, tpl)
            iou_gt = pair_voxel_iou(s.gt_mesh, mesh_gt_pos, resolution)
            iou_pred = pair_voxel_iou(s.gt_mesh, mesh_pred_pos, resolution)
            e_mae = abs(pred.elevation - s.gt_pose.elevation)
            a_mae = azimuth_abs_error_deg(pred.azimuth, s.gt_pose.azimuth)
            buckets.setdefault(s.label, []).append((iou_gt, iou_pred, e_mae, a_mae))
    report = EvalReport()
    for label in sorted(buckets):
        rows = np.array(buckets[label])
        report.per_class.append(ClassMetrics(
            label=label, count=len(rows),
            iou_gt_pose=float(rows[:, 0].mean()),
            iou_pred_pose=float(rows[:, 1].mean()),
            elevation_mae=float(rows[:, 2].mean()),
            azimuth_mae=float(rows[:, 3].mean()),
        ))
    return report


def split_dataset(samples: list[SketchSample], n_test: int) -> tuple[list[SketchSample], list[SketchSample]]:
    """Deterministic split: the last n_test samples are held out."""
    if not 0 < n_test < len(samples):
        raise ValueError("n_test must be in (0, len(samples))")
    return samples[:-n_test], samples[-n_test:]
