"""Differentiable soft silhouette rasterizer plus a hard-coverage oracle rasterizer.

Soft coverage per pixel p and triangle j:

    D_j(p) = logistic(sign_j(p) * d^2(p, j) / sigma)

with d the exact NDC distance from the pixel center to the triangle boundary
(sign + inside / - outside), aggregated as S(p) = 1 - prod_j (1 - D_j(p)).
The backward pass is analytic in the NDC vertex coordinates; gradients flow
through the projection into 3D vertices and the camera pose via the autodiff
graph. Back faces rasterize identically to front faces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import CameraIntrinsics, CameraPose, DegenerateProjection, Mesh, euler_to_rotation, project_vertices
from .images import SilhouetteImage

_PAD_FACTOR = 25.0  # logistic support: beyond d^2 > 25*sigma the contribution is < 1.4e-11


@dataclass(frozen=True)
class RasterParams:
    """sigma: logistic sharpness in squared-NDC units; floor: per-triangle probability floor."""

    sigma: float = 1e-4
    floor: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.floor < 0:
            raise ValueError("floor must be >= 0")


@njit(cache=True, fastmath=True)
def _seg_dist_sq(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    wx = px - ax
    wy = py - ay
    ee = ex * ex + ey * ey
    t = 0.0
    if ee > 0.0:
        t = (wx * ex + wy * ey) / ee
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    dx = px - (ax + t * ex)
    dy = py - (ay + t * ey)
    return dx * dx + dy * dy, t


@njit(cache=True, fastmath=True)
def _soft_forward(ndc, faces, h, w, sigma, floor):
    prod = np.ones((h, w))
    pad = math.sqrt(_PAD_FACTOR * sigma)
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay = ndc[i0, 0], ndc[i0, 1]
        bx, by = ndc[i1, 0], ndc[i1, 1]
        cx, cy = ndc[i2, 0], ndc[i2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area) < 1e-12:
            continue
        x0 = min(ax, min(bx, cx)) - pad
        x1 = max(ax, max(bx, cx)) + pad
        y0 = min(ay, min(by, cy)) - pad
        y1 = max(ay, max(by, cy)) + pad
        jlo = int(math.floor((x0 + 1.0) * 0.5 * w - 0.5))
        jhi = int(math.ceil((x1 + 1.0) * 0.5 * w - 0.5))
        ilo = int(math.floor((1.0 - y1) * 0.5 * h - 0.5))
        ihi = int(math.ceil((1.0 - y0) * 0.5 * h - 0.5))
        if jlo < 0:
            jlo = 0
        if jhi > w - 1:
            jhi = w - 1
        if ilo < 0:
            ilo = 0
        if ihi > h - 1:
            ihi = h - 1
        for i in range(ilo, ihi + 1):
            py = 1.0 - 2.0 * (i + 0.5) / h
            for j in range(jlo, jhi + 1):
                px = 2.0 * (j + 0.5) / w - 1.0
                e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                inside = (e0 >= 0.0 and e1 >= 0.0 and e2 >= 0.0) or (
                    e0 <= 0.0 and e1 <= 0.0 and e2 <= 0.0)
                d0, _ = _seg_dist_sq(px, py, ax, ay, bx, by)
                d1, _ = _seg_dist_sq(px, py, bx, by, cx, cy)
                d2, _ = _seg_dist_sq(px, py, cx, cy, ax, ay)
                dsq = min(d0, min(d1, d2))
                u = (dsq if inside else -dsq) / sigma
                dcov = 1.0 / (1.0 + math.exp(-u))
                if dcov < floor:
                    dcov = floor
                prod[i, j] *= 1.0 - dcov
    return prod


@njit(cache=True, fastmath=True)
def _soft_backward(ndc, faces, h, w, sigma, floor, prod, grad_out):
    grad = np.zeros_like(ndc)
    pad = math.sqrt(_PAD_FACTOR * sigma)
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay = ndc[i0, 0], ndc[i0, 1]
        bx, by = ndc[i1, 0], ndc[i1, 1]
        cx, cy = ndc[i2, 0], ndc[i2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area) < 1e-12:
            continue
        x0 = min(ax, min(bx, cx)) - pad
        x1 = max(ax, max(bx, cx)) + pad
        y0 = min(ay, min(by, cy)) - pad
        y1 = max(ay, max(by, cy)) + pad
        jlo = int(math.floor((x0 + 1.0) * 0.5 * w - 0.5))
        jhi = int(math.ceil((x1 + 1.0) * 0.5 * w - 0.5))
        ilo = int(math.floor((1.0 - y1) * 0.5 * h - 0.5))
        ihi = int(math.ceil((1.0 - y0) * 0.5 * h - 0.5))
        if jlo < 0:
            jlo = 0
        if jhi > w - 1:
            jhi = w - 1
        if ilo < 0:
            ilo = 0
        if ihi > h - 1:
            ihi = h - 1
        for i in range(ilo, ihi + 1):
            py = 1.0 - 2.0 * (i + 0.5) / h
            for j in range(jlo, jhi + 1):
                go = grad_out[i, j]
                if go == 0.0:
                    continue
                px = 2.0 * (j + 0.5) / w - 1.0
                e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                inside = (e0 >= 0.0 and e1 >= 0.0 and e2 >= 0.0) or (
                    e0 <= 0.0 and e1 <= 0.0 and e2 <= 0.0)
                d0, t0 = _seg_dist_sq(px, py, ax, ay, bx, by)
                d1, t1 = _seg_dist_sq(px, py, bx, by, cx, cy)
                d2, t2 = _seg_dist_sq(px, py, cx, cy, ax, ay)
                if d0 <= d1 and d0 <= d2:
                    seg = 0
                    dsq = d0
                    t = t0
                    sax, say, sbx, sby = ax, ay, bx, by
                    ka, kb = i0, i1
                elif d1 <= d2:
                    seg = 1
                    dsq = d1
                    t = t1
                    sax, say, sbx, sby = bx, by, cx, cy
                    ka, kb = i1, i2
                else:
                    seg = 2
                    dsq = d2
                    t = t2
                    sax, say, sbx, sby = cx, cy, ax, ay
                    ka, kb = i2, i0
                sign = 1.0 if inside else -1.0
                u = sign * dsq / sigma
                dcov = 1.0 / (1.0 + math.exp(-u))
                if dcov <= floor:
                    continue  # clamped to the floor: zero local gradient
                # dL/du = go * D * P, with P the full per-pixel survival product
                dldu = go * dcov * prod[i, j]
                coeff = dldu * sign / sigma
                # envelope: d(d^2)/da = -2(1-t)(p-c), d(d^2)/db = -2t(p-c)
                ccx = sax + t * (sbx - sax)
                ccy = say + t * (sby - say)
                rx = px - ccx
                ry = py - ccy
                grad[ka, 0] += coeff * (-2.0 * (1.0 - t) * rx)
                grad[ka, 1] += coeff * (-2.0 * (1.0 - t) * ry)
                grad[kb, 0] += coeff * (-2.0 * t * rx)
                grad[kb, 1] += coeff * (-2.0 * t * ry)
    return grad


@njit(cache=True)
def _hard_mask(ndc, faces, h, w):
    img = np.zeros((h, w), dtype=np.bool_)
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay = ndc[i0, 0], ndc[i0, 1]
        bx, by = ndc[i1, 0], ndc[i1, 1]
        cx, cy = ndc[i2, 0], ndc[i2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        if area < 0.0:  # orient counter-clockwise
            bx, by, cx, cy = cx, cy, bx, by
        jlo = int(math.floor((min(ax, min(bx, cx)) + 1.0) * 0.5 * w - 0.5))
        jhi = int(math.ceil((max(ax, max(bx, cx)) + 1.0) * 0.5 * w - 0.5))
        ilo = int(math.floor((1.0 - max(ay, max(by, cy))) * 0.5 * h - 0.5))
        ihi = int(math.ceil((1.0 - min(ay, min(by, cy))) * 0.5 * h - 0.5))
        if jlo < 0:
            jlo = 0
        if jhi > w - 1:
            jhi = w - 1
        if ilo < 0:
            ilo = 0
        if ihi > h - 1:
            ihi = h - 1
        for i in range(ilo, ihi + 1):
            py = 1.0 - 2.0 * (i + 0.5) / h
            for j in range(jlo, jhi + 1):
                if img[i, j]:
                    continue
                px = 2.0 * (j + 0.5) / w - 1.0
                ok = True
                for k in range(3):
                    if k == 0:
                        qx, qy, rx2, ry2 = ax, ay, bx, by
                    elif k == 1:
                        qx, qy, rx2, ry2 = bx, by, cx, cy
                    else:
                        qx, qy, rx2, ry2 = cx, cy, ax, ay
                    e = (rx2 - qx) * (py - qy) - (ry2 - qy) * (px - qx)
                    if e < 0.0:
                        ok = False
                        break
                    if e == 0.0:
                        # boundary tie rule: the edge owns its pixels iff it goes
                        # downward, or is horizontal and points in -x
                        ey = ry2 - qy
                        exx = rx2 - qx
                        if not (ey < 0.0 or (ey == 0.0 and exx < 0.0)):
                            ok = False
                            break
                if ok:
                    img[i, j] = True
    return img


def rasterize_soft(ndc: Tensor, faces: np.ndarray, intr: CameraIntrinsics,
                   params: RasterParams) -> Tensor:
    """Soft-rasterize projected NDC vertices (V, 2) into a (H, W) coverage tensor."""
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    ndc64 = np.ascontiguousarray(ndc.data, dtype=np.float64)
    h, w = intr.height, intr.width
    prod = _soft_forward(ndc64, faces, h, w, params.sigma, params.floor)
    image = (1.0 - prod).astype(ndc.dtype, copy=False)

    def backward(g):
        grad_ndc = _soft_backward(ndc64, faces, h, w, params.sigma, params.floor,
                                  prod, np.ascontiguousarray(g, dtype=np.float64))
        return (grad_ndc.astype(ndc.dtype, copy=False),)

    return ad._make(image, (ndc,), backward)


_SEL_XY = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
_SEL_Z = np.array([[0.0], [0.0], [1.0]])


def project_ndc(verts: Tensor, pose: CameraPose, intr: CameraIntrinsics,
                rotation: Tensor | None = None) -> Tensor:
    """Differentiable projection of (V, 3) vertices to (V, 2) NDC coordinates.

    ``rotation`` overrides the pose rotation with a graph tensor (used when the
    pose itself is predicted and must receive gradients).
    """
    dt = verts.dtype
    r = rotation if rotation is not None else Tensor(euler_to_rotation(pose).astype(dt))
    cam = verts @ ad.transpose(r)
    z = cam @ Tensor(_SEL_Z.astype(dt))
    depth = ad.sub(Tensor(np.asarray(pose.distance, dtype=dt)), z)
    if (depth.data <= 1e-9).any():
        raise DegenerateProjection("vertex at or behind the camera plane")
    xy = cam @ Tensor(_SEL_XY.astype(dt))
    t = intr.tan_half_fov
    scale = np.array([[t * intr.aspect, t]], dtype=dt)
    return ad.div(xy, ad.mul(depth, Tensor(scale)))


def rotation_tensor(elev_rad: Tensor, azim_rad: Tensor) -> Tensor:
    """Object-to-camera rotation built from scalar angle tensors (radians)."""
    ce, se = ad.cos(elev_rad), ad.sin(elev_rad)
    ca, sa = ad.cos(azim_rad), ad.sin(azim_rad)
    zero = Tensor(np.zeros((), dtype=elev_rad.dtype))
    rows = [
        ca, zero, sa,
        sa * se, ce, -(se * ca),
        -(ce * sa), se, ce * ca,
    ]
    flat = ad.stack([ad.reshape(x, ()) for x in rows], axis=0)
    return ad.reshape(flat, (3, 3))


def soft_silhouette_t(verts: Tensor, faces: np.ndarray, pose: CameraPose,
                      intr: CameraIntrinsics, params: RasterParams,
                      rotation: Tensor | None = None) -> Tensor:
    """Full differentiable render: vertices (and optionally pose rotation) -> (H, W)."""
    if len(faces) == 0:
        return Tensor(np.zeros((intr.height, intr.width), dtype=verts.dtype))
    ndc = project_ndc(verts, pose, intr, rotation=rotation)
    return rasterize_soft(ndc, faces, intr, params)


def render_soft_silhouette(mesh: Mesh, pose: CameraPose, intr: CameraIntrinsics,
                           params: RasterParams | None = None) -> SilhouetteImage:
    params = params or RasterParams()
    if mesh.num_faces == 0:
        return SilhouetteImage(np.zeros((intr.height, intr.width)))
    with ad.no_grad():
        out = soft_silhouette_t(Tensor(mesh.vertices), mesh.faces, pose, intr, params)
    return SilhouetteImage(out.data)


def render_hard_silhouette(mesh: Mesh, pose: CameraPose, intr: CameraIntrinsics) -> SilhouetteImage:
    """Pixel = 1 iff its center lies inside any projected triangle (coverage oracle)."""
    if mesh.num_faces == 0:
        return SilhouetteImage(np.zeros((intr.height, intr.width)))
    pv = project_vertices(mesh, pose, intr)
    ndc = np.ascontiguousarray(pv[:, :2])
    mask = _hard_mask(ndc, np.ascontiguousarray(mesh.faces, dtype=np.int64),
                      intr.height, intr.width)
    return SilhouetteImage(mask.astype(np.float64))
