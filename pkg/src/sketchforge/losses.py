"""Training objectives: viewpoint regression, silhouette mIoU (single and multiscale),
mesh regularizers, and the nonsaturating adversarial pair with R1 regularization.

Every loss has a float API over plain values and a ``*_t`` twin over autodiff
tensors; the float API evaluates the same formula so the two cannot drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import CameraPose, Mesh
from .images import SilhouetteImage

TWO_PI = 2.0 * math.pi


class DimensionMismatch(ValueError):
    pass


class IsolatedVertex(ValueError):
    pass


class NonManifoldEdge(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lambda_v: float = 10.0
    lambda_sd: float = 0.1
    lambda_dd: float = 0.1
    multiscale_resolutions: tuple[int, ...] = (16, 32, 64)
    multiscale_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    laplacian_weight: float = 0.03
    flatten_weight: float = 0.0003
    r1_gamma: float = 10.0

    def __post_init__(self):
        weights = (self.lambda_v, self.lambda_sd, self.lambda_dd,
                   self.laplacian_weight, self.flatten_weight, self.r1_gamma,
                   *self.multiscale_weights)
        if not all(math.isfinite(w) and w >= 0 for w in weights):
            raise ValueError("loss weights must be finite and >= 0")
        if len(self.multiscale_resolutions) != len(self.multiscale_weights):
            raise ValueError("one weight per multiscale resolution required")
        if list(self.multiscale_resolutions) != sorted(self.multiscale_resolutions):
            raise ValueError("multiscale resolutions must be ascending")


@dataclass(frozen=True)
class LossReport:
    silhouette: float = 0.0
    regularizer: float = 0.0
    viewpoint: float = 0.0
    adversarial: float = 0.0
    domain: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {
            "silhouette": self.silhouette,
            "regularizer": self.regularizer,
            "viewpoint": self.viewpoint,
            "adversarial": self.adversarial,
            "domain": self.domain,
            "total": self.total,
        }


def _values(img) -> np.ndarray:
    if isinstance(img, SilhouetteImage):
        return img.values
    if isinstance(img, Tensor):
        return img.data
    return np.asarray(img, dtype=np.float64)


# ---------------------------------------------------------------------------
# viewpoint (predicted vs ground-truth pose, radians, azimuth wrapped)

def wrap_angle(rad: float) -> float:
    """Wrap an angle difference to (-pi, pi]."""
    w = rad - TWO_PI * np.round(rad / TWO_PI)
    if w == -math.pi:
        w = math.pi
    return float(w)


def viewpoint_loss_t(elev_rad: Tensor, azim_rad: Tensor, gt: CameraPose) -> Tensor:
    """L2 norm of the (elevation, azimuth) error in radians; batched over (B,) tensors."""
    ge = math.radians(gt.elevation)
    ga = math.radians(gt.azimuth)
    de = elev_rad - Tensor(np.asarray(ge, dtype=elev_rad.dtype))
    da_raw = azim_rad - Tensor(np.asarray(ga, dtype=azim_rad.dtype))
    shift = TWO_PI * np.round(da_raw.data / TWO_PI)  # piecewise-constant, zero grad
    da = da_raw - Tensor(shift.astype(azim_rad.dtype))
    return ad.sqrt(de * de + da * da)


def viewpoint_loss(pred: CameraPose, gt: CameraPose) -> float:
    de = math.radians(pred.elevation - gt.elevation)
    da = wrap_angle(math.radians(pred.azimuth - gt.azimuth))
    return math.sqrt(de * de + da * da)


# ---------------------------------------------------------------------------
# silhouette similarity

def iou_loss_t(s1: Tensor, s2: Tensor) -> Tensor:
    if s1.data.shape != s2.data.shape:
        raise DimensionMismatch(f"{s1.data.shape} vs {s2.data.shape}")
    prod = s1 * s2
    inter = prod.sum()
    union = (s1 + s2 - prod).sum()
    if union.data == 0.0:
        # both silhouettes empty: treat as a perfect match
        return Tensor(np.zeros((), dtype=s1.dtype))
    return 1.0 - inter / union


def iou_loss(s1, s2) -> float:
    a, b = _values(s1), _values(s2)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return iou_loss_t(Tensor(a), Tensor(b)).item()


def _downsample_t(img: Tensor, resolution: int) -> Tensor:
    h, w = img.data.shape
    if h % resolution or w % resolution:
        raise DimensionMismatch(f"image {h}x{w} not divisible down to {resolution}")
    k = h // resolution
    if k == 1:
        return img
    pooled = ad.avg_pool2d(ad.reshape(img, (1, 1, h, w)), k)
    return ad.reshape(pooled, (resolution, (w // k)))


def multiscale_silhouette_loss_t(rendered: Tensor, target: Tensor, cfg: LossConfig) -> Tensor:
    if rendered.data.shape != target.data.shape:
        raise DimensionMismatch(f"{rendered.data.shape} vs {target.data.shape}")
    total = None
    for res, weight in zip(cfg.multiscale_resolutions, cfg.multiscale_weights):
        term = weight * iou_loss_t(_downsample_t(rendered, res), _downsample_t(target, res))
        total = term if total is None else total + term
    return total


def multiscale_silhouette_loss(rendered, target, cfg: LossConfig) -> float:
    return multiscale_silhouette_loss_t(Tensor(_values(rendered)), Tensor(_values(target)), cfg).item()


# ---------------------------------------------------------------------------
# mesh regularizers

def build_laplacian_matrix(faces: np.ndarray, n_vertices: int) -> np.ndarray:
    """Uniform graph Laplacian (I - D^-1 A) from triangle connectivity."""
    neighbors: list[set[int]] = [set() for _ in range(n_vertices)]
    for a, b, c in np.asarray(faces, dtype=np.int64):
        neighbors[a].update((b, c))
        neighbors[b].update((a, c))
        neighbors[c].update((a, b))
    lap = np.eye(n_vertices)
    for i, ns in enumerate(neighbors):
        if not ns:
            raise IsolatedVertex(f"vertex {i} has no neighbors")
        w = 1.0 / len(ns)
        for j in ns:
            lap[i, j] -= w
    return lap


def laplacian_loss_t(verts: Tensor, lap: np.ndarray) -> Tensor:
    res = Tensor(lap.astype(verts.dtype)) @ verts
    return (res * res).sum() * (1.0 / len(lap))


def laplacian_loss(mesh: Mesh) -> float:
    lap = build_laplacian_matrix(mesh.faces, mesh.num_vertices)
    return laplacian_loss_t(Tensor(mesh.vertices), lap).item()


def build_dihedral_quads(faces: np.ndarray) -> np.ndarray:
    """Interior-edge quads (p0, p1, opposite_a, opposite_b); boundary edges are skipped."""
    edge_map: dict[tuple[int, int], list[int]] = {}
    for a, b, c in np.asarray(faces, dtype=np.int64):
        for u, v, opp in ((a, b, c), (b, c, a), (c, a, b)):
            key = (u, v) if u < v else (v, u)
            edge_map.setdefault(key, []).append(int(opp))
    quads = []
    for (p0, p1), opps in sorted(edge_map.items()):
        if len(opps) > 2:
            raise NonManifoldEdge(f"edge ({p0}, {p1}) shared by {len(opps)} faces")
        if len(opps) == 2:
            quads.append((p0, p1, opps[0], opps[1]))
    return np.asarray(quads, dtype=np.int64).reshape(-1, 4)


def flatten_loss_t(verts: Tensor, quads: np.ndarray) -> Tensor:
    """Sum over interior edges of (1 + cos(dihedral))^2; coplanar faces give 0."""
    if not len(quads):
        return Tensor(np.zeros((), dtype=verts.dtype))
    p0 = ad.gather_rows(verts, quads[:, 0])
    p1 = ad.gather_rows(verts, quads[:, 1])
    pa = ad.gather_rows(verts, quads[:, 2])
    pb = ad.gather_rows(verts, quads[:, 3])
    e = p1 - p0
    e_hat = ad.l2_normalize(e, axis=1)
    va = pa - p0
    vb = pb - p0
    ua = va - (va * e_hat).sum(axis=1, keepdims=True) * e_hat
    ub = vb - (vb * e_hat).sum(axis=1, keepdims=True) * e_hat
    cosang = (ad.l2_normalize(ua, axis=1) * ad.l2_normalize(ub, axis=1)).sum(axis=1)
    return ((1.0 + cosang) ** 2).sum()


def flatten_loss(mesh: Mesh) -> float:
    quads = build_dihedral_quads(mesh.faces)
    return flatten_loss_t(Tensor(mesh.vertices), quads).item()


# ---------------------------------------------------------------------------
# adversarial (nonsaturating GAN with R1)

def log_sigmoid(u: np.ndarray | float) -> np.ndarray | float:
    """f(u) = -log(1 + exp(-u)), overflow-safe."""
    return -np.logaddexp(0.0, -np.asarray(u, dtype=np.float64))


def _f_t(u: Tensor) -> Tensor:
    return -ad.softplus(-u)


def adversarial_losses_t(real_scores: Tensor, fake_scores: Tensor,
                         real_grad_sq: Tensor | float, gamma: float) -> tuple[Tensor, Tensor]:
    gen = -_f_t(fake_scores).mean()
    disc = -_f_t(real_scores).mean() - _f_t(-fake_scores).mean()
    r1 = real_grad_sq if isinstance(real_grad_sq, Tensor) else Tensor(np.asarray(real_grad_sq, dtype=np.float64))
    disc = disc + (gamma / 2.0) * r1
    return gen, disc


def adversarial_losses(real_scores, fake_scores, real_grad_sq: float,
                       gamma: float = 10.0) -> tuple[float, float]:
    """Returns (generator_loss, discriminator_loss) for the nonsaturating objective."""
    real = np.asarray(real_scores, dtype=np.float64).reshape(-1)
    fake = np.asarray(fake_scores, dtype=np.float64).reshape(-1)
    if not len(real) or not len(fake):
        raise ValueError("score lists must be non-empty")
    if real_grad_sq < 0:
        raise ValueError("real_grad_sq must be >= 0")
    gen, disc = adversarial_losses_t(Tensor(real), Tensor(fake), float(real_grad_sq), gamma)
    return gen.item(), disc.item()


# ---------------------------------------------------------------------------
# weighted total

def total_loss(silhouette: float, regularizer: float, viewpoint: float,
               adversarial: float = 0.0, domain: float = 0.0,
               cfg: LossConfig | None = None) -> LossReport:
    cfg = cfg or LossConfig()
    parts = (silhouette, regularizer, viewpoint, adversarial, domain)
    if not all(math.isfinite(p) for p in parts):
        raise NonFiniteLoss(f"non-finite loss component: {parts}")
    total = (silhouette + regularizer + cfg.lambda_v * viewpoint
             + cfg.lambda_sd * adversarial + cfg.lambda_dd * domain)
    return LossReport(silhouette=silhouette, regularizer=regularizer,
                      viewpoint=viewpoint, adversarial=adversarial,
                      domain=domain, total=total)
