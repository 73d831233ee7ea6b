"""Alternating generator/discriminator training with random-view adversarial
supervision and the progressive discriminator stage schedule.

Randomness layout (everything derives from TrainConfig.seed): model init uses
``default_rng(seed)``; the training stream uses ``default_rng(seed + 0x5EED)``
and is consumed in a fixed order per step — batch indices, then per sample one
random view-code pose (elevation, azimuth), then per sample ``n_views``
discriminator poses. The random pose and the random-view mesh are produced
even with RPS disabled so ablation configs consume identical random streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .dataset import PoseDistribution, SketchSample, filled_silhouette, sample_pose
from .geometry import CameraIntrinsics, CameraPose
from .losses import (
    LossConfig,
    LossReport,
    NonFiniteLoss,
    adversarial_losses_t,
    build_dihedral_quads,
    build_laplacian_matrix,
    flatten_loss_t,
    laplacian_loss_t,
    log_sigmoid,
    multiscale_silhouette_loss_t,
    total_loss,
    viewpoint_loss_t,
)
from .networks import (
    ModelWeights,
    NetConfig,
    decode_batch,
    discriminate,
    discriminate_with_input_grad,
    encode_batch,
    predict_view_batch,
    stage_resolution,
    template_mesh,
    view_code_batch,
)
from .render import RasterParams, rotation_tensor, soft_silhouette_t


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8          # unstated in the source method; desk-scale default
    lr: float = 1e-4
    lr_decay: float = 0.3
    lr_decay_every: int = 800
    betas: tuple[float, float] = (0.9, 0.999)
    n_views: int = 3
    rps: bool = True
    sd: bool = True              # progressive conv discriminator; False = MLP fallback
    stage_fractions: tuple[float, float] = (0.25, 0.60)
    image_size: int = 64
    fov_deg: float = 30.0
    sigma: float = 1e-4
    seed: int = 0
    dtype: str = "float32"
    render_at_gt_pose: bool = False
    pose_dist: PoseDistribution = field(default_factory=PoseDistribution)
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    checkpoint_every: int = 500
    code_dim: int = 512
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)

    def net_config(self) -> NetConfig:
        return NetConfig(
            image_size=self.image_size,
            encoder_channels=self.encoder_channels,
            code_dim=self.code_dim,
            disc_kind="conv" if self.sd else "mlp",
            camera_distance=self.pose_dist.distance,
            dtype=self.dtype,
        )

    def intrinsics(self, size: int | None = None) -> CameraIntrinsics:
        s = size or self.image_size
        return CameraIntrinsics(s, s, self.fov_deg)


def stage_for_step(step: int, cfg: TrainConfig) -> int:
    frac = step / max(cfg.steps, 1)
    if frac < cfg.stage_fractions[0]:
        return 0
    if frac < cfg.stage_fractions[1]:
        return 1
    return 2


def lr_for_step(step: int, cfg: TrainConfig) -> float:
    return cfg.lr * cfg.lr_decay ** (step // cfg.lr_decay_every)


class TrainState:
    """Weights plus both optimizers, the training RNG, and the step counter."""

    def __init__(self, cfg: TrainConfig, weights: ModelWeights | None = None):
        self.cfg = cfg
        self.weights = weights or ModelWeights.init(cfg.net_config(), seed=cfg.seed)
        self.adam_gen = Adam(self.weights.generator_params(), lr=cfg.lr, betas=cfg.betas)
        self.adam_disc = Adam(self.weights.discriminator_params(), lr=cfg.lr, betas=cfg.betas)
        self.rng = np.random.default_rng(cfg.seed + 0x5EED)
        self.step = 0
        tpl = template_mesh(self.weights.config)
        self.template = tpl
        self.laplacian = build_laplacian_matrix(tpl.faces, tpl.num_vertices).astype(cfg.dtype)
        self.quads = build_dihedral_quads(tpl.faces)
        self._targets: dict[int, np.ndarray] = {}

    def target_for(self, sample: SketchSample) -> np.ndarray:
        if sample.index not in self._targets:
            self._targets[sample.index] = filled_silhouette(sample).astype(self.cfg.dtype)
        return self._targets[sample.index]

    # -- checkpointing -------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        extra = {
            "step": self.step,
            "rng_state": _encode_rng(self.rng),
            "adam_gen_t": self.adam_gen.t,
            "adam_disc_t": self.adam_disc.t,
            "train_config": _config_to_dict(self.cfg),
        }
        arrays = {}
        for tag, opt in (("gen", self.adam_gen), ("disc", self.adam_disc)):
            for name, m in opt.m.items():
                arrays[f"adam.{tag}.m.{name}"] = m
                arrays[f"adam.{tag}.v.{name}"] = opt.v[name]
        self.weights.save(path, extra=extra, extra_arrays=arrays)

    @classmethod
    def load_checkpoint(cls, path) -> "TrainState":
        weights, extra, arrays = ModelWeights.load(path)
        cfg = _config_from_dict(extra["train_config"])
        state = cls(cfg, weights=weights)
        state.step = int(extra["step"])
        state.rng = _decode_rng(extra["rng_state"])
        for tag, opt in (("gen", state.adam_gen), ("disc", state.adam_disc)):
            opt.t = int(extra[f"adam_{tag}_t"])
            for name in opt.m:
                opt.m[name] = arrays[f"adam.{tag}.m.{name}"].astype(opt.m[name].dtype)
                opt.v[name] = arrays[f"adam.{tag}.v.{name}"].astype(opt.v[name].dtype)
        return state


def _encode_rng(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))


def _decode_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def _config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["pose_dist"] = asdict(cfg.pose_dist)
    d["loss_cfg"] = asdict(cfg.loss_cfg)
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    pose = dict(d.pop("pose_dist"))
    for key in ("elevation_range", "azimuth_range"):
        pose[key] = tuple(pose[key])
    loss = dict(d.pop("loss_cfg"))
    for key in ("multiscale_resolutions", "multiscale_weights"):
        loss[key] = tuple(loss[key])
    for key in ("betas", "stage_fractions", "encoder_channels"):
        d[key] = tuple(d[key])
    return TrainConfig(pose_dist=PoseDistribution(**pose), loss_cfg=LossConfig(**loss), **d)


# ---------------------------------------------------------------------------
# training steps

def _scalar_at(vec: Tensor, i: int) -> Tensor:
    return ad.reshape(ad.gather_rows(ad.reshape(vec, (vec.data.shape[0], 1)), np.array([i])), ())


def generator_step(batch: list[SketchSample], state: TrainState,
                   stage: int) -> tuple[LossReport, dict]:
    """One generator update; returns the loss report plus the stage-resolution
    silhouettes (detached) for the discriminator step.

    Raises NonFiniteLoss before touching any weight if the total is not finite.
    """
    cfg = state.cfg
    w = state.weights
    dt = np.dtype(cfg.dtype)
    tpl = state.template
    intr_full = cfg.intrinsics()
    intr_stage = cfg.intrinsics(stage_resolution(stage))
    raster = RasterParams(sigma=cfg.sigma)
    n = len(batch)
    if n == 0:
        raise ValueError("batch must be non-empty")

    # one random view-code pose per sample (drawn even with RPS off: rng parity)
    xi_random = [sample_pose(cfg.pose_dist, state.rng) for _ in batch]
    disc_poses = [[sample_pose(cfg.pose_dist, state.rng) for _ in range(cfg.n_views)]
                  for _ in batch]

    x = Tensor(np.stack([1.0 - s.sketch.values for s in batch])[:, None].astype(dt))
    z_s, z_l = encode_batch(x, w)
    elev, azim = predict_view_batch(z_l, w)
    gt_e = Tensor(np.array([math.radians(s.gt_pose.elevation) for s in batch], dtype=dt))
    gt_a = Tensor(np.array([math.radians(s.gt_pose.azimuth) for s in batch], dtype=dt))
    l_v = _viewpoint_batch(elev, azim, gt_e, gt_a).mean()

    z_v = view_code_batch(elev, azim, w)
    re = Tensor(np.array([math.radians(p.elevation) for p in xi_random], dtype=dt))
    ra = Tensor(np.array([math.radians(p.azimuth) for p in xi_random], dtype=dt))
    z_vr = view_code_batch(re, ra, w)

    verts = decode_batch(z_s, z_v, w, tpl)
    verts_r = decode_batch(z_s, z_vr, w, tpl)  # random-view branch (unused w/o RPS)

    l_sp_terms = []
    l_r_terms = []
    fake_imgs: list[Tensor] = []
    real_imgs: list[np.ndarray] = []
    shell = CameraPose(0.0, 0.0, cfg.pose_dist.distance)
    for i, s in enumerate(batch):
        if cfg.render_at_gt_pose:
            img = soft_silhouette_t(verts[i], tpl.faces, s.gt_pose, intr_full, raster)
        else:
            rot = rotation_tensor(_scalar_at(elev, i), _scalar_at(azim, i))
            img = soft_silhouette_t(verts[i], tpl.faces, shell, intr_full, raster, rotation=rot)
        target = Tensor(state.target_for(s))
        l_sp_terms.append(multiscale_silhouette_loss_t(img, target, cfg.loss_cfg))
        lap = laplacian_loss_t(verts[i], state.laplacian)
        flat = flatten_loss_t(verts[i], state.quads)
        l_r_terms.append(cfg.loss_cfg.laplacian_weight * lap + cfg.loss_cfg.flatten_weight * flat)
        if cfg.rps:
            for pose in disc_poses[i]:
                fake_imgs.append(soft_silhouette_t(verts_r[i], tpl.faces, pose, intr_stage, raster))
                with ad.no_grad():
                    real_imgs.append(
                        soft_silhouette_t(verts[i], tpl.faces, pose, intr_stage, raster).data)

    l_sp = _mean_of(l_sp_terms)
    l_r = _mean_of(l_r_terms)
    if cfg.rps:
        fake_batch = ad.stack(fake_imgs, axis=0)
        fake_scores = discriminate(fake_batch, stage, w)
        l_adv = -(_f(fake_scores)).mean()
    else:
        l_adv = Tensor(np.zeros((), dtype=dt))

    lam = cfg.loss_cfg
    total_t = l_sp + l_r + lam.lambda_v * l_v + lam.lambda_sd * l_adv
    report = total_loss(float(l_sp.data), float(l_r.data), float(l_v.data),
                        float(l_adv.data), 0.0, cfg.loss_cfg)  # raises NonFiniteLoss

    state.adam_gen.zero_grad()
    total_t.backward()
    state.adam_gen.step()

    aux = {
        "real_stage_silhouettes": np.stack(real_imgs) if real_imgs else None,
        "fake_stage_silhouettes": (np.stack([t.data for t in fake_imgs])
                                   if fake_imgs else None),
    }
    return report, aux


def _f(u: Tensor) -> Tensor:
    return -ad.softplus(-u)


def _mean_of(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def _viewpoint_batch(elev: Tensor, azim: Tensor, gt_e: Tensor, gt_a: Tensor) -> Tensor:
    two_pi = 2.0 * math.pi
    de = elev - gt_e
    da_raw = azim - gt_a
    shift = two_pi * np.round(da_raw.data / two_pi)
    da = da_raw - Tensor(shift.astype(azim.dtype))
    return ad.sqrt(de * de + da * da)


def discriminator_step(real: np.ndarray, fake: np.ndarray, stage: int,
                       state: TrainState) -> dict:
    """One update of the discriminator parameters only (R1 on the real inputs)."""
    cfg = state.cfg
    w = state.weights
    res = stage_resolution(stage)
    if real.shape[-1] != res or fake.shape[-1] != res:
        from .networks import StageResolutionMismatch
        raise StageResolutionMismatch(
            f"stage {stage} expects {res}^2 silhouettes, got {real.shape} / {fake.shape}")
    scores_real, r1 = discriminate_with_input_grad(real, stage, w)
    scores_fake = discriminate(Tensor(np.asarray(fake, dtype=cfg.dtype)), stage, w)
    _, disc_loss = adversarial_losses_t(scores_real, scores_fake, r1, cfg.loss_cfg.r1_gamma)
    if not np.isfinite(disc_loss.data):
        raise NonFiniteLoss("discriminator loss is not finite")
    state.adam_disc.zero_grad()
    disc_loss.backward()
    state.adam_disc.step()
    return {
        "disc_loss": float(disc_loss.data),
        "r1": float(r1.data),
        "real_score_mean": float(scores_real.data.mean()),
        "fake_score_mean": float(scores_fake.data.mean()),
    }


# ---------------------------------------------------------------------------
# training loop

def train(cfg: TrainConfig, dataset: list[SketchSample], out_dir=None,
          resume_from=None, log_every: int = 1,
          stop_after: int | None = None) -> tuple[ModelWeights, list[dict]]:
    """Alternating optimization; returns final weights and the metrics rows.

    Writes metrics.jsonl (one JSON object per step) and checkpoint.skf under
    out_dir when given. A non-finite loss terminates training, leaving the
    last good checkpoint on disk. ``stop_after`` interrupts the run at that
    global step (checkpointed, resumable with the same schedules).
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    state = TrainState.load_checkpoint(resume_from) if resume_from else TrainState(cfg)
    cfg = state.cfg
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    metrics: list[dict] = []
    log_fh = open(out / "metrics.jsonl", "a") if out else None
    last_step = cfg.steps if stop_after is None else min(cfg.steps, stop_after)
    try:
        while state.step < last_step:
            step = state.step
            lr = lr_for_step(step, cfg)
            state.adam_gen.lr = lr
            state.adam_disc.lr = lr
            stage = stage_for_step(step, cfg)
            idx = state.rng.integers(len(dataset), size=cfg.batch_size)
            batch = [dataset[int(i)] for i in idx]
            try:
                report, aux = generator_step(batch, state, stage)
                row = {"step": step, "lr": lr, "stage": stage, **report.to_dict()}
                if cfg.rps:
                    row.update(discriminator_step(aux["real_stage_silhouettes"],
                                                  aux["fake_stage_silhouettes"], stage, state))
            except NonFiniteLoss as exc:
                row = {"step": step, "error": f"NonFiniteLoss: {exc}"}
                metrics.append(row)
                if log_fh:
                    log_fh.write(json.dumps(row) + "\n")
                break
            metrics.append(row)
            if log_fh and step % log_every == 0:
                log_fh.write(json.dumps(row) + "\n")
            state.step += 1
            if out and (state.step % cfg.checkpoint_every == 0 or state.step == last_step):
                state.save_checkpoint(out / "checkpoint.skf")
    finally:
        if log_fh:
            log_fh.close()
    if out:
        state.save_checkpoint(out / "checkpoint.skf")
        state.weights.save(out / "weights.skf", extra={"step": state.step,
                                                       "train_config": _config_to_dict(cfg)})
    return state.weights, metrics


def overfit_single_sample(sample: SketchSample, cfg: TrainConfig | None = None,
                          steps: int = 500) -> tuple[ModelWeights, list[dict]]:
    """Single-sample overfit diagnostic: generator only, no discriminator."""
    from dataclasses import replace

    cfg = cfg or TrainConfig()
    cfg = replace(cfg, steps=steps, rps=False, batch_size=1)
    return train(cfg, [sample])
