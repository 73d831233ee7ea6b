"""Model components: sketch encoder, code projections, view-regression head,
pose view-code layers, template-deforming mesh decoder, and the progressive
shape discriminator (convolutional, with an MLP fallback used by ablations).

Weights file format ("SKFORGE1"): 8-byte magic, little-endian uint64 header
length, JSON header (dtype, config echo, parameter/array directory with byte
offsets, free-form extra), then raw little-endian parameter data. Round-trips
are bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import CameraPose, Mesh, icosphere
from .images import SketchImage

MAGIC = b"SKFORGE1"


class ShapeMismatch(ValueError):
    pass


class StageResolutionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    image_size: int = 64
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    code_dim: int = 512
    head_hidden: int = 64
    view_code_hidden: int = 64
    decoder_hidden: int = 512
    max_offset: float = 0.75
    elevation_range: tuple[float, float] = (-30.0, 60.0)
    azimuth_range: tuple[float, float] = (0.0, 360.0)
    camera_distance: float = 2.732
    template_subdivisions: int = 3
    template_radius: float = 0.5
    disc_kind: str = "conv"  # "conv" (progressive SD) or "mlp" (ablation fallback)
    disc_channels: tuple[int, ...] = (32, 16, 8)  # stage 0 (16^2) .. stage 2 (64^2)
    disc_mlp_hidden: int = 128
    disc_stages: int = 3
    dtype: str = "float64"

    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass(frozen=True)
class TemplateMesh:
    """Fixed-topology icosphere whose per-vertex offsets form the decoder output."""

    mesh: Mesh

    @property
    def num_vertices(self) -> int:
        return self.mesh.num_vertices

    @property
    def faces(self) -> np.ndarray:
        return self.mesh.faces


@lru_cache(maxsize=8)
def _template_cached(subdivisions: int, radius: float) -> TemplateMesh:
    return TemplateMesh(icosphere(subdivisions, radius))


def template_mesh(cfg: NetConfig) -> TemplateMesh:
    return _template_cached(cfg.template_subdivisions, cfg.template_radius)


def stage_resolution(stage: int) -> int:
    return 16 << stage


class ModelWeights:
    """Named parameter tensors plus the config they were built for."""

    def __init__(self, config: NetConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def generator_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if not k.startswith("disc.")}

    def discriminator_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("disc.")}

    def all_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for p in self.params.values())

    # -- initialization ------------------------------------------------------

    @classmethod
    def init(cls, config: NetConfig, seed: int = 0) -> "ModelWeights":
        """Deterministic initialization; draw order follows parameter insertion order."""
        rng = np.random.default_rng(seed)
        dt = config.np_dtype()
        params: dict[str, Tensor] = {}

        def add(name: str, arr: np.ndarray):
            params[name] = Tensor(np.ascontiguousarray(arr, dtype=dt), requires_grad=True)

        def conv_init(name: str, out_ch: int, in_ch: int, k: int = 3):
            fan_in = in_ch * k * k
            add(f"{name}.w", rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(out_ch, in_ch, k, k)))
            add(f"{name}.b", np.zeros(out_ch))

        def fc_init(name: str, out_dim: int, in_dim: int, scale: float | None = None):
            s = math.sqrt(1.0 / in_dim) if scale is None else scale
            add(f"{name}.w", rng.normal(0.0, s, size=(out_dim, in_dim)))
            add(f"{name}.b", np.zeros(out_dim))

        chans = config.encoder_channels
        prev = 1
        for i, c in enumerate(chans):
            conv_init(f"enc.conv{i}", c, prev)
            prev = c
        feat = chans[-1]
        fc_init("proj.shape", config.code_dim, feat)
        fc_init("proj.view", config.code_dim, feat)
        fc_init("head.fc1", config.head_hidden, config.code_dim)
        fc_init("head.fc2", 2, config.head_hidden, scale=0.01)
        fc_init("vcode.fc1", config.view_code_hidden, 4)
        fc_init("vcode.fc2", config.code_dim, config.view_code_hidden)
        n_verts = template_mesh(config).num_vertices
        fc_init("dec.fc1", config.decoder_hidden, 2 * config.code_dim)
        # zero output layer: the initial mesh is exactly the template sphere
        add("dec.fc2.w", np.zeros((3 * n_verts, config.decoder_hidden)))
        add("dec.fc2.b", np.zeros(3 * n_verts))

        w = cls(config, params)
        for stage in range(config.disc_stages):
            w.add_discriminator_stage(stage, rng)
        return w

    def add_discriminator_stage(self, stage: int, rng: np.random.Generator) -> None:
        """Append parameters for one discriminator input stage; existing tensors untouched."""
        cfg = self.config
        dt = cfg.np_dtype()

        def add(name: str, arr: np.ndarray):
            if name in self.params:
                raise ValueError(f"parameter {name} already exists")
            self.params[name] = Tensor(np.ascontiguousarray(arr, dtype=dt), requires_grad=True)

        if cfg.disc_kind == "conv":
            c = cfg.disc_channels
            fan = 1 * 9
            add(f"disc.from{stage}.w", rng.normal(0.0, math.sqrt(2.0 / fan), size=(c[stage], 1, 3, 3)))
            add(f"disc.from{stage}.b", np.zeros(c[stage]))
            if stage > 0:
                fan = c[stage] * 9
                add(f"disc.down{stage}.w",
                    rng.normal(0.0, math.sqrt(2.0 / fan), size=(c[stage - 1], c[stage], 3, 3)))
                add(f"disc.down{stage}.b", np.zeros(c[stage - 1]))
            if stage == 0:
                fan = c[0] * 9
                add("disc.head.w", rng.normal(0.0, math.sqrt(2.0 / fan), size=(c[0], c[0], 3, 3)))
                add("disc.head.b", np.zeros(c[0]))
                add("disc.out.w", rng.normal(0.0, math.sqrt(1.0 / c[0]), size=(1, c[0])))
                add("disc.out.b", np.zeros(1))
        elif cfg.disc_kind == "mlp":
            res = stage_resolution(stage)
            h = cfg.disc_mlp_hidden
            add(f"disc.mlp{stage}.fc1.w", rng.normal(0.0, math.sqrt(1.0 / (res * res)), size=(h, res * res)))
            add(f"disc.mlp{stage}.fc1.b", np.zeros(h))
            add(f"disc.mlp{stage}.fc2.w", rng.normal(0.0, math.sqrt(1.0 / h), size=(h, h)))
            add(f"disc.mlp{stage}.fc2.b", np.zeros(h))
            add(f"disc.mlp{stage}.fc3.w", rng.normal(0.0, math.sqrt(1.0 / h), size=(1, h)))
            add(f"disc.mlp{stage}.fc3.b", np.zeros(1))
        else:
            raise ValueError(f"unknown discriminator kind {cfg.disc_kind!r}")

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra: dict | None = None,
             extra_arrays: dict[str, np.ndarray] | None = None) -> None:
        dt = self.config.np_dtype()
        le = dt.newbyteorder("<")
        directory = []
        blobs = []
        offset = 0
        for name, p in self.params.items():
            raw = np.ascontiguousarray(p.data, dtype=le).tobytes()
            directory.append({"name": name, "shape": list(p.data.shape),
                              "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        arr_dir = []
        for name, arr in (extra_arrays or {}).items():
            raw = np.ascontiguousarray(arr, dtype=np.dtype(arr.dtype).newbyteorder("<")).tobytes()
            arr_dir.append({"name": name, "shape": list(arr.shape),
                            "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        header = {
            "version": 1,
            "dtype": self.config.dtype,
            "config": asdict(self.config),
            "params": directory,
            "arrays": arr_dir,
            "extra": extra or {},
        }
        hbytes = json.dumps(header).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(hbytes)))
            fh.write(hbytes)
            for raw in blobs:
                fh.write(raw)

    @classmethod
    def load(cls, path) -> tuple["ModelWeights", dict, dict[str, np.ndarray]]:
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != MAGIC:
                raise ValueError(f"not a weights file (magic {magic!r})")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            blob = fh.read()
        cfg_dict = dict(header["config"])
        for key in ("encoder_channels", "elevation_range", "azimuth_range",
                    "disc_channels"):
            cfg_dict[key] = tuple(cfg_dict[key])
        config = NetConfig(**cfg_dict)
        dt = config.np_dtype().newbyteorder("<")
        params: dict[str, Tensor] = {}
        for ent in header["params"]:
            raw = blob[ent["offset"]:ent["offset"] + ent["nbytes"]]
            arr = np.frombuffer(raw, dtype=dt).reshape(ent["shape"]).astype(config.np_dtype())
            params[ent["name"]] = Tensor(arr, requires_grad=True)
        arrays: dict[str, np.ndarray] = {}
        for ent in header["arrays"]:
            raw = blob[ent["offset"]:ent["offset"] + ent["nbytes"]]
            arrays[ent["name"]] = np.frombuffer(raw, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"]).copy()
        return cls(config, params), header["extra"], arrays


# ---------------------------------------------------------------------------
# forward passes

def _as_batch_images(sketches, cfg: NetConfig) -> np.ndarray:
    """Sketch values -> network input batch (B, 1, S, S); strokes become 1, background 0."""
    arrs = []
    for s in sketches:
        v = s.values if isinstance(s, SketchImage) else np.asarray(s, dtype=np.float64)
        if v.shape != (cfg.image_size, cfg.image_size):
            raise ShapeMismatch(f"sketch {v.shape} vs configured {cfg.image_size}^2")
        arrs.append(1.0 - v)
    return np.stack(arrs)[:, None, :, :].astype(cfg.np_dtype())


def encode_batch(x: Tensor, w: ModelWeights) -> tuple[Tensor, Tensor]:
    """Convolutional features then the L2-normalized shape code; returns (z_s, z_l)."""
    cfg = w.config
    h = x
    for i in range(len(cfg.encoder_channels)):
        h = ad.leaky_relu(ad.conv2d(h, w[f"enc.conv{i}.w"], w[f"enc.conv{i}.b"], stride=2, pad=1), 0.2)
    z_l = ad.mean(h, axis=(2, 3))
    z_s = ad.l2_normalize(ad.linear(z_l, w["proj.shape.w"], w["proj.shape.b"]), axis=1)
    return z_s, z_l


def encode(sketch, w: ModelWeights) -> tuple[Tensor, Tensor]:
    x = Tensor(_as_batch_images([sketch], w.config))
    z_s, z_l = encode_batch(x, w)
    return ad.reshape(z_s, (w.config.code_dim,)), ad.reshape(z_l, (z_l.data.shape[1],))


def predict_view_batch(z_l: Tensor, w: ModelWeights) -> tuple[Tensor, Tensor]:
    """Regress (elevation, azimuth) in radians, squashed into the configured ranges."""
    cfg = w.config
    v = ad.l2_normalize(ad.linear(z_l, w["proj.view.w"], w["proj.view.b"]), axis=1)
    h = ad.relu(ad.linear(v, w["head.fc1.w"], w["head.fc1.b"]))
    out = ad.tanh(ad.linear(h, w["head.fc2.w"], w["head.fc2.b"]))
    dt = cfg.np_dtype()
    e_lo, e_hi = (math.radians(d) for d in cfg.elevation_range)
    a_lo, a_hi = (math.radians(d) for d in cfg.azimuth_range)
    elev = Tensor(np.asarray((e_hi + e_lo) / 2, dtype=dt)) + Tensor(np.asarray((e_hi - e_lo) / 2, dtype=dt)) * ad.column(out, 0)
    azim = Tensor(np.asarray((a_hi + a_lo) / 2, dtype=dt)) + Tensor(np.asarray((a_hi - a_lo) / 2, dtype=dt)) * ad.column(out, 1)
    return elev, azim


def pose_from_angles(elev_rad: float, azim_rad: float, cfg: NetConfig) -> CameraPose:
    return CameraPose(math.degrees(elev_rad), math.degrees(azim_rad) % 360.0, cfg.camera_distance)


def predict_view(z_l: Tensor, w: ModelWeights) -> CameraPose:
    elev, azim = predict_view_batch(ad.reshape(z_l, (1, z_l.data.shape[-1])), w)
    return pose_from_angles(float(elev.data[0]), float(azim.data[0]), w.config)


def view_code_batch(elev_rad: Tensor, azim_rad: Tensor, w: ModelWeights) -> Tensor:
    """Pose -> (sin, cos) features -> two fully connected layers -> unit-norm code."""
    feats = ad.stack([ad.sin(elev_rad), ad.cos(elev_rad), ad.sin(azim_rad), ad.cos(azim_rad)], axis=1)
    h = ad.relu(ad.linear(feats, w["vcode.fc1.w"], w["vcode.fc1.b"]))
    return ad.l2_normalize(ad.linear(h, w["vcode.fc2.w"], w["vcode.fc2.b"]), axis=1)


def view_code(pose: CameraPose, w: ModelWeights) -> Tensor:
    dt = w.config.np_dtype()
    e = Tensor(np.asarray([math.radians(pose.elevation)], dtype=dt))
    a = Tensor(np.asarray([math.radians(pose.azimuth)], dtype=dt))
    return ad.reshape(view_code_batch(e, a, w), (w.config.code_dim,))


def decode_batch(z_s: Tensor, z_v: Tensor, w: ModelWeights,
                 template: TemplateMesh) -> list[Tensor]:
    """Concatenated codes -> bounded per-vertex offsets; returns per-sample (V, 3) tensors."""
    cfg = w.config
    if z_s.data.shape[-1] != cfg.code_dim or z_v.data.shape[-1] != cfg.code_dim:
        raise ShapeMismatch("latent code dimension mismatch")
    code = ad.concat([z_s, z_v], axis=1)
    h = ad.relu(ad.linear(code, w["dec.fc1.w"], w["dec.fc1.b"]))
    out = ad.tanh(ad.linear(h, w["dec.fc2.w"], w["dec.fc2.b"])) * cfg.max_offset
    n = template.num_vertices
    base = Tensor(template.mesh.vertices.astype(cfg.np_dtype()))
    batch = out.data.shape[0]
    verts = []
    for i in range(batch):
        offsets = ad.reshape(ad.gather_rows(out, np.array([i])), (n, 3))
        verts.append(offsets + base)
    return verts


def decode_mesh(z_s: Tensor, z_v: Tensor, w: ModelWeights, template: TemplateMesh | None = None) -> Mesh:
    template = template or template_mesh(w.config)
    zs2 = ad.reshape(z_s, (1, w.config.code_dim))
    zv2 = ad.reshape(z_v, (1, w.config.code_dim))
    with ad.no_grad():
        verts = decode_batch(zs2, zv2, w, template)[0]
    return Mesh(verts.data.astype(np.float64), template.faces)


# ---------------------------------------------------------------------------
# discriminator

def _check_stage_input(images: Tensor, stage: int) -> Tensor:
    if images.data.ndim == 3:
        images = ad.reshape(images, (images.data.shape[0], 1) + images.data.shape[1:])
    res = stage_resolution(stage)
    if images.data.shape[2] != res or images.data.shape[3] != res:
        raise StageResolutionMismatch(
            f"stage {stage} expects {res}x{res}, got {images.data.shape[2]}x{images.data.shape[3]}")
    return images


def discriminate(images: Tensor, stage: int, w: ModelWeights) -> Tensor:
    """One realness score per silhouette; input resolution must match the stage."""
    x = _check_stage_input(images, stage)
    cfg = w.config
    if cfg.disc_kind == "conv":
        h = ad.leaky_relu(ad.conv2d(x, w[f"disc.from{stage}.w"], w[f"disc.from{stage}.b"], stride=1, pad=1), 0.2)
        for k in range(stage, 0, -1):
            h = ad.leaky_relu(ad.conv2d(h, w[f"disc.down{k}.w"], w[f"disc.down{k}.b"], stride=2, pad=1), 0.2)
        h = ad.leaky_relu(ad.conv2d(h, w["disc.head.w"], w["disc.head.b"], stride=2, pad=1), 0.2)
        feat = ad.mean(h, axis=(2, 3))
        return ad.reshape(ad.linear(feat, w["disc.out.w"], w["disc.out.b"]), (x.data.shape[0],))
    # mlp fallback
    res = stage_resolution(stage)
    flat = ad.reshape(x, (x.data.shape[0], res * res))
    h = ad.relu(ad.linear(flat, w[f"disc.mlp{stage}.fc1.w"], w[f"disc.mlp{stage}.fc1.b"]))
    h = ad.relu(ad.linear(h, w[f"disc.mlp{stage}.fc2.w"], w[f"disc.mlp{stage}.fc2.b"]))
    return ad.reshape(ad.linear(h, w[f"disc.mlp{stage}.fc3.w"], w[f"disc.mlp{stage}.fc3.b"]), (x.data.shape[0],))


def _leaky_mask(pre, slope: float = 0.2) -> np.ndarray:
    return np.where(pre > 0, 1.0, slope)


def discriminate_with_input_grad(images: np.ndarray, stage: int, w: ModelWeights) -> tuple[Tensor, Tensor]:
    """Scores plus the mean squared norm of d(score)/d(input pixels), as a graph tensor.

    The input gradient is assembled from transposed ops with the activation
    masks detached; for piecewise-linear activations that reverse chain is the
    exact gradient almost everywhere, so the R1 penalty trains the
    discriminator parameters through ordinary first-order backprop.
    """
    cfg = w.config
    x = _check_stage_input(Tensor(np.asarray(images, dtype=cfg.np_dtype())), stage)
    batch = x.data.shape[0]
    dt = cfg.np_dtype()
    if cfg.disc_kind == "conv":
        layers = []  # (name, stride, in_hw, mask)
        h = x
        specs = [(f"disc.from{stage}", 1)]
        specs += [(f"disc.down{k}", 2) for k in range(stage, 0, -1)]
        specs += [("disc.head", 2)]
        for name, stride in specs:
            pre = ad.conv2d(h, w[f"{name}.w"], w[f"{name}.b"], stride=stride, pad=1)
            mask = _leaky_mask(pre.data)
            layers.append((name, stride, h.data.shape[2:], mask))
            h = ad.leaky_relu(pre, 0.2)
        feat = ad.mean(h, axis=(2, 3))
        scores = ad.reshape(ad.linear(feat, w["disc.out.w"], w["disc.out.b"]), (batch,))
        # reverse chain with detached masks
        hf, wf = h.data.shape[2], h.data.shape[3]
        ones = Tensor(np.ones((batch, 1), dtype=dt))
        g = ones @ w["disc.out.w"]  # (B, C)
        g = ad.reshape(g, (batch, g.data.shape[1], 1, 1)) * Tensor(
            np.full((1, 1, hf, wf), 1.0 / (hf * wf), dtype=dt))
        for name, stride, in_hw, mask in reversed(layers):
            g = g * Tensor(mask.astype(dt))
            g = ad.conv2d_transpose(g, w[f"{name}.w"], stride=stride, pad=1, out_hw=in_hw)
    else:
        res = stage_resolution(stage)
        flat = ad.reshape(x, (batch, res * res))
        pre1 = ad.linear(flat, w[f"disc.mlp{stage}.fc1.w"], w[f"disc.mlp{stage}.fc1.b"])
        h1 = ad.relu(pre1)
        pre2 = ad.linear(h1, w[f"disc.mlp{stage}.fc2.w"], w[f"disc.mlp{stage}.fc2.b"])
        h2 = ad.relu(pre2)
        scores = ad.reshape(ad.linear(h2, w[f"disc.mlp{stage}.fc3.w"], w[f"disc.mlp{stage}.fc3.b"]), (batch,))
        m1 = Tensor((pre1.data > 0).astype(dt))
        m2 = Tensor((pre2.data > 0).astype(dt))
        ones = Tensor(np.ones((batch, 1), dtype=dt))
        g = (ones @ w[f"disc.mlp{stage}.fc3.w"]) * m2
        g = (g @ w[f"disc.mlp{stage}.fc2.w"]) * m1
        g = g @ w[f"disc.mlp{stage}.fc1.w"]
    grad_sq = (g * g).sum() * (1.0 / batch)
    return scores, grad_sq
