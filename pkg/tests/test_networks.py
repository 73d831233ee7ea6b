import math

import numpy as np
import pytest

from sketchforge import autodiff as ad
from sketchforge.autodiff import Tensor
from sketchforge.geometry import CameraIntrinsics, CameraPose
from sketchforge.images import SketchImage
from sketchforge.losses import LossConfig, multiscale_silhouette_loss_t, viewpoint_loss_t
from sketchforge.networks import (
    ModelWeights,
    NetConfig,
    ShapeMismatch,
    StageResolutionMismatch,
    decode_batch,
    decode_mesh,
    discriminate,
    discriminate_with_input_grad,
    encode,
    encode_batch,
    predict_view,
    predict_view_batch,
    stage_resolution,
    template_mesh,
    view_code,
    view_code_batch,
)
from sketchforge.render import RasterParams, rotation_tensor, soft_silhouette_t

from conftest import central_difference, relative_errors

SMALL = NetConfig(image_size=16, encoder_channels=(4, 8), code_dim=32,
                  head_hidden=16, view_code_hidden=16, decoder_hidden=24,
                  template_subdivisions=1, disc_stages=1)


def _sketch(rng, size=64) -> SketchImage:
    v = np.ones((size, size))
    box = max(4, size // 5)
    r0, c0 = rng.integers(1, size - box - 1, 2)
    v[r0:r0 + box + 1, c0] = 0
    v[r0:r0 + box + 1, c0 + box] = 0
    v[r0, c0:c0 + box] = 0
    v[r0 + box, c0:c0 + box + 1] = 0
    return SketchImage(v)


def test_encode_code_dimension_and_norm(rng):
    w = ModelWeights.init(NetConfig(), seed=3)
    z_s, z_l = encode(_sketch(rng), w)
    assert z_s.data.shape == (512,)
    assert abs(np.linalg.norm(z_s.data) - 1.0) < 1e-6
    assert z_l.data.shape == (w.config.encoder_channels[-1],)


def test_encode_deterministic(rng):
    w = ModelWeights.init(NetConfig(), seed=3)
    s = _sketch(rng)
    a, _ = encode(s, w)
    b, _ = encode(s, w)
    assert (a.data == b.data).all()


def test_encode_rejects_wrong_size(rng):
    w = ModelWeights.init(SMALL, seed=0)
    with pytest.raises(ShapeMismatch):
        encode(_sketch(rng, 64), w)


def test_predict_view_zero_weights_centered(rng):
    w = ModelWeights.init(SMALL, seed=1)
    w["head.fc2.w"].data = np.zeros_like(w["head.fc2.w"].data)
    w["head.fc2.b"].data = np.zeros_like(w["head.fc2.b"].data)
    _, z_l = encode(_sketch(rng, 16), w)
    pose = predict_view(z_l, w)
    assert pose.elevation == pytest.approx((-30 + 60) / 2)
    assert pose.azimuth == pytest.approx(180.0)
    assert pose.distance == SMALL.camera_distance


def test_predict_view_respects_ranges(rng):
    w = ModelWeights.init(SMALL, seed=2)
    for key in ("head.fc2.w",):
        w[key].data = w[key].data * 500.0  # force saturation
    for _ in range(1000):
        z_l = Tensor(rng.normal(size=(SMALL.encoder_channels[-1],)))
        pose = predict_view(z_l, w)
        assert -30.0 <= pose.elevation <= 60.0
        assert 0.0 <= pose.azimuth < 360.0


def test_viewpoint_gradient_through_head(rng):
    w = ModelWeights.init(SMALL, seed=4)
    gt = CameraPose(10.0, 200.0, SMALL.camera_distance)
    z_l = rng.normal(size=(1, SMALL.encoder_channels[-1]))

    def loss_for(weights):
        elev, azim = predict_view_batch(Tensor(z_l), weights)
        return viewpoint_loss_t(elev, azim, gt).sum()

    loss = loss_for(w)
    loss.backward()
    g = w["head.fc1.w"].grad
    flat_idx = rng.integers(0, g.size, size=8)
    eps = 1e-6
    for idx in flat_idx:
        orig = w["head.fc1.w"].data.reshape(-1)[idx]
        w["head.fc1.w"].data.reshape(-1)[idx] = orig + eps
        hi = loss_for(w).item()
        w["head.fc1.w"].data.reshape(-1)[idx] = orig - eps
        lo = loss_for(w).item()
        w["head.fc1.w"].data.reshape(-1)[idx] = orig
        fd = (hi - lo) / (2 * eps)
        if abs(fd) > 1e-8:
            assert g.reshape(-1)[idx] == pytest.approx(fd, rel=1e-3)


def test_view_code_periodicity_and_norm():
    w = ModelWeights.init(SMALL, seed=5)
    a = view_code(CameraPose(10.0, 370.0, 2.0), w)
    b = view_code(CameraPose(10.0, 10.0, 2.0), w)
    assert (a.data == b.data).all()
    assert abs(np.linalg.norm(a.data) - 1.0) < 1e-6


def test_view_code_distinct_poses():
    w = ModelWeights.init(SMALL, seed=6)
    a = view_code(CameraPose(0.0, 0.0, 2.0), w)
    b = view_code(CameraPose(0.0, 90.0, 2.0), w)
    assert not np.allclose(a.data, b.data)


def test_decode_zero_output_layer_is_template():
    w = ModelWeights.init(NetConfig(), seed=7)  # dec.fc2 initialized to zero
    tpl = template_mesh(w.config)
    z_s = Tensor(np.ones(512) / math.sqrt(512))
    z_v = Tensor(np.ones(512) / math.sqrt(512))
    mesh = decode_mesh(z_s, z_v, w)
    assert (mesh.vertices == tpl.mesh.vertices).all()
    assert mesh.num_vertices == 642
    assert mesh.num_faces == 1280


def test_decode_offsets_bounded(rng):
    w = ModelWeights.init(SMALL, seed=8)
    w["dec.fc2.w"].data = rng.normal(size=w["dec.fc2.w"].data.shape) * 50.0
    tpl = template_mesh(SMALL)
    z_s = Tensor(rng.normal(size=SMALL.code_dim))
    z_s = Tensor(z_s.data / np.linalg.norm(z_s.data))
    z_v = Tensor(np.ones(SMALL.code_dim) / math.sqrt(SMALL.code_dim))
    mesh = decode_mesh(z_s, z_v, w)
    assert np.abs(mesh.vertices - tpl.mesh.vertices).max() <= SMALL.max_offset + 1e-12


def test_decode_rejects_wrong_code_dim():
    w = ModelWeights.init(SMALL, seed=9)
    with pytest.raises(ShapeMismatch):
        decode_batch(Tensor(np.ones((1, 7))), Tensor(np.ones((1, SMALL.code_dim))), w, template_mesh(SMALL))


def test_discriminator_scores_shape(rng):
    w = ModelWeights.init(NetConfig(disc_stages=3), seed=10)
    for stage in range(3):
        res = stage_resolution(stage)
        imgs = Tensor(rng.random((5, res, res)))
        scores = discriminate(imgs, stage, w)
        assert scores.data.shape == (5,)
    with pytest.raises(StageResolutionMismatch):
        discriminate(Tensor(rng.random((2, 32, 32))), 0, w)


def test_discriminator_stage_append_preserves_scores(rng):
    cfg = NetConfig(disc_stages=1)
    w = ModelWeights.init(cfg, seed=11)
    imgs = Tensor(rng.random((4, 16, 16)))
    before = discriminate(imgs, 0, w).data.copy()
    w.add_discriminator_stage(1, np.random.default_rng(99))
    after = discriminate(imgs, 0, w).data
    assert (before == after).all()
    # the new stage is usable
    s1 = discriminate(Tensor(rng.random((4, 32, 32))), 1, w)
    assert s1.data.shape == (4,)


@pytest.mark.parametrize("kind", ["conv", "mlp"])
def test_discriminator_input_gradient_matches_fd(rng, kind):
    cfg = NetConfig(disc_kind=kind, disc_channels=(8, 4, 4), disc_mlp_hidden=32, disc_stages=1)
    w = ModelWeights.init(cfg, seed=12)
    imgs = rng.random((2, 16, 16))

    def score_sum(x):
        return discriminate(Tensor(x), 0, w).sum().item()

    x_t = Tensor(imgs.copy(), requires_grad=True)
    discriminate(x_t, 0, w).sum().backward()
    fd = central_difference(score_sum, imgs.copy(), eps=1e-6)
    assert np.isfinite(x_t.grad).all()
    errs = relative_errors(x_t.grad, fd)
    assert errs.size and errs.max() < 1e-4

    # the symbolic R1 value equals the true squared gradient norm
    scores, grad_sq = discriminate_with_input_grad(imgs, 0, w)
    expect = float((x_t.grad ** 2).sum()) / 2
    assert grad_sq.item() == pytest.approx(expect, rel=1e-10)
    assert (scores.data == discriminate(Tensor(imgs), 0, w).data).all()


@pytest.mark.parametrize("kind", ["conv", "mlp"])
def test_r1_parameter_gradient_matches_fd(rng, kind):
    cfg = NetConfig(disc_kind=kind, disc_channels=(4, 4, 4), disc_mlp_hidden=16, disc_stages=1)
    w = ModelWeights.init(cfg, seed=13)
    imgs = rng.random((2, 16, 16))

    def r1_value():
        _, gsq = discriminate_with_input_grad(imgs, 0, w)
        return gsq

    r1_value().backward()
    names = [n for n in w.discriminator_params() if n.endswith(".w")]
    eps = 1e-6
    checked = 0
    for name in names:
        p = w[name]
        if p.grad is None:
            continue
        for idx in rng.integers(0, p.data.size, size=3):
            orig = p.data.reshape(-1)[idx]
            p.data.reshape(-1)[idx] = orig + eps
            hi = r1_value().item()
            p.data.reshape(-1)[idx] = orig - eps
            lo = r1_value().item()
            p.data.reshape(-1)[idx] = orig
            fd = (hi - lo) / (2 * eps)
            if abs(fd) > 1e-7:
                assert p.grad.reshape(-1)[idx] == pytest.approx(fd, rel=5e-3, abs=1e-9)
                checked += 1
    assert checked > 0


def test_weights_save_load_bit_exact(tmp_path, rng):
    w = ModelWeights.init(SMALL, seed=14)
    path = tmp_path / "model.skf"
    w.save(path, extra={"note": 1}, extra_arrays={"probe": rng.normal(size=(3, 2))})
    back, extra, arrays = ModelWeights.load(path)
    assert extra == {"note": 1}
    assert set(back.params) == set(w.params)
    for name in w.params:
        assert (back[name].data == w[name].data).all()
        assert back[name].data.dtype == w[name].data.dtype
    assert arrays["probe"].shape == (3, 2)

    # save -> load -> forward is bit-identical
    s = _sketch(rng, 16)
    z1, _ = encode(s, w)
    z2, _ = encode(s, back)
    assert (z1.data == z2.data).all()


def test_full_pipeline_gradient_probe(rng):
    """d(total)/d(theta) through encode -> view -> code -> decode -> render -> losses."""
    cfg = SMALL
    w = ModelWeights.init(cfg, seed=15)
    w["dec.fc2.w"].data = rng.normal(size=w["dec.fc2.w"].data.shape) * 0.05
    # jitter biases off zero: with binary inputs the zero-bias init parks many
    # pre-activations exactly on the leaky-relu kink, where no two-sided
    # numerical derivative exists
    for name, p in w.params.items():
        if name.endswith(".b"):
            p.data = p.data + rng.normal(scale=1e-2, size=p.data.shape)
    tpl = template_mesh(cfg)
    intr = CameraIntrinsics(16, 16, 30.0)
    params = RasterParams(sigma=3e-4)
    loss_cfg = LossConfig(multiscale_resolutions=(8, 16), multiscale_weights=(1.0, 1.0))
    sketch = _sketch(np.random.default_rng(0), 16)
    target = Tensor((1.0 - sketch.values))
    gt = CameraPose(5.0, 130.0, cfg.camera_distance)

    def total():
        x = Tensor(1.0 - sketch.values[None, None, :, :])
        z_s, z_l = encode_batch(x, w)
        elev, azim = predict_view_batch(z_l, w)
        z_v = view_code_batch(elev, azim, w)
        verts = decode_batch(z_s, z_v, w, tpl)[0]
        rot = rotation_tensor(ad.reshape(elev, ()), ad.reshape(azim, ()))
        pose = CameraPose(0, 0, cfg.camera_distance)
        img = soft_silhouette_t(verts, tpl.faces, pose, intr, params, rotation=rot)
        l_sp = multiscale_silhouette_loss_t(img, target, loss_cfg)
        l_v = viewpoint_loss_t(elev, azim, gt).sum()
        return l_sp + 10.0 * l_v

    total().backward()
    names = sorted(w.generator_params())
    eps = 1e-5
    checked, ok = 0, 0
    rng2 = np.random.default_rng(77)
    while checked < 20:
        name = names[rng2.integers(len(names))]
        p = w[name]
        if p.grad is None or p.data.size == 0:
            continue
        idx = int(rng2.integers(p.data.size))
        analytic = p.grad.reshape(-1)[idx]
        orig = p.data.reshape(-1)[idx]
        p.data.reshape(-1)[idx] = orig + eps
        hi = total().item()
        p.data.reshape(-1)[idx] = orig - eps
        lo = total().item()
        p.data.reshape(-1)[idx] = orig
        fd = (hi - lo) / (2 * eps)
        if max(abs(fd), abs(analytic)) < 1e-6:
            continue  # below the magnitude threshold
        checked += 1
        if abs(analytic - fd) / max(abs(analytic), abs(fd)) < 1e-2:
            ok += 1
    assert ok >= 19, f"{ok}/20 probes within tolerance"
