import json
from pathlib import Path

import numpy as np
import pytest

from sketchforge.cli import main
from sketchforge.geometry import load_obj, save_obj, icosphere
from sketchforge.images import sketch_to_png_bytes, SketchImage
from sketchforge.networks import ModelWeights, NetConfig

FLOOR_OBJ = "v -5 0 -5\nv 5 0 -5\nv 5 0 5\nv -5 0 5\nf 1 2 3\nf 1 3 4\n"


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "toy"
    rc = main(["dataset", "--out", str(out), "--count", "5",
               "--families", "chair", "--image-size", "32", "--seed", "4"])
    assert rc == 0
    return out


def test_dataset_command_output(dataset_dir):
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    assert len(manifest["samples"]) == 5
    assert (dataset_dir / "obj" / "00000.obj").exists()
    assert (dataset_dir / "sketch" / "00000.png").exists()


def test_train_eval_roundtrip(tmp_path, dataset_dir):
    run = tmp_path / "run"
    rc = main(["train", "--dataset", str(dataset_dir), "--out", str(run),
               "--steps", "3", "--seed", "7", "--batch-size", "2"])
    assert rc == 0
    assert (run / "metrics.jsonl").exists()
    assert (run / "weights.skf").exists()

    rc = main(["eval", "--weights", str(run / "weights.skf"),
               "--dataset", str(dataset_dir), "--resolution", "8"])
    assert rc == 0


def test_train_determinism_cli(tmp_path, dataset_dir, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        rc = main(["train", "--dataset", str(dataset_dir), "--out", str(out),
                   "--steps", "3", "--seed", "9", "--batch-size", "2"])
        assert rc == 0
    assert (a / "metrics.jsonl").read_text() == (b / "metrics.jsonl").read_text()


def test_generate_command(tmp_path, dataset_dir):
    w = ModelWeights.init(NetConfig(image_size=32, encoder_channels=(4, 8), code_dim=32,
                                    head_hidden=16, view_code_hidden=16, decoder_hidden=24,
                                    template_subdivisions=1, disc_stages=1), seed=0)
    weights = tmp_path / "w.skf"
    w.save(weights)
    scene = tmp_path / "scene.obj"
    scene.write_text(FLOOR_OBJ)
    sketch = tmp_path / "sketch.png"
    v = np.ones((48, 48))
    v[10:38, 12] = 0
    v[10:38, 36] = 0
    v[10, 12:36] = 0
    v[37, 12:37] = 0
    sketch.write_bytes(sketch_to_png_bytes(SketchImage(v)))
    out = tmp_path / "gen.obj"
    rc = main(["generate", "--weights", str(weights), "--class", "chair",
               "--scene", str(scene), "--sketch", str(sketch),
               "--view", "30,45,4", "--data-dir", str(tmp_path / "data"),
               "--out", str(out)])
    assert rc == 0
    assert load_obj(out).num_vertices == 42  # template at subdivision 1


def test_generate_missing_weights_exits_1(tmp_path, capsys):
    scene = tmp_path / "scene.obj"
    scene.write_text(FLOOR_OBJ)
    sketch = tmp_path / "s.png"
    v = np.ones((32, 32))
    v[8:24, 8] = 0
    v[8:24, 24] = 0
    v[8, 8:24] = 0
    v[23, 8:25] = 0
    sketch.write_bytes(sketch_to_png_bytes(SketchImage(v)))
    rc = main(["generate", "--weights", str(tmp_path / "missing.skf"), "--class", "chair",
               "--scene", str(scene), "--sketch", str(sketch), "--view", "0,0,3",
               "--data-dir", str(tmp_path / "d")])
    assert rc == 1
    assert "UnknownClass" in capsys.readouterr().err


def test_render_command(tmp_path):
    mesh = tmp_path / "m.obj"
    save_obj(icosphere(2, radius=0.5), mesh)
    out = tmp_path / "sil.png"
    rc = main(["render", "--mesh", str(mesh), "--view", "20,40", "--out", str(out),
               "--size", "32", "--mode", "hard"])
    assert rc == 0
    from sketchforge.images import grayscale_from_png_bytes
    img = grayscale_from_png_bytes(out.read_bytes())
    assert img.shape == (32, 32)
    assert (img == 255).any() and (img == 0).any()


def test_fuse_and_place_commands(tmp_path):
    import math
    from sketchforge.fusion import DepthFrame, save_depth_sequence
    from sketchforge.geometry import CameraIntrinsics
    from sketchforge.placement import PlacementTransform

    # one fronto-parallel wall at 1.5m
    intr = CameraIntrinsics(32, 32, 60.0)
    frames = [DepthFrame(np.full((32, 32), 1.5), intr, np.eye(4))]
    seq = tmp_path / "seq"
    save_depth_sequence(frames, seq)
    fused = tmp_path / "scene.obj"
    rc = main(["fuse", "--depth-dir", str(seq), "--out", str(fused),
               "--voxel-size", "0.1", "--truncation", "0.3",
               "--bounds=-1,-1,0,1,1,2"])
    assert rc == 0
    scene_mesh = load_obj(fused)
    assert scene_mesh.num_faces > 0
    assert abs(scene_mesh.vertices[:, 2].mean() - 1.5) < 0.15

    obj = tmp_path / "obj.obj"
    save_obj(icosphere(1, radius=0.2), obj)
    tf = tmp_path / "tf.json"
    tf.write_text(PlacementTransform(np.eye(3), np.array([0.0, 0.0, 1.0]), 1.0).to_json())
    merged = tmp_path / "merged.obj"
    rc = main(["place", "--scene", str(fused), "--object", str(obj),
               "--transform", str(tf), "--out", str(merged)])
    assert rc == 0
    assert load_obj(merged).num_faces == scene_mesh.num_faces + 80


def test_fit_command(tmp_path, dataset_dir):
    rc = main(["fit", "--dataset", str(dataset_dir), "--index", "0",
               "--steps", "5", "--lr", "1e-3"])
    assert rc == 0


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # missing required args
    assert exc.value.code == 2
