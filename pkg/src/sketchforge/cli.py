"""Command-line entry points: dataset | train | eval | fit | generate | fuse |
place | serve | render. Exit code 0 on success, 1 with a diagnostic line on
operational failure, 2 on usage errors."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np


def _parse_view(text: str):
    from .geometry import CameraPose

    parts = [float(x) for x in text.split(",")]
    if len(parts) == 2:
        parts.append(2.732)
    if len(parts) != 3:
        raise ValueError("view must be 'elevation,azimuth[,distance]'")
    return CameraPose(*parts)


def cmd_dataset(args) -> int:
    from .dataset import DatasetSpec, generate_toy_dataset, save_dataset

    spec = DatasetSpec(count=args.count, families=tuple(args.families.split(",")),
                       image_size=args.image_size)
    samples = generate_toy_dataset(spec, seed=args.seed)
    save_dataset(samples, spec, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _load_samples(path: str, class_label: str | None):
    from .dataset import load_dataset

    samples, spec = load_dataset(path)
    if class_label:
        samples = [s for s in samples if s.label == class_label]
    return samples, spec


def _multiscale_for(image_size: int):
    from .losses import LossConfig

    res = tuple(r for r in (image_size // 4, image_size // 2, image_size) if r >= 8)
    return LossConfig(multiscale_resolutions=res, multiscale_weights=(1.0,) * len(res))


def _train_config(args, image_size: int):
    from .training import TrainConfig

    cfg = TrainConfig(steps=args.steps, seed=args.seed, image_size=image_size,
                      rps=not args.no_rps, sd=not args.no_sd,
                      loss_cfg=_multiscale_for(image_size))
    if args.batch_size:
        cfg = replace(cfg, batch_size=args.batch_size)
    if args.lr:
        cfg = replace(cfg, lr=args.lr)
    return cfg


def cmd_train(args) -> int:
    from .training import train

    samples, spec = _load_samples(args.dataset, args.class_label)
    if not samples:
        print("error: no samples (wrong --class?)", file=sys.stderr)
        return 1
    cfg = _train_config(args, spec.image_size)
    weights, metrics = train(cfg, samples, out_dir=args.out,
                             resume_from=args.resume)
    last = metrics[-1] if metrics else {}
    print(f"trained {len(metrics)} steps; final total {last.get('total', float('nan')):.4f}; "
          f"weights in {args.out}")
    return 0 if "error" not in last else 1


def cmd_eval(args) -> int:
    from .evaluation import evaluate, split_dataset
    from .networks import ModelWeights

    weights, _, _ = ModelWeights.load(args.weights)
    samples, _ = _load_samples(args.dataset, args.class_label)
    if args.test_count:
        _, samples = split_dataset(samples, args.test_count)
    report = evaluate(weights, samples, resolution=args.resolution)
    print(report.format_table())
    return 0


def cmd_fit(args) -> int:
    from .dataset import filled_silhouette
    from .losses import iou_loss
    from .networks import encode, predict_view, template_mesh, view_code, decode_mesh
    from .render import render_hard_silhouette
    from .training import TrainConfig, overfit_single_sample

    samples, spec = _load_samples(args.dataset, args.class_label)
    sample = samples[args.index]
    cfg = TrainConfig(seed=args.seed, image_size=spec.image_size, lr=args.lr,
                      loss_cfg=_multiscale_for(spec.image_size))
    weights, metrics = overfit_single_sample(sample, cfg, steps=args.steps)
    z_s, z_l = encode(sample.sketch, weights)
    pose = predict_view(z_l, weights)
    mesh = decode_mesh(z_s, view_code(pose, weights), weights, template_mesh(weights.config))
    rendered = render_hard_silhouette(mesh, pose, spec.intrinsics())
    iou = 1.0 - iou_loss(rendered.values, filled_silhouette(sample))
    print(f"overfit {args.steps} steps: silhouette IoU at supervision view = {iou:.4f}")
    return 0 if iou >= args.target else 1


def cmd_generate(args) -> int:
    import base64

    from .service import GenerateRequest, SceneStore, WeightsRegistry, handle_generate

    store = SceneStore(args.data_dir)
    scene_id = store.create_scene(Path(args.scene).read_bytes(), scene_id=args.scene_id)
    registry = WeightsRegistry({args.class_label: args.weights})
    req = GenerateRequest(scene_id=scene_id, class_label=args.class_label,
                          view_pose=_parse_view(args.view),
                          sketch_png=Path(args.sketch).read_bytes(),
                          upright=not args.full_rotation)
    resp = handle_generate(store, registry, req)
    out = Path(args.out or "generated.obj")
    out.write_text(resp.mesh_obj)
    print(json.dumps({"object_id": resp.object_id, "scene_id": scene_id,
                      "pred_pose": resp.to_dict()["pred_pose"],
                      "transform": resp.to_dict()["transform"],
                      "timings_ms": resp.timings_ms, "mesh": str(out)}, indent=1))
    return 0


def cmd_fuse(args) -> int:
    from .fusion import TsdfVolume, extract_mesh, integrate_depth, load_depth_sequence
    from .geometry import save_obj

    frames = load_depth_sequence(args.depth_dir)
    lo = np.array([float(x) for x in args.bounds.split(",")[:3]])
    hi = np.array([float(x) for x in args.bounds.split(",")[3:]])
    vol = TsdfVolume.for_box(lo, hi, args.voxel_size,
                             args.truncation if args.truncation else None)
    for f in frames:
        vol = integrate_depth(vol, f)
    mesh = extract_mesh(vol)
    save_obj(mesh, args.out)
    print(f"fused {len(frames)} frames -> {mesh.num_vertices} verts, "
          f"{mesh.num_faces} faces -> {args.out}")
    return 0


def cmd_place(args) -> int:
    from .fusion import load_scene_mesh
    from .geometry import load_obj, save_obj
    from .placement import PlacementTransform, place_object

    scene = load_scene_mesh(Path(args.scene).read_text())
    obj = load_obj(args.object)
    tf = PlacementTransform.from_json(Path(args.transform).read_text())
    scene, _ = place_object(obj, scene, tf)
    save_obj(scene.merged_mesh(), args.out)
    print(f"merged scene written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import SceneStore, WeightsRegistry, create_app

    store = SceneStore(args.data_dir)
    registry = WeightsRegistry(registry_file=args.registry)
    app = create_app(store, registry)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_render(args) -> int:
    from .geometry import CameraIntrinsics, load_obj
    from .images import silhouette_to_png_bytes
    from .render import RasterParams, render_hard_silhouette, render_soft_silhouette

    mesh = load_obj(args.mesh)
    pose = _parse_view(args.view)
    intr = CameraIntrinsics(args.size, args.size, args.fov)
    if args.mode == "hard":
        sil = render_hard_silhouette(mesh, pose, intr)
    else:
        sil = render_soft_silhouette(mesh, pose, intr, RasterParams(sigma=args.sigma))
    Path(args.out).write_bytes(silhouette_to_png_bytes(sil))
    print(f"rendered {args.mode} silhouette to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sketchforge",
                                description="sketch-to-3D modeling engine")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dataset", help="generate the procedural toy dataset")
    d.add_argument("--out", required=True)
    d.add_argument("--count", type=int, default=200)
    d.add_argument("--families", default="chair")
    d.add_argument("--image-size", type=int, default=64)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(fn=cmd_dataset)

    t = sub.add_parser("train", help="train the sketch-to-mesh model")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--class", dest="class_label", default=None)
    t.add_argument("--no-rps", action="store_true")
    t.add_argument("--no-sd", action="store_true")
    t.add_argument("--resume", default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate voxel IoU and viewpoint MAE")
    e.add_argument("--weights", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--class", dest="class_label", default=None)
    e.add_argument("--test-count", type=int, default=None)
    e.add_argument("--resolution", type=int, default=32)
    e.set_defaults(fn=cmd_eval)

    f = sub.add_parser("fit", help="single-sample overfit diagnostic")
    f.add_argument("--dataset", required=True)
    f.add_argument("--index", type=int, default=0)
    f.add_argument("--steps", type=int, default=500)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--lr", type=float, default=3e-4)
    f.add_argument("--target", type=float, default=0.0)
    f.add_argument("--class", dest="class_label", default=None)
    f.set_defaults(fn=cmd_fit)

    g = sub.add_parser("generate", help="sketch -> placed 3D model (offline)")
    g.add_argument("--weights", required=True)
    g.add_argument("--class", dest="class_label", required=True)
    g.add_argument("--scene", required=True)
    g.add_argument("--sketch", required=True)
    g.add_argument("--view", required=True, help="elevation,azimuth[,distance]")
    g.add_argument("--data-dir", default="./sketchforge-data")
    g.add_argument("--scene-id", default=None)
    g.add_argument("--out", default=None)
    g.add_argument("--full-rotation", action="store_true")
    g.set_defaults(fn=cmd_generate)

    fu = sub.add_parser("fuse", help="TSDF-fuse a depth sequence into a scene mesh")
    fu.add_argument("--depth-dir", required=True)
    fu.add_argument("--out", required=True)
    fu.add_argument("--voxel-size", type=float, default=0.04)
    fu.add_argument("--truncation", type=float, default=0.12)
    fu.add_argument("--bounds", default="-2,-2,-2,2,2,2")
    fu.set_defaults(fn=cmd_fuse)

    pl = sub.add_parser("place", help="place an object mesh into a scene")
    pl.add_argument("--scene", required=True)
    pl.add_argument("--object", required=True)
    pl.add_argument("--transform", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_place)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--registry", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8008)
    s.set_defaults(fn=cmd_serve)

    r = sub.add_parser("render", help="render a silhouette PNG for inspection")
    r.add_argument("--mesh", required=True)
    r.add_argument("--view", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--size", type=int, default=64)
    r.add_argument("--fov", type=float, default=30.0)
    r.add_argument("--mode", choices=("soft", "hard"), default="soft")
    r.add_argument("--sigma", type=float, default=1e-4)
    r.set_defaults(fn=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # operational failure -> diagnostic + exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
