"""HTTP facade and persistence: scene store, per-class weights registry, and
the sketch-to-placed-model endpoint.

Store layout under the data directory:
    scenes/<scene_id>/scene.obj
    scenes/<scene_id>/objects/<object_id>.obj
    scenes/<scene_id>/transforms.json     (one row per placed object)

Generate requests never mutate weights; scene mutations serialize per scene id.
"""

from __future__ import annotations

import base64
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .fusion import PlacedObject, SceneDocument
from .geometry import CameraIntrinsics, CameraPose, Mesh, read_obj, write_obj
from .images import EmptySketch, grayscale_from_png_bytes
from .networks import ModelWeights, decode_mesh, encode, predict_view, template_mesh, view_code
from .placement import (
    NoIntersection,
    PlacementTransform,
    canonical_height_of,
    compute_rotation,
    estimate_offset,
    place_object,
    preprocess_sketch,
)


class UnknownScene(KeyError):
    pass


class UnknownClass(KeyError):
    pass


ERROR_CODES = {
    UnknownScene: "UnknownScene",
    UnknownClass: "UnknownClass",
    EmptySketch: "EmptySketch",
    NoIntersection: "NoIntersection",
}


@dataclass
class GenerateRequest:
    scene_id: str
    class_label: str
    view_pose: CameraPose
    sketch_png: bytes
    upright: bool = True
    fov_deg: float = 30.0


@dataclass
class GenerateResponse:
    object_id: str
    mesh_obj: str
    pred_pose: CameraPose
    transform: PlacementTransform
    timings_ms: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "mesh_obj": self.mesh_obj,
            "pred_pose": {"elevation": self.pred_pose.elevation,
                          "azimuth": self.pred_pose.azimuth,
                          "distance": self.pred_pose.distance},
            "transform": json.loads(self.transform.to_json()),
            "timings_ms": self.timings_ms,
        }


class SceneStore:
    """Directory-backed scene persistence with per-scene write locks."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "scenes").mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, scene_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(scene_id, threading.Lock())

    def _scene_dir(self, scene_id: str) -> Path:
        d = self.root / "scenes" / scene_id
        if not d.exists():
            raise UnknownScene(scene_id)
        return d

    def scene_ids(self) -> list[str]:
        return sorted(p.name for p in (self.root / "scenes").iterdir() if p.is_dir())

    def create_scene(self, obj_data: bytes | str, scene_id: str | None = None) -> str:
        mesh = read_obj(obj_data)
        scene_id = scene_id or uuid.uuid4().hex[:12]
        d = self.root / "scenes" / scene_id
        (d / "objects").mkdir(parents=True, exist_ok=True)
        (d / "scene.obj").write_text(write_obj(mesh))
        (d / "transforms.json").write_text("[]")
        return scene_id

    def scene_mesh_obj(self, scene_id: str) -> str:
        return (self._scene_dir(scene_id) / "scene.obj").read_text()

    def load_scene(self, scene_id: str) -> SceneDocument:
        d = self._scene_dir(scene_id)
        doc = SceneDocument(scene_id, read_obj((d / "scene.obj").read_text()))
        for row in json.loads((d / "transforms.json").read_text()):
            mesh = read_obj((d / "objects" / f"{row['object_id']}.obj").read_text())
            doc.placed.append(PlacedObject(
                object_id=row["object_id"],
                mesh=mesh,
                rotation=np.asarray(row["transform"]["rotation"]).reshape(3, 3),
                translation=np.asarray(row["transform"]["translation"]),
                scale=float(row["transform"]["scale"]),
                label=row.get("label", ""),
                provenance=row.get("provenance", {}),
            ))
        return doc

    def persist_object(self, scene_id: str, placed: PlacedObject) -> None:
        d = self._scene_dir(scene_id)
        with self._lock(scene_id):
            (d / "objects" / f"{placed.object_id}.obj").write_text(write_obj(placed.mesh))
            rows = json.loads((d / "transforms.json").read_text())
            rows.append({
                "object_id": placed.object_id,
                "label": placed.label,
                "transform": {
                    "rotation": [float(x) for x in placed.rotation.reshape(-1)],
                    "translation": [float(x) for x in placed.translation],
                    "scale": placed.scale,
                },
                "provenance": placed.provenance,
            })
            tmp = d / "transforms.json.tmp"
            tmp.write_text(json.dumps(rows, indent=1))
            tmp.replace(d / "transforms.json")  # atomic: concurrent readers never see partial writes

    def merged_mesh_obj(self, scene_id: str) -> str:
        return write_obj(self.load_scene(scene_id).merged_mesh())


class WeightsRegistry:
    """Class label -> weights file mapping; snapshots are immutable after load."""

    def __init__(self, mapping: dict[str, str] | None = None, registry_file=None):
        if registry_file is not None:
            mapping = json.loads(Path(registry_file).read_text())
        self.mapping = dict(mapping or {})
        self._cache: dict[str, ModelWeights] = {}
        self._guard = threading.Lock()

    def get(self, class_label: str) -> ModelWeights:
        if class_label not in self.mapping:
            raise UnknownClass(class_label)
        with self._guard:
            if class_label not in self._cache:
                path = Path(self.mapping[class_label])
                if not path.exists():
                    raise UnknownClass(f"{class_label}: weights file {path} missing")
                self._cache[class_label], _, _ = ModelWeights.load(path)
            return self._cache[class_label]


def handle_generate(store: SceneStore, registry: WeightsRegistry,
                    req: GenerateRequest) -> GenerateResponse:
    """Preprocess -> encode -> predict view -> decode -> place; stores the object."""
    t_start = time.perf_counter()
    timings: dict[str, float] = {}

    def mark(name: str, t0: float) -> float:
        t1 = time.perf_counter()
        timings[name] = (t1 - t0) * 1000.0
        return t1

    w = registry.get(req.class_label)
    scene = store.load_scene(req.scene_id)
    t = mark("load", t_start)

    raw = grayscale_from_png_bytes(req.sketch_png)
    pre = preprocess_sketch(raw, out_size=w.config.image_size)
    t = mark("preprocess", t)

    z_s, z_l = encode(pre.sketch, w)
    pred_pose = predict_view(z_l, w)
    t = mark("encode", t)

    mesh = decode_mesh(z_s, view_code(pred_pose, w), w, template_mesh(w.config))
    t = mark("decode", t)

    intr = CameraIntrinsics(raw.shape[1], raw.shape[0], req.fov_deg)
    dx, dy, dz, ds = estimate_offset(req.view_pose, scene, pre.bbox, intr,
                                     canonical_height_of(mesh))
    rot = compute_rotation(pred_pose, req.view_pose, upright=req.upright)
    tf = PlacementTransform(rot, np.array([dx, dy, dz]), ds)
    scene, placed = place_object(mesh, scene, tf, label=req.class_label,
                                 provenance={"pred_pose": {"elevation": pred_pose.elevation,
                                                           "azimuth": pred_pose.azimuth,
                                                           "distance": pred_pose.distance}})
    store.persist_object(req.scene_id, placed)
    t = mark("place", t)
    timings["total"] = (time.perf_counter() - t_start) * 1000.0

    effective = PlacementTransform(placed.rotation, placed.translation, placed.scale)
    return GenerateResponse(placed.object_id, write_obj(mesh), pred_pose, effective, timings)


# ---------------------------------------------------------------------------
# HTTP app

class PoseModel(BaseModel):
    elevation: float
    azimuth: float
    distance: float = 2.732


class GenerateModel(BaseModel):
    scene_id: str
    class_label: str
    view_pose: PoseModel
    sketch_png_base64: str
    upright: bool = True
    fov_deg: float = 30.0


def create_app(store: SceneStore, registry: WeightsRegistry) -> FastAPI:
    app = FastAPI(title="sketchforge")

    def error_response(exc: Exception, status: int):
        code = ERROR_CODES.get(type(exc), type(exc).__name__)
        return JSONResponse({"error": {"code": code, "message": str(exc)}}, status_code=status)

    @app.get("/api/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/api/scenes")
    async def upload_scene(request: Request):
        data = await request.body()
        try:
            scene_id = store.create_scene(data)
        except Exception as exc:
            return error_response(exc, 400)
        return {"scene_id": scene_id}

    @app.get("/api/scenes/{scene_id}/mesh.obj", response_class=PlainTextResponse)
    def scene_mesh(scene_id: str):
        try:
            return store.scene_mesh_obj(scene_id)
        except UnknownScene as exc:
            return error_response(exc, 404)

    @app.get("/api/scenes/{scene_id}/merged.obj", response_class=PlainTextResponse)
    def merged_mesh(scene_id: str):
        try:
            return store.merged_mesh_obj(scene_id)
        except UnknownScene as exc:
            return error_response(exc, 404)

    @app.post("/api/generate")
    def generate(model: GenerateModel):
        try:
            req = GenerateRequest(
                scene_id=model.scene_id,
                class_label=model.class_label,
                view_pose=CameraPose(model.view_pose.elevation, model.view_pose.azimuth,
                                     model.view_pose.distance),
                sketch_png=base64.b64decode(model.sketch_png_base64),
                upright=model.upright,
                fov_deg=model.fov_deg,
            )
            resp = handle_generate(store, registry, req)
        except (UnknownScene, UnknownClass) as exc:
            return error_response(exc, 404)
        except (EmptySketch, NoIntersection) as exc:
            return error_response(exc, 400)
        except ValueError as exc:
            return error_response(exc, 400)
        return resp.to_dict()

    return app
