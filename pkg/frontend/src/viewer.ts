/**
 * three.js scene view with a custom orbit control that mirrors the server's
 * camera convention exactly: world up +Y, camera position
 * R_y(-azimuth) @ (0, d sin(elevation), d cos(elevation)), looking at the origin.
 */

import * as THREE from "three";
import { OrbitPose, PlacementTransform } from "./api.js";
import { parseOBJ } from "./obj.js";
import { PlacedObjectMirror } from "./state.js";

const DEG = Math.PI / 180;

export function orbitCameraPosition(pose: OrbitPose): THREE.Vector3 {
    const e = pose.elevation * DEG;
    const a = pose.azimuth * DEG;
    const y = pose.distance * Math.sin(e);
    const r = pose.distance * Math.cos(e);
    // R_y(-a) applied to (0, y, r)
    return new THREE.Vector3(r * Math.sin(-a), y, r * Math.cos(-a));
}

function meshFromObj(objText: string, color: number): THREE.Mesh {
    const parsed = parseOBJ(objText);
    const geo = new THREE.BufferGeometry();
    geo.setAttribute("position", new THREE.BufferAttribute(parsed.positions, 3));
    geo.setIndex(new THREE.BufferAttribute(parsed.indices, 1));
    geo.computeVertexNormals();
    const mat = new THREE.MeshLambertMaterial({ color, side: THREE.DoubleSide });
    return new THREE.Mesh(geo, mat);
}

function applyTransform(mesh: THREE.Mesh, tf: PlacementTransform): void {
    const r = tf.rotation;
    const m = new THREE.Matrix4();
    // row-major 3x3 into a column-major Matrix4, with uniform scale and translation
    m.set(
        r[0] * tf.scale, r[1] * tf.scale, r[2] * tf.scale, tf.translation[0],
        r[3] * tf.scale, r[4] * tf.scale, r[5] * tf.scale, tf.translation[1],
        r[6] * tf.scale, r[7] * tf.scale, r[8] * tf.scale, tf.translation[2],
        0, 0, 0, 1,
    );
    mesh.applyMatrix4(m);
}

export class SceneViewer {
    readonly renderer: THREE.WebGLRenderer;
    readonly scene = new THREE.Scene();
    readonly camera: THREE.PerspectiveCamera;
    private sceneMesh: THREE.Mesh | null = null;
    private objects = new Map<string, THREE.Mesh>();

    constructor(canvas: HTMLCanvasElement, fovDeg = 30) {
        this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
        this.camera = new THREE.PerspectiveCamera(fovDeg, canvas.width / canvas.height, 0.01, 100);
        this.scene.background = new THREE.Color(0x10131a);
        const key = new THREE.DirectionalLight(0xffffff, 2.2);
        key.position.set(3, 6, 4);
        this.scene.add(key);
        this.scene.add(new THREE.AmbientLight(0x8899aa, 1.2));
        this.scene.add(new THREE.GridHelper(10, 20, 0x334455, 0x222c38));
    }

    setScene(objText: string): void {
        if (this.sceneMesh) {
            this.scene.remove(this.sceneMesh);
        }
        this.sceneMesh = meshFromObj(objText, 0x7f8ea3);
        this.scene.add(this.sceneMesh);
    }

    addObject(obj: PlacedObjectMirror): void {
        const mesh = meshFromObj(obj.meshObj, 0x4caf7d);
        applyTransform(mesh, obj.transform);
        this.objects.set(obj.objectId, mesh);
        this.scene.add(mesh);
    }

    removeObject(objectId: string): void {
        const mesh = this.objects.get(objectId);
        if (mesh) {
            this.scene.remove(mesh);
            this.objects.delete(objectId);
        }
    }

    render(pose: OrbitPose): void {
        this.camera.position.copy(orbitCameraPosition(pose));
        this.camera.up.set(0, 1, 0);
        this.camera.lookAt(0, 0, 0);
        this.renderer.render(this.scene, this.camera);
    }
}
