/**
 * Round trip against the real HTTP service: upload a scene, draw, generate,
 * mirror the placed object, redo, and surface EmptySketch without mutation.
 */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ViewerState } from "../src/state.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;
const REPO = join(__dirname, "..", "..");

const FLOOR_OBJ = "v -5 0 -5\nv 5 0 -5\nv 5 0 5\nv -5 0 5\nf 1 2 3\nf 1 3 4\n";

const SQUARE_STROKES = [
    {
        points: [
            { x: 180, y: 160 }, { x: 330, y: 160 }, { x: 330, y: 330 },
            { x: 180, y: 330 }, { x: 180, y: 160 },
        ],
        brushWidth: 4,
    },
];

let server: ChildProcess | null = null;
let api: ApiClient;

describe("live service round trip", () => {
    beforeAll(async () => {
        const dir = mkdtempSync(join(tmpdir(), "skforge-ui-"));
        const weights = join(dir, "chair.skf");
        execFileSync("python3", ["-c", `
from sketchforge.networks import ModelWeights, NetConfig
cfg = NetConfig(image_size=32, encoder_channels=(4, 8), code_dim=32,
                head_hidden=16, view_code_hidden=16, decoder_hidden=24,
                template_subdivisions=1, disc_stages=1)
ModelWeights.init(cfg, seed=0).save(${JSON.stringify(weights)})
`], { cwd: REPO });
        const registry = join(dir, "registry.json");
        writeFileSync(registry, JSON.stringify({ chair: weights }));
        server = spawn("python3", [
            "-m", "sketchforge.cli", "serve",
            "--data-dir", join(dir, "data"),
            "--registry", registry,
            "--port", String(PORT),
        ], { cwd: REPO, stdio: "inherit" });

        api = new ApiClient(BASE);
        const deadline = Date.now() + 60_000;
        while (Date.now() < deadline) {
            if (await api.health()) {
                return;
            }
            await new Promise((r) => setTimeout(r, 500));
        }
        throw new Error("service did not come up");
    }, 90_000);

    afterAll(() => {
        server?.kill();
    });

    it("draw -> generate -> object appears with the returned transform", async () => {
        const state = new ViewerState(api);
        state.setOrbit({ elevation: 30, azimuth: 45, distance: 4 });
        const sceneId = await state.loadScene(FLOOR_OBJ);
        expect(sceneId).toBeTruthy();

        const placed = await state.submitAndPlace(SQUARE_STROKES, "chair", 512);
        expect(state.lastError).toBeNull();
        expect(placed).not.toBeNull();
        expect(state.placed).toHaveLength(1);
        expect(placed!.meshObj).toContain("v ");
        expect(placed!.transform.rotation).toHaveLength(9);
        expect(placed!.transform.scale).toBeGreaterThan(0);

        // the server-side merged mesh grew by the object's faces
        const merged = await (await fetch(`${BASE}/api/scenes/${sceneId}/merged.obj`)).text();
        const sceneFaces = FLOOR_OBJ.split("\n").filter((l) => l.startsWith("f ")).length;
        const objFaces = placed!.meshObj.split("\n").filter((l) => l.startsWith("f ")).length;
        const mergedFaces = merged.split("\n").filter((l) => l.startsWith("f ")).length;
        expect(mergedFaces).toBe(sceneFaces + objFaces);
    }, 60_000);

    it("redo restores the local state", async () => {
        const state = new ViewerState(api);
        state.setOrbit({ elevation: 30, azimuth: 0, distance: 4 });
        await state.loadScene(FLOOR_OBJ);
        await state.submitAndPlace(SQUARE_STROKES, "chair", 512);
        expect(state.placed).toHaveLength(1);
        expect(state.redo()).toBe(true);
        expect(state.placed).toHaveLength(0);
        expect(state.redo()).toBe(false);
    }, 60_000);

    it("surfaces EmptySketch without scene mutation", async () => {
        const state = new ViewerState(api);
        state.setOrbit({ elevation: 30, azimuth: 0, distance: 4 });
        const sceneId = await state.loadScene(FLOOR_OBJ);
        // strokes entirely outside the canvas rasterize to a blank sketch
        const offscreen = [{ points: [{ x: -100, y: -100 }, { x: -50, y: -50 }], brushWidth: 3 }];
        const placed = await state.submitAndPlace(offscreen, "chair", 512);
        expect(placed).toBeNull();
        expect(state.lastError).toBe("EmptySketch");
        expect(state.placed).toHaveLength(0);
        const merged = await (await fetch(`${BASE}/api/scenes/${sceneId}/merged.obj`)).text();
        const mergedFaces = merged.split("\n").filter((l) => l.startsWith("f ")).length;
        expect(mergedFaces).toBe(2); // floor only
    }, 60_000);

    it("unknown class code is surfaced verbatim", async () => {
        const state = new ViewerState(api);
        await state.loadScene(FLOOR_OBJ);
        const placed = await state.submitAndPlace(SQUARE_STROKES, "sofa", 512);
        expect(placed).toBeNull();
        expect(state.lastError).toBe("UnknownClass");
    }, 60_000);
});
