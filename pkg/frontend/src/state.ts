/**
 * Viewer state and the generate/redo loop, kept free of DOM and three.js so
 * the protocol logic is unit-testable. The orbit pose stored here is the
 * single source of truth: it drives the rendered view and is sent verbatim
 * as the viewing pose of every generate request.
 */

import { ApiClient, GenerateResult, OrbitPose } from "./api.js";
import { CanvasStroke, rasterToPng, rasterizeStrokes } from "./sketch.js";

export interface PlacedObjectMirror {
    objectId: string;
    meshObj: string;
    transform: GenerateResult["transform"];
    classLabel: string;
}

export interface ViewerDisplay {
    /** mount a newly placed object (already transformed server-side coordinates) */
    addObject(obj: PlacedObjectMirror): void;
    /** unmount an object by id (redo) */
    removeObject(objectId: string): void;
}

const NULL_DISPLAY: ViewerDisplay = { addObject: () => {}, removeObject: () => {} };

export class ViewerState {
    orbit: OrbitPose = { elevation: 25, azimuth: 30, distance: 4 };
    sceneId: string | null = null;
    placed: PlacedObjectMirror[] = [];
    pending = false;
    lastError: string | null = null;

    constructor(
        private readonly api: ApiClient,
        private readonly display: ViewerDisplay = NULL_DISPLAY,
    ) {}

    setOrbit(orbit: OrbitPose): void {
        if (orbit.distance <= 0) {
            throw new Error("orbit distance must be positive");
        }
        this.orbit = { ...orbit, azimuth: ((orbit.azimuth % 360) + 360) % 360 };
    }

    async loadScene(objText: string): Promise<string> {
        this.sceneId = await this.api.uploadScene(objText);
        this.placed = [];
        return this.sceneId;
    }

    /**
     * Rasterize the strokes, POST a generate request with the current orbit
     * as the viewing pose, and mirror the returned object. On failure the
     * machine-readable code lands in lastError and nothing changes.
     */
    async submitAndPlace(strokes: CanvasStroke[], classLabel: string,
                         canvasSize: number): Promise<PlacedObjectMirror | null> {
        if (!this.sceneId) {
            throw new Error("no scene loaded");
        }
        if (this.pending) {
            throw new Error("a generate request is already in flight");
        }
        const png = rasterToPng(rasterizeStrokes(strokes, canvasSize));
        this.pending = true;
        this.lastError = null;
        try {
            const result = await this.api.generate({
                sceneId: this.sceneId,
                classLabel,
                viewPose: this.orbit,
                sketchPng: png,
            });
            const mirror: PlacedObjectMirror = {
                objectId: result.object_id,
                meshObj: result.mesh_obj,
                transform: result.transform,
                classLabel,
            };
            this.placed.push(mirror);
            this.display.addObject(mirror);
            return mirror;
        } catch (err) {
            this.lastError = err instanceof Error ? err.message : String(err);
            if (err && typeof err === "object" && "code" in err) {
                this.lastError = String((err as { code: unknown }).code);
            }
            return null;
        } finally {
            this.pending = false;
        }
    }

    /** Remove the last placed object locally and re-enable drawing. */
    redo(): boolean {
        const last = this.placed.pop();
        if (!last) {
            return false;
        }
        this.display.removeObject(last.objectId);
        return true;
    }
}
