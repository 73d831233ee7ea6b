/**
 * App wiring: orbitable scene view, sketch canvas overlay, generate/redo loop.
 * Orbiting locks while a stroke is in progress (the sketch belongs to one view)
 * and drawing locks while a generate request is pending.
 */

import { ApiClient } from "./api.js";
import { CanvasStroke } from "./sketch.js";
import { ViewerState } from "./state.js";
import { SceneViewer } from "./viewer.js";

const CANVAS_SIZE = 512;

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) {
        throw new Error(`missing element #${id}`);
    }
    return node as T;
}

function setStatus(text: string, isError = false): void {
    const status = el<HTMLDivElement>("status");
    status.textContent = text;
    status.className = isError ? "error" : "";
}

async function boot(): Promise<void> {
    const viewCanvas = el<HTMLCanvasElement>("view");
    const drawCanvas = el<HTMLCanvasElement>("draw");
    viewCanvas.width = viewCanvas.height = CANVAS_SIZE;
    drawCanvas.width = drawCanvas.height = CANVAS_SIZE;
    const ctx = drawCanvas.getContext("2d")!;

    const api = new ApiClient("");
    const viewer = new SceneViewer(viewCanvas);
    const state = new ViewerState(api, viewer);

    const strokes: CanvasStroke[] = [];
    let activeStroke: CanvasStroke | null = null;
    let drawMode = false;

    const redraw = () => {
        ctx.clearRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
        ctx.strokeStyle = "#111";
        ctx.lineCap = "round";
        ctx.lineJoin = "round";
        for (const s of strokes.concat(activeStroke ? [activeStroke] : [])) {
            ctx.lineWidth = s.brushWidth;
            ctx.beginPath();
            s.points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
            ctx.stroke();
        }
        viewer.render(state.orbit);
    };

    // orbit controls on the view canvas (disabled while sketching)
    let dragging = false;
    let last = { x: 0, y: 0 };
    viewCanvas.addEventListener("pointerdown", (e) => {
        if (drawMode) return;
        dragging = true;
        last = { x: e.offsetX, y: e.offsetY };
    });
    window.addEventListener("pointerup", () => (dragging = false));
    viewCanvas.addEventListener("pointermove", (e) => {
        if (!dragging || drawMode) return;
        const orbit = { ...state.orbit };
        orbit.azimuth -= (e.offsetX - last.x) * 0.5;
        orbit.elevation = Math.min(89, Math.max(-89, orbit.elevation + (e.offsetY - last.y) * 0.4));
        last = { x: e.offsetX, y: e.offsetY };
        state.setOrbit(orbit);
        redraw();
    });
    viewCanvas.addEventListener("wheel", (e) => {
        if (drawMode) return;
        e.preventDefault();
        const orbit = { ...state.orbit };
        orbit.distance = Math.min(30, Math.max(0.5, orbit.distance * (e.deltaY > 0 ? 1.1 : 0.9)));
        state.setOrbit(orbit);
        redraw();
    });

    // sketch input
    drawCanvas.addEventListener("pointerdown", (e) => {
        if (!drawMode || state.pending) return;
        activeStroke = { points: [{ x: e.offsetX, y: e.offsetY }], brushWidth: 3 };
    });
    drawCanvas.addEventListener("pointermove", (e) => {
        if (!activeStroke) return;
        activeStroke.points.push({ x: e.offsetX, y: e.offsetY });
        redraw();
    });
    window.addEventListener("pointerup", () => {
        if (activeStroke && activeStroke.points.length >= 2) {
            strokes.push(activeStroke);
        }
        activeStroke = null;
        redraw();
    });

    el<HTMLButtonElement>("mode").addEventListener("click", () => {
        drawMode = !drawMode;
        drawCanvas.style.pointerEvents = drawMode ? "auto" : "none";
        el<HTMLButtonElement>("mode").textContent = drawMode ? "orbit view" : "draw sketch";
        setStatus(drawMode ? "drawing locked to this view" : "orbit with drag / wheel");
    });

    el<HTMLButtonElement>("clear").addEventListener("click", () => {
        strokes.length = 0;
        redraw();
    });

    el<HTMLButtonElement>("generate").addEventListener("click", async () => {
        if (state.pending) return;
        const classLabel = el<HTMLSelectElement>("class").value;
        setStatus("generating...");
        const placed = await state.submitAndPlace(strokes, classLabel, CANVAS_SIZE);
        if (placed) {
            strokes.length = 0;
            setStatus(`placed ${placed.objectId} (${classLabel})`);
        } else {
            setStatus(`error: ${state.lastError}`, true);
        }
        redraw();
    });

    el<HTMLButtonElement>("redo").addEventListener("click", () => {
        setStatus(state.redo() ? "removed last object" : "nothing to redo");
        redraw();
    });

    el<HTMLInputElement>("scene-file").addEventListener("change", async (e) => {
        const file = (e.target as HTMLInputElement).files?.[0];
        if (!file) return;
        const text = await file.text();
        const sceneId = await state.loadScene(text);
        viewer.setScene(await api.sceneMesh(sceneId));
        setStatus(`scene ${sceneId} loaded`);
        redraw();
    });

    if (await api.health()) {
        setStatus("connected; load a scene OBJ to begin");
    } else {
        setStatus("service unreachable", true);
    }
    redraw();
}

boot().catch((err) => setStatus(String(err), true));
