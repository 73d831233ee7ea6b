/**
 * Stroke capture and deterministic rasterization. The submitted sketch is
 * rasterized here (not read back from the display canvas) so the server and
 * the screen always see the same pixels.
 */

import { encodeGrayPng } from "./png.js";

export interface CanvasStroke {
    /** ordered polyline in pixel coordinates */
    points: Array<{ x: number; y: number }>;
    brushWidth: number;
}

export class NoStrokes extends Error {}

export interface SketchRaster {
    width: number;
    height: number;
    /** 0 = stroke, 255 = background, row-major */
    gray: Uint8Array;
}

function stampDisk(gray: Uint8Array, size: number, cx: number, cy: number, radius: number): void {
    const r = Math.max(radius, 0.5);
    const x0 = Math.max(0, Math.floor(cx - r));
    const x1 = Math.min(size - 1, Math.ceil(cx + r));
    const y0 = Math.max(0, Math.floor(cy - r));
    const y1 = Math.min(size - 1, Math.ceil(cy + r));
    for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
            const dx = x + 0.5 - cx;
            const dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= r * r) {
                gray[y * size + x] = 0;
            }
        }
    }
}

/** Rasterize strokes onto a white size x size grid; stroke pixels become 0. */
export function rasterizeStrokes(strokes: CanvasStroke[], size: number): SketchRaster {
    const usable = strokes.filter((s) => s.points.length >= 2);
    if (usable.length === 0) {
        throw new NoStrokes("at least one stroke with two points is required");
    }
    const gray = new Uint8Array(size * size).fill(255);
    for (const stroke of usable) {
        const radius = Math.max(stroke.brushWidth / 2, 0.5);
        for (let i = 0; i + 1 < stroke.points.length; i++) {
            const a = stroke.points[i];
            const b = stroke.points[i + 1];
            const length = Math.hypot(b.x - a.x, b.y - a.y);
            const steps = Math.max(1, Math.ceil(length * 2)); // <= 0.5 px spacing
            for (let s = 0; s <= steps; s++) {
                const t = s / steps;
                stampDisk(gray, size, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), radius);
            }
        }
    }
    return { width: size, height: size, gray };
}

export function rasterToPng(raster: SketchRaster): Uint8Array {
    return encodeGrayPng(raster.gray, raster.width, raster.height);
}

export function strokeBounds(strokes: CanvasStroke[]): { x0: number; y0: number; x1: number; y1: number } {
    let x0 = Infinity;
    let y0 = Infinity;
    let x1 = -Infinity;
    let y1 = -Infinity;
    for (const s of strokes) {
        for (const p of s.points) {
            x0 = Math.min(x0, p.x);
            y0 = Math.min(y0, p.y);
            x1 = Math.max(x1, p.x);
            y1 = Math.max(y1, p.y);
        }
    }
    return { x0, y0, x1, y1 };
}
