import { inflateSync } from "node:zlib";
import { describe, expect, it } from "vitest";

import { encodeGrayPng } from "../src/png.js";

function readU32(data: Uint8Array, offset: number): number {
    return ((data[offset] << 24) | (data[offset + 1] << 16) | (data[offset + 2] << 8) | data[offset + 3]) >>> 0;
}

function decodeGrayPng(data: Uint8Array): { width: number; height: number; gray: Uint8Array } {
    expect(Array.from(data.subarray(0, 8))).toEqual([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
    let pos = 8;
    let width = 0;
    let height = 0;
    const idat: Uint8Array[] = [];
    while (pos < data.length) {
        const len = readU32(data, pos);
        const type = String.fromCharCode(...data.subarray(pos + 4, pos + 8));
        const body = data.subarray(pos + 8, pos + 8 + len);
        if (type === "IHDR") {
            width = readU32(body, 0);
            height = readU32(body, 4);
            expect(body[8]).toBe(8);
            expect(body[9]).toBe(0);
        } else if (type === "IDAT") {
            idat.push(body);
        }
        pos += 12 + len;
    }
    const stream = Buffer.concat(idat.map((b) => Buffer.from(b)));
    const raw = inflateSync(stream);
    const gray = new Uint8Array(width * height);
    for (let y = 0; y < height; y++) {
        expect(raw[y * (width + 1)]).toBe(0); // filter byte
        gray.set(raw.subarray(y * (width + 1) + 1, (y + 1) * (width + 1)), y * width);
    }
    return { width, height, gray };
}

describe("encodeGrayPng", () => {
    it("round-trips pixels through a real inflate", () => {
        const w = 37;
        const h = 23;
        const pixels = new Uint8Array(w * h);
        for (let i = 0; i < pixels.length; i++) {
            pixels[i] = (i * 31) % 256;
        }
        const png = encodeGrayPng(pixels, w, h);
        const back = decodeGrayPng(png);
        expect(back.width).toBe(w);
        expect(back.height).toBe(h);
        expect(Array.from(back.gray)).toEqual(Array.from(pixels));
    });

    it("handles images larger than one deflate block", () => {
        const size = 300; // 300*301 raw bytes > 65535
        const pixels = new Uint8Array(size * size).fill(200);
        const back = decodeGrayPng(encodeGrayPng(pixels, size, size));
        expect(back.gray.every((v) => v === 200)).toBe(true);
    });

    it("rejects mismatched dimensions", () => {
        expect(() => encodeGrayPng(new Uint8Array(10), 3, 4)).toThrow();
    });
});
