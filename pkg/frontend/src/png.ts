/**
 * Minimal 8-bit grayscale PNG encoder with stored (uncompressed) deflate
 * blocks. No dependencies, works in both browser and node.
 */

const SIGNATURE = new Uint8Array([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

const CRC_TABLE = (() => {
    const table = new Uint32Array(256);
    for (let n = 0; n < 256; n++) {
        let c = n;
        for (let k = 0; k < 8; k++) {
            c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
        }
        table[n] = c >>> 0;
    }
    return table;
})();

function crc32(data: Uint8Array): number {
    let crc = 0xffffffff;
    for (let i = 0; i < data.length; i++) {
        crc = CRC_TABLE[(crc ^ data[i]) & 0xff] ^ (crc >>> 8);
    }
    return (crc ^ 0xffffffff) >>> 0;
}

function adler32(data: Uint8Array): number {
    let a = 1;
    let b = 0;
    for (let i = 0; i < data.length; i++) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return ((b << 16) | a) >>> 0;
}

function writeU32(target: Uint8Array, offset: number, value: number): void {
    target[offset] = (value >>> 24) & 0xff;
    target[offset + 1] = (value >>> 16) & 0xff;
    target[offset + 2] = (value >>> 8) & 0xff;
    target[offset + 3] = value & 0xff;
}

function chunk(type: string, body: Uint8Array): Uint8Array {
    const out = new Uint8Array(12 + body.length);
    writeU32(out, 0, body.length);
    for (let i = 0; i < 4; i++) {
        out[4 + i] = type.charCodeAt(i);
    }
    out.set(body, 8);
    writeU32(out, 8 + body.length, crc32(out.subarray(4, 8 + body.length)));
    return out;
}

/** zlib stream made of stored-deflate blocks (max 65535 bytes each). */
function zlibStored(raw: Uint8Array): Uint8Array {
    const blocks = Math.max(1, Math.ceil(raw.length / 65535));
    const out = new Uint8Array(2 + blocks * 5 + raw.length + 4);
    out[0] = 0x78;
    out[1] = 0x01;
    let pos = 2;
    for (let b = 0; b < blocks; b++) {
        const start = b * 65535;
        const len = Math.min(65535, raw.length - start);
        out[pos++] = b === blocks - 1 ? 1 : 0; // BFINAL, BTYPE=00
        out[pos++] = len & 0xff;
        out[pos++] = (len >>> 8) & 0xff;
        out[pos++] = ~len & 0xff;
        out[pos++] = (~len >>> 8) & 0xff;
        out.set(raw.subarray(start, start + len), pos);
        pos += len;
    }
    writeU32(out, pos, adler32(raw));
    return out;
}

/** Encode a row-major grayscale image (0..255 per pixel) as PNG bytes. */
export function encodeGrayPng(pixels: Uint8Array, width: number, height: number): Uint8Array {
    if (pixels.length !== width * height) {
        throw new Error(`pixel count ${pixels.length} != ${width}x${height}`);
    }
    const ihdr = new Uint8Array(13);
    writeU32(ihdr, 0, width);
    writeU32(ihdr, 4, height);
    ihdr[8] = 8; // bit depth
    ihdr[9] = 0; // grayscale
    // compression/filter/interlace all 0

    const raw = new Uint8Array(height * (width + 1));
    for (let y = 0; y < height; y++) {
        raw[y * (width + 1)] = 0; // filter: none
        raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
    }
    const parts = [
        SIGNATURE,
        chunk("IHDR", ihdr),
        chunk("IDAT", zlibStored(raw)),
        chunk("IEND", new Uint8Array(0)),
    ];
    const total = parts.reduce((n, p) => n + p.length, 0);
    const out = new Uint8Array(total);
    let pos = 0;
    for (const p of parts) {
        out.set(p, pos);
        pos += p.length;
    }
    return out;
}
