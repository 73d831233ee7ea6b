/** Wavefront OBJ parsing for display (triangles, positions only). */

export interface ParsedMesh {
    positions: Float32Array;
    indices: Uint32Array;
}

export function parseOBJ(objText: string): ParsedMesh {
    const positions: number[] = [];
    const indices: number[] = [];
    for (const line of objText.split("\n")) {
        const parts = line.trim().split(/\s+/);
        if (parts[0] === "v") {
            positions.push(parseFloat(parts[1]), parseFloat(parts[2]), parseFloat(parts[3]));
        } else if (parts[0] === "f") {
            for (let i = 1; i < parts.length - 2; i++) {
                const a = parts[1].split("/")[0];
                const b = parts[i + 1].split("/")[0];
                const c = parts[i + 2].split("/")[0];
                indices.push(parseInt(a) - 1, parseInt(b) - 1, parseInt(c) - 1);
            }
        }
    }
    return {
        positions: new Float32Array(positions),
        indices: new Uint32Array(indices),
    };
}
