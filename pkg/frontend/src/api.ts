/** Typed client for the modeling service HTTP API. */

export interface OrbitPose {
    elevation: number;
    azimuth: number;
    distance: number;
}

export interface PlacementTransform {
    rotation: number[]; // row-major 3x3
    translation: number[];
    scale: number;
}

export interface GenerateResult {
    object_id: string;
    mesh_obj: string;
    pred_pose: OrbitPose;
    transform: PlacementTransform;
    timings_ms: Record<string, number>;
}

export interface ApiError {
    code: string;
    message: string;
}

export class ServerError extends Error {
    constructor(public readonly code: string, message: string) {
        super(message);
    }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

function bytesToBase64(bytes: Uint8Array): string {
    let binary = "";
    for (let i = 0; i < bytes.length; i++) {
        binary += String.fromCharCode(bytes[i]);
    }
    return btoa(binary);
}

export class ApiClient {
    constructor(
        private readonly baseUrl: string,
        private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
    ) {}

    async health(): Promise<boolean> {
        try {
            const r = await this.fetchFn(`${this.baseUrl}/api/healthz`);
            return r.ok;
        } catch {
            return false;
        }
    }

    async uploadScene(objText: string): Promise<string> {
        const r = await this.fetchFn(`${this.baseUrl}/api/scenes`, {
            method: "POST",
            body: objText,
        });
        const body = await r.json();
        if (!r.ok) {
            throw new ServerError(body.error?.code ?? "Unknown", body.error?.message ?? "upload failed");
        }
        return body.scene_id;
    }

    async sceneMesh(sceneId: string): Promise<string> {
        const r = await this.fetchFn(`${this.baseUrl}/api/scenes/${sceneId}/mesh.obj`);
        if (!r.ok) {
            throw new ServerError("UnknownScene", `scene ${sceneId} not found`);
        }
        return r.text();
    }

    async generate(args: {
        sceneId: string;
        classLabel: string;
        viewPose: OrbitPose;
        sketchPng: Uint8Array;
        upright?: boolean;
        fovDeg?: number;
    }): Promise<GenerateResult> {
        const r = await this.fetchFn(`${this.baseUrl}/api/generate`, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify({
                scene_id: args.sceneId,
                class_label: args.classLabel,
                view_pose: args.viewPose,
                sketch_png_base64: bytesToBase64(args.sketchPng),
                upright: args.upright ?? true,
                fov_deg: args.fovDeg ?? 30.0,
            }),
        });
        const body = await r.json();
        if (!r.ok) {
            const err: ApiError = body.error ?? { code: "Unknown", message: "generate failed" };
            throw new ServerError(err.code, err.message);
        }
        return body as GenerateResult;
    }
}
