// Protocol frame types and the wire codec.
//
// The engine emits JSON objects with sorted keys and no inner whitespace,
// one per websocket text message. Requests use the same encoding so a
// recorded session can be compared byte for byte.

export type Scalar = string | number | boolean;
export type ClusterValue = Record<string, Scalar>;

export interface ReplyFrame {
    ok: boolean;
    id: number | null;
    path?: string;
    version?: number;
    value?: ClusterValue;
    paths?: string[];
    client?: string;
    subscription?: number;
    prefix?: string;
    error?: string;
    detail?: string;
}

export interface UpdateEvent {
    event: "update";
    path: string;
    version: number;
    value: ClusterValue;
}

export interface GapEvent {
    event: "gap";
    path: string;
    from_version: number;
    to_version: number;
}

export type EngineFrame = ReplyFrame | UpdateEvent | GapEvent;

export function isUpdate(frame: EngineFrame): frame is UpdateEvent {
    return (frame as UpdateEvent).event === "update";
}

export function isGap(frame: EngineFrame): frame is GapEvent {
    return (frame as GapEvent).event === "gap";
}

/** Compact JSON with recursively sorted object keys, matching the engine. */
export function stableStringify(value: unknown): string {
    if (value === null || typeof value !== "object") {
        return JSON.stringify(value);
    }
    if (Array.isArray(value)) {
        return "[" + value.map(stableStringify).join(",") + "]";
    }
    const keys = Object.keys(value as Record<string, unknown>).sort();
    const parts = keys.map(
        k => JSON.stringify(k) + ":" + stableStringify((value as Record<string, unknown>)[k])
    );
    return "{" + parts.join(",") + "}";
}

export function helloFrame(id: number, client: string): string {
    return stableStringify({ op: "hello", id, client });
}

export function readFrame(id: number, path: string): string {
    return stableStringify({ op: "read", id, path });
}

export function writeFrame(id: number, path: string, fields: ClusterValue): string {
    return stableStringify({ op: "write", id, path, fields });
}

export function listFrame(id: number, prefix = ""): string {
    return stableStringify({ op: "list", id, prefix });
}

export function subscribeFrame(id: number, prefix = "", buffer = 4096): string {
    return stableStringify({ op: "subscribe", id, prefix, buffer });
}

export function parseFrame(text: string): EngineFrame {
    const raw = JSON.parse(text);
    if (raw === null || typeof raw !== "object" || Array.isArray(raw)) {
        throw new Error("frame is not a JSON object");
    }
    return raw as EngineFrame;
}
