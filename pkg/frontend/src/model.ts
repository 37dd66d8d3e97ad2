// MimicModel: everything the console knows, which is exactly what the
// engine has published. There is no side channel to ground truth; the
// mimic sees the same values (and the same lies) as the plant controllers.

import { ClusterValue, EngineFrame, GapEvent, ReplyFrame, UpdateEvent, isGap, isUpdate } from "./frames.js";

export const CLOCK_PATH = "RUNNER/clock";
export const VIOLATIONS_PATH = "DETECTOR/violations";

export type Status = "connecting" | "live" | "disconnected";

export interface ClusterEntry {
    version: number;
    value: ClusterValue;
}

export interface Notice {
    kind: "gap" | "info" | "error";
    text: string;
}

export interface InlineError {
    writeId: number;
    path: string;
    error: string;
    detail: string;
}

export interface PendingWrite {
    id: number;
    path: string;
    staged: ClusterValue;
    previous: ClusterValue; // the overwritten subset, for rollback
    stagedVersion: number;
}

export interface ViolationSummary {
    count: number;
    open: number;
    ids: string[];
    latest: string;
}

export type QueueEvent =
    | { kind: "frame"; frame: EngineFrame }
    | { kind: "status"; status: Status; retryInMs: number | null }
    | { kind: "stale"; stale: boolean }
    | { kind: "staged"; id: number; path: string; fields: ClusterValue }
    | { kind: "notice"; notice: Notice };

const NOTICE_LIMIT = 20;
const ERROR_LIMIT = 20;

export class MimicModel {
    clusters = new Map<string, ClusterEntry>();
    status: Status = "connecting";
    retryInMs: number | null = null;
    stale = false;
    clock = { tick: 0, timeS: 0 };
    violations: ViolationSummary = { count: 0, open: 0, ids: [], latest: "" };
    notices: Notice[] = [];
    errors: InlineError[] = [];
    pending = new Map<number, PendingWrite>();

    apply(ev: QueueEvent): void {
        switch (ev.kind) {
            case "frame":
                this.applyFrame(ev.frame);
                return;
            case "status":
                this.setStatus(ev.status, ev.retryInMs);
                return;
            case "stale":
                this.stale = ev.stale;
                return;
            case "staged":
                this.stageWrite(ev.id, ev.path, ev.fields);
                return;
            case "notice":
                this.pushNotice(ev.notice);
                return;
        }
    }

    applyFrame(frame: EngineFrame): void {
        if (isUpdate(frame)) {
            this.applyUpdate(frame);
        } else if (isGap(frame)) {
            this.applyGap(frame);
        } else {
            this.applyReply(frame);
        }
    }

    private applyUpdate(ev: UpdateEvent): void {
        this.setCluster(ev.path, ev.version, ev.value);
    }

    private applyGap(ev: GapEvent): void {
        const dropped = ev.to_version - ev.from_version + 1;
        this.pushNotice({
            kind: "gap",
            text: `missed ${dropped} update(s) of ${ev.path}; display resynced from the next snapshot`,
        });
    }

    private applyReply(reply: ReplyFrame): void {
        const pending = typeof reply.id === "number" ? this.pending.get(reply.id) : undefined;
        if (pending !== undefined) {
            this.pending.delete(pending.id);
            if (!reply.ok) {
                this.rollback(pending);
                this.errors.push({
                    writeId: pending.id,
                    path: pending.path,
                    error: reply.error ?? "error",
                    detail: reply.detail ?? "",
                });
                if (this.errors.length > ERROR_LIMIT) this.errors.shift();
            }
            return;
        }
        if (reply.ok && reply.path !== undefined && reply.value !== undefined
            && reply.version !== undefined) {
            this.setCluster(reply.path, reply.version, reply.value);
            return;
        }
        if (!reply.ok) {
            this.pushNotice({
                kind: "error",
                text: `${reply.error ?? "error"}: ${reply.detail ?? ""}`,
            });
        }
    }

    /** Optimistic local apply of a write that is still in flight. */
    private stageWrite(id: number, path: string, fields: ClusterValue): void {
        const entry = this.clusters.get(path);
        if (entry === undefined) {
            // Nothing mirrored yet, nothing to stage; the reply still correlates.
            this.pending.set(id, { id, path, staged: fields, previous: {}, stagedVersion: -1 });
            return;
        }
        const previous: ClusterValue = {};
        for (const name of Object.keys(fields)) {
            if (name in entry.value) previous[name] = entry.value[name];
        }
        Object.assign(entry.value, fields);
        this.pending.set(id, { id, path, staged: fields, previous, stagedVersion: entry.version });
    }

    private rollback(pending: PendingWrite): void {
        const entry = this.clusters.get(pending.path);
        // A newer authoritative snapshot already replaced the optimistic
        // values; restoring the old subset would clobber real data.
        if (entry === undefined || entry.version !== pending.stagedVersion) return;
        for (const name of Object.keys(pending.staged)) {
            if (name in pending.previous) {
                entry.value[name] = pending.previous[name];
            } else {
                delete entry.value[name];
            }
        }
    }

    private setCluster(path: string, version: number, value: ClusterValue): void {
        const entry = this.clusters.get(path);
        if (entry !== undefined && version < entry.version) return; // stale read racing an update
        this.clusters.set(path, { version, value: { ...value } });
        if (path === CLOCK_PATH) {
            this.clock = {
                tick: Number(value.tick ?? 0),
                timeS: Number(value.time_s ?? 0),
            };
        } else if (path === VIOLATIONS_PATH) {
            const ids = String(value.ids ?? "");
            this.violations = {
                count: Number(value.count ?? 0),
                open: Number(value.open ?? 0),
                ids: ids === "" ? [] : ids.split(";"),
                latest: String(value.latest ?? ""),
            };
        }
    }

    private setStatus(status: Status, retryInMs: number | null): void {
        this.status = status;
        this.retryInMs = retryInMs;
        if (status === "disconnected" && this.pending.size > 0) {
            for (const pending of this.pending.values()) this.rollback(pending);
            this.pushNotice({
                kind: "info",
                text: `${this.pending.size} write(s) lost unacknowledged with the connection`,
            });
            this.pending.clear();
        }
    }

    private pushNotice(notice: Notice): void {
        this.notices.push(notice);
        if (this.notices.length > NOTICE_LIMIT) this.notices.shift();
    }
}

/** The single ordered queue between the socket callbacks and the renderer. */
export function drainQueue(queue: QueueEvent[], model: MimicModel): number {
    let n = 0;
    while (queue.length > 0) {
        model.apply(queue.shift() as QueueEvent);
        n += 1;
    }
    return n;
}
