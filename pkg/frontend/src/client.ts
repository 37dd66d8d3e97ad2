// ConsoleClient: one websocket session to the engine bridge, kept alive.
//
// On every (re)connect it introduces itself, subscribes to everything with
// one empty-prefix subscription (which covers the plant clusters plus
// RUNNER/clock and DETECTOR/violations), lists the paths and reads each one
// so the mimic starts complete instead of waiting for the next change.
// Writes are fire and forget with correlation ids; the reply resolves the
// optimistic entry the model staged. All inbound traffic lands on an
// ordered queue that a single render loop drains.

import {
    ClusterValue,
    EngineFrame,
    helloFrame,
    isGap,
    isUpdate,
    listFrame,
    parseFrame,
    readFrame,
    subscribeFrame,
    writeFrame,
} from "./frames.js";
import { CLOCK_PATH, QueueEvent } from "./model.js";

export interface SocketLike {
    onopen: (() => void) | null;
    onmessage: ((ev: { data: string }) => void) | null;
    onclose: (() => void) | null;
    onerror: (() => void) | null;
    send(data: string): void;
    close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientOptions {
    makeSocket?: SocketFactory;
    now?: () => number;
    schedule?: (fn: () => void, ms: number) => unknown;
    cancel?: (timer: unknown) => void;
    clientName?: string;
    subscribeBuffer?: number;
}

const BACKOFF_BASE_MS = 500;
const BACKOFF_CAP_MS = 8000;
const STALE_CHECK_MS = 200;
const STALE_FLOOR_MS = 400;
const MISSED_TICKS = 3;

type OpKind = "hello" | "subscribe" | "list" | "read" | "write";

export class ConsoleClient {
    queue: QueueEvent[] = [];

    private readonly url: string;
    private readonly makeSocket: SocketFactory;
    private readonly now: () => number;
    private readonly schedule: (fn: () => void, ms: number) => unknown;
    private readonly cancel: (timer: unknown) => void;
    private readonly clientName: string;
    private readonly subscribeBuffer: number;

    private socket: SocketLike | null = null;
    private nextId = 1;
    private inflight = new Map<number, { kind: OpKind; path?: string }>();
    private attempt = 0;
    private everLive = false;
    private stopped = false;
    private live = false;

    private lastClockAt = 0;
    private tickGapMs = 0;
    private stale = false;
    private staleTimer: unknown = null;
    private retryTimer: unknown = null;

    constructor(url: string, options: ClientOptions = {}) {
        this.url = url;
        this.makeSocket = options.makeSocket
            ?? ((u: string) => new WebSocket(u) as unknown as SocketLike);
        this.now = options.now ?? (() => Date.now());
        this.schedule = options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
        this.cancel = options.cancel ?? (timer => clearTimeout(timer as number));
        this.clientName = options.clientName ?? "hmi-console";
        this.subscribeBuffer = options.subscribeBuffer ?? 4096;
    }

    connect(): void {
        this.stopped = false;
        this.queue.push({ kind: "status", status: "connecting", retryInMs: null });
        this.open();
    }

    /** Stops for good: no reconnect, no timers. */
    close(): void {
        this.stopped = true;
        if (this.retryTimer !== null) this.cancel(this.retryTimer);
        if (this.staleTimer !== null) this.cancel(this.staleTimer);
        this.retryTimer = null;
        this.staleTimer = null;
        this.socket?.close();
        this.socket = null;
        this.live = false;
        this.queue.push({ kind: "status", status: "disconnected", retryInMs: null });
    }

    /** Fire-and-forget write; returns the correlation id. */
    write(path: string, fields: ClusterValue): number {
        const id = this.nextId++;
        this.inflight.set(id, { kind: "write", path });
        this.queue.push({ kind: "staged", id, path, fields });
        this.send(writeFrame(id, path, fields));
        return id;
    }

    readPath(path: string): number {
        const id = this.nextId++;
        this.inflight.set(id, { kind: "read", path });
        this.send(readFrame(id, path));
        return id;
    }

    isLive(): boolean {
        return this.live;
    }

    private open(): void {
        const socket = this.makeSocket(this.url);
        this.socket = socket;
        socket.onopen = () => this.handleOpen();
        socket.onmessage = ev => this.handleMessage(ev.data);
        socket.onclose = () => this.handleClose(socket);
        socket.onerror = () => undefined; // close always follows
    }

    private handleOpen(): void {
        if (this.stopped) return;
        this.attempt = 0;
        this.live = true;
        this.lastClockAt = 0;
        this.tickGapMs = 0;
        if (this.everLive) {
            this.queue.push({
                kind: "notice",
                notice: {
                    kind: "gap",
                    text: "reconnected; updates were missed while offline and the mimic was resynced",
                },
            });
        }
        this.everLive = true;
        this.queue.push({ kind: "status", status: "live", retryInMs: null });

        let id = this.nextId++;
        this.inflight.set(id, { kind: "hello" });
        this.send(helloFrame(id, this.clientName));
        id = this.nextId++;
        this.inflight.set(id, { kind: "subscribe" });
        this.send(subscribeFrame(id, "", this.subscribeBuffer));
        id = this.nextId++;
        this.inflight.set(id, { kind: "list" });
        this.send(listFrame(id, ""));

        this.armStaleCheck();
    }

    private handleMessage(data: string): void {
        let frame: EngineFrame;
        try {
            frame = parseFrame(data);
        } catch {
            this.queue.push({
                kind: "notice",
                notice: { kind: "error", text: "engine sent an unreadable frame" },
            });
            return;
        }
        if (isUpdate(frame)) {
            if (frame.path === CLOCK_PATH) this.observeTick();
        } else if (isGap(frame)) {
            // Updates carry full snapshots, so a single re-read heals the miss.
            this.readPath(frame.path);
        } else if (typeof frame.id === "number") {
            const op = this.inflight.get(frame.id);
            if (op !== undefined) {
                this.inflight.delete(frame.id);
                if (op.kind === "list" && frame.ok && Array.isArray(frame.paths)) {
                    for (const path of frame.paths) this.readPath(path);
                }
                if (op.kind === "read" && frame.ok && frame.path === CLOCK_PATH) {
                    this.observeTick();
                }
            }
        }
        this.queue.push({ kind: "frame", frame });
    }

    private handleClose(socket: SocketLike): void {
        if (this.socket !== socket) return; // superseded by a newer attempt
        this.socket = null;
        this.live = false;
        this.inflight.clear();
        if (this.staleTimer !== null) {
            this.cancel(this.staleTimer);
            this.staleTimer = null;
        }
        this.setStale(false);
        if (this.stopped) return;
        const delay = Math.min(BACKOFF_BASE_MS * 2 ** this.attempt, BACKOFF_CAP_MS);
        this.attempt += 1;
        this.queue.push({ kind: "status", status: "disconnected", retryInMs: delay });
        this.retryTimer = this.schedule(() => {
            this.retryTimer = null;
            if (!this.stopped) this.open();
        }, delay);
    }

    private send(line: string): void {
        try {
            this.socket?.send(line);
        } catch {
            // The close handler owns recovery.
        }
    }

    // -- staleness ------------------------------------------------------

    private observeTick(): void {
        const at = this.now();
        if (this.lastClockAt > 0) {
            const gap = at - this.lastClockAt;
            this.tickGapMs = this.tickGapMs === 0 ? gap : 0.7 * this.tickGapMs + 0.3 * gap;
        }
        this.lastClockAt = at;
        this.setStale(false);
    }

    private armStaleCheck(): void {
        this.staleTimer = this.schedule(() => {
            if (this.stopped || !this.live) return;
            if (this.tickGapMs > 0 && this.lastClockAt > 0) {
                const limit = Math.max(MISSED_TICKS * this.tickGapMs, STALE_FLOOR_MS);
                if (this.now() - this.lastClockAt > limit) this.setStale(true);
            }
            this.armStaleCheck();
        }, STALE_CHECK_MS);
    }

    private setStale(stale: boolean): void {
        if (this.stale === stale) return;
        this.stale = stale;
        this.queue.push({ kind: "stale", stale });
    }
}
