// Deterministic stand-ins for the socket and the clock, so client behavior
// (backoff, staleness, correlation) is testable without real time or I/O.

import { SocketLike } from "../../src/client.js";

export class FakeSocket implements SocketLike {
    onopen: (() => void) | null = null;
    onmessage: ((ev: { data: string }) => void) | null = null;
    onclose: (() => void) | null = null;
    onerror: (() => void) | null = null;
    sent: string[] = [];
    closedByClient = false;

    send(data: string): void {
        this.sent.push(data);
    }

    close(): void {
        this.closedByClient = true;
    }

    open(): void {
        this.onopen?.();
    }

    deliver(line: string): void {
        this.onmessage?.({ data: line });
    }

    drop(): void {
        this.onclose?.();
    }
}

export function fakeSocketFactory(): { factory: (url: string) => FakeSocket; sockets: FakeSocket[] } {
    const sockets: FakeSocket[] = [];
    return {
        sockets,
        factory: () => {
            const socket = new FakeSocket();
            sockets.push(socket);
            return socket;
        },
    };
}

interface Scheduled {
    id: number;
    at: number;
    fn: () => void;
}

export class ManualTimers {
    nowMs = 0;
    private nextId = 1;
    private queue: Scheduled[] = [];

    now = (): number => this.nowMs;

    schedule = (fn: () => void, ms: number): unknown => {
        const id = this.nextId++;
        this.queue.push({ id, at: this.nowMs + ms, fn });
        return id;
    };

    cancel = (timer: unknown): void => {
        this.queue = this.queue.filter(s => s.id !== timer);
    };

    advance(ms: number): void {
        const target = this.nowMs + ms;
        for (;;) {
            this.queue.sort((a, b) => a.at - b.at || a.id - b.id);
            const head = this.queue[0];
            if (head === undefined || head.at > target) break;
            this.queue.shift();
            this.nowMs = head.at;
            head.fn();
        }
        this.nowMs = target;
    }
}
