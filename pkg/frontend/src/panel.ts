// Write panel actions. Every method is a plain protocol write through the
// shared client; the presets fill in the same field sets the scripted
// attack documents use, nothing more. A raw client typing frames by hand
// has exactly the same power.

import { ClusterValue } from "./frames.js";
import { ConsoleClient } from "./client.js";

export interface RepeatHandle {
    path: string;
    fields: ClusterValue;
    periodMs: number;
    timer: unknown;
}

export interface PanelOptions {
    schedule?: (fn: () => void, ms: number) => unknown;
    cancel?: (timer: unknown) => void;
}

export class WritePanel {
    private readonly client: ConsoleClient;
    private readonly schedule: (fn: () => void, ms: number) => unknown;
    private readonly cancel: (timer: unknown) => void;
    private repeat: RepeatHandle | null = null;

    constructor(client: ConsoleClient, options: PanelOptions = {}) {
        this.client = client;
        this.schedule = options.schedule ?? ((fn, ms) => setInterval(fn, ms));
        this.cancel = options.cancel ?? (timer => clearInterval(timer as number));
    }

    submit(path: string, fields: ClusterValue): number {
        if (Object.keys(fields).length === 0) {
            throw new Error("no fields to write");
        }
        return this.client.write(path, fields);
    }

    // -- generic actuator controls ---------------------------------------

    setAuto(path: string, auto: boolean): number {
        return this.submit(path, { Auto: auto });
    }

    forceOpen(path: string): number {
        return this.submit(path, { Auto: false, Open_Command: true });
    }

    forceClose(path: string): number {
        return this.submit(path, { Auto: false, Close_Command: true });
    }

    startPump(path: string): number {
        return this.submit(path, { Auto: false, Start_Command: true });
    }

    stopPump(path: string): number {
        return this.submit(path, { Auto: false, Stop_Command: true });
    }

    // -- presets ----------------------------------------------------------

    /**
     * Level override pin: switch the reading to its simulated twin, park it
     * on the refill mark and drag the empty threshold up to meet it.
     */
    attack1Preset(levelPath: string, mark = 40): number {
        return this.submit(levelPath, {
            SIMULATION: true,
            SIM_PV: mark,
            S_EMPTY: mark,
        });
    }

    /** Drop both drain valves out of Auto and hold them open. */
    attack3Preset(drainPaths: [string, string]): [number, number] {
        return [this.forceOpen(drainPaths[0]), this.forceOpen(drainPaths[1])];
    }

    /** Field pin for the repeat toggle, e.g. PV held at 80. */
    pinFields(value: number): ClusterValue {
        return { PV: value };
    }

    // -- repeat toggle ------------------------------------------------------

    startRepeat(path: string, fields: ClusterValue, periodMs: number): void {
        this.stopRepeat();
        this.submit(path, fields);
        const timer = this.schedule(() => this.submit(path, fields), periodMs);
        this.repeat = { path, fields, periodMs, timer };
    }

    stopRepeat(): void {
        if (this.repeat === null) return;
        this.cancel(this.repeat.timer);
        this.repeat = null;
    }

    repeating(): RepeatHandle | null {
        return this.repeat;
    }
}

/** Parses one form input into the scalar the engine expects. */
export function parseFieldInput(text: string): ClusterValue[string] {
    const trimmed = text.trim();
    if (trimmed === "true") return true;
    if (trimmed === "false") return false;
    if (trimmed !== "" && !Number.isNaN(Number(trimmed))) return Number(trimmed);
    if (trimmed.length >= 2 && trimmed.startsWith('"') && trimmed.endsWith('"')) {
        return trimmed.slice(1, -1);
    }
    return trimmed;
}
