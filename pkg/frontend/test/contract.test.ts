// Replays the recorded engine session: the console must emit byte-identical
// frames when driven through the same actions, and the recording proves the
// real engine accepted every frame (all replies ok except the deliberate
// bad write). Regenerate fixtures/engine-session.json with
// `npm run record-fixture` against a live plant.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { ConsoleClient } from "../src/client.js";
import { drainQueue, MimicModel } from "../src/model.js";
import { WritePanel } from "../src/panel.js";
import { FakeSocket } from "./helpers/fakes.js";

interface Fixture {
    scenario: string;
    paths: { lt1: string; lt2: string; mv2: string; mv3: string };
    frames: { dir: "send" | "recv"; line: string }[];
}

const here = dirname(fileURLToPath(import.meta.url));
const fixture: Fixture = JSON.parse(
    readFileSync(join(here, "..", "fixtures", "engine-session.json"), "utf-8"));

describe("recorded engine contract", () => {
    it("the engine accepted every recorded console frame", () => {
        const replies = fixture.frames
            .filter(f => f.dir === "recv")
            .map(f => JSON.parse(f.line))
            .filter(f => f.event === undefined);
        const rejected = replies.filter(r => r.ok !== true);
        expect(rejected.length).toBe(1); // only the deliberate bad write
        expect(rejected[0].error).toBe("unknown_field");
    });

    it("a replayed session emits byte-identical frames in order", () => {
        const socket = new FakeSocket();
        const model = new MimicModel();
        const client = new ConsoleClient("ws://replay/ws", {
            makeSocket: () => socket,
            schedule: () => 0,
            cancel: () => undefined,
        });
        const panel = new WritePanel(client, { schedule: () => 0, cancel: () => undefined });

        const actions = [
            () => panel.attack1Preset(fixture.paths.lt1),
            () => panel.attack3Preset([fixture.paths.mv2, fixture.paths.mv3]),
            () => panel.submit(fixture.paths.lt2, { PV: 80 }),
            () => panel.submit(fixture.paths.lt1, { NO_SUCH_FIELD: 1 }),
        ];

        client.connect();
        socket.open();
        let matched = 0;
        for (const entry of fixture.frames) {
            if (entry.dir === "recv") {
                socket.deliver(entry.line);
                drainQueue(client.queue, model);
                continue;
            }
            while (socket.sent.length === 0) {
                const action = actions.shift();
                if (action === undefined) {
                    throw new Error(`no console output for recorded frame: ${entry.line}`);
                }
                action();
                drainQueue(client.queue, model);
            }
            expect(socket.sent.shift()).toBe(entry.line);
            matched += 1;
        }
        expect(matched).toBe(fixture.frames.filter(f => f.dir === "send").length);
        expect(socket.sent).toEqual([]); // nothing extra either
        expect(actions).toEqual([]);

        // The replay leaves the mimic in the state the writes aimed for.
        const lt1 = model.clusters.get(fixture.paths.lt1)?.value;
        expect(lt1?.SIMULATION).toBe(true);
        expect(lt1?.SIM_PV).toBe(40);
        expect(lt1?.S_EMPTY).toBe(40);
        for (const path of [fixture.paths.mv2, fixture.paths.mv3]) {
            const valve = model.clusters.get(path)?.value;
            expect(valve?.Auto).toBe(false);
            expect(valve?.Open_Command).toBe(true);
        }
        expect(model.errors.length).toBe(1);
        expect(model.errors[0].error).toBe("unknown_field");
        expect(model.errors[0].path).toBe(fixture.paths.lt1);
    });

    it("the recorded session covers every documented request op", () => {
        const ops = new Set(
            fixture.frames.filter(f => f.dir === "send").map(f => JSON.parse(f.line).op));
        expect([...ops].sort()).toEqual(["hello", "list", "read", "subscribe", "write"]);
    });
});
