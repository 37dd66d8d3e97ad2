// Entry point: resolve the bridge endpoint, connect, and run the single
// render loop that drains the update queue into the model each frame.

import { ConsoleClient } from "./client.js";
import { drainQueue, MimicModel } from "./model.js";
import { WritePanel } from "./panel.js";
import { ConsoleView } from "./render.js";

/** `?endpoint=` accepts host:port or a full ws:// URL; default is same-host /ws. */
export function resolveEndpoint(search: string, host: string): string {
    const raw = new URLSearchParams(search).get("endpoint");
    if (raw === null || raw === "") return `ws://${host}/ws`;
    if (raw.startsWith("ws://") || raw.startsWith("wss://")) return raw;
    return `ws://${raw}/ws`;
}

function start(): void {
    const endpoint = resolveEndpoint(window.location.search, window.location.host);
    const model = new MimicModel();
    const client = new ConsoleClient(endpoint);
    const panel = new WritePanel(client);
    const view = new ConsoleView(document, model, panel);

    client.connect();
    const loop = () => {
        drainQueue(client.queue, model);
        view.render();
        window.requestAnimationFrame(loop);
    };
    window.requestAnimationFrame(loop);
    window.addEventListener("beforeunload", () => client.close());
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
    start();
}
