// Mimic layout derived purely from what the engine publishes. The cluster
// shapes identify themselves (a valve carries Opening, a pump Running, a
// level its alarm band), so a different plant document renders without any
// change here.

import { ClusterValue, Scalar } from "./frames.js";
import { CLOCK_PATH, MimicModel, VIOLATIONS_PATH } from "./model.js";

export type ClusterKind = "level" | "valve" | "pump" | "signal" | "meta";

export interface MimicItem {
    path: string;
    tag: string;
    kind: ClusterKind;
}

export interface StageGroup {
    stage: string;
    items: MimicItem[];
}

export function kindOf(path: string, value: ClusterValue): ClusterKind {
    if (path === CLOCK_PATH || path === VIOLATIONS_PATH) return "meta";
    if ("Opening" in value) return "valve";
    if ("Running" in value) return "pump";
    if ("Band_OK" in value) return "level";
    if ("PV" in value) return "signal";
    return "meta";
}

export function stageOf(path: string): string {
    const cut = path.indexOf("/");
    return cut === -1 ? path : path.slice(0, cut);
}

export function tagOf(path: string): string {
    const leaf = path.slice(path.lastIndexOf("/") + 1);
    return leaf.startsWith("HMI_") ? leaf.slice(4) : leaf;
}

const KIND_ORDER: Record<ClusterKind, number> = {
    level: 0, valve: 1, pump: 2, signal: 3, meta: 4,
};

export function deriveLayout(model: MimicModel): StageGroup[] {
    const byStage = new Map<string, MimicItem[]>();
    for (const [path, entry] of model.clusters) {
        const kind = kindOf(path, entry.value);
        if (kind === "meta") continue; // clock and violations render separately
        const stage = stageOf(path);
        let items = byStage.get(stage);
        if (items === undefined) {
            items = [];
            byStage.set(stage, items);
        }
        items.push({ path, tag: tagOf(path), kind });
    }
    const stages = [...byStage.keys()].sort();
    return stages.map(stage => {
        const items = byStage.get(stage) as MimicItem[];
        items.sort(
            (a, b) => KIND_ORDER[a.kind] - KIND_ORDER[b.kind] || a.tag.localeCompare(b.tag)
        );
        return { stage, items };
    });
}

/** A stable signature so the renderer knows when to rebuild the DOM. */
export function layoutSignature(groups: StageGroup[]): string {
    return groups
        .map(g => g.stage + ":" + g.items.map(i => i.tag + "/" + i.kind).join(","))
        .join(";");
}

export function findPathByTag(model: MimicModel, tag: string): string | null {
    for (const path of model.clusters.keys()) {
        if (tagOf(path) === tag) return path;
    }
    return null;
}

/** The value displays act on: the simulated one while SIMULATION is set. */
export function effectivePv(value: ClusterValue): number {
    if (value.SIMULATION === true) return Number(value.SIM_PV ?? 0);
    return Number(value.PV ?? 0);
}

export function isSimulated(value: ClusterValue): boolean {
    return value.SIMULATION === true;
}

export function formatScalar(v: Scalar | undefined): string {
    if (v === undefined) return "";
    if (typeof v === "number") {
        return Number.isInteger(v) ? String(v) : v.toFixed(2);
    }
    return String(v);
}
