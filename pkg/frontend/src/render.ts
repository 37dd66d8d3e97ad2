// DOM rendering. One render() call per animation frame redraws the mimic
// from the model; the structural parts (stage columns, cluster cards, the
// write panel's field rows) are rebuilt only when their shape changes.

import { ClusterValue, Scalar } from "./frames.js";
import {
    deriveLayout,
    effectivePv,
    findPathByTag,
    formatScalar,
    isSimulated,
    layoutSignature,
    MimicItem,
} from "./layout.js";
import { MimicModel } from "./model.js";
import { parseFieldInput, WritePanel } from "./panel.js";

const LEVEL_SPAN = 110; // bar scale in level points; tanks overflow just past 100

interface CardRefs {
    item: MimicItem;
    root: HTMLElement;
    bar?: HTMLElement;
    readout: HTMLElement;
    flags: HTMLElement;
}

export class ConsoleView {
    private readonly model: MimicModel;
    private readonly panel: WritePanel;

    private statusEl: HTMLElement;
    private clockEl: HTMLElement;
    private staleEl: HTMLElement;
    private violationsEl: HTMLElement;
    private noticesEl: HTMLElement;
    private mimicEl: HTMLElement;
    private pathSelect: HTMLSelectElement;
    private fieldsEl: HTMLElement;
    private errorsEl: HTMLElement;
    private repeatToggle: HTMLInputElement;
    private repeatPeriod: HTMLInputElement;

    private signature = "";
    private cards = new Map<string, CardRefs>();
    private selectedPath = "";
    private fieldsSignature = "";

    constructor(root: Document, model: MimicModel, panel: WritePanel) {
        this.model = model;
        this.panel = panel;
        this.statusEl = must(root, "#status");
        this.clockEl = must(root, "#clock");
        this.staleEl = must(root, "#stale");
        this.violationsEl = must(root, "#violations");
        this.noticesEl = must(root, "#notices");
        this.mimicEl = must(root, "#mimic");
        this.pathSelect = must(root, "#writePath") as HTMLSelectElement;
        this.fieldsEl = must(root, "#writeFields");
        this.errorsEl = must(root, "#writeErrors");
        this.repeatToggle = must(root, "#repeatToggle") as HTMLInputElement;
        this.repeatPeriod = must(root, "#repeatPeriod") as HTMLInputElement;

        this.pathSelect.addEventListener("change", () => {
            this.selectedPath = this.pathSelect.value;
            this.fieldsSignature = "";
        });
        (must(root, "#writeSubmit") as HTMLButtonElement).addEventListener(
            "click", () => this.submitEdits());
        this.repeatToggle.addEventListener("change", () => this.toggleRepeat());
        (must(root, "#presetAttack1") as HTMLButtonElement).addEventListener(
            "click", () => this.runPreset1());
        (must(root, "#presetAttack3") as HTMLButtonElement).addEventListener(
            "click", () => this.runPreset3());
    }

    render(): void {
        this.renderStatus();
        this.renderViolations();
        this.renderNotices();
        this.renderMimic();
        this.renderWritePanel();
    }

    // -- header -------------------------------------------------------------

    private renderStatus(): void {
        const m = this.model;
        this.statusEl.className = `pill ${m.status}`;
        this.statusEl.textContent =
            m.status === "disconnected" && m.retryInMs !== null
                ? `disconnected (retrying in ${(m.retryInMs / 1000).toFixed(1)}s)`
                : m.status;
        this.staleEl.hidden = !m.stale;
        this.clockEl.textContent =
            `tick ${m.clock.tick.toFixed(0)} / t=${m.clock.timeS.toFixed(0)}s`;
    }

    private renderViolations(): void {
        const v = this.model.violations;
        const open = v.ids.length > 0 ? v.ids.join(", ") : "none";
        this.violationsEl.className = v.open > 0 ? "alarms firing" : "alarms";
        this.violationsEl.textContent =
            `violations: ${v.count.toFixed(0)} total, ${v.open.toFixed(0)} open` +
            ` | open: ${open}` + (v.latest !== "" ? ` | latest: ${v.latest}` : "");
    }

    private renderNotices(): void {
        const recent = this.model.notices.slice(-4);
        setText(this.noticesEl, recent.map(n => `[${n.kind}] ${n.text}`).join("\n"));
    }

    // -- mimic ----------------------------------------------------------------

    private renderMimic(): void {
        const groups = deriveLayout(this.model);
        const signature = layoutSignature(groups);
        if (signature !== this.signature) {
            this.signature = signature;
            this.rebuildMimic(groups);
        }
        for (const card of this.cards.values()) this.refreshCard(card);
    }

    private rebuildMimic(groups: ReturnType<typeof deriveLayout>): void {
        this.mimicEl.textContent = "";
        this.cards.clear();
        for (const group of groups) {
            const col = el("div", "stage");
            col.appendChild(el("h2", "", group.stage));
            for (const item of group.items) {
                const card = this.buildCard(item);
                col.appendChild(card.root);
                this.cards.set(item.path, card);
            }
            this.mimicEl.appendChild(col);
        }
        this.refreshPathOptions();
    }

    private buildCard(item: MimicItem): CardRefs {
        const root = el("div", `card ${item.kind}`);
        const head = el("div", "cardhead");
        head.appendChild(el("span", "tag", item.tag));
        const flags = el("span", "flags");
        head.appendChild(flags);
        root.appendChild(head);

        let bar: HTMLElement | undefined;
        if (item.kind === "level") {
            const well = el("div", "well");
            bar = el("div", "bar");
            well.appendChild(bar);
            root.appendChild(well);
        }
        const readout = el("div", "readout");
        root.appendChild(readout);
        root.appendChild(this.buildControls(item));
        root.addEventListener("click", () => this.selectPath(item.path));
        return { item, root, bar, readout, flags };
    }

    private buildControls(item: MimicItem): HTMLElement {
        const row = el("div", "controls");
        const add = (label: string, action: () => void) => {
            const b = el("button", "", label) as HTMLButtonElement;
            b.addEventListener("click", ev => {
                ev.stopPropagation();
                action();
            });
            row.appendChild(b);
        };
        if (item.kind === "valve") {
            add("open", () => this.panel.forceOpen(item.path));
            add("close", () => this.panel.forceClose(item.path));
            add("auto", () => this.panel.setAuto(item.path, true));
        } else if (item.kind === "pump") {
            add("start", () => this.panel.startPump(item.path));
            add("stop", () => this.panel.stopPump(item.path));
            add("auto", () => this.panel.setAuto(item.path, true));
        }
        return row;
    }

    private refreshCard(card: CardRefs): void {
        const entry = this.model.clusters.get(card.item.path);
        if (entry === undefined) return;
        const value = entry.value;
        switch (card.item.kind) {
            case "level": {
                const pv = effectivePv(value);
                if (card.bar !== undefined) {
                    const pct = Math.max(0, Math.min(100, (pv / LEVEL_SPAN) * 100));
                    card.bar.style.height = `${pct}%`;
                    card.bar.classList.toggle("sim", isSimulated(value));
                }
                setText(card.readout, `${pv.toFixed(1)} pts`);
                setText(card.flags, levelFlags(value));
                break;
            }
            case "valve":
                setText(card.readout,
                    `${value.State ?? "?"} (${formatScalar(value.Opening)})`);
                setText(card.flags, autoFlag(value));
                break;
            case "pump":
                setText(card.readout, String(value.Status ?? "?"));
                setText(card.flags,
                    autoFlag(value) + (value.Tripped === true ? " TRIP" : ""));
                break;
            case "signal":
                setText(card.readout, effectivePv(value).toFixed(2));
                setText(card.flags, isSimulated(value) ? "SIM" : "");
                break;
            default:
                break;
        }
    }

    // -- write panel ---------------------------------------------------------

    private refreshPathOptions(): void {
        const previous = this.selectedPath;
        this.pathSelect.textContent = "";
        const paths = [...this.model.clusters.keys()].sort();
        for (const path of paths) {
            const option = el("option", "", path) as HTMLOptionElement;
            option.value = path;
            this.pathSelect.appendChild(option);
        }
        if (previous !== "" && paths.includes(previous)) {
            this.pathSelect.value = previous;
        } else if (paths.length > 0) {
            this.selectedPath = this.pathSelect.value;
        }
    }

    private selectPath(path: string): void {
        this.selectedPath = path;
        this.pathSelect.value = path;
        this.fieldsSignature = "";
    }

    private renderWritePanel(): void {
        if (this.selectedPath === "" && this.pathSelect.value !== "") {
            this.selectedPath = this.pathSelect.value;
        }
        const entry = this.model.clusters.get(this.selectedPath);
        if (entry === undefined) return;
        const names = Object.keys(entry.value);
        const signature = this.selectedPath + "|" + names.join(",");
        if (signature !== this.fieldsSignature) {
            this.fieldsSignature = signature;
            this.rebuildFieldRows(names);
        }
        for (const name of names) {
            const row = this.fieldsEl.querySelector(`[data-field="${name}"] .current`);
            if (row !== null) setText(row as HTMLElement, formatScalar(entry.value[name]));
        }
        const errors = this.model.errors.slice(-3).map(
            e => `write #${e.writeId} ${e.path}: ${e.error} (${e.detail})`);
        setText(this.errorsEl, errors.join("\n"));
    }

    private rebuildFieldRows(names: string[]): void {
        this.fieldsEl.textContent = "";
        for (const name of names) {
            const row = el("div", "fieldrow");
            row.dataset.field = name;
            row.appendChild(el("span", "fieldname", name));
            row.appendChild(el("span", "current", ""));
            const input = el("input", "edit") as HTMLInputElement;
            input.placeholder = "new value";
            row.appendChild(input);
            this.fieldsEl.appendChild(row);
        }
    }

    private collectEdits(): ClusterValue {
        const fields: ClusterValue = {};
        for (const row of this.fieldsEl.querySelectorAll<HTMLElement>(".fieldrow")) {
            const input = row.querySelector("input") as HTMLInputElement;
            const name = row.dataset.field ?? "";
            if (input.value.trim() !== "" && name !== "") {
                fields[name] = parseFieldInput(input.value) as Scalar;
            }
        }
        return fields;
    }

    private submitEdits(): void {
        const fields = this.collectEdits();
        if (this.selectedPath === "" || Object.keys(fields).length === 0) return;
        this.panel.submit(this.selectedPath, fields);
    }

    private toggleRepeat(): void {
        if (!this.repeatToggle.checked) {
            this.panel.stopRepeat();
            return;
        }
        const fields = this.collectEdits();
        const period = Math.max(50, Number(this.repeatPeriod.value) || 1000);
        if (this.selectedPath === "" || Object.keys(fields).length === 0) {
            this.repeatToggle.checked = false;
            return;
        }
        this.panel.startRepeat(this.selectedPath, fields, period);
    }

    private runPreset1(): void {
        const path = findPathByTag(this.model, "1_LT_001") ?? this.selectedPath;
        if (path !== "") this.panel.attack1Preset(path);
    }

    private runPreset3(): void {
        const a = findPathByTag(this.model, "1_MV_002");
        const b = findPathByTag(this.model, "1_MV_003");
        if (a !== null && b !== null) this.panel.attack3Preset([a, b]);
    }
}

function must(root: Document, selector: string): HTMLElement {
    const node = root.querySelector(selector);
    if (node === null) throw new Error(`missing element: ${selector}`);
    return node as HTMLElement;
}

function el(tag: string, className: string, text?: string): HTMLElement {
    const node = document.createElement(tag);
    if (className !== "") node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
}

function setText(node: HTMLElement, text: string): void {
    if (node.textContent !== text) node.textContent = text;
}

function levelFlags(value: ClusterValue): string {
    const flags: string[] = [];
    if (value.SIMULATION === true) flags.push("SIM");
    if (value.AHH === true) flags.push("HH");
    else if (value.AH === true) flags.push("H");
    if (value.A_EMPTY === true) flags.push("EMPTY");
    else if (value.ALL_ === true) flags.push("LL");
    else if (value.AL === true) flags.push("L");
    if (value.Band_OK === false) flags.push("BAND?");
    return flags.join(" ");
}

function autoFlag(value: ClusterValue): string {
    return value.Auto === true ? "AUTO" : "MANUAL";
}
