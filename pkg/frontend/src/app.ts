/** Browser labeling flow: view pairs, pick winners, adapt, review samples. */

import { ApiError, Client } from "./api.js";
import { lossSparkline, pairTransform, trajectorySvg } from "./render.js";
import { placementFor, winnerForSide } from "./placement.js";
import { pollAdaptation } from "./poll.js";
import { LabelQueue } from "./queue.js";
import { PairResponse, Trajectory } from "./types.js";

const PANEL = { width: 360, height: 300 };

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

class App {
  client = new Client("");
  sid = "";
  ackCount = 0;
  total = 0;
  criteriaSent = false;
  currentPair: PairResponse | null = null;
  losses: number[] = [];
  queue: LabelQueue;

  constructor() {
    this.queue = new LabelQueue(
      async (label) => {
        const res = await this.client.postLabel(
          this.sid,
          label.pairId,
          label.winner,
          label.criteria
        );
        return res.labels;
      },
      (_label, serverCount) => {
        this.ackCount = serverCount;
        this.updateCounter();
        el<HTMLButtonElement>("adapt").disabled = this.ackCount < 1;
      },
      () => this.setStatus("offline; retrying queued labels...")
    );
  }

  setStatus(text: string): void {
    el("status").textContent = text;
  }

  updateCounter(): void {
    el("counter").textContent = `${this.ackCount}/${this.total} labeled`;
  }

  async start(): Promise<void> {
    const created = await this.client.createSession();
    this.sid = created.session_id;
    this.total = created.n_pairs;
    this.updateCounter();
    this.setStatus(`session ${this.sid}`);
    await this.showNextPair();
  }

  async showNextPair(): Promise<void> {
    const pair = await this.client.nextPair(this.sid);
    this.currentPair = pair;
    this.ackCount = pair.labeled;
    this.total = pair.total;
    this.updateCounter();
    if (!pair.pair_id || !pair.a || !pair.b) {
      el("pair-area").hidden = true;
      this.setStatus("all pairs labeled; adapt or review samples");
      return;
    }
    el("pair-area").hidden = false;
    const placement = placementFor(pair.pair_id);
    const sides: Record<"left" | "right", Trajectory> = {
      left: placement.left === "a" ? pair.a : pair.b,
      right: placement.right === "a" ? pair.a : pair.b,
    };
    const t = pairTransform(pair.a, pair.b, PANEL.width, PANEL.height);
    el("left-view").innerHTML = trajectorySvg(sides.left, t, PANEL);
    el("right-view").innerHTML = trajectorySvg(sides.right, t, PANEL);
  }

  label(side: "left" | "right" | "skip"): void {
    const pair = this.currentPair;
    if (!pair?.pair_id) return;
    const winner = side === "skip" ? "skip" : winnerForSide(pair.pair_id, side);
    const criteria = this.criteriaSent ? undefined : el<HTMLTextAreaElement>("criteria").value.trim();
    if (criteria) this.criteriaSent = true;
    this.queue.push({ pairId: pair.pair_id, winner, criteria: criteria || undefined });
    void this.showNextPair();
  }

  async adapt(): Promise<void> {
    const button = el<HTMLButtonElement>("adapt");
    button.disabled = true;
    this.losses = [];
    el("gallery").innerHTML = "";
    try {
      await this.client.startAdapt(this.sid, this.readNumber("n-adapt"));
    } catch (err) {
      this.setStatus(err instanceof ApiError ? err.message : `adapt failed: ${err}`);
      button.disabled = this.ackCount < 1;
      return;
    }
    el("adapt-progress").hidden = false;
    const final = await pollAdaptation(
      () => this.client.adaptStatus(this.sid),
      (status) => {
        el("adapt-step").textContent = `${status.step}/${status.n_adapt}`;
        if (status.loss !== null && status.state === "running") {
          this.losses.push(status.loss);
          el("loss-plot").innerHTML = lossSparkline(this.losses);
        }
      }
    );
    if (final.state === "failed") {
      this.setStatus(`adaptation failed: ${final.error ?? "unknown error"}`);
      button.disabled = false;
      return;
    }
    this.setStatus("adaptation done");
    button.disabled = false;
    await this.showGallery();
  }

  async showGallery(): Promise<void> {
    const n = this.readNumber("n-samples") ?? 12;
    const seed = this.readNumber("sample-seed") ?? 0;
    const res = await this.client.samples(this.sid, n, seed);
    const cell = { width: 170, height: 150 };
    el("gallery").innerHTML = res.samples
      .map((s) => {
        const t = pairTransform(s, s, cell.width, cell.height);
        const tag = s.reward !== undefined ? `<figcaption>reward ${s.reward.toFixed(3)}</figcaption>` : "";
        return `<figure>${trajectorySvg(s, t, cell)}${tag}</figure>`;
      })
      .join("");
  }

  readNumber(id: string): number | undefined {
    const raw = el<HTMLInputElement>(id).value;
    const v = Number(raw);
    return raw === "" || Number.isNaN(v) ? undefined : v;
  }
}

const app = new App();
el("pick-left").addEventListener("click", () => app.label("left"));
el("pick-right").addEventListener("click", () => app.label("right"));
el("skip").addEventListener("click", () => app.label("skip"));
el<HTMLButtonElement>("adapt").addEventListener("click", () => void app.adapt());
el("refresh-gallery").addEventListener("click", () => void app.showGallery());
void app.start();
