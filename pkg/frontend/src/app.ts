/** The rater-facing single-page app: rate images one by one under the
 * reference-set guidance, then review the per-image MOS/SD aggregate. */

import { AnnotationApi, ApiError, type ImageListEntry, type NextImage } from "./api.js";
import { RatingDraft, type StorageLike } from "./draft.js";
import { GUIDANCE_QUESTIONS, LEVELS, LEVEL_KEYS, type Level } from "./guidance.js";

export interface AppConfig {
  baseUrl: string;
  projectId: string;
  raterId: string;
  raterTier: "experienced" | "junior";
  referenceProjectId?: string;
  storage?: StorageLike | null;
}

type View = "rating" | "aggregate" | "done";

export class AnnotationApp {
  readonly api: AnnotationApi;
  draft: RatingDraft | null = null;
  current: NextImage | null = null;
  view: View = "rating";
  notice = "";
  retryBanner = false;
  private referenceImages: ImageListEntry[] = [];

  constructor(
    private readonly root: HTMLElement,
    private readonly config: AppConfig,
    api?: AnnotationApi,
  ) {
    this.api = api ?? new AnnotationApi({ baseUrl: config.baseUrl });
    this.root.addEventListener("keydown", (event) => this.handleKey(event as KeyboardEvent));
  }

  async start(): Promise<void> {
    if (this.config.referenceProjectId) {
      try {
        this.referenceImages = await this.api.listImages(this.config.referenceProjectId);
      } catch {
        this.referenceImages = [];
      }
    }
    await this.loadNext();
  }

  async loadNext(): Promise<void> {
    try {
      this.current = await this.api.fetchNext(this.config.projectId, this.config.raterId);
      this.retryBanner = false;
    } catch (error) {
      if (error instanceof ApiError) {
        this.notice = `cannot load image: ${error.message}`;
        this.current = null;
      } else {
        this.retryBanner = true;
      }
      this.render();
      return;
    }
    if (this.current === null) {
      this.view = "done";
      this.draft = null;
    } else {
      this.view = "rating";
      this.draft = RatingDraft.restore(this.current.image_id, this.config.storage ?? null);
    }
    this.render();
  }

  async submit(): Promise<void> {
    if (!this.draft || !this.current || !this.draft.canSubmit()) {
      return;
    }
    const rating = {
      project_id: this.config.projectId,
      image_id: this.current.image_id,
      rater_id: this.config.raterId,
      score: this.draft.score as number,
      level: this.draft.level as Level,
    };
    try {
      await this.api.submitRating(rating);
      this.notice = `saved ${rating.image_id}: ${rating.score} (${rating.level})`;
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // someone (or a reload) already rated it; advance without blocking
        this.notice = `already rated ${rating.image_id}; skipping ahead`;
      } else if (error instanceof ApiError) {
        this.notice = `rejected: ${error.message}`;
        this.render();
        return;
      } else {
        this.retryBanner = true; // network failure: draft stays saved
        this.render();
        return;
      }
    }
    this.draft.clear();
    this.draft = null;
    await this.loadNext();
  }

  async showAggregate(): Promise<void> {
    this.view = "aggregate";
    try {
      const aggregate = await this.api.aggregate(this.config.projectId);
      this.renderAggregate(aggregate.images, aggregate.sd_quartiles);
      this.retryBanner = false;
    } catch {
      this.retryBanner = true;
      this.render();
    }
  }

  handleKey(event: KeyboardEvent): void {
    const level = LEVEL_KEYS[event.key];
    if (level && this.view === "rating" && this.draft) {
      this.draft.setLevel(level);
      this.render();
    }
  }

  // -- rendering ---------------------------------------------------------

  render(): void {
    if (this.view === "aggregate") {
      return; // renderAggregate drew it
    }
    if (this.view === "done" || !this.current || !this.draft) {
      this.root.innerHTML = `
        ${this.chrome()}
        <main><p id="done">All images rated. Thank you.</p></main>`;
      this.wireChrome();
      return;
    }
    const draft = this.draft;
    const score = draft.score;
    this.root.innerHTML = `
      ${this.chrome()}
      <main class="rate">
        <section class="image-pane">
          <img id="fundus" src="${this.api.fileUrl(this.current.file)}"
               alt="fundus image ${this.current.image_id}" />
          <div id="image-id">${this.current.image_id}</div>
        </section>
        <section class="controls">
          <label for="score-slider">Quality score (0-100, step 1)</label>
          <input id="score-slider" type="range" min="0" max="100" step="1"
                 value="${score ?? 50}" ${score === null ? 'data-untouched="1"' : ""} />
          <output id="score-value">${score ?? "-"}</output>
          <div class="levels">
            ${LEVELS.map(
              (level, i) =>
                `<button class="level${draft.level === level ? " selected" : ""}"
                         data-level="${level}">${i + 1}. ${level}</button>`,
            ).join("")}
          </div>
          <fieldset class="checklist">
            <legend>Before scoring, consider:</legend>
            ${GUIDANCE_QUESTIONS.map(
              (q, i) =>
                `<label><input type="checkbox" data-check="${i}"
                  ${draft.checklist[i] ? "checked" : ""}/> ${q}</label>`,
            ).join("")}
          </fieldset>
          <button id="submit" ${draft.canSubmit() ? "" : "disabled"}>Submit</button>
          <div id="notice">${this.notice}</div>
          ${this.retryBanner ? '<div id="retry-banner">Network problem; your draft is saved. <button id="retry">Retry</button></div>' : ""}
        </section>
        ${this.referencePanel()}
      </main>`;
    this.wireChrome();
    this.wireRating();
  }

  private chrome(): string {
    return `
      <header>
        <span id="rater">${this.config.raterId} (${this.config.raterTier})</span>
        <nav>
          <button id="nav-rate">Rate</button>
          <button id="nav-aggregate">Aggregate</button>
        </nav>
      </header>`;
  }

  private referencePanel(): string {
    if (this.referenceImages.length === 0) {
      return "";
    }
    const columns = LEVELS.map((level) => {
      const thumbs = this.referenceImages
        .filter((img) => img.level_hint === level)
        .map((img) => `<img class="thumb" src="${this.api.fileUrl(img.file)}" alt="${level} example" />`)
        .join("");
      return `<div class="ref-col"><h4>${level}</h4>${thumbs}</div>`;
    }).join("");
    return `<aside id="reference-panel"><h3>Reference examples</h3>
      <div class="ref-cols">${columns}</div></aside>`;
  }

  private wireChrome(): void {
    this.root.querySelector("#nav-rate")?.addEventListener("click", () => void this.loadNext());
    this.root
      .querySelector("#nav-aggregate")
      ?.addEventListener("click", () => void this.showAggregate());
  }

  private wireRating(): void {
    const slider = this.root.querySelector<HTMLInputElement>("#score-slider");
    const output = this.root.querySelector<HTMLElement>("#score-value");
    const submit = this.root.querySelector<HTMLButtonElement>("#submit");
    slider?.addEventListener("input", () => {
      const snapped = this.draft?.setScore(Number(slider.value));
      if (output && snapped !== undefined) {
        output.textContent = String(snapped);
        slider.value = String(snapped);
      }
      if (submit && this.draft) {
        submit.disabled = !this.draft.canSubmit();
      }
    });
    for (const button of this.root.querySelectorAll<HTMLButtonElement>("button.level")) {
      button.addEventListener("click", () => {
        this.draft?.setLevel(button.dataset.level as Level);
        this.render();
      });
    }
    for (const box of this.root.querySelectorAll<HTMLInputElement>("input[data-check]")) {
      box.addEventListener("change", () => {
        this.draft?.toggleChecklist(Number(box.dataset.check));
      });
    }
    submit?.addEventListener("click", () => void this.submit());
    this.root.querySelector("#retry")?.addEventListener("click", () => void this.loadNext());
  }

  private renderAggregate(
    images: Record<string, { mos: number | null; sd: number | null; n_ratings: number; disagreement: boolean }>,
    quartiles: { q25: number | null; q50: number | null; q75: number | null },
  ): void {
    const rows = Object.entries(images)
      .map(
        ([imageId, entry]) => `
        <tr class="${entry.disagreement ? "disagreement" : ""}" data-image="${imageId}">
          <td>${imageId}</td>
          <td class="mos">${entry.mos === null ? "-" : entry.mos.toFixed(2)}</td>
          <td class="sd">${entry.sd === null ? "-" : entry.sd.toFixed(2)}</td>
          <td>${entry.n_ratings}</td>
          <td>${entry.disagreement ? "discuss" : ""}</td>
        </tr>`,
      )
      .join("");
    this.root.innerHTML = `
      ${this.chrome()}
      <main>
        <table id="aggregate">
          <thead><tr><th>image</th><th>MOS</th><th>SD</th><th>#</th><th></th></tr></thead>
          <tbody>${rows}</tbody>
        </table>
        <p id="quartiles">SD quartiles: q25=${quartiles.q25 ?? "-"} q50=${quartiles.q50 ?? "-"} q75=${quartiles.q75 ?? "-"}</p>
      </main>`;
    this.wireChrome();
  }
}
