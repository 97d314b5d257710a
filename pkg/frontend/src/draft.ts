/** A rating in progress: integer score, three-level label, and the
 * checklist state for the guidance questions. Drafts persist to storage
 * so a page reload before submission loses nothing. */

import { GUIDANCE_QUESTIONS, LEVELS, type Level } from "./guidance.js";

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const DRAFT_KEY = "fthnet-rating-draft";

export interface DraftState {
  imageId: string;
  score: number | null;
  level: Level | null;
  checklist: boolean[];
}

/** The score scale has a minimum gap of 1: snap to the nearest integer
 * and clamp into [0, 100]. */
export function snapScore(raw: number): number {
  if (!Number.isFinite(raw)) {
    throw new Error(`score must be finite, got ${raw}`);
  }
  return Math.min(100, Math.max(0, Math.round(raw)));
}

export class RatingDraft {
  private state: DraftState;

  constructor(
    imageId: string,
    private readonly storage: StorageLike | null = null,
  ) {
    this.state = {
      imageId,
      score: null,
      level: null,
      checklist: GUIDANCE_QUESTIONS.map(() => false),
    };
  }

  get imageId(): string {
    return this.state.imageId;
  }

  get score(): number | null {
    return this.state.score;
  }

  get level(): Level | null {
    return this.state.level;
  }

  get checklist(): readonly boolean[] {
    return this.state.checklist;
  }

  setScore(raw: number): number {
    this.state.score = snapScore(raw);
    this.save();
    return this.state.score;
  }

  setLevel(level: Level): void {
    if (!LEVELS.includes(level)) {
      throw new Error(`unknown level ${level}`);
    }
    this.state.level = level;
    this.save();
  }

  toggleChecklist(index: number): void {
    if (index < 0 || index >= this.state.checklist.length) {
      throw new Error(`checklist index ${index} out of range`);
    }
    this.state.checklist[index] = !this.state.checklist[index];
    this.save();
  }

  /** Submission needs both a score and a level. */
  canSubmit(): boolean {
    return this.state.score !== null && this.state.level !== null;
  }

  save(): void {
    this.storage?.setItem(DRAFT_KEY, JSON.stringify(this.state));
  }

  clear(): void {
    this.storage?.removeItem(DRAFT_KEY);
  }

  /** Restore a draft for the same image; a different image id means the
   * stored draft is stale and is discarded. */
  static restore(imageId: string, storage: StorageLike | null): RatingDraft {
    const draft = new RatingDraft(imageId, storage);
    const raw = storage?.getItem(DRAFT_KEY);
    if (!raw) {
      return draft;
    }
    try {
      const saved = JSON.parse(raw) as DraftState;
      if (saved.imageId === imageId) {
        draft.state = {
          imageId,
          score: saved.score === null ? null : snapScore(saved.score),
          level: saved.level && LEVELS.includes(saved.level) ? saved.level : null,
          checklist: GUIDANCE_QUESTIONS.map((_, i) => saved.checklist?.[i] === true),
        };
      }
    } catch {
      storage?.removeItem(DRAFT_KEY);
    }
    return draft;
  }
}
