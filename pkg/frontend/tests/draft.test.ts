import { describe, expect, it } from "vitest";

import { RatingDraft, snapScore, type StorageLike } from "../src/draft.js";
import { GUIDANCE_QUESTIONS } from "../src/guidance.js";

function memoryStorage(): StorageLike & { data: Map<string, string> } {
  const data = new Map<string, string>();
  return {
    data,
    getItem: (k) => data.get(k) ?? null,
    setItem: (k, v) => void data.set(k, v),
    removeItem: (k) => void data.delete(k),
  };
}

describe("snapScore", () => {
  it("snaps non-integers to the nearest integer", () => {
    expect(snapScore(75.4)).toBe(75);
    expect(snapScore(75.5)).toBe(76);
    expect(snapScore(74.9)).toBe(75);
  });

  it("clamps into [0, 100]", () => {
    expect(snapScore(-3)).toBe(0);
    expect(snapScore(104.2)).toBe(100);
  });

  it("rejects non-finite input", () => {
    expect(() => snapScore(Number.NaN)).toThrow();
  });
});

describe("RatingDraft", () => {
  it("cannot submit until both score and level are set", () => {
    const draft = new RatingDraft("img0");
    expect(draft.canSubmit()).toBe(false);
    draft.setScore(60);
    expect(draft.canSubmit()).toBe(false);
    draft.setLevel("Usable");
    expect(draft.canSubmit()).toBe(true);
  });

  it("stores only integers", () => {
    const draft = new RatingDraft("img0");
    expect(draft.setScore(75.4)).toBe(75);
    expect(draft.score).toBe(75);
  });

  it("tracks the guidance checklist", () => {
    const draft = new RatingDraft("img0");
    expect(draft.checklist).toHaveLength(GUIDANCE_QUESTIONS.length);
    draft.toggleChecklist(2);
    expect(draft.checklist[2]).toBe(true);
    draft.toggleChecklist(2);
    expect(draft.checklist[2]).toBe(false);
    expect(() => draft.toggleChecklist(9)).toThrow();
  });

  it("survives a reload via storage", () => {
    const storage = memoryStorage();
    const draft = new RatingDraft("img7", storage);
    draft.setScore(42);
    draft.setLevel("Reject");
    draft.toggleChecklist(1);

    const restored = RatingDraft.restore("img7", storage);
    expect(restored.score).toBe(42);
    expect(restored.level).toBe("Reject");
    expect(restored.checklist[1]).toBe(true);
  });

  it("discards a stale draft for another image", () => {
    const storage = memoryStorage();
    new RatingDraft("img7", storage).setScore(42);
    const restored = RatingDraft.restore("img8", storage);
    expect(restored.score).toBeNull();
  });

  it("clears storage after submit", () => {
    const storage = memoryStorage();
    const draft = new RatingDraft("img7", storage);
    draft.setScore(42);
    draft.clear();
    expect(RatingDraft.restore("img7", storage).score).toBeNull();
  });
});
