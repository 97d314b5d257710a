/** Rater guidance shown next to every image. */

export const GUIDANCE_QUESTIONS: readonly string[] = [
  "Whether the degree of fundus image degradation is serious compared to the images in the same category.",
  "Whether the structural information that fundus images provide (blood vessel shape and quantity) is comprehensive.",
  "Whether the pathological feature is clear enough for clinical diagnosis.",
  "Whether the critical position (macula, optic disk, etc.) is visible and clear.",
];

export const LEVELS = ["Good", "Usable", "Reject"] as const;
export type Level = (typeof LEVELS)[number];

export const LEVEL_KEYS: Record<string, Level> = {
  "1": "Good",
  "2": "Usable",
  "3": "Reject",
};
