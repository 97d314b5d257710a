/** End-to-end round trip against the live scoring/annotation service:
 * six raters (3 experienced + 3 junior) submit through the real UI code
 * path, then the aggregate view must show the server-computed MOS 75.9
 * and SD 5. */

import { type ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationApp, type AppConfig } from "../src/app.js";
import { AnnotationApi } from "../src/api.js";

const PORT = 8973;
const BASE = `http://127.0.0.1:${PORT}`;

function pythonAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import fthnet.service, uvicorn"], {
    encoding: "utf-8",
  });
  return probe.status === 0;
}

const haveService = pythonAvailable();
let server: ChildProcess | null = null;

async function waitForService(): Promise<void> {
  for (let i = 0; i < 100; i += 1) {
    try {
      const response = await fetch(`${BASE}/v1/spec`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  if (!haveService) return;
  const storeDir = mkdtempSync(join(tmpdir(), "fthnet-ui-store-"));
  server = spawn(
    "python3",
    [
      "-c",
      [
        "import uvicorn",
        "from fthnet.service import create_app",
        `app = create_app(None, store_dir=${JSON.stringify(storeDir)})`,
        `uvicorn.run(app, host='127.0.0.1', port=${PORT}, log_level='error')`,
      ].join("\n"),
    ],
    { stdio: "ignore" },
  );
  await waitForService();
});

afterAll(() => {
  server?.kill();
});

describe.skipIf(!haveService)("annotation round trip against the live service", () => {
  const raters: Array<[string, "experienced" | "junior", number]> = [
    ["e0", "experienced", 80],
    ["e1", "experienced", 80],
    ["e2", "experienced", 80],
    ["j0", "junior", 70],
    ["j1", "junior", 70],
    ["j2", "junior", 70],
  ];

  it("six rater submissions aggregate to MOS 75.9 with SD 5", async () => {
    const api = new AnnotationApi({ baseUrl: BASE });
    const projectId = await api.createProject(
      "integration",
      Object.fromEntries(raters.map(([id, tier]) => [id, tier])),
    );
    await api.addImages(projectId, [{ image_id: "img0", path: "/dev/null" }]);

    for (const [raterId, tier, score] of raters) {
      const root = document.createElement("div");
      document.body.appendChild(root);
      const config: AppConfig = {
        baseUrl: BASE,
        projectId,
        raterId,
        raterTier: tier,
        storage: null,
      };
      const app = new AnnotationApp(root, config);
      await app.start();
      expect(app.current?.image_id).toBe("img0");

      // drive the real slider control; fractional writes snap to integers
      const slider = root.querySelector<HTMLInputElement>("#score-slider")!;
      slider.value = String(score + 0.4);
      slider.dispatchEvent(new Event("input", { bubbles: true }));
      expect(app.draft?.score).toBe(score);
      root.querySelector<HTMLButtonElement>('button[data-level="Good"]')!.click();
      await app.submit();
      expect(app.view).toBe("done");
    }

    // aggregate through the UI of one more participant
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new AnnotationApp(root, {
      baseUrl: BASE,
      projectId,
      raterId: "e0",
      raterTier: "experienced",
      storage: null,
    });
    await app.showAggregate();
    const row = root.querySelector('tr[data-image="img0"]')!;
    expect(row.querySelector(".mos")?.textContent).toBe("75.90");
    // population SD of (80,80,80,70,70,70) is exactly 5
    expect(row.querySelector(".sd")?.textContent).toBe("5.00");

    // the server is the single source of truth for these numbers
    const aggregate = await app.api.aggregate(projectId);
    expect(aggregate.images.img0?.mos).toBeCloseTo(75.9, 9);
    expect(aggregate.images.img0?.sd).toBeCloseTo(5.0, 9);
  });

  it("duplicate submission via the UI is non-blocking", async () => {
    const api = new AnnotationApi({ baseUrl: BASE });
    const projectId = await api.createProject("dups", { solo: "experienced" });
    await api.addImages(projectId, [
      { image_id: "a", path: "/dev/null" },
      { image_id: "b", path: "/dev/null" },
    ]);
    await api.submitRating({
      project_id: projectId,
      image_id: "a",
      rater_id: "solo",
      score: 50,
      level: "Usable",
    });

    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new AnnotationApp(root, {
      baseUrl: BASE,
      projectId,
      raterId: "solo",
      raterTier: "experienced",
      storage: null,
    });
    await app.start();
    // the service already saw a rating for "a", so next serves "b"
    expect(app.current?.image_id).toBe("b");
    app.draft!.setScore(61);
    app.draft!.setLevel("Usable");
    await app.submit();
    expect(app.view).toBe("done");
  });
});
