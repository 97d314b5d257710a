/** Bootstrap: configuration comes from the query string (and sticks in
 * localStorage for the next session). */

import { AnnotationApp, type AppConfig } from "./app.js";

const CONFIG_KEY = "fthnet-ui-config";

export function readConfig(search: string, storage: Storage): AppConfig | null {
  const params = new URLSearchParams(search);
  const stored = storage.getItem(CONFIG_KEY);
  const base = stored ? (JSON.parse(stored) as Partial<AppConfig>) : {};
  const config: Partial<AppConfig> = {
    baseUrl: params.get("service") ?? base.baseUrl ?? window.location.origin,
    projectId: params.get("project") ?? base.projectId,
    raterId: params.get("rater") ?? base.raterId,
    raterTier: (params.get("tier") as AppConfig["raterTier"]) ?? base.raterTier,
    referenceProjectId: params.get("reference") ?? base.referenceProjectId,
  };
  if (!config.projectId || !config.raterId || !config.raterTier) {
    return null;
  }
  storage.setItem(CONFIG_KEY, JSON.stringify(config));
  return { ...config, storage } as AppConfig;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const root = document.getElementById("app") as HTMLElement;
  const config = readConfig(window.location.search, window.localStorage);
  if (!config) {
    root.innerHTML = `<p>Missing configuration. Open this page as
      <code>?service=http://host:port&amp;project=ID&amp;rater=NAME&amp;tier=experienced|junior[&amp;reference=ID]</code></p>`;
  } else {
    const app = new AnnotationApp(root, config);
    void app.start();
  }
}
