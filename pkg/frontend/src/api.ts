/** Typed client for the annotation service. All aggregation numbers come
 * from the server; the UI never computes MOS locally. */

import type { Level } from "./guidance.js";

export interface ApiConfig {
  baseUrl: string;
}

export interface NextImage {
  image_id: string;
  is_reference: boolean;
  level_hint: Level | null;
  file: string;
}

export interface ImageListEntry extends NextImage {}

export interface AggregateImage {
  mos: number | null;
  sd: number | null;
  n_ratings: number;
  disagreement: boolean;
}

export interface AggregateResponse {
  images: Record<string, AggregateImage>;
  sd_quartiles: { q25: number | null; q50: number | null; q75: number | null };
}

export interface RatingSubmission {
  project_id: string;
  image_id: string;
  rater_id: string;
  score: number;
  level: Level;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { error?: string };
    return body.error ?? response.statusText;
  } catch {
    return response.statusText;
  }
}

export class AnnotationApi {
  constructor(private readonly config: ApiConfig) {}

  private url(path: string): string {
    return this.config.baseUrl.replace(/\/$/, "") + path;
  }

  private async checked(response: Response): Promise<Response> {
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return response;
  }

  async createProject(
    name: string,
    raters: Record<string, string>,
    isReference = false,
  ): Promise<string> {
    const response = await this.checked(
      await fetch(this.url("/v1/projects"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ name, raters, is_reference: isReference }),
      }),
    );
    const body = (await response.json()) as { project_id: string };
    return body.project_id;
  }

  async addImages(
    projectId: string,
    images: { image_id: string; path: string; is_reference?: boolean; level_hint?: string }[],
  ): Promise<void> {
    await this.checked(
      await fetch(this.url(`/v1/projects/${projectId}/images`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ images }),
      }),
    );
  }

  /** Next unrated image for the rater; null when everything is rated. */
  async fetchNext(projectId: string, raterId: string): Promise<NextImage | null> {
    const response = await fetch(
      this.url(`/v1/projects/${projectId}/next?rater=${encodeURIComponent(raterId)}`),
    );
    if (response.status === 204) {
      return null;
    }
    await this.checked(response);
    return (await response.json()) as NextImage;
  }

  async listImages(projectId: string): Promise<ImageListEntry[]> {
    const response = await this.checked(
      await fetch(this.url(`/v1/projects/${projectId}/images`)),
    );
    const body = (await response.json()) as { images: ImageListEntry[] };
    return body.images;
  }

  async submitRating(rating: RatingSubmission): Promise<void> {
    await this.checked(
      await fetch(this.url("/v1/ratings"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(rating),
      }),
    );
  }

  async aggregate(projectId: string): Promise<AggregateResponse> {
    const response = await this.checked(
      await fetch(this.url(`/v1/projects/${projectId}/aggregate`)),
    );
    return (await response.json()) as AggregateResponse;
  }

  fileUrl(path: string): string {
    return this.url(path);
  }
}
