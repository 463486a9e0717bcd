import type {
  AnnotationPayload,
  AnnotationView,
  NextResponse,
  Progress,
  SampleView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin client over the annotation service HTTP API. */
export class ApiClient {
  constructor(
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    private readonly base: string = "",
  ) {}

  private async call<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  nextSample(after?: string): Promise<NextResponse> {
    const query = after ? `?after=${encodeURIComponent(after)}` : "";
    return this.call<NextResponse>(`/api/samples/next${query}`);
  }

  getSample(id: string): Promise<SampleView> {
    return this.call<SampleView>(`/api/samples/${encodeURIComponent(id)}`);
  }

  putAnnotation(id: string, payload: AnnotationPayload): Promise<AnnotationView> {
    return this.call<AnnotationView>(
      `/api/samples/${encodeURIComponent(id)}/annotation`,
      {
        method: "PUT",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      },
    );
  }

  progress(): Promise<Progress> {
    return this.call<Progress>("/api/progress");
  }

  audioUrl(id: string): string {
    return `${this.base}/api/audio/${encodeURIComponent(id)}`;
  }
}
