// Typed client for the workbench HTTP API. The fetch implementation is
// injectable so tests can run against an in-memory stub server.

export const REPORT_KEY_ORDER = [
  "stain_type",
  "percentage_of_cells_stained",
  "staining_intensity_grade",
  "type_of_cells_stained",
  "staining_location_per_cell",
  "report",
  "explanation",
] as const;

export type ReportKey = (typeof REPORT_KEY_ORDER)[number];

export const CAM_METHODS = [
  "gradcam",
  "gradcampp",
  "hirescam",
  "guided_gradcam",
] as const;

export type CamMethod = (typeof CAM_METHODS)[number];

export type SessionStatus =
  | "created"
  | "prompted"
  | "analyzed"
  | "failed";

export interface SpecializedPrompt {
  system_prompt: string;
  notes: string;
  required_json_keys: string[];
}

export interface ExplanationRecord {
  field: string;
  method: CamMethod;
  index: number;
  map_ref: string;
  overlay_ref: string;
  focus_score: number | null;
}

export interface Session {
  id: string;
  status: SessionStatus;
  query: string;
  inpainting: boolean;
  specialized_prompt: SpecializedPrompt | null;
  report: Record<string, unknown> | null;
  explanations: ExplanationRecord[];
  error: string | null;
}

export interface ApiError {
  error: string;
  message: string;
}

export class ServerError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, body: ApiError) {
    super(body.message);
    this.code = body.error;
    this.status = status;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function unwrap<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let body: ApiError;
    try {
      body = (await resp.json()) as ApiError;
    } catch {
      body = { error: "http_error", message: `status ${resp.status}` };
    }
    throw new ServerError(resp.status, body);
  }
  return (await resp.json()) as T;
}

export class WorkbenchClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl: FetchLike = (i, o) => fetch(i, o)) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl;
  }

  async createSession(
    image: Blob,
    query: string,
    inpainting: boolean,
  ): Promise<Session> {
    const form = new FormData();
    form.append("image", image, "slide.png");
    form.append("query", query);
    form.append("inpainting", String(inpainting));
    const resp = await this.fetchImpl(`${this.base}/api/sessions`, {
      method: "POST",
      body: form,
    });
    return unwrap<Session>(resp);
  }

  async runPrompt(id: string): Promise<Session> {
    const resp = await this.fetchImpl(`${this.base}/api/sessions/${id}/prompt`, {
      method: "POST",
    });
    return unwrap<Session>(resp);
  }

  async runAnalysis(id: string): Promise<Session> {
    const resp = await this.fetchImpl(`${this.base}/api/sessions/${id}/analyze`, {
      method: "POST",
    });
    return unwrap<Session>(resp);
  }

  async requestExplanation(
    id: string,
    field: string,
    method: CamMethod,
  ): Promise<ExplanationRecord> {
    const resp = await this.fetchImpl(
      `${this.base}/api/sessions/${id}/explanations`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ field, method }),
      },
    );
    return unwrap<ExplanationRecord>(resp);
  }

  async getSession(id: string): Promise<Session> {
    const resp = await this.fetchImpl(`${this.base}/api/sessions/${id}`);
    return unwrap<Session>(resp);
  }

  imageUrl(id: string, name: "original.png" | "inpainted.png"): string {
    return `${this.base}/api/sessions/${id}/image/${name}`;
  }

  heatmapUrl(id: string, index: number): string {
    return `${this.base}/api/sessions/${id}/heatmaps/${index}.png`;
  }
}
