// View-model and state guards. The guards mirror the server's session state
// machine so the UI never issues a request that the server would 409.

import {
  CamMethod,
  ExplanationRecord,
  REPORT_KEY_ORDER,
  ServerError,
  Session,
  WorkbenchClient,
} from "./api.js";

export interface ReportRow {
  key: string;
  value: string;
}

export interface ExplanationView {
  field: string;
  method: CamMethod;
  overlayUrl: string;
  focusScore: number | null;
}

export interface SessionView {
  id: string;
  status: Session["status"];
  query: string;
  promptText: string | null;
  rows: ReportRow[];
  explanations: ExplanationView[];
  error: string | null;
}

export type Stage = "idle" | "creating" | "prompting" | "analyzing";

/** Canonical-order report rows; every value comes from the server response. */
export function reportRows(report: Record<string, unknown> | null): ReportRow[] {
  if (report === null) return [];
  return REPORT_KEY_ORDER.filter((k) => k in report).map((k) => ({
    key: k,
    value: String(report[k]),
  }));
}

export function toView(session: Session, client: WorkbenchClient): SessionView {
  return {
    id: session.id,
    status: session.status,
    query: session.query,
    promptText: session.specialized_prompt?.system_prompt ?? null,
    rows: reportRows(session.report),
    explanations: session.explanations.map((e: ExplanationRecord) => ({
      field: e.field,
      method: e.method,
      overlayUrl: client.heatmapUrl(session.id, e.index),
      focusScore: e.focus_score,
    })),
    error: session.error,
  };
}

export function canSubmit(query: string, fileSelected: boolean, stage: Stage): boolean {
  return stage === "idle" && fileSelected && query.trim().length > 0;
}

export function canExplain(view: SessionView | null, stage: Stage): boolean {
  return stage === "idle" && view !== null && view.status === "analyzed";
}

export class WorkbenchController {
  private readonly client: WorkbenchClient;
  view: SessionView | null = null;
  stage: Stage = "idle";
  lastError: string | null = null;

  constructor(client: WorkbenchClient) {
    this.client = client;
  }

  /** create -> prompt -> analyze, updating the view after each stage. */
  async submitAnalysis(image: Blob, query: string, inpaint: boolean): Promise<SessionView> {
    if (this.stage !== "idle") {
      throw new Error("a request is already in flight");
    }
    this.lastError = null;
    try {
      this.stage = "creating";
      let session = await this.client.createSession(image, query, inpaint);
      this.view = toView(session, this.client);
      this.stage = "prompting";
      session = await this.client.runPrompt(session.id);
      this.view = toView(session, this.client);
      this.stage = "analyzing";
      session = await this.client.runAnalysis(session.id);
      this.view = toView(session, this.client);
      return this.view;
    } catch (err) {
      this.recordFailure(err);
      throw err;
    } finally {
      this.stage = "idle";
    }
  }

  async explain(field: string, method: CamMethod): Promise<ExplanationView> {
    if (!canExplain(this.view, this.stage)) {
      throw new Error("explanations need an analyzed session");
    }
    const view = this.view as SessionView;
    this.stage = "creating";
    try {
      const record = await this.client.requestExplanation(view.id, field, method);
      const session = await this.client.getSession(view.id);
      this.view = toView(session, this.client);
      return {
        field: record.field,
        method: record.method,
        overlayUrl: this.client.heatmapUrl(view.id, record.index),
        focusScore: record.focus_score,
      };
    } catch (err) {
      this.recordFailure(err);
      throw err;
    } finally {
      this.stage = "idle";
    }
  }

  private recordFailure(err: unknown): void {
    if (err instanceof ServerError) {
      // surface the server code verbatim
      this.lastError = `${err.code}: ${err.message}`;
      if (this.view !== null) {
        this.view = { ...this.view, status: "failed", error: this.lastError };
      }
    } else {
      this.lastError = String(err);
    }
  }
}
