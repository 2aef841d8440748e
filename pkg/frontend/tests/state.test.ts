import { describe, expect, it } from "vitest";

import { REPORT_KEY_ORDER, ServerError, WorkbenchClient } from "../src/api.js";
import { canExplain, canSubmit, reportRows, WorkbenchController } from "../src/state.js";
import { makeStubServer } from "./stubServer.js";

const SLIDE = new Blob([new Uint8Array([137, 80, 78, 71])], { type: "image/png" });

function makeStack(options = {}) {
  const server = makeStubServer(options);
  const client = new WorkbenchClient("", server.fetch);
  return { server, client, controller: new WorkbenchController(client) };
}

describe("submit flow", () => {
  it("reaches analyzed through create, prompt, analyze", async () => {
    const { server, controller } = makeStack();
    const view = await controller.submitAnalysis(SLIDE, "ki-67 details", true);
    expect(view.status).toBe("analyzed");
    expect(view.promptText).toContain("stained slide");
    expect(view.rows.map((r) => r.key)).toEqual([...REPORT_KEY_ORDER]);
    expect(server.calls).toEqual([
      "POST /api/sessions",
      expect.stringMatching(/^POST \/api\/sessions\/[0-9a-f]{32}\/prompt$/),
      expect.stringMatching(/^POST \/api\/sessions\/[0-9a-f]{32}\/analyze$/),
    ]);
  });

  it("surfaces a 502 on analyze as a failed view with the server code", async () => {
    const { controller } = makeStack({ failAnalyze: true });
    await expect(
      controller.submitAnalysis(SLIDE, "ki-67 details", false),
    ).rejects.toBeInstanceOf(ServerError);
    expect(controller.view?.status).toBe("failed");
    expect(controller.lastError).toBe("generation_failed: backend unavailable");
  });

  it("rejects overlapping submits", async () => {
    const { controller } = makeStack();
    const first = controller.submitAnalysis(SLIDE, "q", false);
    await expect(controller.submitAnalysis(SLIDE, "q", false)).rejects.toThrow(
      /in flight/,
    );
    await first;
  });
});

describe("explanation requests", () => {
  it("renders an overlay URL and a history entry per click", async () => {
    const { controller } = makeStack();
    await controller.submitAnalysis(SLIDE, "q", false);
    const id = controller.view!.id;

    const first = await controller.explain("staining_location_per_cell", "gradcam");
    expect(first.overlayUrl).toBe(`/api/sessions/${id}/heatmaps/0.png`);
    expect(first.focusScore).toBeCloseTo(0.42);

    // a duplicate request appends a second history entry
    await controller.explain("staining_location_per_cell", "gradcam");
    expect(controller.view!.explanations).toHaveLength(2);
    expect(controller.view!.explanations[1].overlayUrl).toBe(
      `/api/sessions/${id}/heatmaps/1.png`,
    );
  });

  it("refuses to fire before the session is analyzed", async () => {
    const { controller } = makeStack();
    await expect(
      controller.explain("stain_type", "gradcam"),
    ).rejects.toThrow(/analyzed/);
  });

  it("surfaces server field errors verbatim", async () => {
    const { controller } = makeStack();
    await controller.submitAnalysis(SLIDE, "q", false);
    await expect(controller.explain("banana", "gradcam")).rejects.toBeInstanceOf(
      ServerError,
    );
    expect(controller.lastError).toContain("unknown_field");
  });
});

describe("state guards", () => {
  it("disables submit for empty query, missing file, or busy stage", () => {
    expect(canSubmit("q", true, "idle")).toBe(true);
    expect(canSubmit("   ", true, "idle")).toBe(false);
    expect(canSubmit("q", false, "idle")).toBe(false);
    expect(canSubmit("q", true, "analyzing")).toBe(false);
  });

  it("disables explain controls until analyzed and idle", async () => {
    const { controller } = makeStack();
    expect(canExplain(controller.view, controller.stage)).toBe(false);
    await controller.submitAnalysis(SLIDE, "q", false);
    expect(canExplain(controller.view, "idle")).toBe(true);
    expect(canExplain(controller.view, "analyzing")).toBe(false);
    const failed = { ...controller.view!, status: "failed" as const };
    expect(canExplain(failed, "idle")).toBe(false);
  });
});

describe("report rows", () => {
  it("follow the canonical key order regardless of object order", () => {
    const shuffled = {
      explanation: "e",
      stain_type: "PDL1",
      report: "r",
      staining_location_per_cell: "cytoplasmic",
      staining_intensity_grade: 3,
      type_of_cells_stained: "tumor cells",
      percentage_of_cells_stained: "90-95",
    };
    expect(reportRows(shuffled).map((r) => r.key)).toEqual([...REPORT_KEY_ORDER]);
  });

  it("are empty before analysis", () => {
    expect(reportRows(null)).toEqual([]);
  });
});
