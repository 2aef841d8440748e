// DOM wiring for the workbench console. All logic lives in state.ts and
// blend.ts; this module only moves values between the controller and the
// document.

import { CAM_METHODS, CamMethod, WorkbenchClient } from "./api.js";
import { blendPixels, clampOpacity } from "./blend.js";
import { canExplain, canSubmit, ExplanationView, WorkbenchController } from "./state.js";

interface OverlayState {
  baseChoice: "original" | "inpainted";
  active: ExplanationView | null;
  opacity: number;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

async function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

function drawTo(canvas: HTMLCanvasElement, img: HTMLImageElement): ImageData {
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("canvas 2d context unavailable");
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, canvas.width, canvas.height);
}

export function startApp(): void {
  const client = new WorkbenchClient("");
  const controller = new WorkbenchController(client);
  const overlay: OverlayState = { baseChoice: "original", active: null, opacity: 0.5 };

  const fileInput = el<HTMLInputElement>("slide-file");
  const queryInput = el<HTMLTextAreaElement>("query-text");
  const inpaintBox = el<HTMLInputElement>("inpaint-flag");
  const submitBtn = el<HTMLButtonElement>("submit-btn");
  const stageLabel = el<HTMLSpanElement>("stage-label");
  const errorBox = el<HTMLDivElement>("error-box");
  const promptBox = el<HTMLPreElement>("prompt-text");
  const reportBody = el<HTMLTableSectionElement>("report-rows");
  const methodSelect = el<HTMLSelectElement>("method-select");
  const historyList = el<HTMLUListElement>("history-list");
  const blendCanvas = el<HTMLCanvasElement>("blend-canvas");
  const baseCanvas = el<HTMLCanvasElement>("base-canvas");
  const opacitySlider = el<HTMLInputElement>("opacity-slider");
  const baseToggle = el<HTMLSelectElement>("base-toggle");

  for (const method of CAM_METHODS) {
    const opt = document.createElement("option");
    opt.value = method;
    opt.textContent = method;
    methodSelect.appendChild(opt);
  }

  function refreshControls(): void {
    const fileSelected = (fileInput.files?.length ?? 0) > 0;
    submitBtn.disabled = !canSubmit(queryInput.value, fileSelected, controller.stage);
    const explainable = canExplain(controller.view, controller.stage);
    methodSelect.disabled = !explainable;
    for (const btn of reportBody.querySelectorAll("button")) {
      (btn as HTMLButtonElement).disabled = !explainable;
    }
    stageLabel.textContent =
      controller.stage === "idle"
        ? (controller.view?.status ?? "no session")
        : controller.stage;
    errorBox.textContent = controller.lastError ?? "";
  }

  function renderReport(): void {
    reportBody.replaceChildren();
    for (const row of controller.view?.rows ?? []) {
      const tr = document.createElement("tr");
      const key = document.createElement("td");
      key.textContent = row.key;
      const value = document.createElement("td");
      value.textContent = row.value;
      const action = document.createElement("td");
      const btn = document.createElement("button");
      btn.textContent = "Explain";
      btn.addEventListener("click", () => {
        void runExplain(row.key);
      });
      action.appendChild(btn);
      tr.append(key, value, action);
      reportBody.appendChild(tr);
    }
  }

  async function renderOverlay(): Promise<void> {
    const view = controller.view;
    if (view === null || overlay.active === null) return;
    const baseName = overlay.baseChoice === "original" ? "original.png" : "inpainted.png";
    try {
      const [baseImg, heatImg] = await Promise.all([
        loadImage(client.imageUrl(view.id, baseName)),
        loadImage(overlay.active.overlayUrl),
      ]);
      const baseData = drawTo(baseCanvas, baseImg);
      blendCanvas.width = baseImg.naturalWidth;
      blendCanvas.height = baseImg.naturalHeight;
      const ctx = blendCanvas.getContext("2d");
      if (ctx === null) throw new Error("canvas 2d context unavailable");
      ctx.drawImage(heatImg, 0, 0);
      const heatData = ctx.getImageData(0, 0, blendCanvas.width, blendCanvas.height);
      const mixed = blendPixels(baseData.data, heatData.data, overlay.opacity);
      const frame = new ImageData(blendCanvas.width, blendCanvas.height);
      frame.data.set(mixed);
      ctx.putImageData(frame, 0, 0);
    } catch {
      const ctx = blendCanvas.getContext("2d");
      if (ctx !== null) {
        ctx.fillStyle = "#ddd";
        ctx.fillRect(0, 0, blendCanvas.width, blendCanvas.height);
        ctx.fillStyle = "#333";
        ctx.fillText("image unavailable", 8, 16);
      }
    }
  }

  function renderHistory(): void {
    historyList.replaceChildren();
    for (const item of controller.view?.explanations ?? []) {
      const li = document.createElement("li");
      const score = item.focusScore === null ? "" : ` (focus ${item.focusScore.toFixed(3)})`;
      li.textContent = `${item.field} / ${item.method}${score}`;
      li.addEventListener("click", () => {
        overlay.active = item;
        void renderOverlay();
      });
      historyList.appendChild(li);
    }
  }

  async function runExplain(field: string): Promise<void> {
    try {
      const record = await controller.explain(field, methodSelect.value as CamMethod);
      overlay.active = record;
      renderHistory();
      await renderOverlay();
    } catch {
      // controller.lastError already holds the server code
    }
    refreshControls();
  }

  submitBtn.addEventListener("click", async () => {
    const file = fileInput.files?.[0];
    if (file === undefined) return;
    refreshControls();
    try {
      await controller.submitAnalysis(file, queryInput.value, inpaintBox.checked);
      promptBox.textContent = controller.view?.promptText ?? "";
      renderReport();
    } catch {
      promptBox.textContent = controller.view?.promptText ?? "";
    }
    refreshControls();
  });

  opacitySlider.addEventListener("input", () => {
    overlay.opacity = clampOpacity(Number(opacitySlider.value));
    void renderOverlay();
  });
  baseToggle.addEventListener("change", () => {
    overlay.baseChoice = baseToggle.value === "inpainted" ? "inpainted" : "original";
    void renderOverlay();
  });
  queryInput.addEventListener("input", refreshControls);
  fileInput.addEventListener("change", refreshControls);

  refreshControls();
}

if (typeof document !== "undefined" && document.getElementById("submit-btn") !== null) {
  startApp();
}
