/**
 * DOM wiring: three tabbed panels bound to the generation endpoints,
 * plus the mask editor overlay and a shared result/history pane.
 *
 * Submission logic (guards, pending flags, history) lives in state.ts;
 * this module only moves values between the DOM and those helpers.
 */

import { ApiError, GenerateResponse, StudioApi } from "./api.js";
import { MaskGrid } from "./mask.js";
import {
  Scenario,
  StudioState,
  beginRequest,
  canSubmitInpaint,
  canSubmitLibrary,
  canSubmitPrompt,
  completeRequest,
  failRequest,
  initialState,
  parseSeed,
} from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

interface ResultPane {
  root: HTMLElement;
  show(api: StudioApi, scenario: Scenario, response: GenerateResponse): void;
  showError(error: unknown): void;
  showPending(): void;
}

function buildResultPane(state: StudioState): ResultPane {
  const root = el("section", "result");
  const status = el("p", "status", "Submit a panel to generate a texture.");
  const image = el("img", "artifact");
  image.alt = "generated texture";
  const tuned = el("p", "tuned");
  const meterLine = el("p", "meter");
  const errorBox = el("p", "error");
  const historyTitle = el("h3", "", "History");
  const historyList = el("ul", "history");
  root.append(status, image, tuned, meterLine, errorBox, historyTitle, historyList);

  function renderHistory(): void {
    historyList.replaceChildren(
      ...state.history.slice(0, 12).map((entry) => {
        const item = el("li");
        item.textContent = `${entry.scenario} ${entry.requestId} — ${entry.wallTimeMs} ms, cost ${entry.costTotal}`;
        return item;
      }),
    );
  }

  return {
    root,
    show(api, scenario, response) {
      errorBox.textContent = "";
      status.textContent = `${scenario}: done (request ${response.request_id})`;
      // the server's bytes, untouched: the <img> points straight at the
      // artifact endpoint rather than at any re-encoded copy
      image.src = api.artifactUrl(response);
      tuned.textContent = `tuned prompt: ${response.tuned_prompt}`;
      meterLine.textContent =
        `${response.meter.wall_time_ms} ms, ` +
        `${response.meter.prompt_tokens}+${response.meter.completion_tokens} tokens, ` +
        `cost ${response.cost.total}`;
      completeRequest(state, scenario, {
        requestId: response.request_id,
        scenario,
        tunedPrompt: response.tuned_prompt,
        wallTimeMs: response.meter.wall_time_ms,
        costTotal: response.cost.total,
        artifactUrl: response.artifact_url,
      });
      renderHistory();
    },
    showError(error) {
      if (error instanceof ApiError) {
        status.textContent = "failed";
        errorBox.innerHTML = "";
        const stage = el("strong", "stage", error.stage);
        errorBox.append(stage, document.createTextNode(`/${error.code}: ${error.message}`));
      } else {
        status.textContent = "failed";
        errorBox.textContent = String(error);
      }
    },
    showPending() {
      status.textContent = "generating…";
      errorBox.textContent = "";
    },
  };
}

function seedField(state: StudioState): HTMLElement {
  const details = el("details", "advanced");
  details.append(el("summary", "", "Advanced"));
  const label = el("label", "", "Seed ");
  const input = el("input") as HTMLInputElement;
  input.type = "number";
  input.min = "0";
  input.placeholder = "random";
  input.addEventListener("input", () => {
    state.seed = parseSeed(input.value);
  });
  label.append(input);
  details.append(label);
  return details;
}

async function submit(
  state: StudioState,
  tab: Scenario,
  button: HTMLButtonElement,
  pane: ResultPane,
  api: StudioApi,
  call: () => Promise<GenerateResponse>,
): Promise<void> {
  if (!beginRequest(state, tab)) return;
  button.disabled = true;
  pane.showPending();
  try {
    pane.show(api, tab, await call());
  } catch (error) {
    failRequest(state, tab);
    pane.showError(error);
  } finally {
    button.disabled = false;
  }
}

function buildLibraryPanel(api: StudioApi, state: StudioState, pane: ResultPane): HTMLElement {
  const panel = el("form", "panel");
  const materialSelect = el("select") as HTMLSelectElement;
  const defectSelect = el("select") as HTMLSelectElement;
  const button = el("button", "", "Generate") as HTMLButtonElement;
  button.type = "submit";

  api
    .library()
    .then((doc) => {
      for (const material of doc.materials) {
        const option = el("option", "", material.display_name) as HTMLOptionElement;
        option.value = material.material_id;
        materialSelect.append(option);
      }
      for (const defect of doc.defects) {
        const option = el("option", "", defect.defect_id) as HTMLOptionElement;
        option.value = defect.defect_id;
        defectSelect.append(option);
      }
      state.materialId = materialSelect.value;
      state.defectId = defectSelect.value;
    })
    .catch((error) => pane.showError(error));

  materialSelect.addEventListener("change", () => (state.materialId = materialSelect.value));
  defectSelect.addEventListener("change", () => (state.defectId = defectSelect.value));

  panel.addEventListener("submit", (event) => {
    event.preventDefault();
    if (!canSubmitLibrary(state)) return;
    void submit(state, "library", button, pane, api, () =>
      api.generateLibrary(state.materialId, state.defectId, state.seed),
    );
  });

  const materialLabel = el("label", "", "Material ");
  materialLabel.append(materialSelect);
  const defectLabel = el("label", "", "Defect ");
  defectLabel.append(defectSelect);
  panel.append(materialLabel, defectLabel, seedField(state), button);
  return panel;
}

function buildPromptPanel(api: StudioApi, state: StudioState, pane: ResultPane): HTMLElement {
  const panel = el("form", "panel");
  const textarea = el("textarea") as HTMLTextAreaElement;
  textarea.placeholder = "e.g. crack on the rail";
  textarea.rows = 3;
  const guard = el("p", "guard");
  const button = el("button", "", "Generate") as HTMLButtonElement;
  button.type = "submit";

  textarea.addEventListener("input", () => {
    state.promptDraft = textarea.value;
    guard.textContent = "";
  });

  panel.addEventListener("submit", (event) => {
    event.preventDefault();
    if (!canSubmitPrompt(state)) {
      // client-side guard: no network call for an empty prompt
      guard.textContent = "Describe the defect first — the prompt cannot be empty.";
      return;
    }
    void submit(state, "prompt", button, pane, api, () =>
      api.generatePrompt(state.promptDraft, state.seed),
    );
  });

  panel.append(textarea, guard, seedField(state), button);
  return panel;
}

interface MaskEditor {
  root: HTMLElement;
  grid(): MaskGrid | null;
  imageBlob(): Blob | null;
}

function buildMaskEditor(state: StudioState): MaskEditor {
  const root = el("div", "mask-editor");
  const fileInput = el("input") as HTMLInputElement;
  fileInput.type = "file";
  fileInput.accept = "image/png";
  const canvas = el("canvas", "paint") as HTMLCanvasElement;
  const brushLabel = el("label", "", "Brush ");
  const brushInput = el("input") as HTMLInputElement;
  brushInput.type = "range";
  brushInput.min = "4";
  brushInput.max = "96";
  brushInput.value = "24";
  brushLabel.append(brushInput);
  const eraserLabel = el("label", "", "Eraser ");
  const eraserInput = el("input") as HTMLInputElement;
  eraserInput.type = "checkbox";
  eraserLabel.append(eraserInput);
  const undoButton = el("button", "", "Undo") as HTMLButtonElement;
  undoButton.type = "button";
  const clearButton = el("button", "", "Clear") as HTMLButtonElement;
  clearButton.type = "button";

  let grid: MaskGrid | null = null;
  let blob: Blob | null = null;
  let bitmap: ImageBitmap | null = null;
  let drawing = false;
  let last: [number, number] | null = null;

  function redraw(): void {
    if (!bitmap || !grid) return;
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    ctx.drawImage(bitmap, 0, 0);
    // translucent overlay wherever the mask is painted
    const overlay = ctx.getImageData(0, 0, canvas.width, canvas.height);
    for (let y = 0; y < grid.height; y++) {
      for (let x = 0; x < grid.width; x++) {
        if (grid.valueAt(x, y) >= 128) {
          const i = (y * grid.width + x) * 4;
          overlay.data[i] = Math.min(255, overlay.data[i] + 120);
          overlay.data[i + 3] = 255;
        }
      }
    }
    ctx.putImageData(overlay, 0, 0);
  }

  fileInput.addEventListener("change", async () => {
    const file = fileInput.files?.[0];
    if (!file) return;
    blob = file;
    bitmap = await createImageBitmap(file);
    canvas.width = bitmap.width;
    canvas.height = bitmap.height;
    // the mask layer always matches the uploaded image pixel-for-pixel
    grid = new MaskGrid(bitmap.width, bitmap.height);
    state.hasImage = true;
    redraw();
  });

  function gridPoint(event: PointerEvent): [number, number] {
    const rect = canvas.getBoundingClientRect();
    return [
      ((event.clientX - rect.left) * canvas.width) / rect.width,
      ((event.clientY - rect.top) * canvas.height) / rect.height,
    ];
  }

  canvas.addEventListener("pointerdown", (event) => {
    if (!grid) return;
    drawing = true;
    grid.beginStroke();
    const [x, y] = gridPoint(event);
    const radius = Number(brushInput.value);
    if (eraserInput.checked) grid.erase(x, y, radius);
    else grid.paint(x, y, radius);
    last = [x, y];
    redraw();
  });
  canvas.addEventListener("pointermove", (event) => {
    if (!drawing || !grid || !last) return;
    const [x, y] = gridPoint(event);
    grid.paintLine(last[0], last[1], x, y, Number(brushInput.value), eraserInput.checked);
    last = [x, y];
    redraw();
  });
  window.addEventListener("pointerup", () => {
    drawing = false;
    last = null;
  });

  undoButton.addEventListener("click", () => {
    if (grid?.undo()) redraw();
  });
  clearButton.addEventListener("click", () => {
    grid?.clear();
    redraw();
  });

  root.append(fileInput, canvas, brushLabel, eraserLabel, undoButton, clearButton);
  return {
    root,
    grid: () => grid,
    imageBlob: () => blob,
  };
}

function buildInpaintPanel(api: StudioApi, state: StudioState, pane: ResultPane): HTMLElement {
  const panel = el("form", "panel");
  const editor = buildMaskEditor(state);
  const instruction = el("input") as HTMLInputElement;
  instruction.type = "text";
  instruction.placeholder = "e.g. add rust to this area";
  const guard = el("p", "guard");
  const button = el("button", "", "Inpaint") as HTMLButtonElement;
  button.type = "submit";

  instruction.addEventListener("input", () => {
    state.instructionDraft = instruction.value;
    guard.textContent = "";
  });

  panel.addEventListener("submit", (event) => {
    event.preventDefault();
    if (!canSubmitInpaint(state)) {
      guard.textContent = "Upload an image and describe the edit first.";
      return;
    }
    const image = editor.imageBlob();
    const grid = editor.grid();
    if (!image || !grid) return;
    const mask = grid.isEmpty()
      ? null
      : new Blob([grid.toPngBytes()], { type: "image/png" });
    void submit(state, "inpaint", button, pane, api, () =>
      api.generateInpaint(image, mask, state.instructionDraft, state.seed),
    );
  });

  const instructionLabel = el("label", "", "Instruction ");
  instructionLabel.append(instruction);
  panel.append(editor.root, instructionLabel, guard, seedField(state), button);
  return panel;
}

export function buildStudio(root: HTMLElement, api: StudioApi): StudioState {
  const state = initialState();
  const pane = buildResultPane(state);

  const tabBar = el("nav", "tabs");
  const panels: Record<Scenario, HTMLElement> = {
    library: buildLibraryPanel(api, state, pane),
    prompt: buildPromptPanel(api, state, pane),
    inpaint: buildInpaintPanel(api, state, pane),
  };
  const labels: Record<Scenario, string> = {
    library: "Library",
    prompt: "Prompt",
    inpaint: "Inpaint",
  };

  function selectTab(tab: Scenario): void {
    state.tab = tab;
    for (const [name, panel] of Object.entries(panels)) {
      panel.style.display = name === tab ? "" : "none";
    }
    for (const child of tabBar.children) {
      child.classList.toggle("active", child.textContent === labels[tab]);
    }
  }

  for (const tab of ["library", "prompt", "inpaint"] as Scenario[]) {
    const button = el("button", "tab", labels[tab]) as HTMLButtonElement;
    button.type = "button";
    button.addEventListener("click", () => selectTab(tab));
    tabBar.append(button);
  }

  root.append(tabBar, panels.library, panels.prompt, panels.inpaint, pane.root);
  selectTab("library");
  return state;
}
