/**
 * Studio state and the pure transition helpers the panels share.
 *
 * Kept DOM-free so submission guards (empty prompt, one in-flight
 * request per tab) are unit-testable.
 */

export type Scenario = "library" | "prompt" | "inpaint";

export interface HistoryEntry {
  requestId: string;
  scenario: Scenario;
  tunedPrompt: string;
  wallTimeMs: number;
  costTotal: string;
  artifactUrl: string;
}

export interface StudioState {
  tab: Scenario;
  pending: Record<Scenario, boolean>;
  history: HistoryEntry[];
  promptDraft: string;
  materialId: string;
  defectId: string;
  instructionDraft: string;
  hasImage: boolean;
  seed: number | null;
}

export function initialState(): StudioState {
  return {
    tab: "library",
    pending: { library: false, prompt: false, inpaint: false },
    history: [],
    promptDraft: "",
    materialId: "",
    defectId: "",
    instructionDraft: "",
    hasImage: false,
    seed: null,
  };
}

export function canSubmitLibrary(state: StudioState): boolean {
  return !state.pending.library && state.materialId !== "" && state.defectId !== "";
}

export function canSubmitPrompt(state: StudioState): boolean {
  return !state.pending.prompt && state.promptDraft.trim() !== "";
}

export function canSubmitInpaint(state: StudioState): boolean {
  return !state.pending.inpaint && state.hasImage && state.instructionDraft.trim() !== "";
}

/** Mark a tab busy; returns false (and changes nothing) if it already is. */
export function beginRequest(state: StudioState, tab: Scenario): boolean {
  if (state.pending[tab]) return false;
  state.pending[tab] = true;
  return true;
}

export function completeRequest(state: StudioState, tab: Scenario, entry: HistoryEntry): void {
  state.pending[tab] = false;
  state.history.unshift(entry);
}

export function failRequest(state: StudioState, tab: Scenario): void {
  state.pending[tab] = false;
}

export function parseSeed(text: string): number | null {
  const trimmed = text.trim();
  if (trimmed === "") return null;
  const value = Number(trimmed);
  if (!Number.isInteger(value) || value < 0) return null;
  return value;
}
