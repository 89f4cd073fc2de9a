import { describe, expect, it } from "vitest";

import {
  HistoryEntry,
  beginRequest,
  canSubmitInpaint,
  canSubmitLibrary,
  canSubmitPrompt,
  completeRequest,
  failRequest,
  initialState,
  parseSeed,
} from "../src/state.js";

const entry: HistoryEntry = {
  requestId: "r1",
  scenario: "prompt",
  tunedPrompt: "a crack",
  wallTimeMs: 12,
  costTotal: "0.000100",
  artifactUrl: "/v1/artifacts/abc",
};

describe("submission guards", () => {
  it("prompt requires non-whitespace text", () => {
    const state = initialState();
    expect(canSubmitPrompt(state)).toBe(false);
    state.promptDraft = "   \n\t";
    expect(canSubmitPrompt(state)).toBe(false);
    state.promptDraft = " crack on the rail ";
    expect(canSubmitPrompt(state)).toBe(true);
  });

  it("library requires both selections", () => {
    const state = initialState();
    expect(canSubmitLibrary(state)).toBe(false);
    state.materialId = "rail_head";
    expect(canSubmitLibrary(state)).toBe(false);
    state.defectId = "crack";
    expect(canSubmitLibrary(state)).toBe(true);
  });

  it("inpaint requires an uploaded image and an instruction", () => {
    const state = initialState();
    state.instructionDraft = "add rust";
    expect(canSubmitInpaint(state)).toBe(false);
    state.hasImage = true;
    expect(canSubmitInpaint(state)).toBe(true);
    state.instructionDraft = "  ";
    expect(canSubmitInpaint(state)).toBe(false);
  });

  it("an in-flight request blocks that tab only", () => {
    const state = initialState();
    state.promptDraft = "crack";
    state.materialId = "rail_head";
    state.defectId = "crack";
    expect(beginRequest(state, "prompt")).toBe(true);
    expect(canSubmitPrompt(state)).toBe(false);
    expect(canSubmitLibrary(state)).toBe(true); // other tabs unaffected
    expect(beginRequest(state, "prompt")).toBe(false); // double submit
  });
});

describe("request lifecycle", () => {
  it("completion clears pending and prepends history", () => {
    const state = initialState();
    beginRequest(state, "prompt");
    completeRequest(state, "prompt", entry);
    expect(state.pending.prompt).toBe(false);
    expect(state.history).toEqual([entry]);
    const second = { ...entry, requestId: "r2" };
    beginRequest(state, "prompt");
    completeRequest(state, "prompt", second);
    expect(state.history.map((e) => e.requestId)).toEqual(["r2", "r1"]);
  });

  it("failure clears pending without touching history", () => {
    const state = initialState();
    beginRequest(state, "inpaint");
    failRequest(state, "inpaint");
    expect(state.pending.inpaint).toBe(false);
    expect(state.history).toEqual([]);
  });
});

describe("parseSeed", () => {
  it("accepts non-negative integers only", () => {
    expect(parseSeed("7")).toBe(7);
    expect(parseSeed(" 42 ")).toBe(42);
    expect(parseSeed("0")).toBe(0);
    expect(parseSeed("")).toBeNull();
    expect(parseSeed("   ")).toBeNull();
    expect(parseSeed("-3")).toBeNull();
    expect(parseSeed("1.5")).toBeNull();
    expect(parseSeed("abc")).toBeNull();
  });
});
