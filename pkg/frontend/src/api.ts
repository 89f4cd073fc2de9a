/**
 * Typed client for the generation service HTTP API.
 *
 * Every call targets one of the documented /v1 endpoints; errors carry
 * the server's stage/code/message envelope so the UI can show which
 * pipeline stage rejected the request.
 */

export interface MeterDict {
  request_id: string;
  scenario: string;
  backend_id: string;
  prompt_tokens: number;
  completion_tokens: number;
  wall_time_ms: number;
  stages?: Record<string, [number, number]>;
}

export interface CostDict {
  token_cost: string;
  time_cost: string;
  total: string;
  n: number;
}

export interface GenerateResponse {
  request_id: string;
  artifact_url: string;
  artifact_digest: string;
  original_prompt: string;
  tuned_prompt: string;
  meter: MeterDict;
  cost: CostDict;
  artifact_b64?: string;
}

export interface MaterialDict {
  material_id: string;
  display_name: string;
  base_texture_ref: string;
}

export interface DefectDict {
  defect_id: string;
  template: Record<string, unknown>;
  prompt_fragment: string;
}

export interface LibraryDoc {
  version: string;
  materials: MaterialDict[];
  defects: DefectDict[];
}

export interface MetricsDoc {
  n_records: number;
  latency: Record<string, Record<string, number>>;
  tokens: Record<string, Record<string, number>>;
  cost: Record<string, CostDict>;
  unpriced_records: number;
}

export class ApiError extends Error {
  readonly stage: string;
  readonly code: string;
  readonly status: number;

  constructor(stage: string, code: string, message: string, status: number) {
    super(message);
    this.stage = stage;
    this.code = code;
    this.status = status;
  }
}

async function raiseForEnvelope(response: Response): Promise<never> {
  let stage = "transport";
  let code = `Http${response.status}`;
  let message = response.statusText || `HTTP ${response.status}`;
  try {
    const body = await response.json();
    if (body && typeof body === "object" && body.error) {
      stage = body.error.stage ?? stage;
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the transport-level description
  }
  throw new ApiError(stage, code, message, response.status);
}

export class StudioApi {
  readonly base: string;

  constructor(base = "") {
    this.base = base.replace(/\/$/, "");
  }

  artifactUrl(response: GenerateResponse): string {
    return this.base + response.artifact_url;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.base + path);
    if (!response.ok) await raiseForEnvelope(response);
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) await raiseForEnvelope(response);
    return (await response.json()) as T;
  }

  async health(): Promise<boolean> {
    try {
      const response = await fetch(this.base + "/healthz");
      return response.ok;
    } catch {
      return false;
    }
  }

  async library(): Promise<LibraryDoc> {
    return this.getJson<LibraryDoc>("/v1/library");
  }

  async metrics(): Promise<MetricsDoc> {
    return this.getJson<MetricsDoc>("/v1/metrics");
  }

  async generateLibrary(
    materialId: string,
    defectId: string,
    seed: number | null = null,
  ): Promise<GenerateResponse> {
    return this.postJson<GenerateResponse>("/v1/generate/library", {
      material_id: materialId,
      defect_id: defectId,
      seed,
    });
  }

  async generatePrompt(text: string, seed: number | null = null): Promise<GenerateResponse> {
    return this.postJson<GenerateResponse>("/v1/generate/prompt", { text, seed });
  }

  async generateInpaint(
    image: Blob,
    mask: Blob | null,
    instruction: string,
    seed: number | null = null,
  ): Promise<GenerateResponse> {
    const form = new FormData();
    form.append("image", image, "image.png");
    if (mask) form.append("mask", mask, "mask.png");
    form.append("instruction", instruction);
    if (seed !== null) form.append("seed", String(seed));
    const response = await fetch(this.base + "/v1/generate/inpaint", {
      method: "POST",
      body: form,
    });
    if (!response.ok) await raiseForEnvelope(response);
    return (await response.json()) as GenerateResponse;
  }

  async fetchArtifact(response: GenerateResponse): Promise<Blob> {
    const res = await fetch(this.artifactUrl(response));
    if (!res.ok) await raiseForEnvelope(res);
    return res.blob();
  }
}
