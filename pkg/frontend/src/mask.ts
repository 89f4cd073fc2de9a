/**
 * Paintable mask layer backed by a plain byte grid.
 *
 * The grid, not the preview canvas, is the source of truth: export is a
 * deterministic function of the strokes, and the whole editor is
 * testable without a DOM. Values are 0..255 coverage; export thresholds
 * at 128 down to {0, 255}.
 */

import { encodeGrayPng } from "./png.js";

const UNDO_LIMIT = 32;

export class MaskGrid {
  readonly width: number;
  readonly height: number;
  private data: Uint8Array;
  private undoStack: Uint8Array[] = [];

  constructor(width: number, height: number) {
    if (width <= 0 || height <= 0 || !Number.isInteger(width) || !Number.isInteger(height)) {
      throw new Error(`bad mask dimensions ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
  }

  /** Snapshot the current layer; one undo step per stroke, not per stamp. */
  beginStroke(): void {
    this.undoStack.push(this.data.slice());
    if (this.undoStack.length > UNDO_LIMIT) {
      this.undoStack.shift();
    }
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.data = prev;
    return true;
  }

  private stamp(cx: number, cy: number, radius: number, value: number): void {
    const r = Math.max(0.5, radius);
    const x0 = Math.max(0, Math.floor(cx - r - 1));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + r + 1));
    const y0 = Math.max(0, Math.floor(cy - r - 1));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + r + 1));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dist = Math.hypot(x - cx, y - cy);
        // 1px soft edge: pixel centers inside get full coverage, the
        // boundary ring gets partial values (thresholded on export)
        const coverage = Math.max(0, Math.min(1, r + 0.5 - dist));
        if (coverage <= 0) continue;
        const idx = y * this.width + x;
        const level = Math.round(coverage * 255);
        if (value > 0) {
          if (level > this.data[idx]) this.data[idx] = level;
        } else if (level >= 128) {
          this.data[idx] = 0;
        }
      }
    }
  }

  paint(cx: number, cy: number, radius: number): void {
    this.stamp(cx, cy, radius, 255);
  }

  erase(cx: number, cy: number, radius: number): void {
    this.stamp(cx, cy, radius, 0);
  }

  /** Stamp along a segment so fast pointer moves leave no gaps. */
  paintLine(x0: number, y0: number, x1: number, y1: number, radius: number, eraser = false): void {
    const steps = Math.max(1, Math.ceil(Math.hypot(x1 - x0, y1 - y0) / Math.max(1, radius / 2)));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      const x = x0 + (x1 - x0) * t;
      const y = y0 + (y1 - y0) * t;
      if (eraser) this.erase(x, y, radius);
      else this.paint(x, y, radius);
    }
  }

  clear(): void {
    this.data.fill(0);
  }

  fillAll(): void {
    this.data.fill(255);
  }

  /** Painted pixel count after thresholding — what export will contain. */
  paintedArea(): number {
    let count = 0;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] >= 128) count++;
    }
    return count;
  }

  isEmpty(): boolean {
    return this.paintedArea() === 0;
  }

  valueAt(x: number, y: number): number {
    return this.data[y * this.width + x];
  }

  /** Binary {0, 255} layer; any antialiased coverage is thresholded. */
  toBinary(): Uint8Array<ArrayBuffer> {
    const out = new Uint8Array(this.data.length);
    for (let i = 0; i < this.data.length; i++) {
      out[i] = this.data[i] >= 128 ? 255 : 0;
    }
    return out;
  }

  toPngBytes(): Uint8Array<ArrayBuffer> {
    return encodeGrayPng(this.toBinary(), this.width, this.height);
  }
}
