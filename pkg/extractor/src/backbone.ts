/**
 * Region-proposal backbones.
 *
 * The built-in "stub" backbone is a fully deterministic, dependency-free
 * stand-in for a real detection network: multi-scale sliding windows scored
 * by local contrast, greedy NMS, and pooled intensity/gradient statistics
 * projected to the requested feature width with a fixed seeded matrix. It
 * exists so the full pipeline (extraction -> archive -> MIL training) can be
 * exercised and tested offline; swap in a real backbone for real data.
 *
 * Objectness semantics: the stub exports per-image max-normalized local
 * contrast in [0,1]. A real backbone plugged in here should export its
 * proposal stage's class-agnostic score, clamped to [0,1].
 */

import { Backbone, BackboneResult, Box, GrayImage, RegionProposal } from "./types";

const POOL = 8; // pooled grid per window, per channel
const BASE_DIM = 2 * POOL * POOL; // intensity + gradient channels
const PROJECTION_SEED = 0x5eed;
const NMS_IOU = 0.7;

/** mulberry32: tiny deterministic PRNG for the projection matrix. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussianMatrix(rows: number, cols: number, seed: number): Float32Array {
  const rand = mulberry32(seed);
  const out = new Float32Array(rows * cols);
  const scale = 1.0 / Math.sqrt(cols);
  for (let i = 0; i < out.length; i += 2) {
    // Box-Muller
    const u1 = Math.max(rand(), 1e-12);
    const u2 = rand();
    const r = Math.sqrt(-2.0 * Math.log(u1));
    out[i] = r * Math.cos(2 * Math.PI * u2) * scale;
    if (i + 1 < out.length) out[i + 1] = r * Math.sin(2 * Math.PI * u2) * scale;
  }
  return out;
}

/** Summed-area table with a zero top row / left column. */
function sat(data: Float32Array, width: number, height: number): Float64Array {
  const s = new Float64Array((width + 1) * (height + 1));
  for (let y = 0; y < height; y++) {
    let rowSum = 0;
    for (let x = 0; x < width; x++) {
      rowSum += data[y * width + x];
      s[(y + 1) * (width + 1) + (x + 1)] = rowSum + s[y * (width + 1) + (x + 1)];
    }
  }
  return s;
}

function satSum(s: Float64Array, width: number, x1: number, y1: number, x2: number, y2: number): number {
  const w = width + 1;
  return s[y2 * w + x2] - s[y1 * w + x2] - s[y2 * w + x1] + s[y1 * w + x1];
}

function gradientMagnitude(img: GrayImage): Float32Array {
  const { width, height, data } = img;
  const g = new Float32Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const xm = Math.max(x - 1, 0);
      const xp = Math.min(x + 1, width - 1);
      const ym = Math.max(y - 1, 0);
      const yp = Math.min(y + 1, height - 1);
      const dx = data[y * width + xp] - data[y * width + xm];
      const dy = data[yp * width + x] - data[ym * width + x];
      g[y * width + x] = Math.abs(dx) + Math.abs(dy);
    }
  }
  return g;
}

interface Candidate {
  box: Box; // canvas coordinates
  contrast: number;
}

function iou(a: Box, b: Box): number {
  const ix = Math.min(a.x2, b.x2) - Math.max(a.x1, b.x1);
  const iy = Math.min(a.y2, b.y2) - Math.max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0;
  const inter = ix * iy;
  const union =
    (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / union;
}

export class StubBackbone implements Backbone {
  readonly name = "stub";
  readonly featureDim: number;
  private projection: Float32Array;

  constructor(featureDim: number) {
    this.featureDim = featureDim;
    this.projection = gaussianMatrix(featureDim, BASE_DIM, PROJECTION_SEED);
  }

  propose(image: GrayImage, boxesToKeep: number): BackboneResult {
    const { width, height } = image;
    const satI = sat(image.data, width, height);
    const sq = new Float32Array(image.data.length);
    for (let i = 0; i < sq.length; i++) sq[i] = image.data[i] * image.data[i];
    const satI2 = sat(sq, width, height);
    const grad = gradientMagnitude(image);
    const satG = sat(grad, width, height);

    const minSide = Math.min(width, height);
    const sizes = [0.1, 0.2, 0.4, 0.8].map((f) => Math.max(8, Math.round(f * minSide)));
    const candidates: Candidate[] = [];
    for (const size of sizes) {
      const stride = Math.max(4, Math.round(size / 3));
      for (let y = 0; y + size <= height; y += stride) {
        for (let x = 0; x + size <= width; x += stride) {
          const n = size * size;
          const mean = satSum(satI, width, x, y, x + size, y + size) / n;
          const meanSq = satSum(satI2, width, x, y, x + size, y + size) / n;
          const variance = Math.max(meanSq - mean * mean, 0);
          candidates.push({
            box: { x1: x, y1: y, x2: x + size, y2: y + size },
            contrast: Math.sqrt(variance),
          });
        }
      }
    }
    // greedy NMS on contrast, stable on ties
    const order = candidates
      .map((c, i) => i)
      .sort((a, b) => candidates[b].contrast - candidates[a].contrast || a - b);
    const kept: Candidate[] = [];
    for (const i of order) {
      if (kept.length >= boxesToKeep) break;
      const c = candidates[i];
      if (kept.every((k) => iou(k.box, c.box) <= NMS_IOU)) kept.push(c);
    }

    const maxContrast = kept.reduce((m, c) => Math.max(m, c.contrast), 0);
    const regions: RegionProposal[] = kept.map((c) => ({
      box: c.box,
      objectness:
        maxContrast > 0 ? Math.min(Math.max(c.contrast / maxContrast, 0), 1) : 0,
      feature: this.describe(c.box, satI, satG, width),
    }));
    return { regions };
  }

  /** Pooled intensity + gradient grid, normalized, then the fixed projection. */
  private describe(
    box: Box,
    satI: Float64Array,
    satG: Float64Array,
    width: number,
  ): Float32Array {
    const base = new Float64Array(BASE_DIM);
    const bw = box.x2 - box.x1;
    const bh = box.y2 - box.y1;
    let idx = 0;
    for (const table of [satI, satG]) {
      for (let gy = 0; gy < POOL; gy++) {
        for (let gx = 0; gx < POOL; gx++) {
          const x1 = Math.round(box.x1 + (gx * bw) / POOL);
          const x2 = Math.max(Math.round(box.x1 + ((gx + 1) * bw) / POOL), x1 + 1);
          const y1 = Math.round(box.y1 + (gy * bh) / POOL);
          const y2 = Math.max(Math.round(box.y1 + ((gy + 1) * bh) / POOL), y1 + 1);
          base[idx++] = satSum(table, width, x1, y1, x2, y2) / ((x2 - x1) * (y2 - y1));
        }
      }
    }
    // center + L2-normalize so feature scale is window-size invariant
    let mean = 0;
    for (const v of base) mean += v;
    mean /= BASE_DIM;
    let norm = 0;
    for (let i = 0; i < BASE_DIM; i++) {
      base[i] -= mean;
      norm += base[i] * base[i];
    }
    norm = Math.sqrt(norm) || 1.0;
    const out = new Float32Array(this.featureDim);
    for (let r = 0; r < this.featureDim; r++) {
      let acc = 0;
      const row = r * BASE_DIM;
      for (let c = 0; c < BASE_DIM; c++) acc += this.projection[row + c] * base[c];
      out[r] = acc / norm;
    }
    return out;
  }
}

export function createBackbone(name: string, featureDim: number): Backbone {
  if (name === "stub") return new StubBackbone(featureDim);
  throw new Error(
    `backbone ${name} is not available; registered backbones: stub`,
  );
}
