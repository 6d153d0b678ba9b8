/**
 * Extraction jobs: full-image features, prompt-text features, and
 * masked-patch variants, all written in the shared feature-store format.
 */

import { readFileSync, readdirSync, statSync } from "node:fs";
import { basename, join } from "node:path";

import { FrozenEncoder } from "./encoder.js";
import { generateMask } from "./mask.js";
import { FeatureStore } from "./store.js";

export const DEFAULT_GRID = 14; // ViT-B/16 patch grid on 224px inputs
export const DEFAULT_PROMPT = "a photo of a {CLS}";

export interface ImageJob {
  /** already in row order (listImages / listImagesByClass produce sorted orders) */
  imagePaths: string[];
  encoder: FrozenEncoder;
  grid?: number;
  /** optional class index per image path, written as the store's label block */
  labels?: number[];
  /** fail on unreadable images instead of skipping with a warning */
  strict?: boolean;
  warn?: (message: string) => void;
}

export interface TextJob {
  classNames: string[];
  promptTemplate?: string;
  encoder: FrozenEncoder;
}

export interface MaskJob {
  imagePaths: string[];
  encoder: FrozenEncoder;
  ratio: number;
  /** mask seeds applied to every image, enumerated up-front */
  maskSeeds: bigint[];
  grid?: number;
}

export function listImages(dir: string): string[] {
  // row order contract: sorted file order
  return readdirSync(dir)
    .map((name) => join(dir, name))
    .filter((p) => statSync(p).isFile())
    .sort((a, b) => (basename(a) < basename(b) ? -1 : 1));
}

export interface LabeledImage {
  path: string;
  label: number;
}

/** Images organized one subdirectory per class; labels follow classNames order. */
export function listImagesByClass(root: string, classNames: string[]): LabeledImage[] {
  const out: LabeledImage[] = [];
  classNames.forEach((name, label) => {
    const classDir = join(root, name);
    if (!statSync(classDir).isDirectory()) {
      throw new Error(`expected a class directory at ${classDir}`);
    }
    for (const path of listImages(classDir)) out.push({ path, label });
  });
  return out;
}

export interface ImageExtraction {
  store: FeatureStore;
  /** image path per store row, in row order */
  rows: string[];
  skipped: string[];
}

export function extractImageFeatures(job: ImageJob): ImageExtraction {
  const grid = job.grid ?? DEFAULT_GRID;
  const warn = job.warn ?? ((m) => console.warn(m));
  if (job.labels && job.labels.length !== job.imagePaths.length) {
    throw new Error("label list must match image list");
  }
  const features: Float64Array[] = [];
  const rows: string[] = [];
  const labels: number[] = [];
  const skipped: string[] = [];
  job.imagePaths.forEach((path, i) => {
    let bytes: Uint8Array;
    try {
      bytes = readFileSync(path);
    } catch (err) {
      if (job.strict) throw err;
      warn(`skipping unreadable image: ${path}`);
      skipped.push(path);
      return;
    }
    const tokens = job.encoder.imageToTokens(bytes, grid);
    features.push(job.encoder.encodePatchTokens(tokens, grid));
    rows.push(path);
    if (job.labels) labels.push(job.labels[i]);
  });
  const store = new FeatureStore(features.length, job.encoder.featureDim);
  features.forEach((f, i) => store.setRow(i, f));
  if (job.labels) store.labels = new Int32Array(labels);
  return { store, rows, skipped };
}

export function applyPrompt(template: string, className: string): string {
  const matches = template.split("{CLS}").length - 1;
  if (matches !== 1) {
    throw new Error("prompt template must contain {CLS} exactly once");
  }
  return template.replace("{CLS}", className);
}

export function extractTextFeatures(job: TextJob): FeatureStore {
  if (job.classNames.length === 0) throw new Error("class name list is empty");
  const template = job.promptTemplate ?? DEFAULT_PROMPT;
  const store = new FeatureStore(job.classNames.length, job.encoder.featureDim);
  job.classNames.forEach((name, i) => {
    store.setRow(i, job.encoder.encodeText(applyPrompt(template, name)));
  });
  return store;
}

/** Adds one masked entry per (image row, mask seed) to the extraction's store. */
export function extractMaskedFeatures(extraction: ImageExtraction, job: MaskJob): number {
  const grid = job.grid ?? DEFAULT_GRID;
  if (!(job.ratio >= 0 && job.ratio < 1)) throw new Error("mask ratio must be in [0, 1)");
  let added = 0;
  extraction.rows.forEach((path, row) => {
    const bytes = readFileSync(path);
    const tokens = job.encoder.imageToTokens(bytes, grid);
    for (const seed of job.maskSeeds) {
      const mask = generateMask(grid, job.ratio, seed);
      const masked = tokens.slice();
      mask.kept.forEach((kept, cell) => {
        if (!kept) {
          masked.fill(0, cell * job.encoder.patchDim, (cell + 1) * job.encoder.patchDim);
        }
      });
      extraction.store.addMasked(row, seed, job.encoder.encodePatchTokens(masked, grid));
      added += 1;
    }
  });
  return added;
}
