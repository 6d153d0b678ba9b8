/**
 * Frozen encoders behind one interface.
 *
 * The deterministic encoder turns raw image bytes into a grid of patch
 * tokens (content-seeded, so re-extraction is byte-identical) and pools
 * them through a fixed random projection; text goes through the same
 * projection from a prompt-seeded token. It stands in for a real
 * vision-language backbone wherever network access or model weights are
 * unavailable; a real backend (e.g. a CLIP ViT-B/16 runtime) implements
 * this same interface and plugs into the extraction jobs unchanged.
 *
 * Masked variants zero the masked patch tokens before pooling, the token
 * level analogue of hiding patches from a frozen transformer.
 */

import { Splitmix64, deriveSeed, hashBytes } from "./prng.js";

export interface FrozenEncoder {
  readonly featureDim: number;
  readonly patchDim: number;
  /** tokens: grid*grid rows of patchDim values, row-major. */
  encodePatchTokens(tokens: Float64Array, grid: number): Float64Array;
  imageToTokens(imageBytes: Uint8Array, grid: number): Float64Array;
  encodeText(text: string): Float64Array;
}

const IMAGE_STREAM = 0x1151n;
const TEXT_STREAM = 0x7e37n;
const PROJ_STREAM = 0x9707n;

export class DeterministicEncoder implements FrozenEncoder {
  readonly featureDim: number;
  readonly patchDim: number;
  private readonly projection: Float64Array; // featureDim x patchDim

  constructor(featureDim = 64, patchDim = 64, seed = 0n) {
    this.featureDim = featureDim;
    this.patchDim = patchDim;
    const rng = new Splitmix64(deriveSeed(seed, PROJ_STREAM));
    this.projection = new Float64Array(featureDim * patchDim);
    const scale = 1 / Math.sqrt(patchDim);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = (rng.nextDouble() * 2 - 1) * scale;
    }
  }

  imageToTokens(imageBytes: Uint8Array, grid: number): Float64Array {
    const content = hashBytes(imageBytes);
    const tokens = new Float64Array(grid * grid * this.patchDim);
    for (let cell = 0; cell < grid * grid; cell++) {
      const rng = new Splitmix64(deriveSeed(IMAGE_STREAM, content, BigInt(cell)));
      for (let j = 0; j < this.patchDim; j++) {
        tokens[cell * this.patchDim + j] = rng.nextDouble() * 2 - 1;
      }
    }
    return tokens;
  }

  encodePatchTokens(tokens: Float64Array, grid: number): Float64Array {
    const cells = grid * grid;
    if (tokens.length !== cells * this.patchDim) {
      throw new Error("token grid does not match patch dimension");
    }
    const mean = new Float64Array(this.patchDim);
    for (let cell = 0; cell < cells; cell++) {
      for (let j = 0; j < this.patchDim; j++) {
        mean[j] += tokens[cell * this.patchDim + j];
      }
    }
    for (let j = 0; j < this.patchDim; j++) mean[j] /= cells;
    return this.project(mean);
  }

  encodeText(text: string): Float64Array {
    const rng = new Splitmix64(
      deriveSeed(TEXT_STREAM, hashBytes(new TextEncoder().encode(text)))
    );
    const token = new Float64Array(this.patchDim);
    for (let j = 0; j < this.patchDim; j++) token[j] = rng.nextDouble() * 2 - 1;
    return this.project(token);
  }

  private project(vec: Float64Array): Float64Array {
    const out = new Float64Array(this.featureDim);
    for (let i = 0; i < this.featureDim; i++) {
      let acc = 0;
      for (let j = 0; j < this.patchDim; j++) {
        acc += this.projection[i * this.patchDim + j] * vec[j];
      }
      out[i] = acc;
    }
    let sq = 0;
    for (const v of out) sq += v * v;
    const norm = Math.sqrt(sq);
    if (norm === 0) throw new Error("degenerate feature");
    for (let i = 0; i < this.featureDim; i++) out[i] /= norm;
    return out;
  }
}
