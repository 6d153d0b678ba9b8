/**
 * Feature-store binary format, byte-compatible with the core toolkit:
 *
 *   magic    8 bytes  "COCAFEAT"
 *   version  u32le    1
 *   N        u64le    row count
 *   D        u64le    feature dimension
 *   flags    u32le    bit 0: label block, bit 1: masked block
 *   payload  N*D f32le row-major
 *   labels   N i32le  optional
 *   masked   u64 count, then count * (row u64, mask_seed u64, D f32)
 *
 * Rows must be unit-normalized within 1e-5. Output files are written to a
 * temp path and atomically renamed into place.
 */

import { closeSync, openSync, readFileSync, renameSync, writeSync } from "node:fs";

const MAGIC = Buffer.from("COCAFEAT", "ascii");
const VERSION = 1;
const FLAG_LABELS = 1;
const FLAG_MASKED = 2;
const NORM_TOLERANCE = 1e-5;

export class StoreFormatError extends Error {}
export class BadMagicError extends StoreFormatError {}
export class UnsupportedVersionError extends StoreFormatError {}
export class TruncatedPayloadError extends StoreFormatError {}
export class SizeMismatchError extends StoreFormatError {}

export interface MaskedEntry {
  row: number;
  maskSeed: bigint;
  feature: Float32Array;
}

export class FeatureStore {
  payload: Float32Array; // n * dim, row-major
  n: number;
  dim: number;
  labels: Int32Array | null;
  masked: MaskedEntry[];

  constructor(n: number, dim: number) {
    this.payload = new Float32Array(n * dim);
    this.n = n;
    this.dim = dim;
    this.labels = null;
    this.masked = [];
  }

  setRow(row: number, feature: Float64Array | number[]): void {
    if (feature.length !== this.dim) throw new Error("feature dimension mismatch");
    this.payload.set(normalized(feature), row * this.dim);
  }

  row(rowIndex: number): Float32Array {
    return this.payload.subarray(rowIndex * this.dim, (rowIndex + 1) * this.dim);
  }

  addMasked(row: number, maskSeed: bigint, feature: Float64Array | number[]): void {
    if (feature.length !== this.dim) throw new Error("masked feature dimension mismatch");
    this.masked.push({ row, maskSeed, feature: normalized(feature) });
  }
}

function normalized(feature: ArrayLike<number>): Float32Array {
  let sq = 0;
  for (let i = 0; i < feature.length; i++) {
    const v = feature[i];
    if (!Number.isFinite(v)) throw new Error("non-finite feature");
    sq += v * v;
  }
  const norm = Math.sqrt(sq);
  if (norm === 0) throw new Error("degenerate feature");
  const out = new Float32Array(feature.length);
  for (let i = 0; i < feature.length; i++) out[i] = feature[i] / norm;
  return out;
}

export function writeStore(path: string, store: FeatureStore): void {
  const header = Buffer.alloc(32);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(VERSION, 8);
  header.writeBigUInt64LE(BigInt(store.n), 12);
  header.writeBigUInt64LE(BigInt(store.dim), 20);
  let flags = 0;
  if (store.labels !== null) flags |= FLAG_LABELS;
  if (store.masked.length > 0) flags |= FLAG_MASKED;
  header.writeUInt32LE(flags, 28);

  const chunks: Buffer[] = [header, float32Buffer(store.payload)];
  if (store.labels !== null) {
    const lab = Buffer.alloc(store.n * 4);
    store.labels.forEach((v, i) => lab.writeInt32LE(v, i * 4));
    chunks.push(lab);
  }
  if (store.masked.length > 0) {
    const count = Buffer.alloc(8);
    count.writeBigUInt64LE(BigInt(store.masked.length), 0);
    chunks.push(count);
    const sorted = [...store.masked].sort((a, b) =>
      a.row - b.row || (a.maskSeed < b.maskSeed ? -1 : a.maskSeed > b.maskSeed ? 1 : 0)
    );
    for (const entry of sorted) {
      const key = Buffer.alloc(16);
      key.writeBigUInt64LE(BigInt(entry.row), 0);
      key.writeBigUInt64LE(entry.maskSeed, 8);
      chunks.push(key, float32Buffer(entry.feature));
    }
  }

  const tmp = `${path}.tmp-${process.pid}`;
  const fd = openSync(tmp, "w");
  try {
    writeSync(fd, Buffer.concat(chunks));
  } finally {
    closeSync(fd);
  }
  renameSync(tmp, path);
}

function float32Buffer(data: Float32Array): Buffer {
  const buf = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) buf.writeFloatLE(data[i], i * 4);
  return buf;
}

export function readStore(path: string): FeatureStore {
  const blob = readFileSync(path);
  if (blob.length < 8) throw new TruncatedPayloadError("truncated payload");
  if (!blob.subarray(0, 8).equals(MAGIC)) throw new BadMagicError("bad magic");
  if (blob.length < 32) throw new TruncatedPayloadError("truncated payload");
  const version = blob.readUInt32LE(8);
  if (version !== VERSION) throw new UnsupportedVersionError(`unsupported version ${version}`);
  const n = Number(blob.readBigUInt64LE(12));
  const dim = Number(blob.readBigUInt64LE(20));
  const flags = blob.readUInt32LE(28);

  let cursor = 32;
  const take = (nbytes: number): Buffer => {
    if (cursor + nbytes > blob.length) throw new TruncatedPayloadError("truncated payload");
    const piece = blob.subarray(cursor, cursor + nbytes);
    cursor += nbytes;
    return piece;
  };

  const store = new FeatureStore(n, dim);
  const payload = take(n * dim * 4);
  for (let i = 0; i < n * dim; i++) store.payload[i] = payload.readFloatLE(i * 4);
  if (flags & FLAG_LABELS) {
    const lab = take(n * 4);
    store.labels = new Int32Array(n);
    for (let i = 0; i < n; i++) store.labels[i] = lab.readInt32LE(i * 4);
  }
  if (flags & FLAG_MASKED) {
    const count = Number(take(8).readBigUInt64LE(0));
    for (let e = 0; e < count; e++) {
      const key = take(16);
      const vec = take(dim * 4);
      const feature = new Float32Array(dim);
      for (let i = 0; i < dim; i++) feature[i] = vec.readFloatLE(i * 4);
      store.masked.push({
        row: Number(key.readBigUInt64LE(0)),
        maskSeed: key.readBigUInt64LE(8),
        feature,
      });
    }
  }
  if (cursor !== blob.length) {
    throw new SizeMismatchError("size mismatch: trailing bytes after payload");
  }

  checkNorms(store.payload, dim, "feature");
  for (const entry of store.masked) checkNorms(entry.feature, dim, "masked feature");
  return store;
}

function checkNorms(data: Float32Array, dim: number, what: string): void {
  for (let start = 0; start + dim <= data.length; start += dim) {
    let sq = 0;
    for (let i = start; i < start + dim; i++) sq += data[i] * data[i];
    if (Math.abs(Math.sqrt(sq) - 1.0) > NORM_TOLERANCE) {
      throw new Error(`${what} rows not unit-normalized`);
    }
  }
}
