import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { beforeAll, describe, expect, it } from "vitest";

import {
  BadMagicError,
  FeatureStore,
  SizeMismatchError,
  TruncatedPayloadError,
  readStore,
  writeStore,
} from "../src/store.js";

function sampleStore(): FeatureStore {
  const store = new FeatureStore(3, 4);
  store.setRow(0, [1, 0, 0, 0]);
  store.setRow(1, [3, 4, 0, 0]);
  store.setRow(2, [1, 1, 1, 1]);
  store.labels = new Int32Array([0, 1, -1]);
  store.addMasked(0, 11n, [0, 1, 0, 0]);
  store.addMasked(2, 7n, [0, 0, 0.6, 0.8]);
  return store;
}

let dir: string;

beforeAll(() => {
  dir = mkdtempSync(join(tmpdir(), "bridge-store-"));
});

describe("feature store format", () => {
  it("round trips byte-exactly", () => {
    const a = join(dir, "a.feat");
    const b = join(dir, "b.feat");
    writeStore(a, sampleStore());
    const loaded = readStore(a);
    writeStore(b, loaded);
    expect(readFileSync(a).equals(readFileSync(b))).toBe(true);
  });

  it("normalizes rows on ingest", () => {
    const store = sampleStore();
    const row = store.row(1);
    expect(Math.abs(row[0] - 0.6)).toBeLessThan(1e-7);
    expect(Math.abs(row[1] - 0.8)).toBeLessThan(1e-7);
  });

  it("reads labels and masked entries back", () => {
    const path = join(dir, "c.feat");
    writeStore(path, sampleStore());
    const loaded = readStore(path);
    expect([...loaded.labels!]).toEqual([0, 1, -1]);
    expect(loaded.masked.length).toBe(2);
    expect(loaded.masked[0].row).toBe(0);
    expect(loaded.masked[0].maskSeed).toBe(11n);
  });

  it("rejects bad magic", () => {
    const path = join(dir, "magic.feat");
    writeStore(path, sampleStore());
    const blob = readFileSync(path);
    blob.write("NOTRIGHT", 0, "ascii");
    writeFileSync(path, blob);
    expect(() => readStore(path)).toThrow(BadMagicError);
  });

  it("rejects truncation", () => {
    const path = join(dir, "trunc.feat");
    writeStore(path, sampleStore());
    const blob = readFileSync(path);
    writeFileSync(path, blob.subarray(0, blob.length - 1));
    expect(() => readStore(path)).toThrow(TruncatedPayloadError);
  });

  it("rejects trailing bytes", () => {
    const path = join(dir, "trail.feat");
    writeStore(path, sampleStore());
    writeFileSync(path, Buffer.concat([readFileSync(path), Buffer.from([0])]));
    expect(() => readStore(path)).toThrow(SizeMismatchError);
  });

  it("rejects non-unit rows", () => {
    const path = join(dir, "norm.feat");
    const store = sampleStore();
    store.payload[0] = 0.5; // corrupt after normalization
    store.payload[1] = 0.0;
    writeStore(path, store);
    expect(() => readStore(path)).toThrow("not unit-normalized");
  });

  it("rejects degenerate features at ingest", () => {
    const store = new FeatureStore(1, 3);
    expect(() => store.setRow(0, [0, 0, 0])).toThrow("degenerate feature");
  });
});
