#!/usr/bin/env node
/**
 * Standalone extraction CLI.
 *
 *   coca-bridge extract-images --images DIR --out store.feat
 *       [--mask-ratio R --mask-seeds S1,S2,...] [--grid N] [--strict]
 *   coca-bridge extract-texts --classes names.txt --out text.feat
 *       [--template "a photo of a {CLS}"]
 *   coca-bridge make-manifest --classes names.txt --common N
 *       --source-private N --target-private N --out manifest.json
 *   coca-bridge dump-masks --cases cases.json        (stdout JSON bitmaps)
 */

import { readFileSync, writeFileSync } from "node:fs";
import { pathToFileURL } from "node:url";

import { DeterministicEncoder } from "./encoder.js";
import { generateMask, keptBitmapString } from "./mask.js";
import {
  DEFAULT_PROMPT,
  extractImageFeatures,
  extractMaskedFeatures,
  extractTextFeatures,
  listImages,
  listImagesByClass,
} from "./extract.js";
import { writeStore } from "./store.js";

function readClassList(path: string): string[] {
  return readFileSync(path, "utf8")
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
}

interface Flags {
  [key: string]: string | boolean;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new Error(`unexpected argument ${arg}`);
    const key = arg.slice(2);
    if (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
      flags[key] = argv[++i];
    } else {
      flags[key] = true;
    }
  }
  return flags;
}

function required(flags: Flags, key: string): string {
  const value = flags[key];
  if (typeof value !== "string") throw new Error(`missing required flag --${key}`);
  return value;
}

function makeEncoder(flags: Flags): DeterministicEncoder {
  const dim = Number(flags["dim"] ?? 64);
  const seed = BigInt(String(flags["encoder-seed"] ?? 0));
  return new DeterministicEncoder(dim, dim, seed);
}

function cmdExtractImages(flags: Flags): number {
  const encoder = makeEncoder(flags);
  const grid = Number(flags["grid"] ?? 14);
  const root = required(flags, "images");
  let images: string[];
  let labels: number[] | undefined;
  if (typeof flags["classes"] === "string") {
    // one subdirectory per class; labels follow the class-name order
    const classNames = readClassList(String(flags["classes"]));
    const labeled = listImagesByClass(root, classNames);
    images = labeled.map((l) => l.path);
    labels = labeled.map((l) => l.label);
  } else {
    images = listImages(root);
  }
  const extraction = extractImageFeatures({
    imagePaths: images,
    encoder,
    grid,
    labels,
    strict: Boolean(flags["strict"]),
  });
  const ratio = flags["mask-ratio"] !== undefined ? Number(flags["mask-ratio"]) : null;
  let maskedCount = 0;
  if (ratio !== null) {
    const seeds = String(required(flags, "mask-seeds"))
      .split(",")
      .map((s) => BigInt(s.trim()));
    maskedCount = extractMaskedFeatures(extraction, {
      imagePaths: images,
      encoder,
      ratio,
      maskSeeds: seeds,
      grid,
    });
  }
  const out = required(flags, "out");
  writeStore(out, extraction.store);
  console.log(
    `wrote ${out}: ${extraction.store.n} rows x ${extraction.store.dim} dims` +
      (maskedCount ? `, ${maskedCount} masked entries` : "") +
      (extraction.skipped.length ? `, skipped ${extraction.skipped.length}` : "")
  );
  return 0;
}

function cmdExtractTexts(flags: Flags): number {
  const encoder = makeEncoder(flags);
  const classNames = readClassList(required(flags, "classes"));
  const template = String(flags["template"] ?? DEFAULT_PROMPT);
  const store = extractTextFeatures({ classNames, promptTemplate: template, encoder });
  const out = required(flags, "out");
  writeStore(out, store);
  console.log(`wrote ${out}: ${store.n} classes x ${store.dim} dims (template: ${template})`);
  return 0;
}

function cmdMakeManifest(flags: Flags): number {
  const classNames = readClassList(required(flags, "classes"));
  const common = Number(required(flags, "common"));
  const sp = Number(required(flags, "source-private"));
  const tp = Number(required(flags, "target-private"));
  if (common < 1) throw new Error("need at least one common class");
  if (common + sp + tp !== classNames.length) {
    throw new Error("class counts must sum to the class-name count");
  }
  const regime = sp > 0 && tp > 0 ? "OPDA" : sp > 0 ? "PDA" : tp > 0 ? "OSDA" : "CDA";
  const range = (a: number, b: number) =>
    Array.from({ length: b - a }, (_, i) => a + i);
  const manifest = {
    class_names: classNames,
    source_classes: range(0, common + sp),
    target_classes: [...range(0, common), ...range(common + sp, common + sp + tp)],
    common_classes: range(0, common),
    regime,
    prompt_template: String(flags["template"] ?? DEFAULT_PROMPT),
  };
  const out = required(flags, "out");
  writeFileSync(out, JSON.stringify(manifest, null, 2) + "\n");
  console.log(`wrote ${out}: regime ${regime}, ${classNames.length} classes`);
  return 0;
}

function cmdDumpMasks(flags: Flags): number {
  if (typeof flags["cases"] === "string") {
    const cases = JSON.parse(readFileSync(String(flags["cases"]), "utf8"));
    const out = cases.map((c: { grid: number; ratio: number; seed: number | string }) => ({
      grid: c.grid,
      ratio: c.ratio,
      seed: String(c.seed),
      kept_bitmap: keptBitmapString(generateMask(c.grid, c.ratio, BigInt(c.seed))),
    }));
    console.log(JSON.stringify(out));
    return 0;
  }
  const grid = Number(required(flags, "grid"));
  const ratio = Number(required(flags, "ratio"));
  const seed = BigInt(required(flags, "seed"));
  console.log(keptBitmapString(generateMask(grid, ratio, seed)));
  return 0;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  const commands: Record<string, (flags: Flags) => number> = {
    "extract-images": cmdExtractImages,
    "extract-texts": cmdExtractTexts,
    "make-manifest": cmdMakeManifest,
    "dump-masks": cmdDumpMasks,
  };
  if (!command || !(command in commands)) {
    console.error(
      "usage: coca-bridge <extract-images|extract-texts|make-manifest|dump-masks> [flags]"
    );
    return 2;
  }
  try {
    return commands[command](parseFlags(rest));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
