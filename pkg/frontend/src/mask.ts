import { selectCells } from "./prng.js";

export interface PatchMask {
  /** row-major kept flags, length grid*grid; true = patch visible */
  kept: boolean[];
  grid: number;
  ratio: number;
  seed: bigint;
}

export function maskedCellCount(grid: number, ratio: number): number {
  if (!(ratio >= 0 && ratio < 1)) throw new Error("mask ratio must be in [0, 1)");
  const count = Math.floor(ratio * grid * grid + 0.5);
  if (count >= grid * grid) throw new Error("fully masked");
  return count;
}

/** Mask exactly round(ratio * grid^2) cells, chosen without replacement. */
export function generateMask(grid: number, ratio: number, seed: bigint): PatchMask {
  const m = maskedCellCount(grid, ratio);
  const kept = new Array<boolean>(grid * grid).fill(true);
  for (const cell of selectCells(grid * grid, m, seed)) {
    kept[cell] = false;
  }
  return { kept, grid, ratio, seed };
}

export function keptBitmapString(mask: PatchMask): string {
  return mask.kept.map((k) => (k ? "1" : "0")).join("");
}
