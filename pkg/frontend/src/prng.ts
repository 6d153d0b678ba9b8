/**
 * splitmix64 generator and the cell-selection rule shared with the core
 * toolkit. Masks must agree bit-for-bit across the language boundary, so
 * this mirrors the pinned algorithm exactly:
 *
 *   state' = (state + 0x9E3779B97F4A7C15) mod 2^64
 *   out = standard splitmix64 finalizer of state'
 *
 * Cell selection is a partial Fisher-Yates shuffle: step t swaps position
 * t with t + (nextU64() % (n - t)); the first m entries are the selection.
 */

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;

export class Splitmix64 {
  private state: bigint;

  constructor(seed: bigint) {
    this.state = seed & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + GAMMA) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
    z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
    return z ^ (z >> 31n);
  }

  /** Uniform double in [0, 1) from the top 53 bits. */
  nextDouble(): number {
    return Number(this.nextU64() >> 11n) / 2 ** 53;
  }
}

export function selectCells(n: number, m: number, seed: bigint): number[] {
  if (m < 0 || m > n) throw new Error("cannot select more cells than exist");
  const rng = new Splitmix64(seed);
  const cells = Array.from({ length: n }, (_, i) => i);
  for (let t = 0; t < m; t++) {
    const j = t + Number(rng.nextU64() % BigInt(n - t));
    [cells[t], cells[j]] = [cells[j], cells[t]];
  }
  return cells.slice(0, m);
}

export function deriveSeed(...parts: bigint[]): bigint {
  let acc = 0n;
  for (const p of parts) {
    acc = new Splitmix64(acc ^ (p & MASK64)).nextU64();
  }
  return acc;
}

/** FNV-1a over bytes, folded to 64 bits; seeds content-derived streams. */
export function hashBytes(data: Uint8Array): bigint {
  let h = 0xcbf29ce484222325n;
  for (const b of data) {
    h ^= BigInt(b);
    h = (h * 0x100000001b3n) & MASK64;
  }
  return h;
}
