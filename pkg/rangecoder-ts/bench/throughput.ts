/**
 * Informational throughput benchmark on a 10^6-symbol stream.
 *
 * Compare with the reference implementation:
 *   python3 ../scripts/bench_reference_coder.py
 */

import { CdfTable, decode, encode } from '../src/index.js';

function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const next = rng(7);
const table: CdfTable = {
  cdf: Uint32Array.from([0, 30000, 50000, 60000, 64000, 65000, 65536]),
  offset: -3,
};
const n = 1_000_000;
const symbols = new Int32Array(n);
for (let i = 0; i < n; i++) {
  symbols[i] = table.offset + Math.floor(next() * (table.cdf.length - 1));
}
const indices = new Uint32Array(n);

let t0 = performance.now();
const stream = encode(symbols, [table], indices);
const encMs = performance.now() - t0;

t0 = performance.now();
decode(stream, [table], indices, n);
const decMs = performance.now() - t0;

console.log(`symbols: ${n}, stream: ${stream.length} bytes`);
console.log(`encode: ${encMs.toFixed(1)} ms (${(n / encMs / 1000).toFixed(2)} Msym/s)`);
console.log(`decode: ${decMs.toFixed(1)} ms (${(n / decMs / 1000).toFixed(2)} Msym/s)`);
