/**
 * Carry-less range coder, byte-identical to the reference implementation.
 *
 * Contract: 16-bit probability precision (CDF tables with total mass 65536),
 * 32-bit low/range state, byte-wise renormalization emitting a byte once the
 * top byte of the interval is settled, `range = -low & 0xFFFF` underflow
 * truncation, 4-byte flush.  All arithmetic stays below 2^41, so plain
 * doubles are exact and no BigInt is needed.
 *
 * The flat call convention takes contiguous integer arrays in and returns a
 * byte array, so any host language binds identically.
 */

export const TOTAL = 1 << 16;
const TOP = 1 << 24;
const BOT = 1 << 16;
const MOD32 = 0x100000000;

export class EncodeError extends Error {}
export class DecodeError extends Error {}
export class FormatError extends Error {}

/** Integer CDF over symbols offset..offset+cdf.length-2. */
export interface CdfTable {
  cdf: Uint32Array;
  offset: number;
}

export function validateTable(table: CdfTable): void {
  const cdf = table.cdf;
  if (cdf.length < 2) {
    throw new FormatError('CDF table needs at least two entries');
  }
  if (cdf[0] !== 0 || cdf[cdf.length - 1] !== TOTAL) {
    throw new FormatError(`CDF must span [0, ${TOTAL}]`);
  }
  for (let i = 1; i < cdf.length; i++) {
    if (cdf[i] <= cdf[i - 1]) {
      throw new FormatError('CDF must be strictly increasing');
    }
  }
  if (!Number.isInteger(table.offset)) {
    throw new FormatError('table offset must be an integer');
  }
}

class ByteSink {
  private buf = new Uint8Array(1024);
  private len = 0;

  push(b: number): void {
    if (this.len === this.buf.length) {
      const next = new Uint8Array(this.buf.length * 2);
      next.set(this.buf);
      this.buf = next;
    }
    this.buf[this.len++] = b;
  }

  bytes(): Uint8Array {
    return this.buf.slice(0, this.len);
  }
}

export class RangeEncoder {
  private low = 0;
  private range = 0xffffffff;
  private out = new ByteSink();
  private done = false;

  encodeSymbol(table: CdfTable, symbol: number): void {
    if (this.done) {
      throw new EncodeError('encoder already finished');
    }
    const i = symbol - table.offset;
    if (!(i >= 0 && i < table.cdf.length - 1)) {
      throw new EncodeError(
        `symbol ${symbol} outside table support ` +
          `[${table.offset}, ${table.offset + table.cdf.length - 2}]`,
      );
    }
    const cum = table.cdf[i];
    const freq = table.cdf[i + 1] - cum;
    const r = Math.floor(this.range / BOT);
    this.low = (this.low + r * cum) % MOD32;
    this.range = r * freq;
    this.renorm();
  }

  private renorm(): void {
    let low = this.low;
    let rng = this.range;
    for (;;) {
      if (((low ^ (low + rng)) >>> 0) < TOP) {
        // top byte settled: emit it
      } else if (rng < BOT) {
        // interval straddles a block boundary: truncate to it
        rng = -low & (BOT - 1);
      } else {
        break;
      }
      this.out.push((low >>> 24) & 0xff);
      low = (low * 256) % MOD32;
      rng = (rng * 256) % MOD32;
    }
    this.low = low;
    this.range = rng;
  }

  finish(): Uint8Array {
    if (!this.done) {
      for (let k = 0; k < 4; k++) {
        this.out.push((this.low >>> 24) & 0xff);
        this.low = (this.low * 256) % MOD32;
      }
      this.done = true;
    }
    return this.out.bytes();
  }
}

export class RangeDecoder {
  private low = 0;
  private range = 0xffffffff;
  private code = 0;
  private pos = 0;

  constructor(private readonly data: Uint8Array) {
    for (let k = 0; k < 4; k++) {
      this.code = this.code * 256 + this.nextByte();
    }
  }

  private nextByte(): number {
    if (this.pos >= this.data.length) {
      throw new DecodeError('bitstream exhausted');
    }
    return this.data[this.pos++];
  }

  get bytesConsumed(): number {
    return this.pos;
  }

  decodeSymbol(table: CdfTable): number {
    const r = Math.floor(this.range / BOT);
    let v = Math.floor(((this.code - this.low) >>> 0) / r);
    if (v >= TOTAL) {
      v = TOTAL - 1;
    }
    // binary search: last index with cdf[i] <= v
    const cdf = table.cdf;
    let lo = 0;
    let hi = cdf.length - 1;
    while (hi - lo > 1) {
      const mid = (lo + hi) >> 1;
      if (cdf[mid] <= v) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const cum = cdf[lo];
    const freq = cdf[lo + 1] - cum;
    this.low = (this.low + r * cum) % MOD32;
    this.range = r * freq;
    this.renorm();
    return lo + table.offset;
  }

  private renorm(): void {
    let low = this.low;
    let rng = this.range;
    let code = this.code;
    for (;;) {
      if (((low ^ (low + rng)) >>> 0) < TOP) {
        // emit-equivalent: consume
      } else if (rng < BOT) {
        rng = -low & (BOT - 1);
      } else {
        break;
      }
      code = (code * 256 + this.nextByte()) % MOD32;
      low = (low * 256) % MOD32;
      rng = (rng * 256) % MOD32;
    }
    this.low = low;
    this.range = rng;
    this.code = code;
  }
}

/** Encode symbols[k] with tables[indices[k]]; lossless and order-preserving. */
export function encode(
  symbols: ArrayLike<number>,
  tables: readonly CdfTable[],
  indices: ArrayLike<number>,
): Uint8Array {
  if (symbols.length !== indices.length) {
    throw new EncodeError(
      `got ${symbols.length} symbols but ${indices.length} table indices`,
    );
  }
  const enc = new RangeEncoder();
  for (let k = 0; k < symbols.length; k++) {
    try {
      enc.encodeSymbol(tables[indices[k]], symbols[k]);
    } catch (e) {
      if (e instanceof EncodeError) {
        throw new EncodeError(`at position ${k}: ${e.message}`);
      }
      throw e;
    }
  }
  return enc.finish();
}

/** Inverse of encode(); count must equal indices.length. */
export function decode(
  data: Uint8Array,
  tables: readonly CdfTable[],
  indices: ArrayLike<number>,
  count: number,
): Int32Array {
  if (count !== indices.length) {
    throw new DecodeError(`count ${count} does not match ${indices.length} indices`);
  }
  const dec = new RangeDecoder(data);
  const out = new Int32Array(count);
  for (let k = 0; k < count; k++) {
    out[k] = dec.decodeSymbol(tables[indices[k]]);
  }
  return out;
}
