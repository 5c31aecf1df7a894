/**
 * Reader for the shared test-vector corpus ("RCTV" version 1, little-endian):
 *
 *   magic "RCTV" | version u8=1 | reserved u8*3 | n_tables u32 | n_cases u32
 *   per table: offset i32 | length u32 | cdf u32*length
 *   per case:  n_syms u32 | table indices u32*n | symbols i32*n
 *              | stream_len u32 | stream bytes
 */

import { CdfTable, FormatError, validateTable } from './rangecoder.js';

export interface CorpusCase {
  indices: Uint32Array;
  symbols: Int32Array;
  stream: Uint8Array;
}

export interface Corpus {
  tables: CdfTable[];
  cases: CorpusCase[];
}

const MAGIC = 0x56544352; // "RCTV" little-endian

export function readCorpus(data: Uint8Array): Corpus {
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  if (data.length < 16 || view.getUint32(0, true) !== MAGIC) {
    throw new FormatError('bad corpus magic');
  }
  if (data[4] !== 1) {
    throw new FormatError(`unsupported corpus version ${data[4]}`);
  }
  const nTables = view.getUint32(8, true);
  const nCases = view.getUint32(12, true);
  let pos = 16;
  const tables: CdfTable[] = [];
  for (let t = 0; t < nTables; t++) {
    const offset = view.getInt32(pos, true);
    const length = view.getUint32(pos + 4, true);
    pos += 8;
    const cdf = new Uint32Array(length);
    for (let i = 0; i < length; i++) {
      cdf[i] = view.getUint32(pos + 4 * i, true);
    }
    pos += 4 * length;
    const table = { cdf, offset };
    validateTable(table);
    tables.push(table);
  }
  const cases: CorpusCase[] = [];
  for (let c = 0; c < nCases; c++) {
    const n = view.getUint32(pos, true);
    pos += 4;
    const indices = new Uint32Array(n);
    const symbols = new Int32Array(n);
    for (let i = 0; i < n; i++) {
      indices[i] = view.getUint32(pos + 4 * i, true);
    }
    pos += 4 * n;
    for (let i = 0; i < n; i++) {
      symbols[i] = view.getInt32(pos + 4 * i, true);
    }
    pos += 4 * n;
    const streamLen = view.getUint32(pos, true);
    pos += 4;
    if (pos + streamLen > data.length) {
      throw new FormatError('truncated corpus file');
    }
    cases.push({
      indices,
      symbols,
      stream: data.slice(pos, pos + streamLen),
    });
    pos += streamLen;
  }
  if (pos !== data.length) {
    throw new FormatError('trailing bytes in corpus file');
  }
  return { tables, cases };
}
