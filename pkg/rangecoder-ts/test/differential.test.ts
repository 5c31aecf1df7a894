/**
 * Differential tests against the reference coder via the shared corpus files.
 *
 * vectors/coder_vectors.bin is committed and normative.  The large seeded
 * corpus and the primary-suite stream dump are regenerated with
 * `npm run corpus` (they are skipped, loudly, when absent).
 */

import assert from 'node:assert/strict';
import { existsSync, readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';
import { test } from 'node:test';

import { readCorpus } from '../src/index.js';
import { decode, encode } from '../src/index.js';

const here = dirname(fileURLToPath(import.meta.url));
const repoRoot = join(here, '..', '..', '..');

function corpusPath(...parts: string[]): string {
  return join(repoRoot, ...parts);
}

function runCorpus(path: string): { cases: number; bytes: number } {
  const { tables, cases } = readCorpus(new Uint8Array(readFileSync(path)));
  let bytes = 0;
  for (let i = 0; i < cases.length; i++) {
    const c = cases[i];
    const stream = encode(c.symbols, tables, c.indices);
    assert.deepEqual(
      stream,
      c.stream,
      `case ${i}: encoder output differs from reference`,
    );
    const decoded = decode(c.stream, tables, c.indices, c.indices.length);
    assert.deepEqual(decoded, c.symbols, `case ${i}: decode mismatch`);
    bytes += stream.length;
  }
  return { cases: cases.length, bytes };
}

test('normative vectors: byte-identical to the reference coder', () => {
  const { cases, bytes } = runCorpus(corpusPath('vectors', 'coder_vectors.bin'));
  assert.ok(cases >= 600);
  console.log(`    normative vectors: ${cases} cases, ${bytes} stream bytes`);
});

test('100k-case seeded corpus: byte-identical', (t) => {
  const path = corpusPath('var', 'coder_corpus_100k.bin');
  if (!existsSync(path)) {
    t.skip('var/coder_corpus_100k.bin missing; run `npm run corpus`');
    return;
  }
  const { cases } = runCorpus(path);
  assert.ok(cases >= 100000);
  console.log(`    differential corpus: ${cases} cases OK`);
});

test('primary-suite bitstreams: byte-identical', (t) => {
  const path = corpusPath('var', 'primary_streams.bin');
  if (!existsSync(path)) {
    t.skip('var/primary_streams.bin missing; run `npm run corpus`');
    return;
  }
  const { cases, bytes } = runCorpus(path);
  console.log(`    primary streams: ${cases} streams, ${bytes} bytes OK`);
});
