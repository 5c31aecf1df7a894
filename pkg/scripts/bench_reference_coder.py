#!/usr/bin/env python3
"""Throughput of the reference range coder on a 10^6-symbol stream.

Pairs with `npm run bench` in rangecoder-ts/ for the informational
fast-vs-reference comparison.
"""

import random
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lvcodec.rangecoder import CdfTable, decode, encode  # noqa: E402


def main() -> int:
    rng = random.Random(7)
    table = CdfTable(cdf=(0, 30000, 50000, 60000, 64000, 65000, 65536), offset=-3)
    n = 1_000_000
    symbols = [rng.randint(table.min_symbol, table.max_symbol) for _ in range(n)]
    indices = [0] * n

    t0 = time.perf_counter()
    stream = encode(symbols, [table], indices)
    enc_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    out = decode(stream, [table], indices, n)
    dec_s = time.perf_counter() - t0
    assert out == symbols

    print(f"symbols: {n}, stream: {len(stream)} bytes")
    print(f"encode: {enc_s * 1000:.1f} ms ({n / enc_s / 1e6:.3f} Msym/s)")
    print(f"decode: {dec_s * 1000:.1f} ms ({n / dec_s / 1e6:.3f} Msym/s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
