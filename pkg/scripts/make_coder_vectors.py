#!/usr/bin/env python3
"""Generate the entropy-coder test-vector files.

Three outputs:

* vectors/coder_vectors.bin   - committed normative vectors (edge cases plus a
                                seeded random mix) that pin the bitstream
                                definition for alternative implementations.
* var/coder_corpus_100k.bin   - the large seeded differential corpus
                                (100k randomized cases; regenerated on demand).
* var/primary_streams.bin     - every (tables, symbols, stream) tuple a tiny
                                seeded codec produces while compressing random
                                images at all q levels.

All three use the corpus container documented in lvcodec.rangecoder.
"""

import argparse
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from lvcodec.rangecoder import CdfTable, encode, write_corpus  # noqa: E402


def random_table(rng: random.Random, max_symbols: int = 64) -> CdfTable:
    n_sym = rng.randrange(1, max_symbols)
    cuts = sorted(rng.sample(range(1, 65536), n_sym - 1)) if n_sym > 1 else []
    return CdfTable(cdf=tuple([0] + cuts + [65536]),
                    offset=rng.randrange(-(1 << 20), 1 << 20))


def skewed_table(rng: random.Random) -> CdfTable:
    """Most of the mass on one symbol, the rest at frequency >= 1."""
    n_sym = rng.randrange(2, 40)
    freqs = [1] * n_sym
    freqs[rng.randrange(n_sym)] = 65536 - (n_sym - 1)
    cdf = [0]
    for f in freqs:
        cdf.append(cdf[-1] + f)
    return CdfTable(cdf=tuple(cdf), offset=rng.randrange(-100, 100))


def make_case(rng: random.Random, tables, max_len: int):
    n = rng.randrange(0, max_len)
    idx = [rng.randrange(len(tables)) for _ in range(n)]
    syms = [rng.randint(tables[i].min_symbol, tables[i].max_symbol) for i in idx]
    return idx, syms, encode(syms, tables, idx)


def build_normative(path: Path) -> None:
    rng = random.Random(0xC0DEC)
    tables = [
        CdfTable(cdf=(0, 16384, 32768, 49152, 65536)),           # uniform 4
        CdfTable(cdf=(0, 32768, 65536)),                          # binary bypass
        CdfTable(cdf=(0, 65536), offset=-7),                      # single symbol
        CdfTable(cdf=(0, 1, 2, 65536), offset=-1),                # near-degenerate
        CdfTable(cdf=(0, 65534, 65535, 65536)),                   # heavy head
        CdfTable(cdf=tuple(range(0, 65537, 4096))),               # uniform 16
    ]
    tables += [random_table(rng) for _ in range(10)]
    tables += [skewed_table(rng) for _ in range(4)]

    cases = [
        ([], [], encode([], [], [])),
        ([0], [3], encode([3], tables, [0])),
        ([2] * 100, [-7] * 100, encode([-7] * 100, tables, [2] * 100)),
        ([3] * 64, [1] * 64, encode([1] * 64, tables, [3] * 64)),  # rare symbols
        ([4] * 200, [2] * 200, encode([2] * 200, tables, [4] * 200)),
    ]
    # mixed-table case exercising every table at least once
    idx = [i % len(tables) for i in range(len(tables) * 8)]
    syms = [rng.randint(tables[i].min_symbol, tables[i].max_symbol) for i in idx]
    cases.append((idx, syms, encode(syms, tables, idx)))
    # one long stream
    idx = [rng.randrange(len(tables)) for _ in range(10_000)]
    syms = [rng.randint(tables[i].min_symbol, tables[i].max_symbol) for i in idx]
    cases.append((idx, syms, encode(syms, tables, idx)))
    for _ in range(600):
        cases.append(make_case(rng, tables, max_len=48))
    write_corpus(path, tables, cases)
    print(f"{path}: {len(tables)} tables, {len(cases)} cases, "
          f"{path.stat().st_size} bytes")


def build_big(path: Path, n_cases: int, seed: int) -> None:
    rng = random.Random(seed)
    tables = [random_table(rng) for _ in range(192)]
    tables += [skewed_table(rng) for _ in range(64)]
    cases = [make_case(rng, tables, max_len=24) for _ in range(n_cases)]
    write_corpus(path, tables, cases)
    print(f"{path}: {len(tables)} tables, {len(cases)} cases, "
          f"{path.stat().st_size} bytes")


def build_primary_streams(path: Path, n_images: int, seed: int) -> None:
    import numpy as np
    import torch

    from lvcodec.codec import CodecConfig, VariableRateCodec

    torch.manual_seed(seed)
    torch.set_num_threads(1)
    codec = VariableRateCodec(CodecConfig(n_channels=32))
    codec.eval()
    tables = None
    cases = []
    rng = np.random.default_rng(seed)
    for i in range(n_images):
        h = int(rng.integers(64, 130))
        w = int(rng.integers(64, 130))
        img = torch.from_numpy(rng.random((3, h, w), dtype=np.float32))
        for q in range(codec.config.q_levels):
            trace = {}
            codec.compress(img, q, trace=trace)
            if tables is None:
                tables = trace["tables"]
            for key in ("z", "y"):
                pairs, stream = trace[key]
                idx = [t for t, _ in pairs]
                syms = [s for _, s in pairs]
                cases.append((idx, syms, stream))
    write_corpus(path, tables, cases)
    print(f"{path}: {len(tables)} tables, {len(cases)} cases, "
          f"{path.stat().st_size} bytes")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--normative", action="store_true",
                    help="rebuild vectors/coder_vectors.bin")
    ap.add_argument("--big", action="store_true",
                    help="build the 100k-case differential corpus in var/")
    ap.add_argument("--streams", action="store_true",
                    help="build var/primary_streams.bin from a seeded tiny codec")
    ap.add_argument("--all", action="store_true")
    ap.add_argument("--cases", type=int, default=100_000)
    ap.add_argument("--images", type=int, default=12)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--skip-existing", action="store_true",
                    help="do nothing for outputs that already exist")
    args = ap.parse_args()
    if args.all:
        args.normative = args.big = args.streams = True
    if not (args.normative or args.big or args.streams):
        ap.error("nothing to do; pass --normative/--big/--streams/--all")

    vectors = ROOT / "vectors"
    var = ROOT / "var"
    vectors.mkdir(exist_ok=True)
    var.mkdir(exist_ok=True)
    if args.normative:
        target = vectors / "coder_vectors.bin"
        if not (args.skip_existing and target.exists()):
            build_normative(target)
    if args.big:
        target = var / "coder_corpus_100k.bin"
        if not (args.skip_existing and target.exists()):
            build_big(target, args.cases, args.seed)
    if args.streams:
        target = var / "primary_streams.bin"
        if not (args.skip_existing and target.exists()):
            build_primary_streams(target, args.images, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
