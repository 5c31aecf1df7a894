"""Reference range coder and the shared test-vector corpus format.

This is the normative entropy-coding backend: any alternative implementation
must reproduce its output byte for byte.  The coder is a carry-less range
coder with 16-bit probability precision and byte-wise renormalization:

* Probabilities are given as integer CDF tables with total mass 65536.
* Encoder state is a 32-bit ``low``/``range`` pair.  A byte is emitted as
  soon as the top byte of the interval is settled; when the interval
  straddles a 16-bit block boundary and ``range`` drops below 2^16, the
  range is truncated to the boundary (``range = -low & 0xFFFF``) so that a
  carry can never occur.  All arithmetic stays below 2^41 and is therefore
  exactly representable in IEEE doubles, which keeps ports trivial.
* The encoder flushes exactly 4 bytes of ``low``; the decoder primes its
  ``code`` register with the first 4 bytes and afterwards consumes exactly
  the bytes the encoder wrote.

Streams produced here are embedded in the bitstream container unchanged.

Corpus file format ("RCTV", version 1, little-endian) used for the
differential test vectors:

    magic "RCTV" | version u8=1 | reserved u8*3 | n_tables u32 | n_cases u32
    per table: offset i32 | length u32 | cdf u32*length
    per case:  n_syms u32 | table indices u32*n_syms | symbols i32*n_syms
               | stream_len u32 | stream bytes
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

from .errors import DecodeError, EncodeError, FormatError

TOTAL = 1 << 16
TOP = 1 << 24
BOT = 1 << 16
MASK32 = 0xFFFFFFFF

CORPUS_MAGIC = b"RCTV"
CORPUS_VERSION = 1


@dataclass(frozen=True)
class CdfTable:
    """Integer CDF with total mass 65536 over symbols offset..offset+len(cdf)-2.

    ``cdf`` must start at 0, end at 65536 and be strictly increasing, so every
    symbol in the support has frequency >= 1.
    """

    cdf: tuple
    offset: int = 0

    def __post_init__(self):
        cdf = tuple(int(c) for c in self.cdf)
        object.__setattr__(self, "cdf", cdf)
        object.__setattr__(self, "offset", int(self.offset))
        if len(cdf) < 2:
            raise FormatError("CDF table needs at least two entries")
        if cdf[0] != 0 or cdf[-1] != TOTAL:
            raise FormatError(f"CDF must span [0, {TOTAL}], got [{cdf[0]}, {cdf[-1]}]")
        for a, b in zip(cdf, cdf[1:]):
            if b <= a:
                raise FormatError("CDF must be strictly increasing")

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 1

    @property
    def min_symbol(self) -> int:
        return self.offset

    @property
    def max_symbol(self) -> int:
        return self.offset + len(self.cdf) - 2

    def contains(self, symbol: int) -> bool:
        return self.min_symbol <= symbol <= self.max_symbol


class RangeEncoder:
    """Streaming encoder; feed (table, symbol) pairs, then call finish()."""

    def __init__(self):
        self._low = 0
        self._range = MASK32
        self._out = bytearray()
        self._done = False

    def encode_symbol(self, table: CdfTable, symbol: int) -> None:
        if self._done:
            raise EncodeError("encoder already finished")
        i = symbol - table.offset
        if not 0 <= i < table.num_symbols:
            raise EncodeError(
                f"symbol {symbol} outside table support "
                f"[{table.min_symbol}, {table.max_symbol}]"
            )
        cum = table.cdf[i]
        freq = table.cdf[i + 1] - cum
        r = self._range >> 16
        self._low = (self._low + r * cum) & MASK32
        self._range = r * freq
        self._renorm()

    def _renorm(self) -> None:
        low = self._low
        rng = self._range
        out = self._out
        while True:
            if (low ^ (low + rng)) & MASK32 < TOP:
                pass
            elif rng < BOT:
                # interval straddles a block boundary: truncate to it
                rng = (-low) & (BOT - 1)
            else:
                break
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & MASK32
            rng = (rng << 8) & MASK32
        self._low = low
        self._range = rng

    def finish(self) -> bytes:
        if not self._done:
            for _ in range(4):
                self._out.append((self._low >> 24) & 0xFF)
                self._low = (self._low << 8) & MASK32
            self._done = True
        return bytes(self._out)


class RangeDecoder:
    """Streaming decoder over a byte stream produced by RangeEncoder."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._low = 0
        self._range = MASK32
        code = 0
        for _ in range(4):
            code = (code << 8) | self._next_byte()
        self._code = code

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise DecodeError("bitstream exhausted")
        b = self._data[self._pos]
        self._pos += 1
        return b

    @property
    def bytes_consumed(self) -> int:
        return self._pos

    def decode_symbol(self, table: CdfTable) -> int:
        r = self._range >> 16
        v = ((self._code - self._low) & MASK32) // r
        if v >= TOTAL:
            v = TOTAL - 1
        i = bisect_right(table.cdf, v) - 1
        if i >= table.num_symbols:  # pragma: no cover - v is capped above
            i = table.num_symbols - 1
        cum = table.cdf[i]
        freq = table.cdf[i + 1] - cum
        self._low = (self._low + r * cum) & MASK32
        self._range = r * freq
        self._renorm()
        return i + table.offset

    def _renorm(self) -> None:
        low = self._low
        rng = self._range
        code = self._code
        while True:
            if (low ^ (low + rng)) & MASK32 < TOP:
                pass
            elif rng < BOT:
                rng = (-low) & (BOT - 1)
            else:
                break
            code = ((code << 8) | self._next_byte()) & MASK32
            low = (low << 8) & MASK32
            rng = (rng << 8) & MASK32
        self._low = low
        self._range = rng
        self._code = code


def encode(symbols: Sequence[int], tables: Sequence[CdfTable],
           indices: Sequence[int]) -> bytes:
    """Encode ``symbols[k]`` with ``tables[indices[k]]``; lossless, order-preserving."""
    if len(symbols) != len(indices):
        raise EncodeError(
            f"got {len(symbols)} symbols but {len(indices)} table indices"
        )
    enc = RangeEncoder()
    for pos, (s, ti) in enumerate(zip(symbols, indices)):
        try:
            enc.encode_symbol(tables[ti], int(s))
        except EncodeError as e:
            raise EncodeError(f"at position {pos}: {e}") from None
    return enc.finish()


def decode(data: bytes, tables: Sequence[CdfTable], indices: Sequence[int],
           count: int) -> list:
    """Inverse of encode(); ``count`` must equal len(indices)."""
    if count != len(indices):
        raise DecodeError(f"count {count} does not match {len(indices)} indices")
    dec = RangeDecoder(data)
    return [dec.decode_symbol(tables[ti]) for ti in indices]


# --- corpus / test-vector file IO -------------------------------------------

def write_corpus(path, tables: Sequence[CdfTable], cases) -> None:
    """Write tables plus (indices, symbols, stream) cases to a vector file."""
    with open(path, "wb") as f:
        f.write(CORPUS_MAGIC)
        f.write(struct.pack("<B3x", CORPUS_VERSION))
        f.write(struct.pack("<II", len(tables), len(cases)))
        for t in tables:
            f.write(struct.pack("<iI", t.offset, len(t.cdf)))
            f.write(struct.pack(f"<{len(t.cdf)}I", *t.cdf))
        for indices, symbols, stream in cases:
            n = len(symbols)
            if len(indices) != n:
                raise FormatError("corpus case with mismatched indices/symbols")
            f.write(struct.pack("<I", n))
            if n:
                f.write(struct.pack(f"<{n}I", *indices))
                f.write(struct.pack(f"<{n}i", *symbols))
            f.write(struct.pack("<I", len(stream)))
            f.write(stream)


def read_corpus(path):
    """Read a vector file; returns (tables, cases)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CORPUS_MAGIC:
        raise FormatError("bad corpus magic")
    version = data[4]
    if version != CORPUS_VERSION:
        raise FormatError(f"unsupported corpus version {version}")
    pos = 8
    n_tables, n_cases = struct.unpack_from("<II", data, pos)
    pos += 8
    tables = []
    for _ in range(n_tables):
        offset, length = struct.unpack_from("<iI", data, pos)
        pos += 8
        cdf = struct.unpack_from(f"<{length}I", data, pos)
        pos += 4 * length
        tables.append(CdfTable(cdf=cdf, offset=offset))
    cases = []
    for _ in range(n_cases):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        indices = list(struct.unpack_from(f"<{n}I", data, pos)) if n else []
        pos += 4 * n
        symbols = list(struct.unpack_from(f"<{n}i", data, pos)) if n else []
        pos += 4 * n
        (slen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        stream = data[pos:pos + slen]
        if len(stream) != slen:
            raise FormatError("truncated corpus file")
        pos += slen
        cases.append((indices, symbols, stream))
    if pos != len(data):
        raise FormatError("trailing bytes in corpus file")
    return tables, cases
