#!/usr/bin/env python3
"""
Range coder over static per-symbol CDF tables.
"Me fail English? That's unpossible!" - Ralph Wiggum

64-bit low/range coder with byte-wise renormalization and carry propagation
through a cached byte plus a run of pending 0xFF bytes. Only integer
arithmetic happens here; the tables come from entropy_model.build_cdf_tables.

Stream layout: the bytes shifted out of `low`, minus the always-zero leading
cache byte, with trailing zero bytes of the final flush dropped. The decoder
treats reads past the end as zero bytes.
"""

import bisect
import logging
from typing import List, Sequence

import numpy as np

from entropy_model import CdfTable
from errors import ContractError, DecodeError, SymbolOutOfRangeError, TruncatedStreamError

logger = logging.getLogger(__name__)

STATE_BITS = 64
MASK = (1 << STATE_BITS) - 1
TOP = 1 << (STATE_BITS - 8)
FLUSH_BYTES = STATE_BITS // 8
MAX_PHANTOM_BYTES = FLUSH_BYTES


class RangeEncoder:
    """Single-owner encoder; call encode() per symbol, then finish() once"""

    def __init__(self, precision: int):
        self.precision = precision
        self.low = 0
        self.range = MASK
        self.cache = 0
        self.cache_size = 1
        self._out = bytearray()
        self._finished = False

    def encode(self, cum: int, freq: int) -> None:
        """Narrow the interval to [cum, cum + freq) out of 2^precision"""
        if freq <= 0 or cum < 0 or cum + freq > (1 << self.precision):
            raise ContractError(f"Invalid coding interval [{cum}, {cum + freq})")
        r = self.range >> self.precision
        self.low += r * cum
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def _shift_low(self) -> None:
        if self.low < (0xFF << (STATE_BITS - 8)) or self.low > MASK:
            carry = self.low >> STATE_BITS
            temp = self.cache
            while True:
                self._out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> (STATE_BITS - 8)) & 0xFF
        self.cache_size += 1
        self.low = (self.low & (TOP - 1)) << 8

    def finish(self) -> bytes:
        if self._finished:
            raise ContractError("Encoder already finished")
        self._finished = True

        # close the interval on the value with the most trailing zero bytes
        for shift in range(STATE_BITS, 0, -8):
            value = ((self.low + (1 << shift) - 1) >> shift) << shift
            if value < self.low + self.range:
                self.low = value
                break
        for _ in range(FLUSH_BYTES + 1):
            self._shift_low()

        out = self._out[1:]
        keep = len(out)
        while keep > 0 and len(out) - keep < FLUSH_BYTES and out[keep - 1] == 0:
            keep -= 1
        return bytes(out[:keep])


class RangeDecoder:
    """Single-owner decoder mirroring RangeEncoder"""

    def __init__(self, data: bytes, precision: int):
        self.data = data
        self.precision = precision
        self.pos = 0
        self.range = MASK
        self.code = 0
        for _ in range(FLUSH_BYTES):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        pos = self.pos
        self.pos += 1
        if pos < len(self.data):
            return self.data[pos]
        if pos - len(self.data) >= MAX_PHANTOM_BYTES:
            raise TruncatedStreamError(f"Coded stream ended after {len(self.data)} bytes")
        return 0

    def decode(self, cdf_row: Sequence[int], size: int) -> int:
        """Return the symbol index within a row of size + 1 cumulative counts"""
        r = self.range >> self.precision
        value = self.code // r
        if value >= (1 << self.precision):
            raise DecodeError("Coded value falls outside the table; stream is corrupt")
        index = bisect.bisect_right(cdf_row, value, 0, size + 1) - 1
        cum, nxt = cdf_row[index], cdf_row[index + 1]
        self.code -= r * cum
        self.range = r * (nxt - cum)
        while self.range < TOP:
            self.range <<= 8
            self.code = (self.code << 8) | self._next_byte()
        return index

    def finish(self) -> None:
        """Reject streams with bytes the symbols never consumed"""
        if self.pos < len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} unread bytes after the last symbol")


def encode_symbols(symbols: Sequence[int], tables: CdfTable) -> bytes:
    """
    Encode symbols[i] under table row i.

    Every symbol must lie within its row's window; entropy_model.clamp_to_tables
    guarantees that for latents.
    """
    flat = np.asarray(symbols, dtype=np.int64).reshape(-1)
    n = flat.shape[0]
    if n > len(tables):
        raise ContractError(f"{n} symbols but only {len(tables)} tables")
    offsets = flat - tables.lo[:n]
    bad = np.flatnonzero((offsets < 0) | (offsets >= tables.sizes[:n]))
    if bad.size:
        i = int(bad[0])
        raise SymbolOutOfRangeError(
            f"Symbol {int(flat[i])} at position {i} outside window [{int(tables.lo[i])}, {int(tables.hi[i])}]"
        )

    encoder = RangeEncoder(tables.precision)
    cdf = tables.cdf
    for i, k in enumerate(offsets.tolist()):
        cum = int(cdf[i, k])
        encoder.encode(cum, int(cdf[i, k + 1]) - cum)
    data = encoder.finish()
    logger.debug(f"Range-coded {n} symbols into {len(data)} bytes")
    return data


def decode_symbols(data: bytes, tables: CdfTable, n: int) -> np.ndarray:
    """Exact inverse of encode_symbols for the same tables and count"""
    if n > len(tables) or n < 0:
        raise ContractError(f"Cannot decode {n} symbols with {len(tables)} tables")
    decoder = RangeDecoder(bytes(data), tables.precision)
    rows: List[List[int]] = tables.cdf[:n].tolist()
    sizes = tables.sizes[:n].tolist()
    lo = tables.lo[:n].tolist()
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = lo[i] + decoder.decode(rows[i], sizes[i])
    decoder.finish()
    return out
